//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any check fails.
//!
//! Set `POSBIAS_BENCHMARK` to the original benchmark in JSONL form to also
//! run the corpus-dependent checks (B1); otherwise they are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use posbias::baseline::{self, PositionSampler, PriorModel, PriorSource, TrialConfig};
use posbias::cli::dispatch;
use posbias::corpus::{parse_corpus_str, serialize_corpus};
use posbias::debias::{
    self, preset_target, Preset, ResamplePlan, ORIGINAL_PERCENT, TABLE_POSITIONS,
};
use posbias::lexicon::{coverage_report, CueLexicon};
use posbias::metrics::{self, Pool, Predictions};
use posbias::stats::{audit_report, PositionDistribution};
use posbias::synth::{
    generate, published_injections, DocLength, Placement, SynthConfig, PUBLISHED_COVERAGE,
};
use posbias::{Corpus, Instance, RelativePosition};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rp(v: i64) -> RelativePosition {
    RelativePosition(v)
}

fn table2() -> PositionDistribution<f64> {
    preset_target(Preset::Original)
}

fn clone_corpus() -> Corpus {
    generate(&SynthConfig::<f64>::benchmark_clone(), SEED).expect("clone generates")
}

/// Expected correct proposals when the prior is used as-is, so draws of
/// out-of-document positions count as misses.
fn expected_without_renormalization(
    corpus: &Corpus,
    prior: &PositionDistribution<f64>,
) -> (f64, f64, f64) {
    let correct: f64 = corpus
        .instances()
        .iter()
        .flat_map(|i| i.cause_positions())
        .map(|p| prior.prob(p))
        .sum();
    let p = correct / corpus.len() as f64;
    let r = correct / corpus.n_causes() as f64;
    (p, r, 2.0 * p * r / (p + r))
}

fn expected_f1(corpus: &Corpus, prior: &PositionDistribution<f64>) -> f64 {
    baseline::expected_scores(corpus, &PriorModel::supplied(prior.clone()))
        .unwrap()
        .f1
}

/// Expected F1 when the prior is estimated from the corpus itself.
fn self_prior_f1(corpus: &Corpus) -> f64 {
    let prior = PriorModel::<f64>::from_corpus(corpus).unwrap();
    baseline::expected_scores(corpus, &prior).unwrap().f1
}

fn a1() -> Outcome {
    let start = Instant::now();
    let corpus = clone_corpus();
    let report = audit_report::<f64>(&corpus).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let worst = TABLE_POSITIONS
        .iter()
        .zip(ORIGINAL_PERCENT)
        .map(|(&p, pct)| (report.distribution.prob(rp(p)) * 100.0 - pct).abs())
        .fold(0.0, f64::max);
    let extra_support = report
        .distribution
        .support()
        .iter()
        .any(|p| !TABLE_POSITIONS.contains(&p.0));
    let hist_ok = report.cause_histogram == BTreeMap::from([(1, 2046), (2, 56), (3, 3)]);
    check(
        worst <= 0.03 && !extra_support && hist_ok && elapsed < 2.0,
        format!(
            "max |achieved - published| = {worst:.4} pp (tol 0.03), histogram {:?}, {elapsed:.2}s (limit 2s)",
            report.cause_histogram
        ),
    )
}

fn a2(corpus: &Corpus) -> Outcome {
    let start = Instant::now();
    let prior = table2();
    let expected = expected_f1(corpus, &prior);
    let config = TrialConfig {
        seed: SEED,
        prior: PriorSource::Supplied(prior.clone()),
        ..TrialConfig::default()
    };
    let trials = baseline::run_trials(corpus, &config).unwrap();
    let (_, _, trial_f1) = trials.headline(Pool::Macro);

    let mut sampler = PositionSampler::new(&prior);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let reps = 1000;
    let mc: f64 = (0..reps)
        .map(|_| {
            baseline::sample_scores::<f64, _>(corpus, &mut sampler, &mut rng)
                .unwrap()
                .f1
        })
        .sum::<f64>()
        / reps as f64;
    let elapsed = start.elapsed().as_secs_f64();
    check(
        (trial_f1 - expected).abs() <= 0.03 && (mc - expected).abs() <= 0.01 && elapsed < 30.0,
        format!(
            "expected F1 {expected:.4}, 25-trial mean {trial_f1:.4} (tol 0.03), \
             1000-rep Monte Carlo {mc:.4} (tol 0.01), {elapsed:.2}s (limit 30s)"
        ),
    )
}

/// Clone with short documents: 4 to 6 clauses, emotion clause in the last two.
/// Positions that cannot fit get the shortest longer document available.
fn short_doc_clone() -> Corpus {
    let mut cfg = SynthConfig::<f64>::benchmark_clone();
    cfg.doc_length = "4..6,7..13:0.000001".parse::<DocLength>().unwrap();
    cfg.emotion_placement = Placement::Tail(2);
    generate(&cfg, SEED).unwrap()
}

fn a3(corpus: &Corpus) -> (Outcome, f64) {
    let prior = table2();
    let renorm = expected_f1(corpus, &prior);
    let (_, recall_nr, f1_nr) = expected_without_renormalization(corpus, &prior);
    let achieved = audit_report::<f64>(corpus).unwrap().distribution;
    let dot = prior.dot(&achieved);
    let published_self: f64 = ORIGINAL_PERCENT.iter().map(|p| (p / 100.0).powi(2)).sum();

    let short = short_doc_clone();
    let in_shape = short
        .instances()
        .iter()
        .filter(|i| {
            (4..=6).contains(&i.clause_count()) && i.emotion_index() + 2 >= i.clause_count()
        })
        .count();
    let short_f1 = expected_f1(&short, &prior);

    let pass = renorm >= f1_nr
        && (recall_nr - dot).abs() <= 1e-6
        && (dot - 0.365).abs() <= 0.0005
        && (published_self - 0.365).abs() <= 0.001
        && short_f1 > 0.50;
    (
        check(
            pass,
            format!(
                "renormalized F1 {renorm:.4} >= unrenormalized F1 {f1_nr:.4}; \
                 unrenormalized recall {recall_nr:.7} vs sum pi*pi_hat {dot:.7} (tol 1e-6, ~0.365); \
                 short-document F1 {short_f1:.4} (need > 0.50, {in_shape}/{} documents in shape)",
                short.len()
            ),
        ),
        renorm,
    )
}

fn a4(corpus: &Corpus, a3_f1: f64) -> Outcome {
    let target = preset_target::<f64>(Preset::Balanced);
    let plan = ResamplePlan::new(target.clone(), SEED).with_tolerance(0.015);
    let (balanced, manifest) = match debias::rebalance(corpus, &plan) {
        Ok(r) => r,
        Err(e) => return check(false, format!("rebalance failed: {e}")),
    };
    let achieved = audit_report::<f64>(&balanced).unwrap().distribution;
    let worst = target
        .iter()
        .filter(|(_, t)| *t >= 0.01)
        .map(|(p, t)| (achieved.prob(p) - t).abs())
        .fold(0.0, f64::max);
    let f1 = self_prior_f1(&balanced);
    let size = manifest.size;
    check(
        (700..=860).contains(&size) && worst <= 0.015 && f1 < 0.30 && a3_f1 - f1 >= 0.15,
        format!(
            "size {size} (range 700..=860), max deviation {:.3} pp (tol 1.5), \
             expected F1 {f1:.4} (< 0.30, {:.4} below clone)",
            worst * 100.0,
            a3_f1 - f1
        ),
    )
}

fn a5(corpus: &Corpus) -> Outcome {
    let mut scores = Vec::new();
    for p in Preset::SERIES {
        let plan = ResamplePlan::new(preset_target::<f64>(p), SEED);
        match debias::rebalance(corpus, &plan) {
            Ok((c, _)) => scores.push((p.name(), c.len(), self_prior_f1(&c))),
            Err(e) => return check(false, format!("{} failed: {e}", p.name())),
        }
    }
    let decreasing = scores.windows(2).all(|w| w[1].2 < w[0].2);
    let detail: Vec<String> = scores
        .iter()
        .map(|(n, size, f)| format!("{n} {f:.4} (n={size})"))
        .collect();
    check(decreasing, detail.join(" > "))
}

fn a6() -> Outcome {
    // every gold set and prediction set over a 4-clause document
    let subsets = |n: usize| -> Vec<BTreeSet<usize>> {
        (0u32..1 << n)
            .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
            .collect()
    };
    let mut cases = 0;
    let mut unequal = 0;
    let mut failures = Vec::new();
    for gold in subsets(4).into_iter().filter(|g| !g.is_empty()) {
        for pred in subsets(4) {
            let inst = Instance::new(
                "d",
                vec!["x".into(); 4],
                2,
                "x",
                gold.iter().copied().collect(),
            )
            .unwrap();
            let corpus = Corpus::new(vec![inst], "fixture").unwrap();
            let predictions: Predictions = BTreeMap::from([("d".to_string(), pred.clone())]);
            let s = metrics::score::<f64>(&predictions, &corpus).unwrap();
            let hit = gold.intersection(&pred).count() as f64;
            let p = if pred.is_empty() {
                0.0
            } else {
                hit / pred.len() as f64
            };
            let r = hit / gold.len() as f64;
            let f = if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            cases += 1;
            if pred.len() != gold.len() {
                unequal += 1;
            }
            if (s.precision - p).abs() > 1e-12
                || (s.recall - r).abs() > 1e-12
                || (s.f1 - f).abs() > 1e-12
            {
                failures.push(format!("gold {gold:?} pred {pred:?}"));
            }
        }
    }
    // pooled counts across documents
    let docs: Vec<Instance> = (0..3)
        .map(|i| {
            Instance::new(
                format!("d{i}"),
                vec!["x".into(); 5],
                2,
                "x",
                vec![0, 1][..=(i % 2)].to_vec(),
            )
            .unwrap()
        })
        .collect();
    let corpus = Corpus::new(docs, "fixture").unwrap();
    let predictions: Predictions = BTreeMap::from([
        ("d0".to_string(), BTreeSet::from([0, 3])),
        ("d1".to_string(), BTreeSet::from([1])),
    ]);
    let s = metrics::score::<f64>(&predictions, &corpus).unwrap();
    // 4 annotated, 3 proposed, 2 correct
    let pooled_ok = s.annotated == 4.0
        && s.proposed == 3.0
        && s.correct == 2.0
        && (s.f1 - 2.0 * 2.0 / (3.0 + 4.0)).abs() < 1e-12;
    check(
        failures.is_empty() && pooled_ok,
        format!(
            "{cases} single-document fixtures ({unequal} with proposed != annotated), {} mismatches; pooled fixture {}",
            failures.len(),
            if pooled_ok { "ok" } else { "wrong" }
        ),
    )
}

fn a7() -> Outcome {
    let mut cfg = SynthConfig::<f64>::benchmark_clone();
    cfg.cue_injection = published_injections();
    let corpus = generate(&cfg, SEED).unwrap();
    let report = coverage_report::<f64>(&corpus, &CueLexicon::default_lexicon()).unwrap();
    let mut worst: f64 = 0.0;
    for &(a, g, k, n) in &PUBLISHED_COVERAGE {
        let got = report
            .anchor(rp(a))
            .and_then(|c| c.groups.iter().find(|x| x.id == g))
            .map(|x| x.matched_fraction)
            .unwrap_or(f64::NAN);
        worst = worst.max((got - k as f64 / n as f64).abs());
    }
    let union = |a: i64| {
        report
            .anchor(rp(a))
            .map(|c| c.union_fraction)
            .unwrap_or(f64::NAN)
    };
    let (u1, u0) = (union(-1), union(0));
    check(
        worst <= 0.005 && (u1 - 0.5119).abs() <= 0.005 && (u0 - 0.8669).abs() <= 0.005,
        format!(
            "max group deviation {:.3} pp (tol 0.5), union -1 {:.2}% (51.19%), union 0 {:.2}% (86.69%)",
            worst * 100.0,
            u1 * 100.0,
            u0 * 100.0
        ),
    )
}

fn run_cli(args: &[String]) -> (i32, Vec<u8>, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("posbias".to_string()).chain(args.iter().cloned());
    let code = dispatch(argv, &mut out, &mut err);
    (code, out, err)
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn a8(corpus: &Corpus) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus_path = d.join("clone.jsonl");
    std::fs::write(&corpus_path, serialize_corpus(corpus)).unwrap();
    let preds_path = d.join("preds.jsonl");
    let mut preds = Vec::new();
    for (i, inst) in corpus.instances().iter().enumerate().step_by(3) {
        preds.extend(
            format!(
                "{{\"id\":\"{}\",\"predicted_indices\":[{}]}}\n",
                inst.id(),
                i % inst.clause_count()
            )
            .bytes(),
        );
    }
    std::fs::write(&preds_path, preds).unwrap();
    let c = corpus_path.display().to_string();
    let out = |name: &str| d.join(name).display().to_string();
    let commands: Vec<Vec<String>> = vec![
        vec![
            "audit".into(),
            "--corpus".into(),
            c.clone(),
            "--format".into(),
            "json".into(),
        ],
        vec![
            "audit".into(),
            "--corpus".into(),
            c.clone(),
            "--out".into(),
            out("audit.txt"),
        ],
        vec![
            "baseline".into(),
            "--corpus".into(),
            c.clone(),
            "--seed".into(),
            "7".into(),
            "--format".into(),
            "json".into(),
        ],
        vec![
            "baseline".into(),
            "--corpus".into(),
            c.clone(),
            "--prior".into(),
            "preset:original".into(),
            "--pool".into(),
            "micro".into(),
        ],
        vec![
            "eval".into(),
            "--gold".into(),
            c.clone(),
            "--predictions".into(),
            preds_path.display().to_string(),
        ],
        vec![
            "lexicon".into(),
            "--corpus".into(),
            c.clone(),
            "--format".into(),
            "json".into(),
        ],
        vec![
            "debias".into(),
            "--corpus".into(),
            c.clone(),
            "--preset".into(),
            "balanced".into(),
            "--seed".into(),
            "3".into(),
            "--out".into(),
            out("balanced.jsonl"),
            "--manifest".into(),
            out("manifest.json"),
        ],
        vec![
            "debias".into(),
            "--corpus".into(),
            c.clone(),
            "--only".into(),
            "-1".into(),
            "--out".into(),
            out("only.jsonl"),
        ],
        vec![
            "synth".into(),
            "--n".into(),
            "500".into(),
            "--seed".into(),
            "11".into(),
            "--inject".into(),
            "published".into(),
            "--out".into(),
            out("synth.jsonl"),
        ],
    ];
    let mut bad = Vec::new();
    for args in &commands {
        let first = run_cli(args);
        let files_first = snapshot(d);
        let second = run_cli(args);
        let files_second = snapshot(d);
        if first.0 != 0 || first != second || files_first != files_second {
            bad.push(format!("{} (status {})", args.join(" "), first.0));
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "{} invocations over all six subcommands byte-identical",
                commands.len()
            )
        } else {
            format!("differing or failing: {}", bad.join("; "))
        },
    )
}

fn b1(path: &str) -> Outcome {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return check(false, format!("cannot read {path}: {e}")),
    };
    let corpus = match parse_corpus_str(&text, path) {
        Ok(c) => c,
        Err(e) => return check(false, format!("cannot parse {path}: {e}")),
    };
    let report = audit_report::<f64>(&corpus).unwrap();
    let hist_ok = report.cause_histogram == BTreeMap::from([(1, 2046), (2, 56), (3, 3)]);
    let table_ok = TABLE_POSITIONS
        .iter()
        .zip(ORIGINAL_PERCENT)
        .all(|(&p, pct)| {
            let x = report.distribution.prob(rp(p)) * 100.0;
            x >= pct - 1e-9 && x < pct + 0.01
        });
    let config = TrialConfig {
        seed: SEED,
        prior: PriorSource::Corpus,
        ..TrialConfig::default()
    };
    let f1: f64 = baseline::run_trials(&corpus, &config).unwrap().mean_f1;
    let plan = ResamplePlan::new(preset_target::<f64>(Preset::Balanced), SEED);
    let (balanced, _) = match debias::rebalance(&corpus, &plan) {
        Ok(r) => r,
        Err(e) => return check(false, format!("rebalance failed: {e}")),
    };
    let bf1: f64 = baseline::run_trials(&balanced, &config).unwrap().mean_f1;
    check(
        hist_ok && table_ok && (f1 - 0.5434).abs() <= 0.04 && balanced.len().abs_diff(779) <= 40 && (bf1 - 0.2404).abs() <= 0.04,
        format!(
            "histogram {}, position table {}, random F1 {f1:.4} (0.5434 +- 0.04), balanced size {} (779 +- 40), balanced F1 {bf1:.4} (0.2404 +- 0.04)",
            if hist_ok { "exact" } else { "differs" },
            if table_ok { "matches" } else { "differs" },
            balanced.len()
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags; a lone `--list` asks for test names.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let corpus = clone_corpus();
    let (a3_outcome, a3_f1) = a3(&corpus);
    let mut results = vec![
        ("A1", "clone fidelity", a1()),
        ("A2", "oracle agreement", a2(&corpus)),
        ("A3", "renormalization effect", a3_outcome),
        ("A4", "balanced rebalance", a4(&corpus, a3_f1)),
        ("A5", "series monotonicity", a5(&corpus)),
        ("A6", "metrics identities", a6()),
        ("A7", "lexicon coverage", a7()),
        ("A8", "determinism", a8(&corpus)),
    ];
    match std::env::var("POSBIAS_BENCHMARK") {
        Ok(path) => results.push(("B1", "original benchmark", b1(&path))),
        Err(_) => println!("B1 SKIP original benchmark: POSBIAS_BENCHMARK not set"),
    }
    let mut failed = 0;
    for (id, name, o) in &results {
        println!(
            "{id} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
