//! The `posbias` command-line tool.
//!
//! Every run writes its outputs plus one [`RunRecord`] describing the
//! resolved configuration and SHA-256 digests of inputs and outputs. The
//! record goes to `--record`, else next to `--out` as `<out>.run.json`,
//! else to stderr as a single JSON line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::baseline::{self, Predictor, PriorModel, PriorSource, TieBreak, TrialConfig};
use crate::corpus::{parse_corpus, serialize_corpus, Corpus, RelativePosition};
use crate::debias::{self, preset_target, Preset, ResampleManifest, ResamplePlan};
use crate::lexicon::{self, load_lexicon, CueLexicon, MatchMode};
use crate::metrics::{self, parse_predictions, EvalScores, Pool, TrialAggregate};
use crate::stats::{self, percent, PositionDistribution};
use crate::synth::{self, DocLength, Injection, Placement, SynthConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    #[default]
    Table,
}

#[derive(Debug, Parser)]
#[command(
    name = "posbias",
    version,
    about = "Audit and correct cause-position bias in emotion cause corpora"
)]
struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Main output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Where to write the run record.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Corpus profile and cause-position distribution.
    Audit {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Position-prior baseline over repeated train/test splits.
    Baseline {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 25)]
        trials: usize,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        /// train, corpus, file:PATH or preset:NAME
        #[arg(long, default_value = "train")]
        prior: String,
        #[arg(long, value_enum, default_value_t = Pool::Macro)]
        pool: Pool,
        #[arg(long, value_enum, default_value_t = Predictor::Random)]
        predictor: Predictor,
        #[arg(long, value_enum, default_value_t = TieBreak::Negative)]
        tie_break: TieBreak,
    },
    /// Score a predictions file against a gold corpus.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Cue-word coverage of causes at the lexicon's anchor positions.
    Lexicon {
        #[arg(long)]
        corpus: PathBuf,
        /// TOML lexicon (the bundled one when absent).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, value_enum)]
        match_mode: Option<MatchMode>,
    },
    /// Downsample a corpus toward a target position distribution.
    Debias {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, conflicts_with_all = ["target", "only"])]
        preset: Option<String>,
        /// JSON target distribution.
        #[arg(long, conflicts_with = "only")]
        target: Option<PathBuf>,
        /// Keep only instances whose causes all sit at this position.
        #[arg(long, allow_hyphen_values = true)]
        only: Option<RelativePosition>,
        #[arg(long, default_value_t = 0.02)]
        tolerance: f64,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 2105)]
        n: usize,
        /// table2, preset:NAME or file:PATH
        #[arg(long, default_value = "table2")]
        target: String,
        #[arg(long, default_value = "4..13")]
        doc_len: String,
        /// feasible-uniform or tail:K
        #[arg(long, default_value = "feasible-uniform")]
        placement: String,
        /// anchor:group:rate, or `published` for the reference coverage rates.
        #[arg(long, allow_hyphen_values = true)]
        inject: Vec<String>,
        /// Fraction of two-cause documents.
        #[arg(long)]
        two_cause: Option<f64>,
        /// Fraction of three-cause documents.
        #[arg(long)]
        three_cause: Option<f64>,
        /// Sample positions and cause counts instead of apportioning them.
        #[arg(long)]
        no_exact: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub subcommand: String,
    pub config: Value,
    pub seed: u64,
    pub version: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

struct Run<'a> {
    stdout: &'a mut dyn Write,
    record: RunRecord,
}

impl Run<'_> {
    fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.record
            .inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn read_corpus(&mut self, path: &Path) -> Result<Corpus> {
        let bytes = self.read_input(path)?;
        parse_corpus(bytes.as_slice(), path.display().to_string())
            .with_context(|| format!("parsing {}", path.display()))
    }

    /// Write to `path` atomically, or to stdout when absent.
    fn emit(&mut self, path: Option<&Path>, bytes: &[u8]) -> Result<()> {
        let key = match path {
            Some(p) => {
                write_atomic(p, bytes)?;
                p.display().to_string()
            }
            None => {
                self.stdout.write_all(bytes)?;
                "<stdout>".to_string()
            }
        };
        self.record.outputs.insert(key, sha256_hex(bytes));
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write via a temporary file in the destination directory and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| anyhow!("writing {}: {}", path.display(), e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn render<T: Serialize>(
    format: Format,
    value: &T,
    table: impl FnOnce() -> String,
) -> Result<Vec<u8>> {
    match format {
        Format::Json => to_json(value),
        Format::Table => Ok(table().into_bytes()),
    }
}

/// A JSON object of position -> weight, or a serialized distribution.
pub fn load_distribution(bytes: &[u8]) -> Result<PositionDistribution<f64>> {
    if let Ok(d) = serde_json::from_slice::<PositionDistribution<f64>>(bytes) {
        return Ok(d);
    }
    let weights: BTreeMap<RelativePosition, f64> =
        serde_json::from_slice(bytes).context("expected a JSON object of position -> weight")?;
    Ok(PositionDistribution::from_weights(weights)?)
}

fn parse_preset(name: &str) -> Result<Preset> {
    name.parse::<Preset>().map_err(|e| anyhow!("{e}"))
}

fn resolve_target(spec: &str, run: &mut Run<'_>) -> Result<PositionDistribution<f64>> {
    if let Some(path) = spec.strip_prefix("file:") {
        let bytes = run.read_input(Path::new(path))?;
        return load_distribution(&bytes).with_context(|| format!("loading {path}"));
    }
    let name = spec.strip_prefix("preset:").unwrap_or(spec);
    Ok(preset_target(parse_preset(name)?))
}

/// Parse `argv` (program name first) and run the subcommand.
///
/// Returns the process exit status: 0 on success, 1 on a domain error,
/// 2 on a usage error.
pub fn dispatch<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return e.exit_code();
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            1
        }
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let out = cli.out.clone();
    let record_path = cli
        .record
        .clone()
        .or_else(|| out.as_ref().map(|p| sidecar(p)));
    let mut run = Run {
        stdout,
        record: RunRecord {
            subcommand: String::new(),
            config: Value::Null,
            seed: cli.seed,
            version: VERSION.to_string(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        },
    };
    let seed = cli.seed;
    let format = cli.format;
    let out = out.as_deref();
    match cli.command {
        Command::Audit { corpus } => {
            run.record.subcommand = "audit".into();
            run.record.config = json!({ "corpus": corpus, "format": format });
            let c = run.read_corpus(&corpus)?;
            let report = stats::audit_report::<f64>(&c)?;
            let bytes = render(format, &report, || report.to_table())?;
            run.emit(out, &bytes)?;
        }
        Command::Baseline {
            corpus,
            trials,
            test_fraction,
            prior,
            pool,
            predictor,
            tie_break,
        } => {
            run.record.subcommand = "baseline".into();
            let c = run.read_corpus(&corpus)?;
            let prior_source = match prior.as_str() {
                "train" => PriorSource::Train,
                "corpus" => PriorSource::Corpus,
                other => PriorSource::Supplied(resolve_target(other, &mut run)?),
            };
            let config = TrialConfig {
                trials,
                test_fraction,
                seed,
                prior: prior_source,
                predictor,
                tie_break,
            };
            run.record.config = json!({
                "corpus": corpus,
                "prior_spec": prior,
                "pool": pool,
                "format": format,
                "trial_config": config,
            });
            let aggregate = baseline::run_trials(&c, &config)?;
            // Closed form over the whole corpus, when the prior does not depend on the split.
            let expected = match (&config.prior, predictor) {
                (PriorSource::Train, _) | (_, Predictor::Majority) => None,
                (PriorSource::Corpus, _) => Some(baseline::expected_scores(
                    &c,
                    &PriorModel::from_corpus(&c)?,
                )?),
                (PriorSource::Supplied(d), _) => Some(baseline::expected_scores(
                    &c,
                    &PriorModel::supplied(d.clone()),
                )?),
            };
            let report = BaselineReport::new(aggregate, pool, expected);
            let bytes = render(format, &report, || report.to_table())?;
            run.emit(out, &bytes)?;
        }
        Command::Eval { gold, predictions } => {
            run.record.subcommand = "eval".into();
            run.record.config =
                json!({ "gold": gold, "predictions": predictions, "format": format });
            let c = run.read_corpus(&gold)?;
            let bytes = run.read_input(&predictions)?;
            let preds = parse_predictions(bytes.as_slice())?;
            let scores = metrics::score::<f64>(&preds, &c)?;
            let bytes = render(format, &scores, || scores_table(&scores))?;
            run.emit(out, &bytes)?;
        }
        Command::Lexicon {
            corpus,
            lexicon,
            match_mode,
        } => {
            run.record.subcommand = "lexicon".into();
            run.record.config = json!({
                "corpus": corpus,
                "lexicon": lexicon,
                "match_mode": match_mode,
                "format": format,
            });
            let c = run.read_corpus(&corpus)?;
            let mut lex = match &lexicon {
                Some(p) => {
                    let bytes = run.read_input(p)?;
                    let text = String::from_utf8(bytes).context("lexicon is not UTF-8")?;
                    load_lexicon(&text)?
                }
                None => CueLexicon::default_lexicon(),
            };
            if let Some(m) = match_mode {
                lex = lex.with_mode(m);
            }
            let report = lexicon::coverage_report::<f64>(&c, &lex)?;
            let bytes = render(format, &report, || report.to_table())?;
            run.emit(out, &bytes)?;
        }
        Command::Debias {
            corpus,
            preset,
            target,
            only,
            tolerance,
            manifest,
        } => {
            run.record.subcommand = "debias".into();
            let c = run.read_corpus(&corpus)?;
            let (output, manifest_bytes) = if let Some(p) = only {
                run.record.config = json!({ "corpus": corpus, "only": p });
                (debias::filter_single_position(&c, p), None)
            } else {
                let dist = match (&preset, &target) {
                    (Some(name), None) => preset_target(parse_preset(name)?),
                    (None, Some(path)) => {
                        let bytes = run.read_input(path)?;
                        load_distribution(&bytes)
                            .with_context(|| format!("loading {}", path.display()))?
                    }
                    _ => bail!("debias needs exactly one of --preset, --target or --only"),
                };
                let plan = ResamplePlan::new(dist, seed).with_tolerance(tolerance);
                run.record.config = json!({
                    "corpus": corpus,
                    "preset": preset,
                    "target": target,
                    "format": format,
                    "plan": plan,
                });
                let (b, m) = debias::rebalance(&c, &plan)?;
                let bytes = render(format, &m, || manifest_table(&m))?;
                (b, Some(bytes))
            };
            run.emit(out, &serialize_corpus(&output))?;
            match (manifest_bytes, &manifest) {
                (Some(bytes), Some(path)) => run.emit(Some(path), &bytes)?,
                (Some(bytes), None) => stderr.write_all(&bytes)?,
                (None, _) => {}
            }
        }
        Command::Synth {
            n,
            target,
            doc_len,
            placement,
            inject,
            two_cause,
            three_cause,
            no_exact,
        } => {
            run.record.subcommand = "synth".into();
            let dist = resolve_target(&target, &mut run)?;
            let mut config = SynthConfig::new(n, dist);
            config.doc_length = doc_len.parse::<DocLength>()?;
            config.emotion_placement = placement.parse::<Placement>()?;
            config.exact_counts = !no_exact;
            if let Some(f) = two_cause {
                config.multi_cause.insert(2, f);
            }
            if let Some(f) = three_cause {
                config.multi_cause.insert(3, f);
            }
            for spec in &inject {
                if spec == "published" {
                    config.cue_injection.extend(synth::published_injections());
                } else {
                    config.cue_injection.push(spec.parse::<Injection>()?);
                }
            }
            run.record.config = json!({ "target_spec": target, "synth": config });
            let c = synth::generate(&config, seed)?;
            run.emit(out, &serialize_corpus(&c))?;
        }
    }

    let record = to_json(&run.record)?;
    match record_path {
        Some(p) => write_atomic(&p, &record)?,
        None => {
            let mut line = serde_json::to_vec(&run.record)?;
            line.push(b'\n');
            stderr.write_all(&line)?;
        }
    }
    Ok(())
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineReport {
    pub pool: Pool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub aggregate: TrialAggregate<f64>,
    /// Closed-form expectation on the full corpus, when defined.
    pub expected: Option<EvalScores<f64>>,
    /// How prior draws outside a document are handled.
    pub invalid_positions: &'static str,
}

const INVALID_POSITIONS: &str = "prior renormalized over each document's valid positions";

impl BaselineReport {
    pub fn new(
        aggregate: TrialAggregate<f64>,
        pool: Pool,
        expected: Option<EvalScores<f64>>,
    ) -> Self {
        let (precision, recall, f1) = aggregate.headline(pool);
        BaselineReport {
            pool,
            precision,
            recall,
            f1,
            aggregate,
            expected,
            invalid_positions: INVALID_POSITIONS,
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>10} {:>10} {:>10}", "Trial", "P", "R", "F1");
        for (i, t) in self.aggregate.per_trial.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<8} {:>10.4} {:>10.4} {:>10.4}",
                i, t.precision, t.recall, t.f1
            );
        }
        let label = match self.pool {
            Pool::Macro => "mean",
            Pool::Micro => "pooled",
        };
        let _ = writeln!(
            s,
            "{:<8} {:>10.4} {:>10.4} {:>10.4}",
            label, self.precision, self.recall, self.f1
        );
        let _ = writeln!(s, "F1 std across trials: {:.4}", self.aggregate.std_f1);
        let _ = writeln!(s, "Invalid positions: {}", self.invalid_positions);
        if let Some(e) = &self.expected {
            let _ = writeln!(
                s,
                "{:<8} {:>10.4} {:>10.4} {:>10.4}",
                "expected", e.precision, e.recall, e.f1
            );
        }
        s
    }
}

fn scores_table(s: &EvalScores<f64>) -> String {
    format!(
        "proposed {}\nannotated {}\ncorrect {}\nP {:.4}\nR {:.4}\nF1 {:.4}\n",
        s.proposed, s.annotated, s.correct, s.precision, s.recall, s.f1
    )
}

fn manifest_table(m: &ResampleManifest<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Source: {} ({} instances)",
        m.source_label, m.source_size
    );
    let _ = writeln!(s, "Kept: {} instances", m.size);
    let _ = writeln!(
        s,
        "{:<10} {:>9} {:>10} {:>6} {:>9}",
        "Position", "Target", "Available", "Kept", "Achieved"
    );
    for r in &m.strata {
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>10} {:>6} {:>9}",
            r.position.to_string(),
            percent(r.target),
            r.available,
            r.kept,
            percent(m.achieved.prob(r.position))
        );
    }
    s
}
