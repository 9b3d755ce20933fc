//! Synthetic corpora with a controlled cause-position distribution.
//!
//! With `exact_counts`, cause positions are apportioned to the target before
//! any randomness is used, so every seed yields the same position counts and
//! only document shapes and placeholder text vary. Placeholder tokens are
//! upper-case (`W0417`) and never contain a lower-case romanized cue, so
//! lexicon matches come only from injected cues.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Instance, RelativePosition};
use crate::debias::{preset_target, Preset};
use crate::lexicon::{CueLexicon, MatchMode};
use crate::scalar::{round_half_up, Real};
use crate::stats::PositionDistribution;

pub const EMOTION_KEYWORD: &str = "EMO";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("position {position} needs documents of at least {needed} clauses; longest allowed is {longest}")]
    InfeasibleQuota {
        position: RelativePosition,
        needed: usize,
        longest: usize,
    },
    #[error(
        "cannot give a {causes}-cause instance distinct positions that fit in {longest} clauses"
    )]
    InfeasibleMultiCause { causes: usize, longest: usize },
    #[error("no cue group {group:?} at anchor {anchor} in the lexicon")]
    UnknownGroup {
        anchor: RelativePosition,
        group: String,
    },
    #[error("invalid document length spec {0:?}")]
    BadDocLength(String),
    #[error("invalid injection spec {0:?}; expected anchor:group:rate")]
    BadInjection(String),
}

/// Weighted distribution over document lengths (clause counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocLength {
    weights: BTreeMap<usize, f64>,
}

impl DocLength {
    /// Uniform over `lo..=hi`.
    pub fn uniform(lo: usize, hi: usize) -> Result<Self, SynthError> {
        Self::weighted((lo..=hi).map(|l| (l, 1.0)))
    }

    pub fn weighted<I: IntoIterator<Item = (usize, f64)>>(items: I) -> Result<Self, SynthError> {
        let mut weights = BTreeMap::new();
        for (l, w) in items {
            if l == 0 || w.is_nan() || w < 0.0 || !w.is_finite() {
                return Err(SynthError::BadDocLength(format!("{l}:{w}")));
            }
            if w > 0.0 {
                *weights.entry(l).or_insert(0.0) += w;
            }
        }
        if weights.is_empty() {
            return Err(SynthError::BadDocLength("empty".into()));
        }
        Ok(DocLength { weights })
    }

    pub fn longest(&self) -> usize {
        *self.weights.keys().next_back().expect("non-empty")
    }

    fn draw_at_least<R: Rng>(&self, needed: usize, rng: &mut R) -> Option<usize> {
        let (lens, ws): (Vec<usize>, Vec<f64>) =
            self.weights.range(needed..).map(|(&l, &w)| (l, w)).unzip();
        if lens.is_empty() {
            return None;
        }
        Some(lens[WeightedIndex::new(&ws).ok()?.sample(rng)])
    }
}

impl Default for DocLength {
    fn default() -> Self {
        DocLength::uniform(4, 13).expect("valid range")
    }
}

/// Parses `4..12`, `4..=12`, `7`, and comma lists with optional weights: `4..6,7..16:0.01`.
impl FromStr for DocLength {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SynthError::BadDocLength(s.to_string());
        let mut items = Vec::new();
        for part in s.split(',') {
            let (range, weight) = match part.split_once(':') {
                Some((r, w)) => (r.trim(), w.trim().parse::<f64>().map_err(|_| bad())?),
                None => (part.trim(), 1.0),
            };
            let (lo, hi) = match range.split_once("..") {
                Some((a, b)) => (
                    a.parse::<usize>().map_err(|_| bad())?,
                    b.trim_start_matches('=')
                        .parse::<usize>()
                        .map_err(|_| bad())?,
                ),
                None => {
                    let l = range.parse::<usize>().map_err(|_| bad())?;
                    (l, l)
                }
            };
            if lo > hi {
                return Err(bad());
            }
            items.extend((lo..=hi).map(|l| (l, weight)));
        }
        DocLength::weighted(items)
    }
}

impl fmt::Display for DocLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .weights
            .iter()
            .map(|(l, w)| format!("{l}:{w}"))
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Where the emotion clause goes inside a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Uniform over indices that keep every cause inside the document.
    #[default]
    FeasibleUniform,
    /// Uniform over the last `k` clauses where feasible, else feasible-uniform.
    Tail(usize),
}

impl FromStr for Placement {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" | "feasible-uniform" => Ok(Placement::FeasibleUniform),
            _ => s
                .strip_prefix("tail:")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k > 0)
                .map(Placement::Tail)
                .ok_or_else(|| SynthError::InvalidConfig(format!("bad placement {s:?}"))),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::FeasibleUniform => write!(f, "feasible-uniform"),
            Placement::Tail(k) => write!(f, "tail:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub anchor: RelativePosition,
    pub group: String,
    /// Fraction of causes at `anchor` that receive a cue from `group`.
    pub rate: f64,
}

impl FromStr for Injection {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SynthError::BadInjection(s.to_string());
        let mut it = s.splitn(3, ':');
        let anchor = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let group = it.next().ok_or_else(bad)?.to_string();
        let rate = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        Ok(Injection {
            anchor,
            group,
            rate,
        })
    }
}

/// Published per-group coverage counts: (anchor, group, matched causes, causes at anchor).
pub const PUBLISHED_COVERAGE: [(i64, &str, usize, usize); 10] = [
    (-1, "I", 117, 1180),
    (-1, "II", 85, 1180),
    (-1, "III", 151, 1180),
    (-1, "IV", 70, 1180),
    (-1, "V", 181, 1180),
    (0, "I", 143, 511),
    (0, "II", 47, 511),
    (0, "III", 151, 511),
    (0, "IV", 34, 511),
    (0, "V", 68, 511),
];

/// Injection rates reproducing the published cue coverage.
pub fn published_injections() -> Vec<Injection> {
    PUBLISHED_COVERAGE
        .iter()
        .map(|&(a, g, k, n)| Injection {
            anchor: RelativePosition(a),
            group: g.to_string(),
            rate: k as f64 / n as f64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct SynthConfig<P: Real> {
    pub n_instances: usize,
    pub position_target: PositionDistribution<P>,
    pub doc_length: DocLength,
    pub emotion_placement: Placement,
    /// Fraction of instances with k > 1 causes; the rest have one.
    pub multi_cause: BTreeMap<usize, f64>,
    /// Multi-cause instances draw only from positions holding at least this
    /// share of the target mass (all positions when none qualify), so rare
    /// positions stay in single-cause documents.
    #[serde(default = "default_multi_min_share")]
    pub multi_cause_min_share: f64,
    pub cue_injection: Vec<Injection>,
    pub exact_counts: bool,
    /// Lexicon supplying injected cues; the bundled one when absent.
    #[serde(skip)]
    pub lexicon: Option<CueLexicon>,
}

impl<P: Real> SynthConfig<P> {
    /// Defaults shaped like the original benchmark: 2,105 documents, its
    /// position counts, and 56 two-cause plus 3 three-cause documents.
    pub fn benchmark_clone() -> Self {
        SynthConfig {
            n_instances: 2105,
            position_target: preset_target(Preset::Original),
            doc_length: DocLength::default(),
            emotion_placement: Placement::FeasibleUniform,
            multi_cause: BTreeMap::from([(2, 56.0 / 2105.0), (3, 3.0 / 2105.0)]),
            multi_cause_min_share: default_multi_min_share(),
            cue_injection: Vec::new(),
            exact_counts: true,
            lexicon: None,
        }
    }

    pub fn new(n_instances: usize, position_target: PositionDistribution<P>) -> Self {
        SynthConfig {
            n_instances,
            position_target,
            ..Self::benchmark_clone()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_instances == 0 {
            return bad("n_instances must be at least 1".into());
        }
        let mut extra = 0.0;
        for (&k, &f) in &self.multi_cause {
            if k < 2 {
                return bad(format!("multi_cause key {k} must be at least 2"));
            }
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("multi_cause fraction {f} outside [0, 1]"));
            }
            extra += f;
        }
        if extra >= 1.0 {
            return bad(format!(
                "multi-cause fractions sum to {extra}, must be below 1"
            ));
        }
        if !(0.0..=1.0).contains(&self.multi_cause_min_share) {
            return bad(format!(
                "multi_cause_min_share {} outside [0, 1]",
                self.multi_cause_min_share
            ));
        }
        let mut per_anchor: BTreeMap<RelativePosition, f64> = BTreeMap::new();
        for inj in &self.cue_injection {
            if !(0.0..=1.0).contains(&inj.rate) {
                return bad(format!("injection rate {} outside [0, 1]", inj.rate));
            }
            *per_anchor.entry(inj.anchor).or_default() += inj.rate;
        }
        if let Some((a, r)) = per_anchor.iter().find(|(_, r)| **r > 1.0 + 1e-9) {
            return bad(format!("injection rates at anchor {a} sum to {r} > 1"));
        }
        Ok(())
    }

    fn describe(&self, seed: u64) -> String {
        format!(
            "synth n={} seed={} doc_len={} placement={} exact_counts={}",
            self.n_instances, seed, self.doc_length, self.emotion_placement, self.exact_counts
        )
    }
}

/// Clause tokens, emotion index, cause indices.
type Draft = (Vec<Vec<String>>, usize, Vec<usize>);

fn default_multi_min_share() -> f64 {
    0.05
}

/// Split `total` into integer parts proportional to `weights` (largest remainder,
/// ties to the earlier entry).
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let short = total - parts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(short) {
        parts[i] += 1;
    }
    parts
}

/// Clauses needed to host all `positions` around one emotion clause.
fn span_needed(positions: &[RelativePosition]) -> usize {
    let lo = positions.iter().map(|p| p.0).min().unwrap_or(0).min(0);
    let hi = positions.iter().map(|p| p.0).max().unwrap_or(0).max(0);
    (hi - lo + 1) as usize
}

fn placeholder_clause<R: Rng>(rng: &mut R) -> Vec<String> {
    let n = rng.gen_range(2..=5);
    (0..n)
        .map(|_| format!("W{:04}", rng.gen_range(0..10_000)))
        .collect()
}

/// Cue groups' cues that do not contain a cue of another group at the same anchor.
fn clean_cues<'a>(lexicon: &'a CueLexicon, anchor: RelativePosition, group: &str) -> Vec<&'a str> {
    let own = match lexicon.group(anchor, group) {
        Some(g) => g,
        None => return Vec::new(),
    };
    let clean: Vec<&str> = own
        .cues
        .iter()
        .filter(|c| {
            lexicon.match_mode == MatchMode::Token
                || lexicon
                    .groups_at(anchor)
                    .filter(|g| g.id != group)
                    .all(|g| g.cues.iter().all(|o| !c.contains(o.as_str())))
        })
        .map(String::as_str)
        .collect();
    if clean.is_empty() {
        own.cues.iter().map(String::as_str).collect()
    } else {
        clean
    }
}

/// Generate a corpus from `config`; the same `(config, seed)` always gives the same corpus.
pub fn generate<P: Real>(config: &SynthConfig<P>, seed: u64) -> Result<Corpus, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_instances;
    let longest = config.doc_length.longest();

    // cause count per instance
    let mut counts: Vec<usize> = if config.exact_counts {
        let mut v = Vec::with_capacity(n);
        for (&k, &f) in &config.multi_cause {
            v.extend(std::iter::repeat_n(k, round_half_up(n as f64 * f)));
        }
        if v.len() > n {
            return Err(SynthError::InvalidConfig(
                "multi-cause quotas exceed n".into(),
            ));
        }
        v.resize(n, 1);
        v
    } else {
        let ks: Vec<usize> = std::iter::once(1)
            .chain(config.multi_cause.keys().copied())
            .collect();
        let extra: f64 = config.multi_cause.values().sum();
        let ws: Vec<f64> = std::iter::once(1.0 - extra)
            .chain(config.multi_cause.values().copied())
            .collect();
        let dist = WeightedIndex::new(&ws)
            .map_err(|e| SynthError::InvalidConfig(format!("cause-count weights: {e}")))?;
        (0..n).map(|_| ks[dist.sample(&mut rng)]).collect()
    };
    counts.shuffle(&mut rng);
    let total: usize = counts.iter().sum();

    // position pool
    let support: Vec<RelativePosition> = config.position_target.support().to_vec();
    let masses: Vec<f64> = config
        .position_target
        .iter()
        .map(|(_, m)| m.as_f64())
        .collect();
    let mut pool: Vec<RelativePosition> = if config.exact_counts {
        let quota = apportion(total, &masses);
        for (&p, &q) in support.iter().zip(&quota) {
            let needed = span_needed(&[p]);
            if q > 0 && needed > longest {
                return Err(SynthError::InfeasibleQuota {
                    position: p,
                    needed,
                    longest,
                });
            }
        }
        support
            .iter()
            .zip(&quota)
            .flat_map(|(&p, &q)| std::iter::repeat_n(p, q))
            .collect()
    } else {
        let dist = WeightedIndex::new(&masses).expect("distribution has positive mass");
        let drawn: Vec<_> = (0..total).map(|_| support[dist.sample(&mut rng)]).collect();
        if let Some(&p) = drawn.iter().find(|p| span_needed(&[**p]) > longest) {
            return Err(SynthError::InfeasibleQuota {
                position: p,
                needed: span_needed(&[p]),
                longest,
            });
        }
        drawn
    };
    pool.shuffle(&mut rng);

    // Deal positions, multi-cause instances first so they can pick distinct
    // values. They never take the last unit of a position, so every position
    // keeps a single-cause instance and a non-empty stratum.
    let mut common: Vec<RelativePosition> = config
        .position_target
        .iter()
        .filter(|(_, m)| m.as_f64() >= config.multi_cause_min_share)
        .map(|(p, _)| p)
        .collect();
    if common.is_empty() {
        common = support.clone();
    }
    let mut remaining: BTreeMap<RelativePosition, usize> = BTreeMap::new();
    for &p in &pool {
        *remaining.entry(p).or_default() += 1;
    }
    let mut assigned: Vec<Vec<RelativePosition>> = vec![Vec::new(); n];
    for i in (0..n).filter(|&i| counts[i] > 1) {
        let mut chosen: Vec<RelativePosition> = Vec::with_capacity(counts[i]);
        while chosen.len() < counts[i] {
            let pick = pool.iter().rposition(|p| {
                if chosen.contains(p) || remaining[p] < 2 || !common.contains(p) {
                    return false;
                }
                let mut s = chosen.clone();
                s.push(*p);
                span_needed(&s) <= longest
            });
            match pick {
                Some(j) => {
                    let p = pool.swap_remove(j);
                    *remaining.get_mut(&p).unwrap() -= 1;
                    chosen.push(p);
                }
                None => {
                    return Err(SynthError::InfeasibleMultiCause {
                        causes: counts[i],
                        longest,
                    })
                }
            }
        }
        assigned[i] = chosen;
    }
    for i in (0..n).filter(|&i| counts[i] == 1) {
        assigned[i] = vec![pool.pop().expect("pool holds one position per cause")];
    }

    // shapes and text
    let mut docs: Vec<Draft> = Vec::with_capacity(n);
    for positions in &assigned {
        let needed = span_needed(positions);
        let len = config.doc_length.draw_at_least(needed, &mut rng).ok_or(
            SynthError::InfeasibleMultiCause {
                causes: positions.len(),
                longest,
            },
        )?;
        let min_p = positions.iter().map(|p| p.0).min().unwrap();
        let max_p = positions.iter().map(|p| p.0).max().unwrap();
        let lo = (-min_p).max(0) as usize;
        let hi = len - 1 - max_p.max(0) as usize;
        let e = match config.emotion_placement {
            Placement::Tail(k) if hi + k >= len && hi >= lo => {
                let start = lo.max(len.saturating_sub(k));
                rng.gen_range(start..=hi)
            }
            _ => rng.gen_range(lo..=hi),
        };
        let mut clauses: Vec<Vec<String>> =
            (0..len).map(|_| placeholder_clause(&mut rng)).collect();
        clauses[e].push(EMOTION_KEYWORD.to_string());
        let causes = positions
            .iter()
            .map(|p| (e as i64 + p.0) as usize)
            .collect();
        docs.push((clauses, e, causes));
    }

    if !config.cue_injection.is_empty() {
        let default_lexicon;
        let lexicon = match &config.lexicon {
            Some(l) => l,
            None => {
                default_lexicon = CueLexicon::default_lexicon();
                &default_lexicon
            }
        };
        inject_cues(config, lexicon, &assigned, &mut docs, &mut rng)?;
    }

    let instances = docs
        .into_iter()
        .enumerate()
        .map(|(i, (clauses, e, causes))| {
            Instance::new(
                format!("synth-{i:05}"),
                clauses.into_iter().map(|c| c.join(" ")).collect(),
                e,
                EMOTION_KEYWORD,
                causes,
            )
            .expect("generated instances are valid")
        })
        .collect();
    Ok(Corpus::new(instances, config.describe(seed)).expect("ids are unique"))
}

fn inject_cues<P: Real, R: Rng>(
    config: &SynthConfig<P>,
    lexicon: &CueLexicon,
    assigned: &[Vec<RelativePosition>],
    docs: &mut [Draft],
    rng: &mut R,
) -> Result<(), SynthError> {
    let mut anchors: Vec<RelativePosition> =
        config.cue_injection.iter().map(|i| i.anchor).collect();
    anchors.sort_unstable();
    anchors.dedup();
    for anchor in anchors {
        let specs: Vec<&Injection> = config
            .cue_injection
            .iter()
            .filter(|i| i.anchor == anchor)
            .collect();
        for s in &specs {
            if lexicon.group(anchor, &s.group).is_none() {
                return Err(SynthError::UnknownGroup {
                    anchor,
                    group: s.group.clone(),
                });
            }
        }
        let mut candidates: Vec<usize> = (0..assigned.len())
            .filter(|&i| assigned[i].contains(&anchor))
            .collect();
        candidates.shuffle(rng);
        // A cue in the emotion clause is also visible to the -1 scan, so
        // same-clause injections prefer documents without a -1 cause.
        if anchor.0 == 0 {
            candidates.sort_by_key(|&i| assigned[i].contains(&RelativePosition::PREVIOUS));
        }
        let groups: Vec<Option<usize>> = if config.exact_counts {
            let mut g = Vec::with_capacity(candidates.len());
            for (k, s) in specs.iter().enumerate() {
                let q = round_half_up(s.rate * candidates.len() as f64);
                g.extend(std::iter::repeat_n(Some(k), q));
            }
            if g.len() > candidates.len() {
                return Err(SynthError::InvalidConfig(format!(
                    "injection quotas at anchor {anchor} exceed its {} causes",
                    candidates.len()
                )));
            }
            g.resize(candidates.len(), None);
            g
        } else {
            candidates
                .iter()
                .map(|_| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    specs.iter().position(|s| {
                        acc += s.rate;
                        u < acc
                    })
                })
                .collect()
        };
        for (&i, g) in candidates.iter().zip(groups) {
            let Some(g) = g else { continue };
            let cues = clean_cues(lexicon, anchor, &specs[g].group);
            let cue = cues[rng.gen_range(0..cues.len())].to_string();
            let (clauses, e, _) = &mut docs[i];
            let target = (*e as i64 + anchor.0) as usize;
            let tokens = &mut clauses[target];
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, cue);
        }
    }
    Ok(())
}
