//! Single-position subsets and seeded stratified downsampling toward a target
//! position distribution.
//!
//! Instances are binned into strata by [`stratum_of`]. For a target `t`,
//! [`rebalance`] keeps the largest total `T` for which every stratum can
//! supply its quota `round(T · t(p))` (any rounding residual goes to the
//! stratum with the largest target mass), then draws each quota by a seeded
//! shuffle. Kept instances stay in corpus order.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Instance, RelativePosition};
use crate::scalar::{round_half_up, Real};
use crate::stats::{self, PositionDistribution, StatsError};

#[derive(Debug, Error)]
pub enum DebiasError {
    #[error("target demands position {0} but the corpus has no instance in that stratum")]
    InfeasibleTarget(RelativePosition),
    #[error("no non-empty sample satisfies the target quotas")]
    NoFeasibleSize,
    #[error("achieved mass {achieved:.4} at position {position} misses target {target:.4} by more than {tolerance}")]
    ToleranceUnattainable {
        position: RelativePosition,
        achieved: f64,
        target: f64,
        tolerance: f64,
    },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Positions appearing in the published distribution tables, ascending.
pub const TABLE_POSITIONS: [i64; 18] = [
    -10, -9, -7, -6, -5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5, 7, 8, 12,
];

/// Cause counts of the original benchmark (2,167 causes over 2,105 documents).
///
/// Each count is the only integer whose share of 2,167 truncates to the
/// published two-decimal percentage; they sum to 2,167 exactly, and the `-1` and `0` counts equal the denominators of the
/// cue-word coverage tables (1,180 and 511).
pub const ORIGINAL_COUNTS: [usize; 18] = [
    1, 1, 3, 7, 7, 13, 37, 176, 1180, 511, 162, 48, 11, 4, 2, 1, 2, 1,
];

/// Published percentages of the original benchmark (sum 99.91 through truncation).
pub const ORIGINAL_PERCENT: [f64; 18] = [
    0.04, 0.04, 0.13, 0.32, 0.32, 0.59, 1.70, 8.12, 54.45, 23.58, 7.47, 2.21, 0.50, 0.18, 0.09,
    0.04, 0.09, 0.04,
];

pub const DATASET1_PERCENT: [f64; 18] = [
    0.05, 0.05, 0.15, 0.36, 0.36, 0.68, 1.79, 8.79, 48.65, 26.90, 8.53, 2.52, 0.57, 0.21, 0.10,
    0.05, 0.10, 0.05,
];

pub const DATASET2_PERCENT: [f64; 18] = [
    0.06, 0.06, 0.19, 0.44, 0.44, 0.83, 2.30, 10.44, 44.90, 25.62, 10.24, 3.07, 0.70, 0.25, 0.18,
    0.06, 0.12, 0.06,
];

pub const DATASET3_PERCENT: [f64; 18] = [
    0.08, 0.08, 0.26, 0.61, 0.61, 1.05, 2.82, 13.32, 36.71, 24.18, 14.12, 4.23, 0.97, 0.35, 0.17,
    0.08, 0.17, 0.08,
];

pub const DATASET4_PERCENT: [f64; 18] = [
    0.10, 0.10, 0.31, 0.74, 0.74, 1.27, 3.72, 15.63, 28.29, 24.04, 17.12, 5.10, 1.17, 0.42, 0.21,
    0.10, 0.21, 0.10,
];

pub const BALANCED_PERCENT: [f64; 18] = [
    0.12, 0.12, 0.38, 0.89, 0.89, 1.54, 4.10, 18.87, 22.07, 21.69, 20.41, 6.16, 1.41, 0.51, 0.25,
    0.12, 0.25, 0.12,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Original,
    Dataset1,
    Dataset2,
    Dataset3,
    Dataset4,
    Balanced,
}

impl Preset {
    /// Presets in order of decreasing `-1` share.
    pub const SERIES: [Preset; 6] = [
        Preset::Original,
        Preset::Dataset1,
        Preset::Dataset2,
        Preset::Dataset3,
        Preset::Dataset4,
        Preset::Balanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Original => "original",
            Preset::Dataset1 => "dataset1",
            Preset::Dataset2 => "dataset2",
            Preset::Dataset3 => "dataset3",
            Preset::Dataset4 => "dataset4",
            Preset::Balanced => "balanced",
        }
    }
}

impl FromStr for Preset {
    type Err = DebiasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::SERIES
            .into_iter()
            .find(|p| p.name() == s || (s == "table2" && *p == Preset::Original))
            .ok_or_else(|| DebiasError::UnknownPreset(s.to_string()))
    }
}

fn from_percent<P: Real>(col: &[f64; 18]) -> PositionDistribution<P> {
    PositionDistribution::from_weights(
        TABLE_POSITIONS
            .iter()
            .zip(col)
            .map(|(&p, &w)| (RelativePosition(p), P::lit(w))),
    )
    .expect("table columns are positive")
}

/// Target distribution for a named preset.
///
/// `original` is built from [`ORIGINAL_COUNTS`]; the other columns are the
/// published percentages, renormalized to sum to one.
pub fn preset_target<P: Real>(preset: Preset) -> PositionDistribution<P> {
    match preset {
        Preset::Original => {
            let counts: BTreeMap<_, _> = TABLE_POSITIONS
                .iter()
                .zip(ORIGINAL_COUNTS)
                .map(|(&p, c)| (RelativePosition(p), c))
                .collect();
            PositionDistribution::from_counts(&counts).expect("positive counts")
        }
        Preset::Dataset1 => from_percent(&DATASET1_PERCENT),
        Preset::Dataset2 => from_percent(&DATASET2_PERCENT),
        Preset::Dataset3 => from_percent(&DATASET3_PERCENT),
        Preset::Dataset4 => from_percent(&DATASET4_PERCENT),
        Preset::Balanced => from_percent(&BALANCED_PERCENT),
    }
}

/// Instances whose causes all sit at `position`.
pub fn filter_single_position(corpus: &Corpus, position: RelativePosition) -> Corpus {
    corpus.filter(
        format!("{} [only {}]", corpus.source_label, position),
        |inst| inst.cause_positions().all(|p| p == position),
    )
}

/// Stratum of an instance: its cause position nearest the emotion clause,
/// ties toward the negative side.
pub fn stratum_of(instance: &Instance) -> RelativePosition {
    instance
        .cause_positions()
        .min_by_key(|p| (p.0.abs(), p.0))
        .expect("instances have at least one cause")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    MaxFeasibleSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct ResamplePlan<P: Real> {
    pub target: PositionDistribution<P>,
    pub seed: u64,
    /// Largest allowed |achieved − target| at positions whose target is at least 1%.
    pub tolerance: P,
    pub strategy: Strategy,
    /// Fill each stratum's quota from single-cause instances before
    /// multi-cause ones, so secondary causes shift the achieved mass less.
    #[serde(default = "yes")]
    pub prefer_single_cause: bool,
}

fn yes() -> bool {
    true
}

impl<P: Real> ResamplePlan<P> {
    pub fn new(target: PositionDistribution<P>, seed: u64) -> Self {
        ResamplePlan {
            target,
            seed,
            tolerance: P::lit(0.02),
            strategy: Strategy::MaxFeasibleSize,
            prefer_single_cause: true,
        }
    }

    pub fn with_tolerance(mut self, tolerance: P) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_prefer_single_cause(mut self, prefer: bool) -> Self {
        self.prefer_single_cause = prefer;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct StratumRecord<P: Real> {
    pub position: RelativePosition,
    pub target: P,
    pub available: usize,
    pub kept: usize,
    pub multi_cause_available: usize,
    pub multi_cause_kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct ResampleManifest<P: Real> {
    pub source_label: String,
    pub source_size: usize,
    pub size: usize,
    pub kept_ids: Vec<String>,
    /// One record per stratum present in the source or the target, by position.
    pub strata: Vec<StratumRecord<P>>,
    pub achieved: PositionDistribution<P>,
    pub plan: ResamplePlan<P>,
}

/// Per-stratum quotas for total size `t`, or `None` if some stratum cannot supply its share.
fn quotas<P: Real>(
    t: usize,
    target: &PositionDistribution<P>,
    largest: RelativePosition,
    available: &BTreeMap<RelativePosition, usize>,
) -> Option<BTreeMap<RelativePosition, usize>> {
    let mut q: BTreeMap<RelativePosition, i64> = target
        .iter()
        .map(|(p, m)| (p, round_half_up(t as f64 * m.as_f64()) as i64))
        .collect();
    let residual = t as i64 - q.values().sum::<i64>();
    *q.get_mut(&largest).expect("mode in support") += residual;
    let mut out = BTreeMap::new();
    for (p, k) in q {
        let avail = available.get(&p).copied().unwrap_or(0) as i64;
        if k < 0 || k > avail {
            return None;
        }
        out.insert(p, k as usize);
    }
    Some(out)
}

/// Downsample `corpus` so its strata follow `plan.target`.
pub fn rebalance<P: Real>(
    corpus: &Corpus,
    plan: &ResamplePlan<P>,
) -> Result<(Corpus, ResampleManifest<P>), DebiasError> {
    if plan.tolerance.is_nan() || plan.tolerance <= P::zero() {
        return Err(DebiasError::InvalidPlan(
            "tolerance must be positive".into(),
        ));
    }
    let mut strata: BTreeMap<RelativePosition, Vec<usize>> = BTreeMap::new();
    for (i, inst) in corpus.instances().iter().enumerate() {
        strata.entry(stratum_of(inst)).or_default().push(i);
    }
    let available: BTreeMap<_, _> = strata.iter().map(|(&p, v)| (p, v.len())).collect();
    for &p in plan.target.support() {
        if available.get(&p).copied().unwrap_or(0) == 0 {
            return Err(DebiasError::InfeasibleTarget(p));
        }
    }
    let largest = plan.target.mode();
    let (size, quota) = (1..=corpus.len())
        .rev()
        .find_map(|t| quotas(t, &plan.target, largest, &available).map(|q| (t, q)))
        .ok_or(DebiasError::NoFeasibleSize)?;

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut keep = vec![false; corpus.len()];
    for (p, members) in &strata {
        let k = quota.get(p).copied().unwrap_or(0);
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        if plan.prefer_single_cause {
            shuffled.sort_by_key(|&i| corpus.instances()[i].cause_indices().len() > 1);
        }
        for &i in &shuffled[..k] {
            keep[i] = true;
        }
    }
    let kept_idx: Vec<usize> = (0..corpus.len()).filter(|&i| keep[i]).collect();
    let out = corpus.select(
        format!("{} [rebalanced seed={}]", corpus.source_label, plan.seed),
        &kept_idx,
    );
    let achieved: PositionDistribution<P> = stats::position_distribution(&out)?;

    for (p, t) in plan.target.iter() {
        if t >= P::lit(0.01) {
            let a = achieved.prob(p);
            if (a - t).abs() > plan.tolerance {
                return Err(DebiasError::ToleranceUnattainable {
                    position: p,
                    achieved: a.as_f64(),
                    target: t.as_f64(),
                    tolerance: plan.tolerance.as_f64(),
                });
            }
        }
    }

    let mut positions: Vec<RelativePosition> = strata.keys().copied().collect();
    positions.extend(plan.target.support().iter().copied());
    positions.sort_unstable();
    positions.dedup();
    let is_multi = |i: &usize| corpus.instances()[*i].cause_indices().len() > 1;
    let records = positions
        .into_iter()
        .map(|p| {
            let members = strata.get(&p).map(Vec::as_slice).unwrap_or(&[]);
            StratumRecord {
                position: p,
                target: plan.target.prob(p),
                available: members.len(),
                kept: members.iter().filter(|&&i| keep[i]).count(),
                multi_cause_available: members.iter().filter(|i| is_multi(i)).count(),
                multi_cause_kept: members.iter().filter(|&&i| keep[i] && is_multi(&i)).count(),
            }
        })
        .collect();

    let manifest = ResampleManifest {
        source_label: corpus.source_label.clone(),
        source_size: corpus.len(),
        size,
        kept_ids: out.instances().iter().map(|i| i.id().to_string()).collect(),
        strata: records,
        achieved,
        plan: plan.clone(),
    };
    Ok((out, manifest))
}
