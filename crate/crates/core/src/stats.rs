//! Position distribution of causes and corpus-level audit statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, RelativePosition};
use crate::scalar::{ratio, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("negative or non-finite mass {mass} at position {position}")]
    BadMass {
        position: RelativePosition,
        mass: f64,
    },
    #[error("distribution has zero total mass")]
    ZeroMass,
    #[error("distribution sums to {0}, not 1")]
    NotNormalized(f64),
}

/// Probability mass over relative positions.
///
/// Only positions with nonzero mass are stored, so `support()` and the keys of
/// `mass()` coincide. `total_causes` is the number of causes the distribution
/// was counted from, or zero when it was supplied as weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
#[serde(try_from = "RawDistribution<P>")]
pub struct PositionDistribution<P: Real> {
    mass: BTreeMap<RelativePosition, P>,
    support: Vec<RelativePosition>,
    total_causes: u64,
}

#[derive(Deserialize)]
struct RawDistribution<P> {
    mass: BTreeMap<RelativePosition, P>,
    #[serde(default)]
    total_causes: u64,
}

impl<P: Real> TryFrom<RawDistribution<P>> for PositionDistribution<P> {
    type Error = StatsError;

    fn try_from(raw: RawDistribution<P>) -> Result<Self, StatsError> {
        let sum: P = raw.mass.values().copied().sum();
        if (sum - P::one()).abs() > P::mass_tolerance() {
            return Err(StatsError::NotNormalized(sum.as_f64()));
        }
        let mut d = Self::from_weights(raw.mass)?;
        d.total_causes = raw.total_causes;
        Ok(d)
    }
}

impl<P: Real> PositionDistribution<P> {
    /// Normalize non-negative weights into a distribution.
    pub fn from_weights<I>(weights: I) -> Result<Self, StatsError>
    where
        I: IntoIterator<Item = (RelativePosition, P)>,
    {
        let mut acc: BTreeMap<RelativePosition, P> = BTreeMap::new();
        for (p, w) in weights {
            if !w.is_finite() || w < P::zero() {
                return Err(StatsError::BadMass {
                    position: p,
                    mass: w.as_f64(),
                });
            }
            let slot = acc.entry(p).or_insert_with(P::zero);
            *slot = *slot + w;
        }
        let total: P = acc.values().copied().sum();
        if total <= P::zero() {
            return Err(StatsError::ZeroMass);
        }
        let mass: BTreeMap<_, _> = acc
            .into_iter()
            .filter(|(_, w)| *w > P::zero())
            .map(|(p, w)| (p, w / total))
            .collect();
        let support = mass.keys().copied().collect();
        Ok(PositionDistribution {
            mass,
            support,
            total_causes: 0,
        })
    }

    pub fn from_counts(counts: &BTreeMap<RelativePosition, usize>) -> Result<Self, StatsError> {
        let total: usize = counts.values().sum();
        let mut d = Self::from_weights(counts.iter().map(|(&p, &c)| (p, P::from_count(c))))?;
        d.total_causes = total as u64;
        Ok(d)
    }

    /// Point mass at `p`.
    pub fn delta(p: RelativePosition) -> Self {
        Self::from_weights([(p, P::one())]).expect("unit weight")
    }

    /// Uniform over the given positions.
    pub fn uniform<I: IntoIterator<Item = RelativePosition>>(
        positions: I,
    ) -> Result<Self, StatsError> {
        Self::from_weights(positions.into_iter().map(|p| (p, P::one())))
    }

    /// Probability of `p`; zero outside the support.
    pub fn prob(&self, p: RelativePosition) -> P {
        self.mass.get(&p).copied().unwrap_or_else(P::zero)
    }

    pub fn mass(&self) -> &BTreeMap<RelativePosition, P> {
        &self.mass
    }

    pub fn support(&self) -> &[RelativePosition] {
        &self.support
    }

    pub fn total_causes(&self) -> u64 {
        self.total_causes
    }

    pub fn iter(&self) -> impl Iterator<Item = (RelativePosition, P)> + '_ {
        self.mass.iter().map(|(&p, &m)| (p, m))
    }

    pub fn total(&self) -> P {
        self.mass.values().copied().sum()
    }

    /// Position with the largest mass; ties go to the more negative position.
    pub fn mode(&self) -> RelativePosition {
        let mut best = self.support[0];
        for (p, m) in self.iter() {
            if m > self.prob(best) {
                best = p;
            }
        }
        best
    }

    /// Largest absolute difference in mass over the union of supports.
    pub fn max_abs_diff(&self, other: &Self) -> P {
        self.support
            .iter()
            .chain(other.support.iter())
            .map(|&p| (self.prob(p) - other.prob(p)).abs())
            .fold(P::zero(), P::max)
    }

    /// `Σ_p self(p) · other(p)`.
    pub fn dot(&self, other: &Self) -> P {
        self.iter().map(|(p, m)| m * other.prob(p)).sum()
    }

    pub fn cast<Q: Real>(&self) -> PositionDistribution<Q> {
        PositionDistribution {
            mass: self
                .mass
                .iter()
                .map(|(&p, &m)| (p, Q::lit(m.as_f64())))
                .collect(),
            support: self.support.clone(),
            total_causes: self.total_causes,
        }
    }
}

/// Number of annotated causes at each relative position.
pub fn position_counts(corpus: &Corpus) -> BTreeMap<RelativePosition, usize> {
    let mut counts = BTreeMap::new();
    for inst in corpus.instances() {
        for p in inst.cause_positions() {
            *counts.entry(p).or_insert(0) += 1;
        }
    }
    counts
}

/// Cause-weighted position distribution: every cause of a multi-cause instance counts.
pub fn position_distribution<P: Real>(
    corpus: &Corpus,
) -> Result<PositionDistribution<P>, StatsError> {
    if corpus.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    PositionDistribution::from_counts(&position_counts(corpus))
}

/// Number of instances by how many causes they carry.
pub fn cause_count_histogram(corpus: &Corpus) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for inst in corpus.instances() {
        *hist.entry(inst.cause_indices().len()).or_insert(0) += 1;
    }
    hist
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct DocLengthStats<P: Real> {
    pub min: usize,
    pub median: P,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct AuditReport<P: Real> {
    pub source_label: String,
    pub n_instances: usize,
    pub n_causes: usize,
    pub single_cause_fraction: P,
    pub distribution: PositionDistribution<P>,
    pub position_counts: BTreeMap<RelativePosition, usize>,
    pub cause_histogram: BTreeMap<usize, usize>,
    pub doc_length_stats: DocLengthStats<P>,
    /// Instance count keyed by `clause_count - 1 - emotion_index`.
    pub emotion_index_stats: BTreeMap<usize, usize>,
}

pub fn audit_report<P: Real>(corpus: &Corpus) -> Result<AuditReport<P>, StatsError> {
    let distribution = position_distribution(corpus)?;
    let cause_histogram = cause_count_histogram(corpus);
    let n_instances = corpus.len();
    let n_causes = corpus.n_causes();

    let mut lengths: Vec<usize> = corpus
        .instances()
        .iter()
        .map(|i| i.clause_count())
        .collect();
    lengths.sort_unstable();
    let mid = lengths.len() / 2;
    let median = if lengths.len() % 2 == 1 {
        P::from_count(lengths[mid])
    } else {
        (P::from_count(lengths[mid - 1]) + P::from_count(lengths[mid])) / P::lit(2.0)
    };

    let mut emotion_index_stats = BTreeMap::new();
    for inst in corpus.instances() {
        *emotion_index_stats
            .entry(inst.clause_count() - 1 - inst.emotion_index())
            .or_insert(0) += 1;
    }

    let single = cause_histogram.get(&1).copied().unwrap_or(0);
    Ok(AuditReport {
        source_label: corpus.source_label.clone(),
        n_instances,
        n_causes,
        single_cause_fraction: ratio(P::from_count(single), P::from_count(n_instances)),
        position_counts: position_counts(corpus),
        distribution,
        cause_histogram,
        doc_length_stats: DocLengthStats {
            min: lengths[0],
            median,
            max: *lengths.last().unwrap(),
        },
        emotion_index_stats,
    })
}

/// Format a fraction as a percentage with two decimals, e.g. `54.45%`.
pub fn percent<P: Real>(x: P) -> String {
    format!("{:.2}%", x.as_f64() * 100.0)
}

impl<P: Real> AuditReport<P> {
    /// Human-readable report laid out like the benchmark-detail and position tables.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Corpus: {}", self.source_label);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<36} {:>10}", "Item", "Number");
        let _ = writeln!(s, "{}", "-".repeat(47));
        let _ = writeln!(s, "{:<36} {:>10}", "Instance", self.n_instances);
        let _ = writeln!(s, "{:<36} {:>10}", "Emotion Cause", self.n_causes);
        for (k, n) in &self.cause_histogram {
            let label = if *k == 1 {
                "Documents with 1 emotion cause".to_string()
            } else {
                format!("Documents with {k} emotion causes")
            };
            let _ = writeln!(s, "{:<36} {:>10}", label, n);
        }
        let _ = writeln!(
            s,
            "{:<36} {:>10}",
            "Single-cause instances",
            percent(self.single_cause_fraction)
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<36} {:>8} {:>10}", "Position", "Causes", "Percentage");
        let _ = writeln!(s, "{}", "-".repeat(56));
        for (p, m) in self.distribution.iter() {
            let _ = writeln!(
                s,
                "{:<36} {:>8} {:>10}",
                p.describe(),
                self.position_counts.get(&p).copied().unwrap_or(0),
                percent(m)
            );
        }
        let _ = writeln!(s);
        let d = &self.doc_length_stats;
        let _ = writeln!(
            s,
            "Clauses per document: min {} / median {} / max {}",
            d.min, d.median, d.max
        );
        let offsets: Vec<String> = self
            .emotion_index_stats
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect();
        let _ = writeln!(s, "Emotion clause offset from end: {}", offsets.join(" "));
        s
    }
}
