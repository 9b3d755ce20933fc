//! Text-blind position-prior baselines.
//!
//! The random baseline draws one relative position per instance from a prior
//! over positions and predicts the clause at that offset from the emotion
//! clause. Priors are restricted to the offsets that exist in each document
//! and rescaled before drawing; a prior with no mass inside the document falls
//! back to uniform over the document's clauses. Nothing here reads clause text.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Instance, RelativePosition};
use crate::metrics::{self, EvalScores, MetricsError, Predictions, TrialAggregate};
use crate::scalar::{round_half_up, Real};
use crate::stats::{self, PositionDistribution, StatsError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no valid positions to renormalize over")]
    EmptyValidSet,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus of {n} instances is too small for a {test_fraction} test split")]
    CorpusTooSmall { n: usize, test_fraction: f64 },
    #[error("invalid trial configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorOrigin {
    Supplied,
    EstimatedFromTrain,
    EstimatedFromCorpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct PriorModel<P: Real> {
    pub distribution: PositionDistribution<P>,
    pub origin: PriorOrigin,
}

impl<P: Real> PriorModel<P> {
    pub fn supplied(distribution: PositionDistribution<P>) -> Self {
        PriorModel {
            distribution,
            origin: PriorOrigin::Supplied,
        }
    }

    pub fn from_corpus(corpus: &Corpus) -> Result<Self, BaselineError> {
        Ok(PriorModel {
            distribution: stats::position_distribution(corpus)?,
            origin: PriorOrigin::EstimatedFromCorpus,
        })
    }
}

/// Where each trial's prior comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
#[serde(rename_all = "kebab-case")]
pub enum PriorSource<P: Real> {
    /// Estimated on the training split of each trial.
    Train,
    /// Estimated once on the whole corpus.
    Corpus,
    Supplied(PositionDistribution<P>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    /// One clause per instance drawn from the renormalized prior.
    #[default]
    Random,
    /// The renormalized prior's most likely clause.
    Majority,
}

/// Direction in which `majority_prediction` resolves equal masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    #[default]
    Negative,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct TrialConfig<P: Real> {
    pub trials: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub prior: PriorSource<P>,
    pub predictor: Predictor,
    pub tie_break: TieBreak,
}

impl<P: Real> Default for TrialConfig<P> {
    fn default() -> Self {
        TrialConfig {
            trials: 25,
            test_fraction: 0.1,
            seed: 0,
            prior: PriorSource::Train,
            predictor: Predictor::Random,
            tie_break: TieBreak::Negative,
        }
    }
}

impl<P: Real> TrialConfig<P> {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.trials == 0 {
            return Err(BaselineError::InvalidConfig(
                "trials must be at least 1".into(),
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(BaselineError::InvalidConfig(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Restrict `prior` to `valid` and rescale to sum to one.
///
/// If the prior has no mass on any valid position the result is uniform over `valid`.
pub fn renormalize<P: Real>(
    prior: &PositionDistribution<P>,
    valid: &[RelativePosition],
) -> Result<PositionDistribution<P>, BaselineError> {
    if valid.is_empty() {
        return Err(BaselineError::EmptyValidSet);
    }
    let restricted: Vec<_> = valid.iter().map(|&p| (p, prior.prob(p))).collect();
    if restricted.iter().all(|(_, m)| *m == P::zero()) {
        return Ok(PositionDistribution::uniform(valid.iter().copied())?);
    }
    Ok(PositionDistribution::from_weights(restricted)?)
}

/// Draws clause predictions from a prior, caching the renormalized weights per document shape.
pub struct PositionSampler {
    prior: Vec<(RelativePosition, f64)>,
    cache: HashMap<(usize, usize), (Vec<RelativePosition>, WeightedIndex<f64>)>,
}

impl PositionSampler {
    pub fn new<P: Real>(prior: &PositionDistribution<P>) -> Self {
        PositionSampler {
            prior: prior.iter().map(|(p, m)| (p, m.as_f64())).collect(),
            cache: HashMap::new(),
        }
    }

    /// Clause index predicted for `instance`; always inside the document.
    pub fn sample<R: Rng + ?Sized>(&mut self, instance: &Instance, rng: &mut R) -> usize {
        let key = (instance.clause_count(), instance.emotion_index());
        let prior = &self.prior;
        let (positions, weights) = self.cache.entry(key).or_insert_with(|| {
            let mut positions = Vec::new();
            let mut weights = Vec::new();
            for &(p, m) in prior {
                if instance.is_valid_position(p) {
                    positions.push(p);
                    weights.push(m);
                }
            }
            if positions.is_empty() {
                positions = instance.valid_positions();
                weights = vec![1.0; positions.len()];
            }
            let dist = WeightedIndex::new(&weights).expect("positive weights");
            (positions, dist)
        });
        let p = positions[weights.sample(rng)];
        instance
            .clause_at(p)
            .expect("position restricted to document")
    }
}

/// Draw one predicted cause clause for `instance`.
pub fn sample_prediction<P: Real, R: Rng + ?Sized>(
    instance: &Instance,
    prior: &PriorModel<P>,
    rng: &mut R,
) -> usize {
    PositionSampler::new(&prior.distribution).sample(instance, rng)
}

/// Most probable clause under the renormalized prior, ties toward negative offsets.
pub fn majority_prediction<P: Real>(instance: &Instance, prior: &PriorModel<P>) -> usize {
    majority_prediction_with(instance, prior, TieBreak::Negative)
}

pub fn majority_prediction_with<P: Real>(
    instance: &Instance,
    prior: &PriorModel<P>,
    tie_break: TieBreak,
) -> usize {
    let local = renormalize(&prior.distribution, &instance.valid_positions())
        .expect("documents have at least one clause");
    let mut best: Option<(RelativePosition, P)> = None;
    for (p, m) in local.iter() {
        best = match best {
            None => Some((p, m)),
            Some((_, bm)) if m > bm => Some((p, m)),
            Some((_, bm)) if m == bm && tie_break == TieBreak::Positive => Some((p, m)),
            keep => keep,
        };
    }
    let (p, _) = best.expect("non-empty support");
    instance
        .clause_at(p)
        .expect("position restricted to document")
}

/// Closed-form expected scores of the random baseline on `corpus`.
///
/// Each instance proposes exactly one clause, so `proposed` is the instance
/// count; the expected number of correct proposals is the renormalized prior
/// mass on the instance's cause positions.
pub fn expected_scores<P: Real>(
    corpus: &Corpus,
    prior: &PriorModel<P>,
) -> Result<EvalScores<P>, BaselineError> {
    if corpus.is_empty() {
        return Err(BaselineError::EmptyCorpus);
    }
    let mut cache: HashMap<(usize, usize), PositionDistribution<P>> = HashMap::new();
    let mut correct = P::zero();
    for inst in corpus.instances() {
        let key = (inst.clause_count(), inst.emotion_index());
        let local = match cache.entry(key) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                e.insert(renormalize(&prior.distribution, &inst.valid_positions())?)
            }
        };
        correct = correct + inst.cause_positions().map(|p| local.prob(p)).sum::<P>();
    }
    Ok(EvalScores::from_counts(
        correct,
        P::from_count(corpus.len()),
        P::from_count(corpus.n_causes()),
    )?)
}

/// Deterministic per-trial generator: the run seed on stream `trial`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Shuffle-split indices into (train, test); both returned in corpus order.
pub fn split_indices<R: Rng + ?Sized>(
    n: usize,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>), BaselineError> {
    let test_n = round_half_up(n as f64 * test_fraction);
    if test_n == 0 || test_n >= n {
        return Err(BaselineError::CorpusTooSmall { n, test_fraction });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut test = idx[..test_n].to_vec();
    let mut train = idx[test_n..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Prior used by a single trial, given its training indices.
fn trial_prior<P: Real>(
    corpus: &Corpus,
    train: &[usize],
    source: &PriorSource<P>,
    corpus_prior: Option<&PriorModel<P>>,
) -> Result<PriorModel<P>, BaselineError> {
    Ok(match source {
        PriorSource::Supplied(d) => PriorModel::supplied(d.clone()),
        PriorSource::Corpus => corpus_prior.expect("computed up front").clone(),
        PriorSource::Train => {
            let mut counts = BTreeMap::new();
            for &i in train {
                for p in corpus.instances()[i].cause_positions() {
                    *counts.entry(p).or_insert(0usize) += 1;
                }
            }
            PriorModel {
                distribution: PositionDistribution::from_counts(&counts)?,
                origin: PriorOrigin::EstimatedFromTrain,
            }
        }
    })
}

/// Evaluate a position-only predictor over repeated seeded train/test splits.
///
/// Trials run in parallel; results are ordered by trial index and depend only
/// on `(corpus, config)`.
pub fn run_trials<P: Real>(
    corpus: &Corpus,
    config: &TrialConfig<P>,
) -> Result<TrialAggregate<P>, BaselineError> {
    config.validate()?;
    let n = corpus.len();
    if n == 0 {
        return Err(BaselineError::EmptyCorpus);
    }
    let test_n = round_half_up(n as f64 * config.test_fraction);
    if test_n == 0 || test_n >= n {
        return Err(BaselineError::CorpusTooSmall {
            n,
            test_fraction: config.test_fraction,
        });
    }
    let corpus_prior = match config.prior {
        PriorSource::Corpus => Some(PriorModel::from_corpus(corpus)?),
        _ => None,
    };

    let trials: Vec<EvalScores<P>> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(config.seed, t);
            let (train, test) = split_indices(n, config.test_fraction, &mut rng)?;
            let prior = trial_prior(corpus, &train, &config.prior, corpus_prior.as_ref())?;
            let test_corpus = corpus.select(format!("trial {t} test"), &test);
            let mut sampler = PositionSampler::new(&prior.distribution);
            let predictions: Predictions = test_corpus
                .instances()
                .iter()
                .map(|inst| {
                    let idx = match config.predictor {
                        Predictor::Random => sampler.sample(inst, &mut rng),
                        Predictor::Majority => {
                            majority_prediction_with(inst, &prior, config.tie_break)
                        }
                    };
                    (inst.id().to_string(), [idx].into_iter().collect())
                })
                .collect();
            Ok(metrics::score(&predictions, &test_corpus)?)
        })
        .collect::<Result<_, BaselineError>>()?;
    Ok(metrics::aggregate(&trials)?)
}

/// Score one full-corpus draw of the random baseline.
pub fn sample_scores<P: Real, R: Rng + ?Sized>(
    corpus: &Corpus,
    sampler: &mut PositionSampler,
    rng: &mut R,
) -> Result<EvalScores<P>, BaselineError> {
    let predictions: Predictions = corpus
        .instances()
        .iter()
        .map(|inst| {
            (
                inst.id().to_string(),
                [sampler.sample(inst, rng)].into_iter().collect(),
            )
        })
        .collect();
    Ok(metrics::score(&predictions, corpus)?)
}
