//! Position-bias auditing for clause-level emotion cause corpora.
//!
//! The crate reads corpora of pre-segmented documents (one emotion clause,
//! one or more annotated cause clauses), profiles where causes sit relative
//! to the emotion clause, scores text-blind position-prior baselines, measures
//! how much of the skew a cue-word lexicon explains, and writes downsampled
//! corpora whose position distribution matches a chosen target.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar to `f64`, which is what the command-line tool uses.

pub mod baseline;
pub mod cli;
pub mod corpus;
pub mod debias;
pub mod lexicon;
pub mod metrics;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use corpus::{Clause, Corpus, Instance, RelativePosition};
pub use scalar::Real;

pub type Distribution = stats::PositionDistribution<f64>;
pub type Audit = stats::AuditReport<f64>;
pub type Scores = metrics::EvalScores<f64>;
pub type Aggregate = metrics::TrialAggregate<f64>;
pub type Prior = baseline::PriorModel<f64>;
pub type Trials = baseline::TrialConfig<f64>;
pub type Coverage = lexicon::CoverageReport<f64>;
pub type Plan = debias::ResamplePlan<f64>;
pub type Manifest = debias::ResampleManifest<f64>;
pub type Synth = synth::SynthConfig<f64>;

pub type Distribution32 = stats::PositionDistribution<f32>;
pub type Scores32 = metrics::EvalScores<f32>;
