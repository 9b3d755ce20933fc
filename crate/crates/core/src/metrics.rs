//! Micro-averaged clause-level precision, recall and F1, and trial aggregation.
//!
//! Counts are summed over instances before dividing:
//! precision = correct / proposed, recall = correct / annotated,
//! F1 = 2PR / (P + R).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::scalar::{ratio, Real};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction for unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("instance {id:?}: predicted clause {index} out of range for {clauses} clauses")]
    IndexOutOfRange {
        id: String,
        index: usize,
        clauses: usize,
    },
    #[error("no trials to aggregate")]
    NoTrials,
    #[error("inconsistent counts: correct {correct} exceeds proposed {proposed} or annotated {annotated}")]
    InconsistentCounts {
        correct: f64,
        proposed: f64,
        annotated: f64,
    },
    #[error("predictions line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("predictions line {line}: duplicate id {id:?}")]
    DuplicatePrediction { line: usize, id: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Predicted cause clauses per instance id.
pub type Predictions = BTreeMap<String, BTreeSet<usize>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct EvalScores<P: Real> {
    pub proposed: P,
    pub annotated: P,
    pub correct: P,
    pub precision: P,
    pub recall: P,
    pub f1: P,
}

impl<P: Real> EvalScores<P> {
    /// Build scores from (possibly expected, hence fractional) counts.
    pub fn from_counts(correct: P, proposed: P, annotated: P) -> Result<Self, MetricsError> {
        let slack = P::lit(1e-9) * (P::one() + proposed.max(annotated));
        if correct < P::zero() || correct > proposed + slack || correct > annotated + slack {
            return Err(MetricsError::InconsistentCounts {
                correct: correct.as_f64(),
                proposed: proposed.as_f64(),
                annotated: annotated.as_f64(),
            });
        }
        let precision = ratio(correct, proposed);
        let recall = ratio(correct, annotated);
        Ok(EvalScores {
            proposed,
            annotated,
            correct,
            precision,
            recall,
            f1: f_measure(precision, recall),
        })
    }
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f_measure<P: Real>(precision: P, recall: P) -> P {
    ratio(P::lit(2.0) * precision * recall, precision + recall)
}

/// Score predictions against a gold corpus.
///
/// Every gold instance contributes its annotated causes, whether or not it
/// has a prediction entry. A predicted clause is correct if it is any of the
/// instance's annotated causes.
pub fn score<P: Real>(
    predictions: &Predictions,
    gold: &Corpus,
) -> Result<EvalScores<P>, MetricsError> {
    let by_id: BTreeMap<&str, _> = gold.instances().iter().map(|i| (i.id(), i)).collect();
    let mut proposed = 0usize;
    let mut correct = 0usize;
    for (id, predicted) in predictions {
        let inst = by_id
            .get(id.as_str())
            .ok_or_else(|| MetricsError::UnknownInstance(id.clone()))?;
        for &idx in predicted {
            if idx >= inst.clause_count() {
                return Err(MetricsError::IndexOutOfRange {
                    id: id.clone(),
                    index: idx,
                    clauses: inst.clause_count(),
                });
            }
            proposed += 1;
            if inst.is_cause(idx) {
                correct += 1;
            }
        }
    }
    EvalScores::from_counts(
        P::from_count(correct),
        P::from_count(proposed),
        P::from_count(gold.n_causes()),
    )
}

/// How a multi-trial result is summarized into a single P/R/F1 triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    /// Mean of per-trial scores.
    #[default]
    Macro,
    /// Scores recomputed from counts summed over trials.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct TrialAggregate<P: Real> {
    pub per_trial: Vec<EvalScores<P>>,
    pub mean_p: P,
    pub mean_r: P,
    pub mean_f1: P,
    /// Sample standard deviation of F1 (zero for a single trial).
    pub std_f1: P,
    /// Counts summed across trials.
    pub pooled: EvalScores<P>,
}

impl<P: Real> TrialAggregate<P> {
    /// (precision, recall, F1) under the chosen pooling.
    pub fn headline(&self, pool: Pool) -> (P, P, P) {
        match pool {
            Pool::Macro => (self.mean_p, self.mean_r, self.mean_f1),
            Pool::Micro => (self.pooled.precision, self.pooled.recall, self.pooled.f1),
        }
    }
}

pub fn aggregate<P: Real>(trials: &[EvalScores<P>]) -> Result<TrialAggregate<P>, MetricsError> {
    if trials.is_empty() {
        return Err(MetricsError::NoTrials);
    }
    let n = P::from_count(trials.len());
    let mean = |f: fn(&EvalScores<P>) -> P| trials.iter().map(f).sum::<P>() / n;
    let mean_p = mean(|s| s.precision);
    let mean_r = mean(|s| s.recall);
    let mean_f1 = mean(|s| s.f1);
    let std_f1 = if trials.len() > 1 {
        let ss: P = trials.iter().map(|s| (s.f1 - mean_f1).powi(2)).sum();
        (ss / (n - P::one())).sqrt()
    } else {
        P::zero()
    };
    let pooled = EvalScores::from_counts(
        trials.iter().map(|s| s.correct).sum(),
        trials.iter().map(|s| s.proposed).sum(),
        trials.iter().map(|s| s.annotated).sum(),
    )?;
    Ok(TrialAggregate {
        per_trial: trials.to_vec(),
        mean_p,
        mean_r,
        mean_f1,
        std_f1,
        pooled,
    })
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    predicted_indices: Vec<usize>,
}

/// Read a JSON-lines predictions file: `{"id": "...", "predicted_indices": [..]}` per line.
pub fn parse_predictions<R: BufRead>(reader: R) -> Result<Predictions, MetricsError> {
    let mut out = Predictions::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| MetricsError::Malformed {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        if out.contains_key(&rec.id) {
            return Err(MetricsError::DuplicatePrediction {
                line: lineno + 1,
                id: rec.id,
            });
        }
        out.insert(rec.id, rec.predicted_indices.into_iter().collect());
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(predictions: &Predictions, mut out: W) -> std::io::Result<()> {
    for (id, idx) in predictions {
        let rec = PredictionRecord {
            id: id.clone(),
            predicted_indices: idx.iter().copied().collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Instance;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn single_cause_corpus(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| {
                    Instance::new(format!("d{i}"), vec![String::new(); 3], 2, "", vec![1]).unwrap()
                })
                .collect(),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn six_of_ten_hits() {
        let gold = single_cause_corpus(10);
        let preds: Predictions = (0..10)
            .map(|i| (format!("d{i}"), BTreeSet::from([if i < 6 { 1 } else { 0 }])))
            .collect();
        let s: EvalScores<f64> = score(&preds, &gold).unwrap();
        assert_relative_eq!(s.precision, 0.6);
        assert_relative_eq!(s.recall, 0.6);
        assert_relative_eq!(s.f1, 0.6);
    }

    #[test]
    fn unequal_denominators() {
        let s = EvalScores::<f64>::from_counts(2.0, 4.0, 8.0).unwrap();
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 0.25);
        assert_relative_eq!(s.f1, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let gold = Corpus::new(
            vec![
                Instance::new("a", vec![String::new(); 4], 2, "", vec![1, 3]).unwrap(),
                Instance::new("b", vec![String::new(); 2], 1, "", vec![1]).unwrap(),
            ],
            "t",
        )
        .unwrap();
        let preds = Predictions::from([
            ("a".to_string(), BTreeSet::from([1, 3])),
            ("b".to_string(), BTreeSet::from([1])),
        ]);
        let s: EvalScores<f64> = score(&preds, &gold).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn missing_prediction_counts_as_nothing_proposed() {
        let gold = single_cause_corpus(4);
        let preds = Predictions::from([("d0".to_string(), BTreeSet::from([1]))]);
        let s: EvalScores<f64> = score(&preds, &gold).unwrap();
        assert_eq!(s.proposed, 1.0);
        assert_eq!(s.annotated, 4.0);
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.25);
    }

    #[test]
    fn zero_proposed_gives_zero_scores() {
        let gold = single_cause_corpus(2);
        let s: EvalScores<f64> = score(&Predictions::new(), &gold).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn score_errors() {
        let gold = single_cause_corpus(1);
        let unknown = Predictions::from([("zz".to_string(), BTreeSet::from([0]))]);
        assert!(matches!(
            score::<f64>(&unknown, &gold),
            Err(MetricsError::UnknownInstance(_))
        ));
        let oob = Predictions::from([("d0".to_string(), BTreeSet::from([3]))]);
        assert!(matches!(
            score::<f64>(&oob, &gold),
            Err(MetricsError::IndexOutOfRange { index: 3, .. })
        ));
        assert!(EvalScores::<f64>::from_counts(3.0, 2.0, 5.0).is_err());
    }

    fn with_f1(f1: f64) -> EvalScores<f64> {
        EvalScores {
            proposed: 1.0,
            annotated: 1.0,
            correct: f1,
            precision: f1,
            recall: f1,
            f1,
        }
    }

    #[test]
    fn aggregate_examples() {
        let agg = aggregate(&[with_f1(0.5), with_f1(0.7)]).unwrap();
        assert_relative_eq!(agg.mean_f1, 0.6, epsilon = 1e-12);
        assert_relative_eq!(agg.std_f1, (0.02f64).sqrt(), epsilon = 1e-12);

        let one = aggregate(&[with_f1(0.3)]).unwrap();
        assert_eq!(one.mean_f1, 0.3);
        assert_eq!(one.mean_p, 0.3);
        assert_eq!(one.std_f1, 0.0);

        let same = aggregate(&vec![with_f1(0.42); 25]).unwrap();
        assert_eq!(same.std_f1, 0.0);
        assert!(matches!(aggregate::<f64>(&[]), Err(MetricsError::NoTrials)));
    }

    #[test]
    fn micro_pooling_sums_counts() {
        let a = EvalScores::<f64>::from_counts(1.0, 1.0, 2.0).unwrap();
        let b = EvalScores::<f64>::from_counts(0.0, 3.0, 2.0).unwrap();
        let agg = aggregate(&[a, b]).unwrap();
        assert_eq!(agg.headline(Pool::Micro).0, 0.25);
        assert_eq!(agg.headline(Pool::Macro).0, 0.5);
    }

    #[test]
    fn predictions_file_round_trip() {
        let text = "{\"id\":\"a\",\"predicted_indices\":[2,0,2]}\n\n{\"id\":\"b\",\"predicted_indices\":[]}\n";
        let p = parse_predictions(text.as_bytes()).unwrap();
        assert_eq!(p["a"], BTreeSet::from([0, 2]));
        assert!(p["b"].is_empty());
        let mut buf = Vec::new();
        write_predictions(&p, &mut buf).unwrap();
        assert_eq!(parse_predictions(&buf[..]).unwrap(), p);
        let dup =
            "{\"id\":\"a\",\"predicted_indices\":[]}\n{\"id\":\"a\",\"predicted_indices\":[1]}";
        assert!(matches!(
            parse_predictions(dup.as_bytes()),
            Err(MetricsError::DuplicatePrediction { line: 2, .. })
        ));
        assert!(matches!(
            parse_predictions("nope".as_bytes()),
            Err(MetricsError::Malformed { line: 1, .. })
        ));
    }

    /// Every (correct, proposed, annotated) triple up to 6 checked against the
    /// textbook definitions computed with exact integer arithmetic.
    #[test]
    fn exhaustive_small_count_identities() {
        for proposed in 0..=6u32 {
            for annotated in 1..=6u32 {
                for correct in 0..=proposed.min(annotated) {
                    let s = EvalScores::<f64>::from_counts(
                        correct as f64,
                        proposed as f64,
                        annotated as f64,
                    )
                    .unwrap();
                    let p = if proposed == 0 {
                        0.0
                    } else {
                        correct as f64 / proposed as f64
                    };
                    let r = correct as f64 / annotated as f64;
                    // 2PR/(P+R) reduces to 2c/(proposed+annotated) for c > 0.
                    let f = if correct == 0 {
                        0.0
                    } else {
                        2.0 * correct as f64 / (proposed + annotated) as f64
                    };
                    assert_relative_eq!(s.precision, p, epsilon = 1e-15);
                    assert_relative_eq!(s.recall, r, epsilon = 1e-15);
                    assert_relative_eq!(s.f1, f, epsilon = 1e-12);
                    if proposed == annotated {
                        assert_relative_eq!(s.f1, s.precision, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn f1_is_bounded_by_precision_and_recall(c in 0u32..50, extra_p in 0u32..50, extra_a in 1u32..50) {
            let s = EvalScores::<f64>::from_counts(c as f64, (c + extra_p) as f64, (c + extra_a) as f64).unwrap();
            let lo = s.precision.min(s.recall);
            let hi = s.precision.max(s.recall);
            prop_assert!(s.f1 >= lo - 1e-12 && s.f1 <= hi + 1e-12);
        }

        #[test]
        fn means_lie_within_trial_range(f1s in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            let trials: Vec<_> = f1s.iter().map(|&f| with_f1(f)).collect();
            let agg = aggregate(&trials).unwrap();
            let lo = f1s.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg.mean_f1 >= lo - 1e-12 && agg.mean_f1 <= hi + 1e-12);
        }
    }
}
