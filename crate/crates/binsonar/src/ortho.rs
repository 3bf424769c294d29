//! Error-set analysis across feature sets: the E matrix, its row
//! normalization, the JFS orthogonality score, and majority-vote fusion.
//!
//! Two detectors are "orthogonal" when each catches what the other misses.
//! `E[i][j]` counts samples misclassified by feature set `i` but classified
//! correctly by feature set `j`; normalizing row `i` by feature `i`'s total
//! error count gives `E_N`, and a pair's JFS is
//! `(2 - sqrt((1 - E_N[i][j])^2 + (1 - E_N[j][i])^2)) / 2`,
//! which reaches 1 exactly when the two error sets are disjoint.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::classify::{confusion_matrix, ClassifyError, EvalResult, PredictionRecord};
use crate::corpus::SampleId;

#[derive(Debug, Error)]
pub enum OrthoError {
    #[error("need at least 2 results, got {0}")]
    NotEnoughResults(usize),
    #[error("results {a:?} and {b:?} cover different samples (symmetric difference starts {diff:?})")]
    IdSetMismatch {
        a: String,
        b: String,
        diff: Vec<SampleId>,
    },
    #[error("result {feature:?} lists sample {id} more than once")]
    DuplicatePrediction { feature: String, id: SampleId },
    #[error("jfs is undefined for a feature set against itself (index {0})")]
    SamePair(usize),
    #[error("sample {0} carries conflicting true labels across results")]
    ConflictingTruth(SampleId),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

/// Full orthogonality analysis over a list of evaluation results.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorAnalysis {
    pub feature_names: Vec<String>,
    /// Misclassified-sample count per feature set.
    pub error_counts: Vec<usize>,
    /// `e[i][j]` = #samples wrong under i but right under j; zero diagonal.
    pub e: Vec<Vec<u64>>,
    /// Row-normalized `e`; rows with zero errors read 1.0 off-diagonal.
    pub e_n: Vec<Vec<f64>>,
    /// Symmetric JFS scores; the diagonal is left at zero.
    pub jfs: Vec<Vec<f64>>,
}

/// The misclassified-sample id set of each result.
///
/// All results must cover exactly the same samples, otherwise their error
/// sets are not comparable.
pub fn collect_error_sets(
    results: &[EvalResult],
) -> Result<Vec<BTreeSet<SampleId>>, OrthoError> {
    check_same_ids(results)?;
    Ok(results
        .iter()
        .map(|r| {
            r.predictions
                .iter()
                .filter(|p| !p.is_correct())
                .map(|p| p.id.clone())
                .collect()
        })
        .collect())
}

fn check_same_ids(results: &[EvalResult]) -> Result<(), OrthoError> {
    let first = prediction_ids(&results[0])?;
    for r in &results[1..] {
        let ids = prediction_ids(r)?;
        if ids != first {
            let diff: Vec<SampleId> = first
                .symmetric_difference(&ids)
                .take(4)
                .map(|&id| id.clone())
                .collect();
            return Err(OrthoError::IdSetMismatch {
                a: results[0].feature_name.clone(),
                b: r.feature_name.clone(),
                diff,
            });
        }
    }
    Ok(())
}

fn prediction_ids(result: &EvalResult) -> Result<BTreeSet<&SampleId>, OrthoError> {
    let mut ids = BTreeSet::new();
    for p in &result.predictions {
        if !ids.insert(&p.id) {
            return Err(OrthoError::DuplicatePrediction {
                feature: result.feature_name.clone(),
                id: p.id.clone(),
            });
        }
    }
    Ok(ids)
}

/// `E[i][j] = |set_i \ set_j|`, with a zero diagonal.
pub fn error_analysis_matrix(sets: &[BTreeSet<SampleId>]) -> Vec<Vec<u64>> {
    let n = sets.len();
    let mut e = vec![vec![0u64; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                e[i][j] = sets[i].difference(&sets[j]).count() as u64;
            }
        }
    }
    e
}

/// Divide row `i` of `E` by feature `i`'s error count.
///
/// A feature set with zero errors is vacuously orthogonal to everything,
/// so its row reads 1.0 off the diagonal.
pub fn normalize_error_matrix(e: &[Vec<u64>], error_counts: &[usize]) -> Vec<Vec<f64>> {
    let n = e.len();
    let mut e_n = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            e_n[i][j] = if error_counts[i] == 0 {
                1.0
            } else {
                e[i][j] as f64 / error_counts[i] as f64
            };
        }
    }
    e_n
}

/// JFS score for one pair of feature sets.
///
/// Disjoint error sets score exactly 1. Note the formula's lower end:
/// fully overlapping errors give `(2 - sqrt(2)) / 2`, about 0.293, not 0.
pub fn jfs_pair(e_n: &[Vec<f64>], i: usize, j: usize) -> Result<f64, OrthoError> {
    if i == j {
        return Err(OrthoError::SamePair(i));
    }
    let a = 1.0 - e_n[i][j];
    let b = 1.0 - e_n[j][i];
    Ok((2.0 - (a * a + b * b).sqrt()) / 2.0)
}

/// Run the whole pipeline: error sets, E, E_N, and pairwise JFS.
pub fn jfs_matrix(results: &[EvalResult]) -> Result<ErrorAnalysis, OrthoError> {
    if results.len() < 2 {
        return Err(OrthoError::NotEnoughResults(results.len()));
    }
    let sets = collect_error_sets(results)?;
    let error_counts: Vec<usize> = sets.iter().map(|s| s.len()).collect();
    let e = error_analysis_matrix(&sets);
    let e_n = normalize_error_matrix(&e, &error_counts);
    let n = results.len();
    let mut jfs = vec![vec![0.0; n]; n];
    for (i, row) in jfs.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            if i != j {
                *slot = jfs_pair(&e_n, i, j)?;
            }
        }
    }
    Ok(ErrorAnalysis {
        feature_names: results.iter().map(|r| r.feature_name.clone()).collect(),
        error_counts,
        e,
        e_n,
        jfs,
    })
}

impl ErrorAnalysis {
    /// `feature,errors` rows.
    pub fn error_counts_csv(&self) -> String {
        let mut out = String::from("feature,errors\n");
        for (name, count) in self.feature_names.iter().zip(&self.error_counts) {
            let _ = writeln!(out, "{name},{count}");
        }
        out
    }

    /// E matrix with feature names on the first row and column.
    pub fn e_csv(&self) -> String {
        let mut out = String::from("error_analysis");
        for name in &self.feature_names {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (name, row) in self.feature_names.iter().zip(&self.e) {
            let _ = write!(out, "{name}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// JFS matrix with feature names on the first row and column, scores
    /// printed with four decimals.
    pub fn jfs_csv(&self) -> String {
        let mut out = String::from("jfs");
        for name in &self.feature_names {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (name, row) in self.feature_names.iter().zip(&self.jfs) {
            let _ = write!(out, "{name}");
            for v in row {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        out
    }
}

/// Majority-vote fusion of several results over the same corpus.
///
/// Per sample the plurality label wins; ties defer to the most accurate
/// result whose prediction is among the tied labels, then to class-name
/// order. Accuracy and the confusion matrix are recomputed for the fused
/// predictions.
pub fn fuse_majority(results: &[EvalResult]) -> Result<EvalResult, OrthoError> {
    if results.len() < 2 {
        return Err(OrthoError::NotEnoughResults(results.len()));
    }
    check_same_ids(results)?;

    // results ranked by accuracy for tie-breaking
    let mut ranked: Vec<usize> = (0..results.len()).collect();
    ranked.sort_by(|&a, &b| {
        results[b]
            .accuracy
            .partial_cmp(&results[a].accuracy)
            .expect("finite accuracy")
            .then(a.cmp(&b))
    });

    // per-result prediction lookup; predictions are sorted by id already,
    // but index defensively by id to tolerate any ordering
    let by_id: Vec<std::collections::BTreeMap<&SampleId, &PredictionRecord>> = results
        .iter()
        .map(|r| r.predictions.iter().map(|p| (&p.id, p)).collect())
        .collect();

    let ids: Vec<&SampleId> = by_id[0].keys().copied().collect();
    let mut fused = Vec::with_capacity(ids.len());
    for id in ids {
        let records: Vec<&PredictionRecord> = by_id.iter().map(|m| m[id]).collect();
        let truth = &records[0].true_label;
        if records.iter().any(|p| &p.true_label != truth) {
            return Err(OrthoError::ConflictingTruth(id.clone()));
        }

        let mut votes: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
        for p in &records {
            *votes.entry(p.predicted_label.as_str()).or_default() += 1;
        }
        let top = *votes.values().max().expect("at least one vote");
        let tied: BTreeSet<&str> = votes
            .iter()
            .filter(|(_, &c)| c == top)
            .map(|(&l, _)| l)
            .collect();
        let winner = if tied.len() == 1 {
            *tied.iter().next().expect("one winner")
        } else {
            ranked
                .iter()
                .map(|&r| records[r].predicted_label.as_str())
                .find(|l| tied.contains(l))
                .unwrap_or_else(|| tied.iter().next().expect("nonempty tie set"))
        };

        fused.push(PredictionRecord {
            id: id.clone(),
            true_label: truth.clone(),
            predicted_label: winner.to_string(),
            fold: records[0].fold,
        });
    }

    let classes: Vec<String> = {
        let mut set = BTreeSet::new();
        for r in results {
            set.extend(r.classes.iter().cloned());
        }
        set.into_iter().collect()
    };
    let correct = fused.iter().filter(|p| p.is_correct()).count();
    let accuracy = correct as f64 / fused.len() as f64;
    let confusion = confusion_matrix(&fused, &classes)?;
    let feature_name = format!(
        "fusion({})",
        results
            .iter()
            .map(|r| r.feature_name.as_str())
            .collect::<Vec<_>>()
            .join("+")
    );

    Ok(EvalResult {
        feature_name,
        classifier: "majority-vote".to_string(),
        seed: results[0].seed,
        folds: results[0].folds,
        accuracy,
        classes,
        confusion,
        predictions: fused,
    })
}
