//! Classifiers and the stratified cross-validation harness.
//!
//! Everything here is deliberately deterministic: folds come from a seeded
//! PRNG, every tie-break is total, and per-tree seeds are fixed up front so
//! parallel training cannot change the outcome.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FeatureMatrix, Manifest, SampleId};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("need at least 2 folds (got {0})")]
    TooFewFolds(usize),
    #[error("class {class:?} has {size} samples, fewer than {folds} folds")]
    ClassSmallerThanFolds {
        class: String,
        size: usize,
        folds: usize,
    },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("k must be at least 1")]
    BadK,
    #[error("query has {got} dims, training vectors have {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("feature matrix id {0} is not in the manifest")]
    UnknownSampleId(SampleId),
    #[error("feature matrix contains duplicate id {0}")]
    DuplicateSampleId(SampleId),
    #[error("label {0:?} is not in the class list")]
    UnknownLabel(String),
    #[error("result file {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("result json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which classifier the harness runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassifierKind {
    #[default]
    Knn,
    RandomForest,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "knn",
            ClassifierKind::RandomForest => "rf",
        }
    }
}

/// Cross-validation settings.
#[derive(Debug, Clone, Copy)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub classifier: ClassifierKind,
    pub knn_k: usize,
    pub rf_trees: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            seed: 0,
            classifier: ClassifierKind::Knn,
            knn_k: 1,
            rf_trees: 100,
        }
    }
}

/// One held-out prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: SampleId,
    #[serde(rename = "true")]
    pub true_label: String,
    #[serde(rename = "pred")]
    pub predicted_label: String,
    pub fold: usize,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.true_label == self.predicted_label
    }
}

/// Pooled cross-validation outcome for one (feature set, classifier) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    #[serde(rename = "feature")]
    pub feature_name: String,
    pub classifier: String,
    pub seed: u64,
    pub folds: usize,
    /// Fraction correct over all pooled test predictions.
    pub accuracy: f64,
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub predictions: Vec<PredictionRecord>,
}

impl EvalResult {
    pub fn load(path: &Path) -> Result<EvalResult, ClassifyError> {
        let file = fs::File::open(path).map_err(|source| ClassifyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifyError> {
        let file = fs::File::create(path).map_err(|source| ClassifyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer
            .write_all(b"\n")
            .map_err(|source| ClassifyError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(())
    }

    /// Mean of the per-fold accuracies (the pooled `accuracy` field weighs
    /// every sample equally instead).
    pub fn mean_fold_accuracy(&self) -> f64 {
        let mut correct = vec![0usize; self.folds];
        let mut total = vec![0usize; self.folds];
        for p in &self.predictions {
            total[p.fold] += 1;
            if p.is_correct() {
                correct[p.fold] += 1;
            }
        }
        let mut acc = 0.0;
        let mut used = 0;
        for f in 0..self.folds {
            if total[f] > 0 {
                acc += correct[f] as f64 / total[f] as f64;
                used += 1;
            }
        }
        if used == 0 {
            0.0
        } else {
            acc / used as f64
        }
    }
}

/// Assign a fold to every sample, stratified by class.
///
/// Classes are visited in sorted order; within each class the sample
/// indices are shuffled by a ChaCha stream seeded from `cfg.seed` and dealt
/// round-robin, so each fold's class mix tracks the corpus within one
/// sample.
pub fn make_stratified_folds(
    labels: &[String],
    cfg: &CvConfig,
) -> Result<Vec<usize>, ClassifyError> {
    if cfg.folds < 2 {
        return Err(ClassifyError::TooFewFolds(cfg.folds));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(idx);
    }
    for (class, members) in &by_class {
        if members.len() < cfg.folds {
            return Err(ClassifyError::ClassSmallerThanFolds {
                class: class.to_string(),
                size: members.len(),
                folds: cfg.folds,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut folds = vec![0usize; labels.len()];
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for (pos, &idx) in members.iter().enumerate() {
            folds[idx] = pos % cfg.folds;
        }
    }
    Ok(folds)
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// k-nearest-neighbor vote over a subset of matrix rows.
///
/// Neighbors are ordered by (distance, sample id); vote ties go to the
/// class whose nearest member comes first in that order.
fn knn_predict<'a>(
    matrix: &'a FeatureMatrix,
    labels: &'a [String],
    train_idx: &[usize],
    query: &[f32],
    k: usize,
) -> Result<&'a str, ClassifyError> {
    if train_idx.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    if k == 0 {
        return Err(ClassifyError::BadK);
    }
    if query.len() != matrix.dim {
        return Err(ClassifyError::DimMismatch {
            expected: matrix.dim,
            got: query.len(),
        });
    }
    let mut ranked: Vec<(f64, &SampleId, usize)> = train_idx
        .iter()
        .map(|&i| (squared_distance(&matrix.rows[i], query), &matrix.ids[i], i))
        .collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(b.1)));
    let k = k.min(ranked.len());

    let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
    for &(_, _, idx) in &ranked[..k] {
        *votes.entry(labels[idx].as_str()).or_default() += 1;
    }
    let top = *votes.values().max().expect("at least one vote");
    // among tied classes, the one whose nearest member ranks first wins
    for &(_, _, idx) in &ranked[..k] {
        let label = labels[idx].as_str();
        if votes[label] == top {
            return Ok(label);
        }
    }
    unreachable!("some ranked neighbor holds the top vote")
}

/// Classify `query` against an entire labeled matrix.
pub fn knn_classify<'a>(
    train: &'a FeatureMatrix,
    labels: &'a [String],
    query: &[f32],
    k: usize,
) -> Result<&'a str, ClassifyError> {
    let all: Vec<usize> = (0..train.n_samples()).collect();
    knn_predict(train, labels, &all, query, k)
}

#[derive(Debug, Clone)]
enum TreeNode {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn predict(&self, query: &[f32]) -> usize {
        match self {
            TreeNode::Leaf { class } => *class,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if (query[*feature] as f64) <= *threshold {
                    left.predict(query)
                } else {
                    right.predict(query)
                }
            }
        }
    }
}

/// A trained random forest: bootstrap CART trees voting by plurality.
#[derive(Debug, Clone)]
pub struct ForestModel {
    trees: Vec<TreeNode>,
    pub classes: Vec<String>,
    dim: usize,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

fn majority_class(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

struct TreeBuilder<'a> {
    matrix: &'a FeatureMatrix,
    class_of: &'a [usize],
    n_classes: usize,
    n_candidates: usize,
}

impl TreeBuilder<'_> {
    fn grow(&self, samples: &[usize], rng: &mut ChaCha8Rng) -> TreeNode {
        let mut counts = vec![0usize; self.n_classes];
        for &s in samples {
            counts[self.class_of[s]] += 1;
        }
        let node_impurity = gini(&counts, samples.len());
        if node_impurity == 0.0 || samples.len() < 2 {
            return TreeNode::Leaf {
                class: majority_class(&counts),
            };
        }

        let candidates =
            rand::seq::index::sample(rng, self.matrix.dim, self.n_candidates.min(self.matrix.dim));
        let mut best: Option<(f64, usize, f64)> = None; // (weighted impurity, feature, threshold)
        let mut column: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
        for feature in candidates {
            column.clear();
            column.extend(
                samples
                    .iter()
                    .map(|&s| (self.matrix.rows[s][feature] as f64, self.class_of[s])),
            );
            column.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));

            let total = samples.len();
            let mut left_counts = vec![0usize; self.n_classes];
            let mut right_counts = counts.clone();
            for i in 0..total - 1 {
                let (value, class) = column[i];
                left_counts[class] += 1;
                right_counts[class] -= 1;
                let next_value = column[i + 1].0;
                if next_value <= value {
                    continue;
                }
                let n_left = i + 1;
                let n_right = total - n_left;
                let weighted = (n_left as f64 * gini(&left_counts, n_left)
                    + n_right as f64 * gini(&right_counts, n_right))
                    / total as f64;
                if best.is_none_or(|(b, _, _)| weighted < b) {
                    best = Some((weighted, feature, (value + next_value) / 2.0));
                }
            }
        }

        match best {
            Some((weighted, feature, threshold)) if weighted < node_impurity => {
                let (left, right): (Vec<usize>, Vec<usize>) = samples
                    .iter()
                    .partition(|&&s| (self.matrix.rows[s][feature] as f64) <= threshold);
                TreeNode::Split {
                    feature,
                    threshold,
                    left: Box::new(self.grow(&left, rng)),
                    right: Box::new(self.grow(&right, rng)),
                }
            }
            _ => TreeNode::Leaf {
                class: majority_class(&counts),
            },
        }
    }
}

/// Train a random forest on the given rows of the matrix.
///
/// Each tree bootstraps `|train_idx|` samples with replacement from a
/// ChaCha stream seeded with `seed ^ tree_index`, considers `ceil(sqrt(dim))`
/// candidate features per split, and grows until its leaves are pure.
pub fn rf_train(
    matrix: &FeatureMatrix,
    labels: &[String],
    train_idx: &[usize],
    seed: u64,
    n_trees: usize,
) -> Result<ForestModel, ClassifyError> {
    if train_idx.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    let classes: Vec<String> = {
        let set: std::collections::BTreeSet<&String> =
            train_idx.iter().map(|&i| &labels[i]).collect();
        set.into_iter().cloned().collect()
    };
    let class_index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    // labels outside train_idx are never read; map them to a placeholder
    let class_of: Vec<usize> = labels
        .iter()
        .map(|l| class_index.get(l.as_str()).copied().unwrap_or(0))
        .collect();

    let builder = TreeBuilder {
        matrix,
        class_of: &class_of,
        n_classes: classes.len(),
        n_candidates: (matrix.dim as f64).sqrt().ceil() as usize,
    };

    let trees: Vec<TreeNode> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t as u64);
            let bootstrap: Vec<usize> = (0..train_idx.len())
                .map(|_| train_idx[rng.gen_range(0..train_idx.len())])
                .collect();
            builder.grow(&bootstrap, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        trees,
        classes,
        dim: matrix.dim,
    })
}

/// Plurality vote across the forest; ties resolve to class-name order.
pub fn rf_predict<'a>(model: &'a ForestModel, query: &[f32]) -> Result<&'a str, ClassifyError> {
    if query.len() != model.dim {
        return Err(ClassifyError::DimMismatch {
            expected: model.dim,
            got: query.len(),
        });
    }
    let mut votes = vec![0usize; model.classes.len()];
    for tree in &model.trees {
        votes[tree.predict(query)] += 1;
    }
    Ok(&model.classes[majority_class(&votes)])
}

/// Count (true class, predicted class) pairs over sorted `classes`.
pub fn confusion_matrix(
    predictions: &[PredictionRecord],
    classes: &[String],
) -> Result<Vec<Vec<u64>>, ClassifyError> {
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut matrix = vec![vec![0u64; classes.len()]; classes.len()];
    for p in predictions {
        let t = *index
            .get(p.true_label.as_str())
            .ok_or_else(|| ClassifyError::UnknownLabel(p.true_label.clone()))?;
        let q = *index
            .get(p.predicted_label.as_str())
            .ok_or_else(|| ClassifyError::UnknownLabel(p.predicted_label.clone()))?;
        matrix[t][q] += 1;
    }
    Ok(matrix)
}

/// Stratified k-fold cross-validation over a feature matrix.
///
/// Every sample is tested exactly once; predictions are pooled and the
/// pooled accuracy reported. The result is byte-stable for a given
/// (matrix, manifest, config) regardless of thread schedule.
pub fn cross_validate(
    matrix: &FeatureMatrix,
    manifest: &Manifest,
    cfg: &CvConfig,
) -> Result<EvalResult, ClassifyError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut labels = Vec::with_capacity(matrix.n_samples());
    for id in &matrix.ids {
        if !seen.insert(id) {
            return Err(ClassifyError::DuplicateSampleId(id.clone()));
        }
        let label = manifest
            .label_of(id)
            .ok_or_else(|| ClassifyError::UnknownSampleId(id.clone()))?;
        labels.push(label.to_string());
    }

    let fold_of = make_stratified_folds(&labels, cfg)?;
    let classes: Vec<String> = {
        let set: std::collections::BTreeSet<&String> = labels.iter().collect();
        set.into_iter().cloned().collect()
    };

    let mut predictions: Vec<PredictionRecord> = Vec::with_capacity(matrix.n_samples());
    for fold in 0..cfg.folds {
        let train_idx: Vec<usize> = (0..matrix.n_samples())
            .filter(|&i| fold_of[i] != fold)
            .collect();
        let test_idx: Vec<usize> = (0..matrix.n_samples())
            .filter(|&i| fold_of[i] == fold)
            .collect();

        let fold_predictions: Vec<PredictionRecord> = match cfg.classifier {
            ClassifierKind::Knn => test_idx
                .par_iter()
                .map(|&i| {
                    knn_predict(matrix, &labels, &train_idx, &matrix.rows[i], cfg.knn_k).map(
                        |pred| PredictionRecord {
                            id: matrix.ids[i].clone(),
                            true_label: labels[i].clone(),
                            predicted_label: pred.to_string(),
                            fold,
                        },
                    )
                })
                .collect::<Result<_, _>>()?,
            ClassifierKind::RandomForest => {
                let model = rf_train(matrix, &labels, &train_idx, cfg.seed, cfg.rf_trees)?;
                test_idx
                    .par_iter()
                    .map(|&i| {
                        rf_predict(&model, &matrix.rows[i]).map(|pred| PredictionRecord {
                            id: matrix.ids[i].clone(),
                            true_label: labels[i].clone(),
                            predicted_label: pred.to_string(),
                            fold,
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        predictions.extend(fold_predictions);
    }

    predictions.sort_by(|a, b| a.id.cmp(&b.id));
    let correct = predictions.iter().filter(|p| p.is_correct()).count();
    let accuracy = correct as f64 / predictions.len() as f64;
    let confusion = confusion_matrix(&predictions, &classes)?;

    Ok(EvalResult {
        feature_name: matrix.feature_name.clone(),
        classifier: cfg.classifier.name().to_string(),
        seed: cfg.seed,
        folds: cfg.folds,
        accuracy,
        classes,
        confusion,
        predictions,
    })
}
