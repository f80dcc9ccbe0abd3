//! Experiment orchestration: rolling cross-validation fold plans, binary
//! classification metrics, the experiment runner and its caches.

mod config;

pub use config::{DatasetSpec, ExperimentConfig, LocalMapSpec, Pipeline, TrainSpec};

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Role split of one fold: subset indices acting as train / validation /
/// test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRoles {
    pub train_subsets: Vec<usize>,
    pub validation_subset: usize,
    pub test_subset: usize,
}

/// Partition of samples into `n_folds` subsets with rolling role
/// assignment: fold `k` tests on subset `k` and validates on subset
/// `(k + 1) mod n_folds`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub n_folds: usize,
    /// Subset index per sample.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn n_samples(&self) -> usize {
        self.assignments.len()
    }

    pub fn roles(&self, fold: usize) -> FoldRoles {
        let validation = (fold + 1) % self.n_folds;
        FoldRoles {
            train_subsets: (0..self.n_folds)
                .filter(|&s| s != fold && s != validation)
                .collect(),
            validation_subset: validation,
            test_subset: fold,
        }
    }

    pub fn subset_indices(&self, subset: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == subset)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let roles = self.roles(fold);
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, s)| roles.train_subsets.contains(s))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        self.subset_indices(self.roles(fold).validation_subset)
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.subset_indices(self.roles(fold).test_subset)
    }
}

/// Shuffles sample indices by seed and splits them into `n_folds`
/// near-equal subsets.
pub fn rolling_folds(n_samples: usize, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    if n_samples < n_folds {
        return Err(Error::InvalidArgument(format!(
            "{n_samples} samples cannot fill {n_folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignments = vec![0usize; n_samples];
    let base = n_samples / n_folds;
    let extra = n_samples % n_folds;
    let mut cursor = 0;
    for subset in 0..n_folds {
        let size = base + usize::from(subset < extra);
        for &i in &order[cursor..cursor + size] {
            assignments[i] = subset;
        }
        cursor += size;
    }
    Ok(FoldPlan {
        n_folds,
        assignments,
    })
}

/// Stratified variant: shuffles within each class and deals the classes
/// round-robin so subsets keep near-equal label balance.
pub fn stratified_rolling_folds(labels: &[u8], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    if labels.len() < n_folds {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot fill {n_folds} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0usize; labels.len()];
    let mut dealt = 0usize;
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignments[i] = dealt % n_folds;
            dealt += 1;
        }
    }
    Ok(FoldPlan {
        n_folds,
        assignments,
    })
}

/// One metric row: AUC, average precision, F1 and accuracy.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricEntry {
    pub auc: f64,
    pub average_precision: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Per-fold metrics plus their mean and sample standard deviation.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub per_fold: Vec<MetricEntry>,
    pub mean: MetricEntry,
    pub std: MetricEntry,
}

impl MetricReport {
    pub fn from_folds(per_fold: Vec<MetricEntry>) -> Result<Self> {
        if per_fold.is_empty() {
            return Err(Error::DegenerateData("no folds to report".into()));
        }
        let n = per_fold.len() as f64;
        let mean_of = |pick: &dyn Fn(&MetricEntry) -> f64| {
            per_fold.iter().map(|e| pick(e)).sum::<f64>() / n
        };
        let mean = MetricEntry {
            auc: mean_of(&|e| e.auc),
            average_precision: mean_of(&|e| e.average_precision),
            f1: mean_of(&|e| e.f1),
            accuracy: mean_of(&|e| e.accuracy),
        };
        let std_of = |pick: &dyn Fn(&MetricEntry) -> f64, mu: f64| {
            if per_fold.len() < 2 {
                0.0
            } else {
                (per_fold.iter().map(|e| (pick(e) - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        };
        let std = MetricEntry {
            auc: std_of(&|e| e.auc, mean.auc),
            average_precision: std_of(&|e| e.average_precision, mean.average_precision),
            f1: std_of(&|e| e.f1, mean.f1),
            accuracy: std_of(&|e| e.accuracy, mean.accuracy),
        };
        Ok(MetricReport { per_fold, mean, std })
    }

    /// Delimited text: one row per fold plus mean and std rows.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("fold,auc,map,f1,accuracy\n");
        let row = |tag: &str, e: &MetricEntry| {
            format!(
                "{tag},{:.9},{:.9},{:.9},{:.9}\n",
                e.auc, e.average_precision, e.f1, e.accuracy
            )
        };
        for (k, e) in self.per_fold.iter().enumerate() {
            out.push_str(&row(&k.to_string(), e));
        }
        out.push_str(&row("mean", &self.mean));
        out.push_str(&row("std", &self.std));
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Ranking and threshold metrics for binary scores.
///
/// AUC is the probability that a random positive outranks a random
/// negative, with ties counted half (rank-averaged Mann-Whitney). Average
/// precision sums precision-at-rank over positives, breaking score ties by
/// original order. F1 and accuracy threshold at 0.5 (`>= 0.5` is positive).
pub fn binary_metrics(scores: &[f64], labels: &[u8]) -> Result<MetricEntry> {
    if scores.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateData(
            "ranking metrics require both classes".into(),
        ));
    }

    // Tie-averaged ranks (1-based).
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&r, _)| r)
        .sum();
    let pos_f = pos as f64;
    let neg_f = neg as f64;
    let auc = (pos_rank_sum - pos_f * (pos_f + 1.0) / 2.0) / (pos_f * neg_f);

    // Average precision over descending scores, stable in original order.
    let mut desc: Vec<usize> = (0..scores.len()).collect();
    desc.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut ap = 0.0f64;
    for (rank0, &idx) in desc.iter().enumerate() {
        if labels[idx] == 1 {
            hits += 1;
            ap += hits as f64 / (rank0 + 1) as f64;
        }
    }
    let ap = ap / pos_f;

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut correct = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = u8::from(s >= 0.5);
        if pred == l {
            correct += 1;
        }
        match (pred, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    let accuracy = correct as f64 / scores.len() as f64;

    Ok(MetricEntry {
        auc,
        average_precision: ap,
        f1,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn folds_partition_and_roll() {
        let plan = rolling_folds(10, 5, 3).unwrap();
        // every subset size 2, every sample tested exactly once
        let mut tested = vec![0usize; 10];
        for fold in 0..5 {
            let test = plan.test_indices(fold);
            assert_eq!(test.len(), 2);
            for i in test {
                tested[i] += 1;
            }
        }
        assert!(tested.iter().all(|&c| c == 1));
        // wrap-around validation
        assert_eq!(plan.roles(4).validation_subset, 0);
        // 3 training subsets at 5 folds
        assert_eq!(plan.roles(0).train_subsets.len(), 3);
    }

    #[test]
    fn folds_reject_tiny_datasets() {
        assert!(rolling_folds(3, 5, 0).is_err());
    }

    #[test]
    fn stratified_folds_balance_labels() {
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 2 == 0)).collect();
        let plan = stratified_rolling_folds(&labels, 5, 9).unwrap();
        for s in 0..5 {
            let idx = plan.subset_indices(s);
            let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(idx.len(), 8);
            assert_eq!(pos, 4);
        }
    }

    #[test]
    fn metrics_perfect_ranking() {
        let m = binary_metrics(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.average_precision, 1.0);
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn metrics_derived_four_sample_case() {
        let m = binary_metrics(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0]).unwrap();
        assert!((m.auc - 0.75).abs() < 1e-12);
        assert!((m.average_precision - 5.0 / 6.0).abs() <= 1e-9);
    }

    #[test]
    fn metrics_all_ties_give_half_auc() {
        let m = binary_metrics(&[0.4, 0.4, 0.4, 0.4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(m.auc, 0.5);
    }

    #[test]
    fn metrics_reject_single_class() {
        assert!(binary_metrics(&[0.5, 0.6], &[1, 1]).is_err());
    }

    #[test]
    fn auc_invariant_under_monotone_transform_and_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.gen_range(4..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
            labels[0] = 1;
            labels[1] = 0;
            let base = binary_metrics(&scores, &labels).unwrap();
            let squashed: Vec<f64> = scores.iter().map(|s| (4.0 * s - 1.0).tanh()).collect();
            let after = binary_metrics(&squashed, &labels).unwrap();
            assert!((base.auc - after.auc).abs() < 1e-12);
            // distinct scores: flipping reverses the ranking
            let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
            let flip = binary_metrics(&flipped, &labels).unwrap();
            assert!((base.auc + flip.auc - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn report_mean_within_fold_range() {
        let entries = vec![
            MetricEntry { auc: 0.8, average_precision: 0.7, f1: 0.6, accuracy: 0.75 },
            MetricEntry { auc: 0.9, average_precision: 0.85, f1: 0.7, accuracy: 0.8 },
            MetricEntry { auc: 0.7, average_precision: 0.6, f1: 0.5, accuracy: 0.7 },
        ];
        let report = MetricReport::from_folds(entries).unwrap();
        assert!((report.mean.auc - 0.8).abs() < 1e-12);
        assert!(report.mean.auc <= 0.9 && report.mean.auc >= 0.7);
        assert!(report.std.auc > 0.0);
    }

    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;
}
