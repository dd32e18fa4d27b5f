//! Calibration and accuracy metrics: binned ECE, reliability-diagram data,
//! top-k accuracy, and local/global aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Probability predictions paired with their true labels.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    probs: Matrix,
    labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(probs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if probs.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} prob rows vs {} labels",
                probs.rows(),
                labels.len()
            )));
        }
        if probs.rows() == 0 {
            return Err(Error::Usage("empty prediction set".into()));
        }
        let k = probs.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidValue(format!("label {bad} out of range 0..{k}")));
        }
        for r in 0..probs.rows() {
            let row = probs.row(r);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidValue(format!("row {r} sums to {sum}")));
            }
            if row.iter().any(|&v| !(-1e-9..=1.0 + 1e-9).contains(&v)) {
                return Err(Error::InvalidValue(format!("row {r} leaves [0,1]")));
            }
        }
        Ok(PredictionSet { probs, labels })
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    /// (confidence, predicted class) per row; argmax ties break toward the
    /// lowest class index.
    pub fn confidences(&self) -> Vec<(f64, usize)> {
        (0..self.probs.rows())
            .map(|r| {
                let row = self.probs.row(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                (row[best], best)
            })
            .collect()
    }
}

/// Per-bin reliability data plus the scalar summaries derived from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReliabilityReport {
    /// M+1 edges of the equal-width bins over (0, 1].
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<usize>,
    /// Mean confidence per bin; 0 for empty bins.
    pub bin_confidence: Vec<f64>,
    /// Empirical accuracy per bin; 0 for empty bins.
    pub bin_accuracy: Vec<f64>,
    pub ece: f64,
    pub top1_accuracy: f64,
}

/// Binned expected calibration error with `num_bins` equal-width bins over
/// (0, 1]. Sample i falls in bin m iff edge[m-1] < confidence <= edge[m];
/// empty bins contribute zero.
pub fn ece(preds: &PredictionSet, num_bins: usize) -> Result<ReliabilityReport> {
    if num_bins == 0 {
        return Err(Error::Usage("num_bins must be >= 1".into()));
    }
    let m = num_bins;
    let edges: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
    let mut counts = vec![0usize; m];
    let mut conf_sums = vec![0.0; m];
    let mut correct_sums = vec![0usize; m];
    let mut total_correct = 0usize;

    for ((conf, pred), &label) in preds.confidences().into_iter().zip(preds.labels()) {
        let bin = bin_index(conf, &edges);
        counts[bin] += 1;
        conf_sums[bin] += conf;
        if pred == label {
            correct_sums[bin] += 1;
            total_correct += 1;
        }
    }

    let n = preds.len() as f64;
    let mut ece_value = 0.0;
    let mut bin_confidence = vec![0.0; m];
    let mut bin_accuracy = vec![0.0; m];
    for b in 0..m {
        if counts[b] == 0 {
            continue;
        }
        let conf = conf_sums[b] / counts[b] as f64;
        let acc = correct_sums[b] as f64 / counts[b] as f64;
        bin_confidence[b] = conf;
        bin_accuracy[b] = acc;
        ece_value += counts[b] as f64 / n * (conf - acc).abs();
    }

    Ok(ReliabilityReport {
        bin_edges: edges,
        bin_counts: counts,
        bin_confidence,
        bin_accuracy,
        ece: ece_value,
        top1_accuracy: total_correct as f64 / n,
    })
}

/// First bin whose half-open interval (edge[m], edge[m+1]] contains `conf`.
/// Confidences at or below 0 land in bin 0, above 1 in the last bin.
fn bin_index(conf: f64, edges: &[f64]) -> usize {
    let m = edges.len() - 1;
    for b in 0..m {
        if conf > edges[b] && conf <= edges[b + 1] {
            return b;
        }
    }
    if conf <= edges[0] {
        0
    } else {
        m - 1
    }
}

/// Fraction of samples whose label is among the k most probable classes;
/// ranking ties break toward the lower class index.
pub fn topk_accuracy(preds: &PredictionSet, k: usize) -> Result<f64> {
    let classes = preds.num_classes();
    if k == 0 || k > classes {
        return Err(Error::Usage(format!("k={k} outside 1..={classes}")));
    }
    let mut hits = 0usize;
    for (r, &label) in preds.labels().iter().enumerate() {
        let row = preds.probs().row(r);
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        if order[..k].contains(&label) {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}

/// Aggregate view over per-client reliability plus the pooled report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalGlobalSummary {
    pub mean_local_ece: f64,
    pub max_local_ece: f64,
    /// Population variance of the per-client ECE values.
    pub var_local_ece: f64,
    pub global_ece: f64,
    pub global_top1: f64,
}

pub fn local_global_summary(
    per_client: &[ReliabilityReport],
    global: &ReliabilityReport,
) -> Result<LocalGlobalSummary> {
    if per_client.is_empty() {
        return Err(Error::Usage("no per-client reports".into()));
    }
    let n = per_client.len() as f64;
    let mean = per_client.iter().map(|r| r.ece).sum::<f64>() / n;
    let max = per_client.iter().map(|r| r.ece).fold(0.0, f64::max);
    let var = per_client.iter().map(|r| (r.ece - mean).powi(2)).sum::<f64>() / n;
    Ok(LocalGlobalSummary {
        mean_local_ece: mean,
        max_local_ece: max,
        var_local_ece: var,
        global_ece: global.ece,
        global_top1: global.top1_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn preds_from_rows(rows: &[Vec<f64>], labels: &[usize]) -> PredictionSet {
        PredictionSet::new(Matrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_predictions_have_zero_ece() {
        let p = preds_from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            &[0, 1, 0],
        );
        let report = ece(&p, 15).unwrap();
        assert_eq!(report.ece, 0.0);
        assert_eq!(report.top1_accuracy, 1.0);
    }

    #[test]
    fn hand_binned_example_two_bins() {
        // (.9 correct), (.8 wrong), (.6 correct), (.3 wrong)
        // bin (0.5,1]: count 3, acc 2/3, conf 23/30; bin (0,0.5]: acc 0, conf .3
        let probs = Matrix::from_rows(&[
            vec![0.9, 0.1, 0.0, 0.0],
            vec![0.8, 0.2, 0.0, 0.0],
            vec![0.6, 0.4, 0.0, 0.0],
            vec![0.3, 0.25, 0.25, 0.2],
        ])
        .unwrap();
        let p = PredictionSet::new(probs, vec![0, 1, 0, 3]).unwrap();
        let report = ece(&p, 2).unwrap();
        approx(report.ece, 0.15, 1e-12);
        assert_eq!(report.bin_counts, vec![1, 3]);
        approx(report.bin_confidence[1], 23.0 / 30.0, 1e-12);
        approx(report.bin_accuracy[1], 2.0 / 3.0, 1e-12);
        approx(report.bin_confidence[0], 0.3, 1e-12);
        assert_eq!(report.bin_accuracy[0], 0.0);
    }

    #[test]
    fn single_wrong_half_confident_sample() {
        let p = preds_from_rows(&[vec![0.5, 0.5]], &[1]);
        // argmax tie breaks to class 0, which is wrong
        let report = ece(&p, 1).unwrap();
        approx(report.ece, 0.5, 1e-15);
        assert_eq!(report.top1_accuracy, 0.0);
    }

    #[test]
    fn ece_is_permutation_invariant() {
        let mut rng = derive_rng(4, &[0]);
        let n = 64;
        let k = 5;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(0.0f64..1.0)).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            rows.push(row);
            labels.push(rng.random_range(0..k));
        }
        let base = ece(&preds_from_rows(&rows, &labels), 10).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let rows2: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
        let labels2: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let shuffled = ece(&preds_from_rows(&rows2, &labels2), 10).unwrap();
        approx(base.ece, shuffled.ece, 1e-12);
        assert_eq!(base.bin_counts, shuffled.bin_counts);
    }

    #[test]
    fn topk_full_coverage_and_top1_consistency() {
        let mut rng = derive_rng(6, &[1]);
        let n = 40;
        let k = 6;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(0.0f64..1.0)).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            rows.push(row);
            labels.push(rng.random_range(0..k));
        }
        let p = preds_from_rows(&rows, &labels);
        assert_eq!(topk_accuracy(&p, k).unwrap(), 1.0);
        let report = ece(&p, 15).unwrap();
        assert_eq!(topk_accuracy(&p, 1).unwrap(), report.top1_accuracy);
    }

    #[test]
    fn topk_matches_exhaustive_rank_check() {
        let p = preds_from_rows(
            &[
                vec![0.5, 0.3, 0.2],
                vec![0.2, 0.2, 0.6],
                vec![0.4, 0.4, 0.2], // tie: ranks are class 0 then 1
            ],
            &[1, 0, 1],
        );
        // Rank orders per row (ties to the lower class index first):
        // row0 -> [0,1,2], label 1 at rank position 1
        // row1 -> [2,0,1], label 0 at rank position 1
        // row2 -> [0,1,2], label 1 at rank position 1
        assert_eq!(topk_accuracy(&p, 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&p, 2).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&p, 3).unwrap(), 1.0);
    }

    #[test]
    fn summary_degenerate_and_arithmetic() {
        let report = |e: f64| ReliabilityReport {
            bin_edges: vec![0.0, 1.0],
            bin_counts: vec![1],
            bin_confidence: vec![0.5],
            bin_accuracy: vec![0.5],
            ece: e,
            top1_accuracy: 0.5,
        };
        let single = local_global_summary(&[report(0.2)], &report(0.2)).unwrap();
        assert_eq!(single.mean_local_ece, 0.2);
        assert_eq!(single.max_local_ece, 0.2);
        assert_eq!(single.global_ece, 0.2);

        let two = local_global_summary(&[report(0.1), report(0.3)], &report(0.15)).unwrap();
        approx(two.mean_local_ece, 0.2, 1e-15);
        approx(two.max_local_ece, 0.3, 1e-15);
        approx(two.var_local_ece, 0.01, 1e-15);
    }

    #[test]
    fn report_serializes_to_json() {
        let p = preds_from_rows(&[vec![0.7, 0.3]], &[0]);
        let report = ece(&p, 4).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: ReliabilityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.bin_counts, report.bin_counts);
        assert_eq!(back.ece, report.ece);
    }

    #[test]
    fn rejects_invalid_rows() {
        let bad = Matrix::from_rows(&[vec![0.9, 0.3]]).unwrap();
        assert!(PredictionSet::new(bad, vec![0]).is_err());
        let neg = Matrix::from_rows(&[vec![1.2, -0.2]]).unwrap();
        assert!(PredictionSet::new(neg, vec![0]).is_err());
    }
}
