//! Binary classification metrics: confusion counts, accuracy, precision,
//! recall, false-positive rate, ROC curve and AUC.
//!
//! The positive class is label `1`. A score counts as a positive prediction
//! when `score >= threshold`. Rates whose denominator is zero are `None`
//! rather than a silent zero.

use serde::{Deserialize, Serialize};

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("both classes must be present")]
    SingleClass,
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Option<f64>,
    /// True positive rate.
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    /// Undefined when only one class is present.
    pub auc: Option<f64>,
    pub mean_loss: f64,
    pub counts: ConfusionCounts,
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricsError::BadLabel(bad));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn rates(counts: &ConfusionCounts) -> Result<Rates> {
    let all = counts.total();
    if all == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(Rates {
        accuracy: (counts.tp + counts.tn) as f64 / all as f64,
        precision: ratio(counts.tp, counts.tp + counts.fp),
        recall: ratio(counts.tp, counts.tp + counts.fn_),
        fpr: ratio(counts.fp, counts.fp + counts.tn),
    })
}

fn class_sizes(labels: &[u8]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((pos, neg))
}

/// One point per distinct score threshold (descending), plus the sentinel
/// above the maximum. Consecutive duplicate points are merged.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    check(scores, labels)?;
    let (pos, neg) = class_sizes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        // everything tied at this score flips to positive together
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        if points.last() != Some(&p) {
            points.push(p);
        }
    }
    Ok(RocCurve { points })
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

/// Trapezoidal ROC area. Tied scores form diagonal segments, which makes
/// the value equal to the pairwise estimator with half credit for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(roc_curve(scores, labels)?.area())
}

/// Full report at `threshold`; `mean_loss` is supplied by the caller.
pub fn report(scores: &[f64], labels: &[u8], threshold: f64, mean_loss: f64) -> Result<MetricsReport> {
    let counts = confusion(scores, labels, threshold)?;
    let r = rates(&counts)?;
    let auc = match auc(scores, labels) {
        Ok(v) => Some(v),
        Err(MetricsError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        accuracy: r.accuracy,
        precision: r.precision,
        recall: r.recall,
        fpr: r.fpr,
        auc,
        mean_loss,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_sample_confusion() {
        let c = confusion(&[0.7, 0.3], &[1, 0], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts::new(1, 1, 0, 0));
    }

    #[test]
    fn constant_high_scores() {
        let labels = [1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let c = confusion(&[0.9; 10], &labels, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (5, 5, 0, 0));
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = confusion(&[0.5], &[1], 0.5).unwrap();
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn best_row_rates() {
        let r = rates(&ConfusionCounts::new(343, 170, 26, 16)).unwrap();
        assert_abs_diff_eq!(r.accuracy, 0.9243, epsilon = 5e-5);
        assert_abs_diff_eq!(r.precision.unwrap(), 0.9295, epsilon = 5e-5);
        assert_abs_diff_eq!(r.recall.unwrap(), 0.9554, epsilon = 5e-5);
        assert_abs_diff_eq!(r.fpr.unwrap(), 26.0 / 196.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.fpr.unwrap(), 0.13265, epsilon = 5e-6);
        let r = rates(&ConfusionCounts::new(332, 153, 43, 27)).unwrap();
        assert_abs_diff_eq!(r.accuracy, 0.8739, epsilon = 5e-5);
    }

    #[test]
    fn degenerate_denominators_are_undefined() {
        let r = rates(&ConfusionCounts::new(10, 0, 0, 0)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, Some(1.0));
        assert_eq!(r.recall, Some(1.0));
        assert_eq!(r.fpr, None);
        assert_eq!(rates(&ConfusionCounts::default()), Err(MetricsError::Empty));
    }

    #[test]
    fn all_negative_predictions() {
        let scores = [0.5 - 1e-9; 6];
        let labels = [1, 1, 1, 0, 0, 0];
        let r = rates(&confusion(&scores, &labels, 0.5).unwrap()).unwrap();
        assert_eq!(r.recall, Some(0.0));
        assert_eq!(r.fpr, Some(0.0));
        assert_eq!(r.precision, None);
    }

    #[test]
    fn auc_small_cases() {
        // positives {0.9, 0.4}, negatives {0.6, 0.1}
        assert_abs_diff_eq!(
            auc(&[0.9, 0.4, 0.6, 0.1], &[1, 1, 0, 0]).unwrap(),
            0.75,
            epsilon = 1e-15
        );
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn roc_shapes() {
        let sep = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert!(sep.points.contains(&(0.0, 1.0)));
        let flat = roc_curve(&[0.3; 4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(flat.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(*sep.points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn single_class_and_bad_input() {
        assert_eq!(auc(&[0.1, 0.2], &[1, 1]), Err(MetricsError::SingleClass));
        assert!(matches!(
            confusion(&[0.1], &[1, 0], 0.5),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(confusion(&[], &[], 0.5), Err(MetricsError::Empty));
        assert_eq!(confusion(&[0.2], &[2], 0.5), Err(MetricsError::BadLabel(2)));
    }

    #[test]
    fn report_marks_single_class_auc_undefined() {
        let r = report(&[0.8, 0.9], &[1, 1], 0.5, 0.1).unwrap();
        assert_eq!(r.auc, None);
        assert_eq!(r.accuracy, 1.0);
    }
}
