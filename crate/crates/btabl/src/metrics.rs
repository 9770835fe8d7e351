//! Confusion-matrix machinery, micro/macro/weighted multi-class metrics,
//! single-class (binary-reduction) metrics, ROC curves with AUROC,
//! calibration curves with ECE/ECD, and FDR.
//!
//! Conventions fixed here:
//! - micro averages come from pooled counts, so micro precision, recall,
//!   f1 and accuracy coincide bit-exactly for single-label problems;
//! - ECE is *signed* (frequency minus confidence); the absolute-value
//!   variant is reported alongside;
//! - ECD is the count-weighted L2 distance of the calibration curve from
//!   the diagonal over non-empty bins;
//! - ROC points threshold the positive-designation score at a fixed grid
//!   (default 0.05..1.00 step 0.05), with rates computed against total
//!   positives/negatives and endpoints (0,0), (1,1) appended for the
//!   trapezoidal area.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("true and predicted label sequences have different lengths ({truths} vs {preds})")]
    LengthMismatch { truths: usize, preds: usize },
    #[error("label {label} out of range [0,{classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("ROC undefined: {positives} positives and {negatives} negatives")]
    DegenerateRoc { positives: usize, negatives: usize },
    #[error("score {0} outside [0,1]")]
    ScoreRange(f64),
}

/// C x C counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        assert!(classes >= 1);
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(counts: &[Vec<u64>]) -> Self {
        let classes = counts.len();
        assert!(counts.iter().all(|r| r.len() == classes), "square matrix required");
        ConfusionMatrix { classes, counts: counts.iter().flatten().copied().collect() }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn at(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn add(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class * self.classes + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.classes).map(|c| self.at(c, c)).sum()
    }

    /// Row sum: number of samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.at(c, p)).sum()
    }

    /// Column sum: number of samples predicted as `c`.
    pub fn predicted_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.at(t, c)).sum()
    }
}

/// Count (true, predicted) pairs into a confusion matrix.
pub fn confusion(truths: &[usize], preds: &[usize], classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if truths.len() != preds.len() {
        return Err(MetricsError::LengthMismatch { truths: truths.len(), preds: preds.len() });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truths.iter().zip(preds) {
        if t >= classes {
            return Err(MetricsError::LabelOutOfRange { label: t, classes });
        }
        if p >= classes {
            return Err(MetricsError::LabelOutOfRange { label: p, classes });
        }
        cm.add(t, p);
    }
    Ok(cm)
}

/// Binary-reduction metrics for one class. Ratios with a zero denominator
/// are reported as 0 with `zero_denominator` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tpr: f64,
    pub fnr: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub fdr: f64,
    pub support: u64,
    pub zero_denominator: bool,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics for the binary problem positives = `class`, negatives = rest.
pub fn single_class_metrics(cm: &ConfusionMatrix, class: usize) -> ClassMetrics {
    let tp = cm.at(class, class);
    let fp = cm.predicted_count(class) - tp;
    let fn_ = cm.support(class) - tp;
    let tn = cm.total() - tp - fp - fn_;
    let mut flag = false;
    let precision = ratio(tp, tp + fp, &mut flag);
    let recall = ratio(tp, tp + fn_, &mut flag);
    let f1 = if 2 * tp + fp + fn_ == 0 {
        flag = true;
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    let accuracy = ratio(tp + tn, cm.total(), &mut flag);
    let tpr = recall;
    let fnr = if tp + fn_ == 0 { 0.0 } else { 1.0 - tpr };
    let tnr = ratio(tn, tn + fp, &mut flag);
    let fpr = if tn + fp == 0 { 0.0 } else { 1.0 - tnr };
    let fdr = if tp + fp == 0 { 0.0 } else { fp as f64 / (tp + fp) as f64 };
    ClassMetrics {
        precision,
        recall,
        f1,
        accuracy,
        tpr,
        fnr,
        tnr,
        fpr,
        fdr,
        support: cm.support(class),
        zero_denominator: flag,
    }
}

/// Full multi-class report: per-class metrics plus micro, macro and
/// support-weighted macro averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Pooled-count accuracy; equals micro precision/recall/f1 exactly.
    pub accuracy: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub total: u64,
}

pub fn multiclass_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let c = cm.classes();
    let total = cm.total();
    let diag = cm.diagonal();
    // Pooled counts: ΣTP = diag, ΣFP = ΣFN = total − diag. Each micro
    // metric therefore reduces to the same real quotient diag/total and
    // IEEE division rounds equal quotients identically.
    let accuracy = if total == 0 { 0.0 } else { diag as f64 / total as f64 };
    let micro_precision = if total == 0 { 0.0 } else { diag as f64 / (diag + (total - diag)) as f64 };
    let micro_recall = micro_precision;
    let micro_f1 =
        if total == 0 { 0.0 } else { 2.0 * diag as f64 / (2 * diag + 2 * (total - diag)) as f64 };

    let per_class: Vec<ClassMetrics> = (0..c).map(|k| single_class_metrics(cm, k)).collect();
    let macro_mean = |f: &dyn Fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m)).sum::<f64>() / c as f64
    };
    let weighted_mean = |f: &dyn Fn(&ClassMetrics) -> f64| {
        if total == 0 {
            return 0.0;
        }
        per_class.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64
    };
    // Support-weighted recall telescopes: Σ support_c * (TP_c/support_c)
    // = Σ TP_c = diag, so compute it from counts to keep the identity
    // weighted recall == accuracy exact in floating point.
    let weighted_recall = if total == 0 { 0.0 } else { diag as f64 / total as f64 };
    MetricsReport {
        accuracy,
        micro_precision,
        micro_recall,
        micro_f1,
        macro_precision: macro_mean(&|m| m.precision),
        macro_recall: macro_mean(&|m| m.recall),
        macro_f1: macro_mean(&|m| m.f1),
        weighted_precision: weighted_mean(&|m| m.precision),
        weighted_recall,
        weighted_f1: weighted_mean(&|m| m.f1),
        per_class,
        total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Grid points in threshold order (no synthetic endpoints).
    pub points: Vec<RocPoint>,
    /// Trapezoidal area over points sorted by FPR with (0,0) and (1,1)
    /// appended.
    pub auroc: f64,
}

/// The fixed grid 0.05, 0.10, ..., 1.00.
pub fn default_thresholds() -> Vec<f64> {
    (1..=20).map(|k| k as f64 * 0.05).collect()
}

fn trapezoid_area(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut area = 0.0;
    for w in pts.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    area
}

/// ROC over a fixed threshold grid. At each threshold t the samples with
/// score >= t count as predicted positives, and TPR/FPR are computed
/// against the overall positive/negative totals.
pub fn roc_curve(scores: &[f64], truths: &[bool], thresholds: &[f64]) -> Result<RocCurve, MetricsError> {
    if scores.len() != truths.len() {
        return Err(MetricsError::LengthMismatch { truths: truths.len(), preds: scores.len() });
    }
    if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(MetricsError::ScoreRange(bad));
    }
    let positives = truths.iter().filter(|&&t| t).count();
    let negatives = truths.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegenerateRoc { positives, negatives });
    }
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&s, &truth) in scores.iter().zip(truths) {
            if s >= t {
                if truth {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let auroc = trapezoid_area(&points);
    Ok(RocCurve { points, auroc })
}

/// Micro and macro multi-class ROC. Micro pools every (sample, class)
/// binary decision; macro averages per-class TPR/FPR at each threshold over
/// the classes with both positives and negatives, listing the rest in
/// `excluded_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroMacroRoc {
    pub micro: Option<RocCurve>,
    pub macro_: Option<RocCurve>,
    pub per_class: Vec<Option<RocCurve>>,
    pub excluded_classes: Vec<usize>,
}

pub fn micro_macro_roc(
    class_scores: &[Vec<f64>],
    truths: &[usize],
    thresholds: &[f64],
) -> Result<MicroMacroRoc, MetricsError> {
    if class_scores.len() != truths.len() {
        return Err(MetricsError::LengthMismatch { truths: truths.len(), preds: class_scores.len() });
    }
    let c = class_scores.first().map(|r| r.len()).unwrap_or(0);

    let mut pooled_scores = Vec::with_capacity(truths.len() * c);
    let mut pooled_truths = Vec::with_capacity(truths.len() * c);
    let mut per_class: Vec<Option<RocCurve>> = Vec::with_capacity(c);
    let mut excluded = Vec::new();
    for k in 0..c {
        let scores: Vec<f64> = class_scores.iter().map(|r| r[k]).collect();
        let labels: Vec<bool> = truths.iter().map(|&t| t == k).collect();
        pooled_scores.extend_from_slice(&scores);
        pooled_truths.extend_from_slice(&labels);
        match roc_curve(&scores, &labels, thresholds) {
            Ok(curve) => per_class.push(Some(curve)),
            Err(MetricsError::DegenerateRoc { .. }) => {
                per_class.push(None);
                excluded.push(k);
            }
            Err(e) => return Err(e),
        }
    }
    let micro = roc_curve(&pooled_scores, &pooled_truths, thresholds).ok();
    let valid: Vec<&RocCurve> = per_class.iter().flatten().collect();
    let macro_ = if valid.is_empty() {
        None
    } else {
        let points: Vec<RocPoint> = (0..thresholds.len())
            .map(|i| RocPoint {
                threshold: thresholds[i],
                fpr: valid.iter().map(|r| r.points[i].fpr).sum::<f64>() / valid.len() as f64,
                tpr: valid.iter().map(|r| r.points[i].tpr).sum::<f64>() / valid.len() as f64,
            })
            .collect();
        let auroc = trapezoid_area(&points);
        Some(RocCurve { points, auroc })
    };
    Ok(MicroMacroRoc { micro, macro_, per_class, excluded_classes: excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub low: f64,
    pub high: f64,
    pub count: u64,
    /// Mean predicted probability inside the bin; absent when empty.
    pub mean_score: Option<f64>,
    /// Empirical positive frequency inside the bin; absent when empty.
    pub frequency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub bins: Vec<CalibrationBin>,
    /// Signed expected calibration error: Σ (count/n) (frequency − confidence).
    pub ece: f64,
    /// Conventional absolute-value ECE.
    pub ece_abs: f64,
    /// Count-weighted L2 distance from the diagonal over non-empty bins.
    pub ecd: f64,
    pub total: u64,
}

/// Equal-width calibration bins on [0,1] (the last bin includes 1.0).
pub fn calibration(scores: &[f64], truths: &[bool], bins: usize) -> Result<CalibrationCurve, MetricsError> {
    if scores.len() != truths.len() {
        return Err(MetricsError::LengthMismatch { truths: truths.len(), preds: scores.len() });
    }
    if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(MetricsError::ScoreRange(bad));
    }
    assert!(bins >= 1);
    let mut count = vec![0u64; bins];
    let mut score_sum = vec![0.0f64; bins];
    let mut pos = vec![0u64; bins];
    for (&s, &t) in scores.iter().zip(truths) {
        let b = ((s * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        score_sum[b] += s;
        pos[b] += u64::from(t);
    }
    let n = scores.len() as f64;
    let mut ece = 0.0;
    let mut ece_abs = 0.0;
    let mut ecd_sq = 0.0;
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let (mean_score, frequency) = if count[b] > 0 {
            let conf = score_sum[b] / count[b] as f64;
            let freq = pos[b] as f64 / count[b] as f64;
            let w = count[b] as f64 / n;
            ece += w * (freq - conf);
            ece_abs += w * (freq - conf).abs();
            ecd_sq += w * (freq - conf) * (freq - conf);
            (Some(conf), Some(freq))
        } else {
            (None, None)
        };
        out.push(CalibrationBin {
            low: b as f64 / bins as f64,
            high: (b + 1) as f64 / bins as f64,
            count: count[b],
            mean_score,
            frequency,
        });
    }
    Ok(CalibrationCurve { bins: out, ece, ece_abs, ecd: ecd_sq.sqrt(), total: scores.len() as u64 })
}

/// FPR linearly interpolated at the first point where TPR reaches
/// `target_tpr` while walking the curve from (0,0) to (1,1). Returns
/// `(fpr, reached)`; when the curve never reaches the target the value is
/// 1.0 with `reached = false`.
pub fn fpr_at_tpr(curve: &RocCurve, target_tpr: f64) -> (f64, bool) {
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut prev = (0.0, 0.0);
    for &(fpr, tpr) in &pts {
        if tpr >= target_tpr {
            if (tpr - prev.1).abs() < 1e-15 {
                return (fpr, true);
            }
            let t = (target_tpr - prev.1) / (tpr - prev.1);
            return (prev.0 + t * (fpr - prev.0), true);
        }
        prev = (fpr, tpr);
    }
    (1.0, false)
}
