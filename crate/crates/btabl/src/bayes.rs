//! Predictive distributions from repeated stochastic forward passes, the
//! classification rule, forecast-label aggregation, and the uncertainty
//! statistics reported over them (rank probabilities, survivor functions,
//! score densities, TP/FN/FP/TN-conditioned probabilities).
//!
//! A predictive set for one input is the N_s x C matrix of class
//! probabilities from N_s forward passes, one per posterior draw (or
//! dropout mask). Row n's seed derives from `(base_seed, input_id, n)`, so
//! the result is identical whether draws run serially or in parallel.

use crate::linalg::Matrix;
use crate::lobdata::LobWindow;
use crate::model::{network_forward, softmax, NetworkParams, NetworkShape};
use crate::optim::{vogn_sample, VariationalState};
use crate::seed::rng_for;

/// Where the per-draw parameter vectors come from.
pub enum ParamSampler<'a> {
    /// Mean-field Gaussian posterior draws.
    Posterior(&'a VariationalState),
    /// Fixed point estimate with random connection deletion (MC dropout):
    /// each weight in `mask_indices` is zeroed with probability `rate` and
    /// survivors are rescaled by 1/(1-rate). Biases and the mixing
    /// coefficient are never dropped.
    Dropout { params: &'a [f64], rate: f64, mask_indices: &'a [usize] },
    /// Fixed point estimate; every draw is the same forward pass.
    Deterministic(&'a [f64]),
}

impl ParamSampler<'_> {
    pub fn draw(&self, seed: u64) -> Vec<f64> {
        match self {
            ParamSampler::Posterior(state) => vogn_sample(state, &mut rng_for(seed, &[])),
            ParamSampler::Dropout { params, rate, mask_indices } => {
                let mut theta = params.to_vec();
                if *rate > 0.0 {
                    let mut rng = rng_for(seed, &[]);
                    let keep = 1.0 - rate;
                    for &i in *mask_indices {
                        use rand::Rng;
                        if rng.random::<f64>() < *rate {
                            theta[i] = 0.0;
                        } else {
                            theta[i] /= keep;
                        }
                    }
                }
                theta
            }
            ParamSampler::Deterministic(params) => params.to_vec(),
        }
    }

    /// Whether repeated draws can differ (predictive machinery degenerates
    /// to the plain model otherwise).
    pub fn is_stochastic(&self) -> bool {
        match self {
            ParamSampler::Posterior(_) => true,
            ParamSampler::Dropout { rate, .. } => *rate > 0.0,
            ParamSampler::Deterministic(_) => false,
        }
    }
}

/// N_s class-probability rows for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSet {
    /// N_s x C; each row is the softmax output of one draw.
    pub probs: Matrix,
    pub input_id: u64,
    pub true_label: Option<usize>,
}

/// Build the predictive set for one input: N_s forward passes at draws from
/// the sampler, each seeded by `(base_seed, input_id, draw_index)`.
pub fn predictive_set(
    shape: &NetworkShape,
    sampler: &ParamSampler,
    window: &LobWindow,
    n_s: usize,
    input_id: u64,
    base_seed: u64,
) -> PredictiveSet {
    assert!(n_s >= 1, "need at least one draw");
    let c = shape.num_classes();
    let mut probs = Matrix::zeros(n_s, c);
    for draw in 0..n_s {
        let seed = crate::seed::derive_seed(base_seed, &[input_id, draw as u64]);
        let theta = sampler.draw(seed);
        let params = NetworkParams::unflatten(shape, &theta);
        let (logits, _) = network_forward(&window.x, &params, shape).expect("forward pass");
        for (j, p) in softmax(&logits).into_iter().enumerate() {
            probs.set(draw, j, p);
        }
    }
    PredictiveSet { probs, input_id, true_label: window.label }
}

fn argmax(values: &[f64]) -> usize {
    // ties break toward the lowest class index
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Half-up rounding on the internal class index.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Aggregations of one predictive set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub input_id: u64,
    pub true_label: Option<usize>,
    /// Bayesian model average p̂_i.
    pub mean_probs: Vec<f64>,
    /// Per-class median across draws (robust to outliers; columns need not
    /// sum to one).
    pub median_probs: Vec<f64>,
    /// argmax of `mean_probs` — the classification rule.
    pub predicted_class: usize,
    /// `mean_probs` sorted descending: (p̂(1), p̂(2), ..., p̂(C)).
    pub ranked: Vec<f64>,
    /// p̂(1) − p̂(2).
    pub rank_gap: f64,
    /// Per-class counts of per-draw argmax labels.
    pub label_counts: Vec<usize>,
    pub modal_label: usize,
    pub mean_label_rounded: usize,
    pub median_label_rounded: usize,
}

pub fn summarize(set: &PredictiveSet) -> PredictiveSummary {
    let n_s = set.probs.rows();
    let c = set.probs.cols();
    let mut mean_probs = vec![0.0; c];
    let mut label_counts = vec![0usize; c];
    let mut draw_labels = Vec::with_capacity(n_s);
    for n in 0..n_s {
        let row = set.probs.row(n);
        for j in 0..c {
            mean_probs[j] += row[j];
        }
        let label = argmax(row);
        label_counts[label] += 1;
        draw_labels.push(label);
    }
    for m in &mut mean_probs {
        *m /= n_s as f64;
    }
    let median_probs: Vec<f64> =
        (0..c).map(|j| median_of((0..n_s).map(|n| set.probs.get(n, j)).collect())).collect();

    let mut ranked = mean_probs.clone();
    ranked.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let rank_gap = if c > 1 { ranked[0] - ranked[1] } else { ranked[0] };

    let modal_label = argmax(&label_counts.iter().map(|&k| k as f64).collect::<Vec<_>>());
    let mean_label = draw_labels.iter().sum::<usize>() as f64 / n_s as f64;
    let median_label = median_of(draw_labels.iter().map(|&l| l as f64).collect());

    PredictiveSummary {
        input_id: set.input_id,
        true_label: set.true_label,
        predicted_class: argmax(&mean_probs),
        mean_probs,
        median_probs,
        ranked,
        rank_gap,
        label_counts,
        modal_label,
        mean_label_rounded: round_half_up(mean_label),
        median_label_rounded: round_half_up(median_label),
    }
}

/// argmax of the median aggregation (the robust alternative to the mean
/// classification rule).
pub fn predicted_class_median(summary: &PredictiveSummary) -> usize {
    argmax(&summary.median_probs)
}

/// mean/median/min/max of one statistic over a partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatLine {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

fn stat_line(values: &[f64]) -> StatLine {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    StatLine {
        mean,
        median: median_of(values.to_vec()),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Rank-probability statistics for one partition: rows for p̂(1), p̂(2),
/// p̂(3) and the rank gap.
#[derive(Debug, Clone, PartialEq)]
pub struct RankStatBlock {
    pub count: usize,
    /// One line per rank, highest first.
    pub ranks: Vec<StatLine>,
    pub gap: StatLine,
}

/// Statistics on ranked predictive probabilities, split by correctly and
/// miss-classified inputs. Partitions with no members are absent, not zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RankStatistics {
    pub correct: Option<RankStatBlock>,
    pub miss: Option<RankStatBlock>,
}

pub fn rank_statistics(summaries: &[PredictiveSummary]) -> RankStatistics {
    let block = |subset: Vec<&PredictiveSummary>| -> Option<RankStatBlock> {
        if subset.is_empty() {
            return None;
        }
        let c = subset[0].ranked.len();
        let ranks = (0..c)
            .map(|r| stat_line(&subset.iter().map(|s| s.ranked[r]).collect::<Vec<_>>()))
            .collect();
        let gap = stat_line(&subset.iter().map(|s| s.rank_gap).collect::<Vec<_>>());
        Some(RankStatBlock { count: subset.len(), ranks, gap })
    };
    let labeled: Vec<&PredictiveSummary> = summaries.iter().filter(|s| s.true_label.is_some()).collect();
    let (correct, miss): (Vec<&PredictiveSummary>, Vec<&PredictiveSummary>) =
        labeled.into_iter().partition(|s| s.true_label == Some(s.predicted_class));
    RankStatistics { correct: block(correct), miss: block(miss) }
}

/// Empirical survivor function on a grid: fraction of `values` strictly
/// greater than each threshold. Monotone non-increasing.
pub fn esf(values: &[f64], grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter()
        .map(|&t| {
            let frac = if values.is_empty() {
                0.0
            } else {
                values.iter().filter(|&&v| v > t).count() as f64 / values.len() as f64
            };
            (t, frac)
        })
        .collect()
}

/// Histograms of per-draw class probabilities for one
/// (true class, correct/miss) partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPartition {
    pub true_class: usize,
    pub correct: bool,
    /// `counts[class][bin]` over fixed-width bins on [0,1].
    pub counts: Vec<Vec<u64>>,
    /// Per-class mean of the per-draw probabilities.
    pub means: Vec<f64>,
    /// Draw count contributing to each class histogram.
    pub draws: u64,
}

/// Fixed-width histograms (default 50 bins on [0,1]) of per-draw class
/// probabilities, split by true class and correctness of the predictive
/// classification.
pub fn score_densities(sets: &[PredictiveSet], bins: usize) -> Vec<DensityPartition> {
    assert!(bins >= 1);
    let c = if let Some(s) = sets.first() { s.probs.cols() } else { return Vec::new() };
    let mut partitions: Vec<DensityPartition> = Vec::new();
    for true_class in 0..c {
        for &correct in &[true, false] {
            partitions.push(DensityPartition {
                true_class,
                correct,
                counts: vec![vec![0; bins]; c],
                means: vec![0.0; c],
                draws: 0,
            });
        }
    }
    for set in sets {
        let Some(true_label) = set.true_label else { continue };
        let summary = summarize(set);
        let correct = summary.predicted_class == true_label;
        let part = &mut partitions[true_label * 2 + usize::from(!correct)];
        for n in 0..set.probs.rows() {
            for j in 0..c {
                let p = set.probs.get(n, j);
                let bin = ((p * bins as f64) as usize).min(bins - 1);
                part.counts[j][bin] += 1;
                part.means[j] += p;
            }
            part.draws += 1;
        }
    }
    for part in &mut partitions {
        if part.draws > 0 {
            for m in &mut part.means {
                *m /= part.draws as f64;
            }
        }
    }
    partitions
}

/// Mean predictive probabilities in one confusion cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStat {
    pub count: usize,
    /// Mean p̂(1) over the cell.
    pub mean_top: f64,
    /// Mean p̂ at the true class over the cell.
    pub mean_true: f64,
}

/// TP/FN/FP/TN rows for the binary reduction onto `class`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionCellStats {
    pub class: usize,
    pub tp: Option<CellStat>,
    pub fn_: Option<CellStat>,
    pub fp: Option<CellStat>,
    pub tn: Option<CellStat>,
}

/// Mean p̂(1) and mean true-class probability across the TP/FN/FP/TN cells
/// of the binary reduction positives = `class`. Empty cells are absent.
pub fn predictive_confusion_stats(summaries: &[PredictiveSummary], class: usize) -> ConfusionCellStats {
    let mut cells: [Vec<(f64, f64)>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for s in summaries {
        let Some(true_label) = s.true_label else { continue };
        let is_pos = true_label == class;
        let predicted_pos = s.predicted_class == class;
        let cell = match (is_pos, predicted_pos) {
            (true, true) => 0,   // TP
            (true, false) => 1,  // FN
            (false, true) => 2,  // FP
            (false, false) => 3, // TN
        };
        cells[cell].push((s.ranked[0], s.mean_probs[true_label]));
    }
    let stat = |v: &Vec<(f64, f64)>| -> Option<CellStat> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        Some(CellStat {
            count: v.len(),
            mean_top: v.iter().map(|&(t, _)| t).sum::<f64>() / n,
            mean_true: v.iter().map(|&(_, t)| t).sum::<f64>() / n,
        })
    };
    ConfusionCellStats {
        class,
        tp: stat(&cells[0]),
        fn_: stat(&cells[1]),
        fp: stat(&cells[2]),
        tn: stat(&cells[3]),
    }
}
