//! Metrics, significance testing, and the CPU latency harness.
//!
//! Accuracy and confusion matrices, micro-averaged one-vs-rest ROC/AUC,
//! the Wilcoxon signed-rank test (exact up to n = 25, normal approximation
//! with tie and continuity corrections beyond), bootstrap confidence
//! intervals, and single-threaded per-trial inference timing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{predict, ModelConfig, NetworkParams};
use crate::{Error, Result};

/// Count matrix with rows indexed by true class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: Vec<usize>,
    pub n_classes: usize,
}

impl ConfusionMatrix {
    pub fn at(&self, true_class: usize, pred: usize) -> usize {
        self.counts[true_class * self.n_classes + pred]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: usize = (0..self.n_classes).map(|i| self.at(i, i)).sum();
        trace as f64 / self.total() as f64
    }

    /// Per-class trial counts (row sums).
    pub fn supports(&self) -> Vec<usize> {
        (0..self.n_classes)
            .map(|i| (0..self.n_classes).map(|j| self.at(i, j)).sum())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n_classes {
            let row: Vec<String> = (0..self.n_classes).map(|j| self.at(i, j).to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn confusion(labels: &[usize], preds: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if labels.len() != preds.len() {
        return Err(Error::dim(format!(
            "{} labels but {} predictions",
            labels.len(),
            preds.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::param("empty evaluation set".to_string()));
    }
    let mut counts = vec![0usize; n_classes * n_classes];
    for (&l, &p) in labels.iter().zip(preds) {
        if l >= n_classes || p >= n_classes {
            return Err(Error::param(format!(
                "label {l} or prediction {p} outside {n_classes} classes"
            )));
        }
        counts[l * n_classes + p] += 1;
    }
    Ok(ConfusionMatrix { counts, n_classes })
}

/// ROC curve points `(fpr, tpr)` and the trapezoid-rule area.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            s.push_str(&format!("{f},{t}\n"));
        }
        s
    }
}

/// Micro-averaged one-vs-rest ROC over `[N, R]` probability rows.
///
/// Every (trial, class) pair becomes one binary instance; equal scores
/// are grouped into a single threshold step.
pub fn roc_auc(scores: &[f64], n_classes: usize, labels: &[usize]) -> Result<RocCurve> {
    let n = labels.len();
    if n_classes < 2 || scores.len() != n * n_classes {
        return Err(Error::dim(format!(
            "expected {n}×{n_classes} scores, got {}",
            scores.len()
        )));
    }
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::param("single-class labels make the ROC degenerate".to_string()));
    }
    let mut instances: Vec<(f64, bool)> = Vec::with_capacity(n * n_classes);
    for (i, &l) in labels.iter().enumerate() {
        for c in 0..n_classes {
            instances.push((scores[i * n_classes + c], l == c));
        }
    }
    instances.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("non-finite score"));
    let pos = instances.iter().filter(|(_, t)| *t).count() as f64;
    let neg = instances.len() as f64 - pos;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < instances.len() {
        let threshold = instances[i].0;
        while i < instances.len() && instances[i].0 == threshold {
            if instances[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((fp / neg, tp / pos));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// Outcome of a paired signed-rank test.
#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Pairs used after discarding zero differences.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// True when the exact permutation distribution was used.
    pub exact: bool,
    /// Bootstrap confidence interval of the mean difference.
    pub ci: (f64, f64),
}

/// Abramowitz–Stegun 7.1.26 complementary error function (|ε| < 1.5e−7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        poly
    } else {
        2.0 - poly
    }
}

fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Signed ranks of the nonzero differences; ranks are doubled so tied
/// (average) ranks stay integral.
fn doubled_ranks(diffs: &[f64]) -> (Vec<u64>, Vec<bool>) {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&a, &b| diffs[a].abs().partial_cmp(&diffs[b].abs()).expect("non-finite diff"));
    let mut ranks = vec![0u64; diffs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && diffs[order[j]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // Average rank over the tie group, doubled: (i+1 + j) since ranks
        // are 1-based.
        let doubled = (i + 1 + j) as u64;
        for &k in &order[i..j] {
            ranks[k] = doubled;
        }
        i = j;
    }
    let positive = diffs.iter().map(|d| *d > 0.0).collect();
    (ranks, positive)
}

/// Exact tail probabilities of the doubled rank-sum statistic via dynamic
/// programming over the 2ⁿ sign assignments.
fn exact_two_sided_p(ranks: &[u64], w_plus_doubled: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    for &r in ranks {
        for s in (r as usize..counts.len()).rev() {
            counts[s] += counts[s - r as usize];
        }
    }
    let all: f64 = counts.iter().sum();
    let low: f64 = counts[..=w_plus_doubled as usize].iter().sum();
    let high: f64 = counts[w_plus_doubled as usize..].iter().sum();
    (2.0 * (low.min(high)) / all).min(1.0)
}

/// Resampled percentile interval of the mean difference.
pub fn bootstrap_ci(diffs: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = diffs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum::<f64>() / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).expect("non-finite mean"));
    let lo = means[(resamples as f64 * 0.025) as usize];
    let hi = means[((resamples as f64 * 0.975) as usize).min(resamples - 1)];
    (lo, hi)
}

/// Two-sided Wilcoxon signed-rank test of paired samples.
///
/// Zero differences are discarded; ties get average ranks. Exact p by
/// enumeration of the sign distribution for n ≤ 25, normal approximation
/// with tie and continuity corrections beyond.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let all_diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let diffs: Vec<f64> = all_diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let ci = bootstrap_ci(&all_diffs, 10_000, 0x55EB);
    if diffs.is_empty() {
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            p: 1.0,
            exact: true,
            ci,
        });
    }
    if diffs.len() < 5 {
        return Err(Error::param(format!(
            "need at least 5 nonzero differences, got {}",
            diffs.len()
        )));
    }
    let n = diffs.len();
    let (ranks, positive) = doubled_ranks(&diffs);
    let w_plus_doubled: u64 = ranks.iter().zip(&positive).filter(|(_, p)| **p).map(|(r, _)| *r).sum();
    let w_plus = w_plus_doubled as f64 / 2.0;
    let w_minus = n as f64 * (n as f64 + 1.0) / 2.0 - w_plus;
    let (p, exact) = if n <= 25 {
        (exact_two_sided_p(&ranks, w_plus_doubled), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        // Tie correction: Σ (t³ − t) / 48 over tie groups.
        let mut tie_term = 0.0;
        let mut sorted: Vec<u64> = ranks.clone();
        sorted.sort_unstable();
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie_term += (t * t * t - t) / 48.0;
            i = j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let centered = w_plus - mean;
        let continuity = 0.5 * centered.signum();
        let z = (centered - continuity) / var.sqrt();
        ((2.0 * normal_sf(z.abs())).min(1.0), false)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        p,
        exact,
        ci,
    })
}

/// Star coding for p-values: `***` p<0.001, `**` p<0.01, `*` p<0.05,
/// `−` otherwise.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "−"
    }
}

/// Text table comparing each method's per-subject accuracies against a
/// reference method.
pub fn significance_table(
    methods: &[(String, Vec<f64>)],
    reference: usize,
) -> Result<String> {
    if methods.is_empty() || reference >= methods.len() {
        return Err(Error::param("reference method out of range".to_string()));
    }
    let n = methods[reference].1.len();
    for (name, accs) in methods {
        if accs.len() != n {
            return Err(Error::dim(format!(
                "method {name} has {} subjects, expected {n}",
                accs.len()
            )));
        }
    }
    let ref_name = &methods[reference].0;
    let mut out = format!("method vs {ref_name}: mean_acc p stars ci\n");
    for (i, (name, accs)) in methods.iter().enumerate() {
        let mean = accs.iter().sum::<f64>() / n as f64;
        if i == reference {
            out.push_str(&format!("{name}: {mean:.4} − − −\n"));
            continue;
        }
        let w = wilcoxon_signed_rank(&methods[reference].1, accs)?;
        out.push_str(&format!(
            "{name}: {mean:.4} {:.4} {} [{:.4}, {:.4}]\n",
            w.p,
            stars(w.p),
            w.ci.0,
            w.ci.1
        ));
    }
    Ok(out)
}

/// Wall-clock inference timing over single trials.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub per_sample_ms: Vec<f64>,
}

/// Times single-trial inference on the current thread.
///
/// The first `warmups` runs are discarded; each remaining trial is timed
/// individually and summarized as mean and 95th percentile.
pub fn latency_bench(
    params: &NetworkParams,
    cfg: &ModelConfig,
    trials: &[Vec<f64>],
    warmups: usize,
) -> Result<LatencyStats> {
    if trials.is_empty() {
        return Err(Error::param("no trials to time".to_string()));
    }
    for w in trials.iter().cycle().take(warmups.min(trials.len() * 2)) {
        predict(w, 1, params, cfg)?;
    }
    let mut per_sample_ms = Vec::with_capacity(trials.len());
    for trial in trials {
        let start = Instant::now();
        predict(trial, 1, params, cfg)?;
        per_sample_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = per_sample_ms.iter().sum::<f64>() / per_sample_ms.len() as f64;
    let mut sorted = per_sample_ms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite time"));
    let idx = ((sorted.len() as f64 * 0.95).ceil() as usize).min(sorted.len()) - 1;
    Ok(LatencyStats {
        mean_ms,
        p95_ms: sorted[idx],
        per_sample_ms,
    })
}

/// Aggregated evaluation artifacts for one held-out subject set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_subject_accuracy: Vec<(String, f64)>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub roc: Option<RocCurve>,
    pub param_count: usize,
    pub param_bytes: usize,
    pub latency: Option<LatencyStats>,
}

impl MetricsReport {
    pub fn from_subject_accuracies(
        accs: Vec<(String, f64)>,
        confusion: ConfusionMatrix,
        roc: Option<RocCurve>,
        param_count: usize,
    ) -> Self {
        let n = accs.len().max(1) as f64;
        let mean = accs.iter().map(|(_, a)| a).sum::<f64>() / n;
        let var = accs.iter().map(|(_, a)| (a - mean) * (a - mean)).sum::<f64>() / n;
        MetricsReport {
            per_subject_accuracy: accs,
            mean_accuracy: mean,
            std_accuracy: var.sqrt(),
            confusion,
            roc,
            param_count,
            param_bytes: param_count * 4,
            latency: None,
        }
    }

    pub fn accuracy_csv(&self) -> String {
        let mut s = String::from("subject,accuracy\n");
        for (id, a) in &self.per_subject_accuracy {
            s.push_str(&format!("{id},{a}\n"));
        }
        s
    }
}
