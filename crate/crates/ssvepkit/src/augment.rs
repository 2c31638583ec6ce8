//! Training-time data augmentation and distribution alignment.
//!
//! Two pieces: inter-trial remixing, which exchanges per-channel first and
//! second moments between trials of the same subject, and a gated
//! channel-statistics alignment (`cada_apply`) that rescales each channel's
//! mean and standard deviation through learned sigmoid gates. Remixing runs
//! only during training; the alignment runs at both training and inference.

use rand::Rng;

use crate::diff::Tensor;
use crate::{Error, Result};

/// Floor applied to per-channel standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Per-channel mean and population standard deviation over time.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// How remix partners are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    SameSubject,
    AnySubject,
}

/// Remixing policy for one training run.
#[derive(Debug, Clone)]
pub struct AugmentPolicy {
    /// Probability that a given sample is remixed.
    pub p_remix: f64,
    pub pairing: Pairing,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            p_remix: 0.5,
            pairing: Pairing::SameSubject,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_remix) {
            return Err(Error::param(format!(
                "p_remix must lie in [0, 1], got {}",
                self.p_remix
            )));
        }
        Ok(())
    }
}

/// Computes per-channel stats of a flattened C×T trial.
pub fn channel_stats(x: &[f64], n_channels: usize) -> Result<ChannelStats> {
    if n_channels == 0 || x.len() % n_channels != 0 {
        return Err(Error::dim(format!(
            "trial of {} values does not split into {n_channels} channels",
            x.len()
        )));
    }
    let t = x.len() / n_channels;
    if t < 2 {
        return Err(Error::param(format!(
            "channel_stats needs at least 2 samples per channel, got {t}"
        )));
    }
    let mut mu = vec![0.0; n_channels];
    let mut sigma = vec![0.0; n_channels];
    for c in 0..n_channels {
        let row = &x[c * t..(c + 1) * t];
        let m = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t as f64;
        mu[c] = m;
        sigma[c] = var.sqrt().max(SIGMA_FLOOR);
    }
    Ok(ChannelStats { mu, sigma })
}

/// Standardizes `a` per channel and re-colors it with `b`'s channel stats.
///
/// The output carries `a`'s content (and label) under `b`'s per-channel
/// mean and standard deviation.
pub fn inter_trial_remix(a: &[f64], b: &[f64], n_channels: usize) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "remix operands differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let sa = channel_stats(a, n_channels)?;
    let sb = channel_stats(b, n_channels)?;
    let t = a.len() / n_channels;
    let mut out = vec![0.0; a.len()];
    for c in 0..n_channels {
        for j in 0..t {
            let z = (a[c * t + j] - sa.mu[c]) / sa.sigma[c];
            out[c * t + j] = sb.sigma[c] * z + sb.mu[c];
        }
    }
    Ok(out)
}

/// Remixes each trial in `trials` in place with probability `p_remix`.
///
/// Partners are drawn uniformly from the other trials in the batch that
/// share the sample's subject (or from the whole batch under
/// `Pairing::AnySubject`). Stats are taken from the pre-augmentation batch,
/// so the result does not depend on processing order. A sample with no
/// eligible partner passes through unmodified. Labels are never touched.
pub fn augment_batch<R: Rng>(
    trials: &mut [Vec<f64>],
    subjects: &[u32],
    n_channels: usize,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<()> {
    policy.validate()?;
    if trials.len() != subjects.len() {
        return Err(Error::dim(format!(
            "{} trials but {} subject ids",
            trials.len(),
            subjects.len()
        )));
    }
    let originals: Vec<Vec<f64>> = trials.to_vec();
    for i in 0..trials.len() {
        // Draw both decisions unconditionally so the rng stream, and hence
        // the whole augmented batch, is a pure function of the seed.
        let coin: f64 = rng.gen();
        let pick: usize = rng.gen_range(0..trials.len().max(1));
        if coin >= policy.p_remix {
            continue;
        }
        let eligible: Vec<usize> = (0..originals.len())
            .filter(|&j| {
                j != i
                    && (policy.pairing == Pairing::AnySubject || subjects[j] == subjects[i])
            })
            .collect();
        if eligible.is_empty() {
            continue;
        }
        let partner = eligible[pick % eligible.len()];
        trials[i] = inter_trial_remix(&originals[i], &originals[partner], n_channels)?;
    }
    Ok(())
}

/// Trainable gated alignment parameters for `C` channels.
///
/// Gate inputs are the per-channel `mu + sigma` vector; each gate is
/// `sigmoid(W·v + b)` with a square `C×C` weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CadaParams {
    pub wf: Vec<f64>,
    pub bf: Vec<f64>,
    pub wg: Vec<f64>,
    pub bg: Vec<f64>,
    pub n_channels: usize,
}

impl CadaParams {
    /// Zero weights with strongly positive biases: gates ≈ 1, so the map
    /// starts as (nearly) the identity and training moves it from there.
    pub fn near_identity(n_channels: usize) -> Self {
        // sigmoid(11.5129) ≈ 1 − 1e−5.
        let b = 11.5129254649702;
        CadaParams {
            wf: vec![0.0; n_channels * n_channels],
            bf: vec![b; n_channels],
            wg: vec![0.0; n_channels * n_channels],
            bg: vec![b; n_channels],
            n_channels,
        }
    }
}

/// Differentiable channel-statistics alignment.
///
/// `x` is `[B, C, T]` or `[C, T]`; `wf`/`wg` are `[C, C]`, `bf`/`bg` are
/// `[C]`. Per channel: gate_f = sigmoid(Wf·(μ+σ) + bf), gate_g likewise,
/// and the output is `gate_g·σ ⊙ normalize(x) + gate_f·μ`.
pub fn cada_apply(
    x: &Tensor,
    wf: &Tensor,
    bf: &Tensor,
    wg: &Tensor,
    bg: &Tensor,
) -> Result<Tensor> {
    let xs = x.shape();
    let (x3, squeeze) = match xs.len() {
        2 => (x.reshape(&[1, xs[0], xs[1]])?, true),
        3 => (x.clone(), false),
        _ => {
            return Err(Error::dim(format!(
                "cada_apply expects [B, C, T] or [C, T], got {xs:?}"
            )))
        }
    };
    let (mu, sigma) = x3.row_stats(SIGMA_FLOOR)?; // [B, C]
    let v = mu.add(&sigma);
    let gate_f = v.matmul(&wf.transpose_last2())?.add_rowvec(bf)?.sigmoid();
    let gate_g = v.matmul(&wg.transpose_last2())?.add_rowvec(bg)?.sigmoid();
    let mu_new = gate_f.mul(&mu);
    let sigma_new = gate_g.mul(&sigma);
    let inv = sigma.recip();
    let normalized = x3.scale_shift_rows(&inv, &mu.mul(&inv).neg())?;
    let out = normalized.scale_shift_rows(&sigma_new, &mu_new)?;
    if squeeze {
        out.reshape(&xs)
    } else {
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::finite_diff_check;
    use crate::diff::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn stats_hand_case() {
        let s = channel_stats(&[1.0, 2.0, 3.0], 1).unwrap();
        assert!((s.mu[0] - 2.0).abs() < 1e-12);
        assert!((s.sigma[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn stats_constant_channel_floored() {
        let s = channel_stats(&[5.0; 10], 1).unwrap();
        assert_eq!(s.mu[0], 5.0);
        assert_eq!(s.sigma[0], SIGMA_FLOOR);
    }

    #[test]
    fn stats_standardized_channel() {
        let n = 1000;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 7.0 * i as f64 / n as f64).sin())
            .collect();
        let s0 = channel_stats(&x, 1).unwrap();
        let z: Vec<f64> = x.iter().map(|v| (v - s0.mu[0]) / s0.sigma[0]).collect();
        let s = channel_stats(&z, 1).unwrap();
        assert!(s.mu[0].abs() < 1e-9);
        assert!((s.sigma[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stats_short_channel_rejected() {
        assert!(channel_stats(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn remix_with_self_is_identity() {
        let a = vec![0.3, -1.2, 2.5, 0.0, 1.0, -0.5];
        let out = inter_trial_remix(&a, &a, 2).unwrap();
        assert_close(&out, &a, 1e-6);
    }

    #[test]
    fn remix_affine_pair() {
        let out = inter_trial_remix(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0], 1).unwrap();
        assert_close(&out, &[10.0, 20.0, 30.0], 1e-9);
    }

    #[test]
    fn remix_exchanges_stats() {
        let a = vec![0.4, 1.7, -0.3, 2.2, 0.9, -1.1, 0.5, 0.0];
        let b = vec![3.0, -2.0, 1.5, 0.7, -0.4, 2.8, -1.9, 1.1];
        let out = inter_trial_remix(&a, &b, 2).unwrap();
        let sb = channel_stats(&b, 2).unwrap();
        let so = channel_stats(&out, 2).unwrap();
        assert_close(&so.mu, &sb.mu, 1e-6);
        assert_close(&so.sigma, &sb.sigma, 1e-6);
    }

    #[test]
    fn remix_idempotent_against_same_target() {
        let a = vec![0.4, 1.7, -0.3, 2.2];
        let b = vec![3.0, -2.0, 1.5, 0.7];
        let once = inter_trial_remix(&a, &b, 1).unwrap();
        let twice = inter_trial_remix(&once, &b, 1).unwrap();
        assert_close(&twice, &once, 1e-6);
    }

    fn toy_batch() -> (Vec<Vec<f64>>, Vec<u32>) {
        let trials: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..8).map(|j| ((i * 8 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let subjects = vec![0, 0, 0, 1, 1, 2];
        (trials, subjects)
    }

    #[test]
    fn zero_probability_is_noop() {
        let (mut trials, subjects) = toy_batch();
        let before = trials.clone();
        let policy = AugmentPolicy {
            p_remix: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        augment_batch(&mut trials, &subjects, 2, &policy, &mut rng).unwrap();
        assert_eq!(trials, before);
    }

    #[test]
    fn single_trial_subject_passes_through() {
        let (mut trials, subjects) = toy_batch();
        let lone = trials[5].clone();
        let policy = AugmentPolicy {
            p_remix: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        augment_batch(&mut trials, &subjects, 2, &policy, &mut rng).unwrap();
        assert_eq!(trials[5], lone);
    }

    #[test]
    fn remixed_trials_carry_partner_stats() {
        let (mut trials, subjects) = toy_batch();
        let before = trials.clone();
        let policy = AugmentPolicy {
            p_remix: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        augment_batch(&mut trials, &subjects, 2, &policy, &mut rng).unwrap();
        // Every multi-trial subject's sample must now match some same-subject
        // partner's stats.
        for i in 0..5 {
            let so = channel_stats(&trials[i], 2).unwrap();
            let matched = (0..6).any(|j| {
                j != i && subjects[j] == subjects[i] && {
                    let sp = channel_stats(&before[j], 2).unwrap();
                    so.mu
                        .iter()
                        .zip(&sp.mu)
                        .all(|(a, b)| (a - b).abs() < 1e-6)
                        && so
                            .sigma
                            .iter()
                            .zip(&sp.sigma)
                            .all(|(a, b)| (a - b).abs() < 1e-6)
                }
            });
            assert!(matched, "trial {i} has foreign stats");
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let policy = AugmentPolicy {
            p_remix: 0.5,
            ..Default::default()
        };
        let run = || {
            let (mut trials, subjects) = toy_batch();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            augment_batch(&mut trials, &subjects, 2, &policy, &mut rng).unwrap();
            trials
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn invalid_probability_rejected() {
        let policy = AugmentPolicy {
            p_remix: 1.5,
            ..Default::default()
        };
        assert!(policy.validate().is_err());
    }

    fn cada_on(x_data: &[f64], shape: &[usize], p: &CadaParams) -> Vec<f64> {
        let c = p.n_channels;
        let g = Graph::new();
        let x = g.tensor(x_data.to_vec(), shape);
        let wf = g.tensor(p.wf.clone(), &[c, c]);
        let bf = g.tensor(p.bf.clone(), &[c]);
        let wg = g.tensor(p.wg.clone(), &[c, c]);
        let bg = g.tensor(p.bg.clone(), &[c]);
        cada_apply(&x, &wf, &bf, &wg, &bg).unwrap().data()
    }

    #[test]
    fn near_identity_params_preserve_input() {
        let p = CadaParams::near_identity(2);
        let x = vec![0.4, 1.7, -0.3, 2.2, 0.9, -1.1, 0.5, 0.0];
        let out = cada_on(&x, &[2, 4], &p);
        assert_close(&out, &x, 1e-4);
    }

    #[test]
    fn closed_gates_zero_the_signal() {
        let mut p = CadaParams::near_identity(2);
        p.bf = vec![-30.0; 2];
        p.bg = vec![-30.0; 2];
        let x = vec![0.4, 1.7, -0.3, 2.2, 0.9, -1.1, 0.5, 0.0];
        let out = cada_on(&x, &[2, 4], &p);
        for v in out {
            assert!(v.abs() < 1e-6, "residual {v}");
        }
    }

    #[test]
    fn half_gates_halve_the_stats() {
        // Zero weights and zero biases make both gates exactly 0.5.
        let mut p = CadaParams::near_identity(2);
        p.bf = vec![0.0; 2];
        p.bg = vec![0.0; 2];
        let x = vec![0.4, 1.7, -0.3, 2.2, 0.9, -1.1, 0.5, 0.0];
        let sx = channel_stats(&x, 2).unwrap();
        let out = cada_on(&x, &[2, 4], &p);
        let so = channel_stats(&out, 2).unwrap();
        for c in 0..2 {
            assert!((so.mu[c] - 0.5 * sx.mu[c]).abs() < 1e-6);
            assert!((so.sigma[c] - 0.5 * sx.sigma[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn batched_matches_per_trial() {
        let p = CadaParams::near_identity(2);
        let mut p2 = p.clone();
        p2.bf = vec![0.3, -0.2];
        p2.wf[0] = 0.1;
        let a = vec![0.4, 1.7, -0.3, 2.2, 0.9, -1.1, 0.5, 0.0];
        let b = vec![1.0, -2.0, 0.5, 0.3, -0.7, 0.2, 1.4, -0.9];
        let batched = cada_on(
            &a.iter().chain(&b).copied().collect::<Vec<_>>(),
            &[2, 2, 4],
            &p2,
        );
        let ea = cada_on(&a, &[2, 4], &p2);
        let eb = cada_on(&b, &[2, 4], &p2);
        assert_close(&batched[..8], &ea, 1e-12);
        assert_close(&batched[8..], &eb, 1e-12);
    }

    #[test]
    fn gate_parameter_gradients_check_out() {
        let c = 2;
        let x_data = vec![0.4, 1.7, -0.3, 2.2, 0.9, -1.1, 0.5, 0.0];
        let bias = vec![0.2, -0.1];
        let w = vec![0.3, -0.2, 0.1, 0.4];
        // Gradient w.r.t. the gate weight matrix.
        let (xd, bd, wd) = (x_data.clone(), bias.clone(), w.clone());
        let err = finite_diff_check(
            |g, wf| {
                let x = g.tensor(xd.clone(), &[c, 4]);
                let bf = g.tensor(bd.clone(), &[c]);
                let wg = g.tensor(wd.clone(), &[c, c]);
                let bg = g.tensor(bd.clone(), &[c]);
                cada_apply(&x, wf, &bf, &wg, &bg).unwrap().sum()
            },
            &w,
            &[c, c],
            1e-5,
        );
        assert!(err < 1e-4, "wf gradient error {err}");
        // Gradient w.r.t. a gate bias.
        let (xd, wd) = (x_data.clone(), w.clone());
        let err = finite_diff_check(
            |g, bg| {
                let x = g.tensor(xd.clone(), &[c, 4]);
                let wf = g.tensor(wd.clone(), &[c, c]);
                let bf = g.tensor(vec![0.2, -0.1], &[c]);
                let wg = g.tensor(wd.clone(), &[c, c]);
                cada_apply(&x, &wf, &bf, &wg, bg).unwrap().sum()
            },
            &bias,
            &[c],
            1e-5,
        );
        assert!(err < 1e-4, "bias gradient error {err}");
        // Gradient w.r.t. the input itself.
        let (bd, wd) = (bias.clone(), w.clone());
        let err = finite_diff_check(
            |g, x| {
                let wf = g.tensor(wd.clone(), &[c, c]);
                let bf = g.tensor(bd.clone(), &[c]);
                let wg = g.tensor(wd.clone(), &[c, c]);
                let bg = g.tensor(bd.clone(), &[c]);
                cada_apply(x, &wf, &bf, &wg, &bg).unwrap().sum()
            },
            &x_data,
            &[c, 4],
            1e-5,
        );
        assert!(err < 1e-4, "input gradient error {err}");
    }
}
