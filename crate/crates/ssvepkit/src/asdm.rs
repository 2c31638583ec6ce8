//! Adaptive spectral denoising block.
//!
//! Per channel the block layer-norms the time course, moves to the
//! frequency domain, drops bins whose median-normalized power falls below
//! a trainable threshold, rescales the survivors with trainable per-bin
//! weights, and transforms back; a per-time-point feedforward follows.
//! Both stages sit behind residual connections. The hard threshold is
//! trained with a straight-through sigmoid surrogate.

use rand::Rng;

use crate::diff::{Graph, SpectrumTensor, Tensor};
use crate::{Error, Result};

/// Temperature of the straight-through sigmoid surrogate. Narrower
/// temperatures starve θ of gradient once the spectrum pulls away from
/// the threshold, freezing it at its random init.
pub const DEFAULT_TAU: f64 = 0.3;

const LN_EPS: f64 = 1e-5;

/// Power per frequency bin: `P[k] = |F[k]|² / N`.
pub fn power_spectrum(re: &[f64], im: &[f64]) -> Vec<f64> {
    let n = re.len() as f64;
    re.iter()
        .zip(im)
        .map(|(a, b)| (a * a + b * b) / n)
        .collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("non-finite power"));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Divides the power spectrum by its median (floored at 1e−12).
pub fn median_normalize(p: &[f64]) -> Vec<f64> {
    let m = median(p).max(1e-12);
    p.iter().map(|v| v / m).collect()
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Zeroes every bin whose median-normalized power is at or below `theta`.
///
/// The mask is hard in the forward pass. The gradient w.r.t. `theta` uses
/// the surrogate `−s(1−s)/tau` with `s = sigmoid((Pm − θ)/tau)`; gradients
/// w.r.t. the spectrum flow only through retained bins. The normalized
/// power is evaluated at the mirrored one-sided index so conjugate bins
/// always share a mask decision and the inverse transform stays real.
pub fn threshold_mask(spec: &SpectrumTensor, theta: &Tensor, tau: f64) -> Result<SpectrumTensor> {
    if theta.len() != 1 {
        return Err(Error::dim(format!(
            "threshold must be scalar, got {:?}",
            theta.shape()
        )));
    }
    if tau <= 0.0 {
        return Err(Error::param(format!("tau must be positive, got {tau}")));
    }
    let fre = spec.re.data();
    let fim = spec.im.data();
    let shape = spec.re.shape();
    let n = spec.n;
    let rows = fre.len() / n;
    let th = theta.item();
    let mut mask = vec![0.0; fre.len()];
    let mut dcoef = vec![0.0; fre.len()];
    for r in 0..rows {
        let p = power_spectrum(&fre[r * n..(r + 1) * n], &fim[r * n..(r + 1) * n]);
        let pm = median_normalize(&p);
        for k in 0..n {
            let j = k.min(n - k);
            let s = stable_sigmoid((pm[j] - th) / tau);
            mask[r * n + k] = if pm[j] > th { 1.0 } else { 0.0 };
            dcoef[r * n + k] = -s * (1.0 - s) / tau;
        }
    }
    let graph = spec.re.graph.clone();
    let id_theta = theta.id;
    let make = |src: &Tensor, vals: &[f64]| {
        let out: Vec<f64> = vals.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let id_src = src.id;
        let (m, d, v) = (mask.clone(), dcoef.clone(), vals.to_vec());
        graph.push(
            out,
            shape.clone(),
            Some(Box::new(move |g: &[f64], inner: &mut crate::diff::GraphInner| {
                let gx: Vec<f64> = g.iter().zip(&m).map(|(gv, mv)| gv * mv).collect();
                let gt: f64 = g.iter().zip(&d).zip(&v).map(|((gv, dv), vv)| gv * dv * vv).sum();
                inner.accum(id_src, &gx);
                inner.accum(id_theta, &[gt]);
            })),
        )
    };
    let re = make(&spec.re, &fre);
    let im = make(&spec.im, &fim);
    Ok(SpectrumTensor { re, im, n })
}

/// Scales each bin by a real trainable weight shared with its conjugate.
///
/// `mf` has one weight per one-sided bin `0..⌊N/2⌋`; bin `k` and `N−k`
/// use the same weight so the inverse transform stays real.
pub fn spectral_weighting(spec: &SpectrumTensor, mf: &Tensor) -> Result<SpectrumTensor> {
    let n = spec.n;
    let half = n / 2 + 1;
    if mf.len() != half {
        return Err(Error::dim(format!(
            "expected {half} one-sided weights for {n} bins, got {}",
            mf.len()
        )));
    }
    let w = mf.data();
    let shape = spec.re.shape();
    let rows = spec.re.len() / n;
    let graph = spec.re.graph.clone();
    let id_mf = mf.id;
    let make = |src: &Tensor| {
        let vals = src.data();
        let mut out = vec![0.0; vals.len()];
        for r in 0..rows {
            for k in 0..n {
                out[r * n + k] = vals[r * n + k] * w[k.min(n - k)];
            }
        }
        let id_src = src.id;
        let (w2, v2) = (w.clone(), vals);
        graph.push(
            out,
            shape.clone(),
            Some(Box::new(move |g: &[f64], inner: &mut crate::diff::GraphInner| {
                let mut gx = vec![0.0; rows * n];
                let mut gw = vec![0.0; half];
                for r in 0..rows {
                    for k in 0..n {
                        let j = k.min(n - k);
                        gx[r * n + k] = g[r * n + k] * w2[j];
                        gw[j] += g[r * n + k] * v2[r * n + k];
                    }
                }
                inner.accum(id_src, &gx);
                inner.accum(id_mf, &gw);
            })),
        )
    };
    Ok(SpectrumTensor {
        re: make(&spec.re),
        im: make(&spec.im),
        n,
    })
}

/// Frequency-domain denoising chain: FFT → threshold → weighting → IFFT.
pub fn denoise(z: &Tensor, theta: &Tensor, mf: &Tensor, tau: f64) -> Result<Tensor> {
    let spec = z.fft()?;
    let masked = threshold_mask(&spec, theta, tau)?;
    let weighted = spectral_weighting(&masked, mf)?;
    weighted.ifft()
}

/// Trainable state of the denoising block for `C` channels and `T`-sample
/// windows.
#[derive(Debug, Clone, PartialEq)]
pub struct AsdmParams {
    /// Scalar power threshold, shared across channels.
    pub theta: f64,
    /// One-sided spectral weights, length ⌊T/2⌋+1, shared across channels.
    pub mf: Vec<f64>,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    /// Feedforward C→2C→C with ELU between; `ff_w1` is `[C, 2C]`,
    /// `ff_w2` is `[2C, C]`.
    pub ff_w1: Vec<f64>,
    pub ff_b1: Vec<f64>,
    pub ff_w2: Vec<f64>,
    pub ff_b2: Vec<f64>,
    pub tau: f64,
    pub n_channels: usize,
    pub n_samples: usize,
}

fn fan_in_uniform<R: Rng>(rng: &mut R, fan_in: usize, len: usize) -> Vec<f64> {
    let limit = (1.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-limit..limit)).collect()
}

impl AsdmParams {
    /// Fresh parameters: θ uniform in (0,1), unit spectral weights,
    /// identity layer norms, fan-in-scaled feedforward weights.
    pub fn init<R: Rng>(rng: &mut R, n_channels: usize, n_samples: usize) -> Self {
        let half = n_samples / 2 + 1;
        AsdmParams {
            theta: rng.gen_range(f64::EPSILON..1.0),
            mf: vec![1.0; half],
            ln1_gain: vec![1.0; n_samples],
            ln1_bias: vec![0.0; n_samples],
            ln2_gain: vec![1.0; n_channels],
            ln2_bias: vec![0.0; n_channels],
            ff_w1: fan_in_uniform(rng, n_channels, n_channels * 2 * n_channels),
            ff_b1: vec![0.0; 2 * n_channels],
            ff_w2: fan_in_uniform(rng, 2 * n_channels, 2 * n_channels * n_channels),
            ff_b2: vec![0.0; n_channels],
            tau: DEFAULT_TAU,
            n_channels,
            n_samples,
        }
    }

    pub fn param_count(&self) -> usize {
        1 + self.mf.len()
            + self.ln1_gain.len()
            + self.ln1_bias.len()
            + self.ln2_gain.len()
            + self.ln2_bias.len()
            + self.ff_w1.len()
            + self.ff_b1.len()
            + self.ff_w2.len()
            + self.ff_b2.len()
    }

    /// Inserts every trainable field into `g` as a leaf.
    pub fn leaves(&self, g: &Graph) -> AsdmLeaves {
        let c = self.n_channels;
        let t = self.n_samples;
        AsdmLeaves {
            theta: g.scalar(self.theta),
            mf: g.tensor(self.mf.clone(), &[self.mf.len()]),
            ln1_gain: g.tensor(self.ln1_gain.clone(), &[t]),
            ln1_bias: g.tensor(self.ln1_bias.clone(), &[t]),
            ln2_gain: g.tensor(self.ln2_gain.clone(), &[c]),
            ln2_bias: g.tensor(self.ln2_bias.clone(), &[c]),
            ff_w1: g.tensor(self.ff_w1.clone(), &[c, 2 * c]),
            ff_b1: g.tensor(self.ff_b1.clone(), &[2 * c]),
            ff_w2: g.tensor(self.ff_w2.clone(), &[2 * c, c]),
            ff_b2: g.tensor(self.ff_b2.clone(), &[c]),
            tau: self.tau,
        }
    }
}

/// Graph-resident copies of [`AsdmParams`] for one forward pass.
pub struct AsdmLeaves {
    pub theta: Tensor,
    pub mf: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    pub tau: f64,
}

/// Full block forward on `[B, C, T]` input.
///
/// `y1 = x + denoise(LN1(x))` per channel along time, then
/// `y2 = y1 + FF(LN2(y1))` per time point across channels.
pub fn asdm_forward(x: &Tensor, p: &AsdmLeaves) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::dim(format!("expected [B, C, T] input, got {xs:?}")));
    }
    let (b, c, t) = (xs[0], xs[1], xs[2]);
    if t < 4 {
        return Err(Error::param(format!(
            "window of {t} samples is too short to denoise"
        )));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite value in block input".to_string()));
    }
    let z = x.layer_norm(&p.ln1_gain, &p.ln1_bias, LN_EPS)?;
    let d = denoise(&z, &p.theta, &p.mf, p.tau)?;
    let y1 = x.add(&d);
    let u = y1.transpose_last2().layer_norm(&p.ln2_gain, &p.ln2_bias, LN_EPS)?;
    let flat = u.reshape(&[b * t, c])?;
    let h = flat.matmul(&p.ff_w1)?.add_rowvec(&p.ff_b1)?.elu(1.0);
    let o = h.matmul(&p.ff_w2)?.add_rowvec(&p.ff_b2)?;
    Ok(y1.add(&o.reshape(&[b, t, c])?.transpose_last2()))
}
