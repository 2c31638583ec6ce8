//! End-to-end classifier assembly and checkpointing.
//!
//! Pipeline: channel-statistics alignment → spectral denoising block →
//! temporal convolution → spatial convolution → ELU → average pooling →
//! flatten → three fully connected layers → softmax. The denoising block
//! and training-time remixing can each be switched off independently for
//! ablations.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::asdm::{asdm_forward, AsdmLeaves, AsdmParams};
use crate::augment::{cada_apply, CadaParams};
use crate::diff::{Graph, Tensor};
use crate::{Error, Result};

/// Checkpoint file magic.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSVD";
pub const CHECKPOINT_VERSION: u32 = 1;

fn default_channels() -> usize {
    8
}
fn default_temporal_kernel() -> usize {
    25
}
fn default_filters() -> usize {
    16
}
fn default_pool() -> usize {
    4
}
fn default_hidden() -> Vec<usize> {
    vec![128, 64]
}
fn default_alpha() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

/// Static architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_channels")]
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    /// Temporal kernel length in samples.
    #[serde(default = "default_temporal_kernel")]
    pub temporal_kernel: usize,
    #[serde(default = "default_filters")]
    pub temporal_filters: usize,
    #[serde(default = "default_filters")]
    pub spatial_filters: usize,
    #[serde(default = "default_pool")]
    pub pool_width: usize,
    #[serde(default = "default_hidden")]
    pub fc_hidden: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub elu_alpha: f64,
    #[serde(default = "default_true")]
    pub use_asdm: bool,
    #[serde(default = "default_true")]
    pub use_augment: bool,
}

impl ModelConfig {
    pub fn new(n_channels: usize, n_samples: usize, n_classes: usize) -> Self {
        ModelConfig {
            n_channels,
            n_samples,
            n_classes,
            temporal_kernel: default_temporal_kernel(),
            temporal_filters: default_filters(),
            spatial_filters: default_filters(),
            pool_width: default_pool(),
            fc_hidden: default_hidden(),
            elu_alpha: default_alpha(),
            use_asdm: true,
            use_augment: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.n_samples == 0 || self.n_classes == 0 {
            return Err(Error::param("channels, samples, and classes must be positive".to_string()));
        }
        if self.temporal_kernel > self.n_samples {
            return Err(Error::param(format!(
                "temporal kernel {} exceeds window of {} samples",
                self.temporal_kernel, self.n_samples
            )));
        }
        if self.pool_width == 0 {
            return Err(Error::param("pool width must be at least 1".to_string()));
        }
        if self.fc_hidden.iter().any(|&h| h == 0) {
            return Err(Error::param("hidden sizes must be positive".to_string()));
        }
        if self.pooled_time() == 0 {
            return Err(Error::param(format!(
                "pool width {} leaves no output samples",
                self.pool_width
            )));
        }
        Ok(())
    }

    /// Time samples after the valid temporal convolution.
    pub fn conv_time(&self) -> usize {
        self.n_samples + 1 - self.temporal_kernel
    }

    /// Time samples after pooling (remainder dropped).
    pub fn pooled_time(&self) -> usize {
        self.conv_time() / self.pool_width
    }

    /// Flattened feature size entering the fully connected stack.
    pub fn flat_size(&self) -> usize {
        self.spatial_filters * self.pooled_time()
    }

    /// Sizes of the fully connected layers, input to output.
    pub fn fc_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.flat_size();
        for &h in &self.fc_hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.n_classes));
        dims
    }
}

/// Exact trainable scalar count for a configuration.
///
/// Closed form: 2C² + 2C for the alignment gates; when the denoising
/// block is enabled, 1 + (⌊T/2⌋+1) + 2T + 2C + (4C² + 3C) for its
/// threshold, spectral weights, two layer norms, and feedforward;
/// Kt·d + Kt and Ks·Kt·C + Ks for the convolutions; Σ (in+1)·out over
/// the fully connected layers.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let c = cfg.n_channels;
    let t = cfg.n_samples;
    let mut n = 2 * c * c + 2 * c;
    if cfg.use_asdm {
        n += 1 + (t / 2 + 1) + 2 * t + 2 * c + (4 * c * c + 3 * c);
    }
    n += cfg.temporal_filters * cfg.temporal_kernel + cfg.temporal_filters;
    n += cfg.spatial_filters * cfg.temporal_filters * c + cfg.spatial_filters;
    for (i, o) in cfg.fc_dims() {
        n += (i + 1) * o;
    }
    n
}

/// Model size on disk assuming 32-bit parameters.
pub fn param_bytes(cfg: &ModelConfig) -> usize {
    param_count(cfg) * 4
}

/// One fully connected layer, weight `[in, out]` plus bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    fn init<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        let limit = (1.0 / in_dim as f64).sqrt();
        Dense {
            w: (0..in_dim * out_dim).map(|_| rng.gen_range(-limit..limit)).collect(),
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }
}

/// All trainable state of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub cada: CadaParams,
    pub asdm: AsdmParams,
    /// Temporal kernel `[Kt, 1, 1, d]` plus bias `[Kt]`.
    pub temporal_w: Vec<f64>,
    pub temporal_b: Vec<f64>,
    /// Spatial kernel `[Ks, Kt, C, 1]` plus bias `[Ks]`.
    pub spatial_w: Vec<f64>,
    pub spatial_b: Vec<f64>,
    pub fc: Vec<Dense>,
}

impl NetworkParams {
    /// Seeded initialization: near-identity alignment gates, θ uniform in
    /// (0,1), unit spectral weights, fan-in-scaled uniform conv/FC weights.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.n_channels;
        let (kt, ks, d) = (cfg.temporal_filters, cfg.spatial_filters, cfg.temporal_kernel);
        let tlim = (1.0 / d as f64).sqrt();
        let slim = (1.0 / (kt * c) as f64).sqrt();
        Ok(NetworkParams {
            cada: CadaParams::near_identity(c),
            asdm: AsdmParams::init(rng, c, cfg.n_samples),
            temporal_w: (0..kt * d).map(|_| rng.gen_range(-tlim..tlim)).collect(),
            temporal_b: vec![0.0; kt],
            spatial_w: (0..ks * kt * c).map(|_| rng.gen_range(-slim..slim)).collect(),
            spatial_b: vec![0.0; ks],
            fc: cfg.fc_dims().iter().map(|&(i, o)| Dense::init(rng, i, o)).collect(),
        })
    }

    /// Shape and data of every trainable tensor in the documented fixed
    /// order. Order: alignment Wf, bf, Wg, bg; if enabled the denoise
    /// block's θ, Mf, ln1 gain/bias, ln2 gain/bias, ff w1/b1/w2/b2; then
    /// temporal w/b, spatial w/b, and each FC layer's w/b.
    pub fn to_tensors(&self, cfg: &ModelConfig) -> Vec<(Vec<usize>, Vec<f64>)> {
        let c = cfg.n_channels;
        let t = cfg.n_samples;
        let mut out = vec![
            (vec![c, c], self.cada.wf.clone()),
            (vec![c], self.cada.bf.clone()),
            (vec![c, c], self.cada.wg.clone()),
            (vec![c], self.cada.bg.clone()),
        ];
        if cfg.use_asdm {
            out.push((vec![1], vec![self.asdm.theta]));
            out.push((vec![t / 2 + 1], self.asdm.mf.clone()));
            out.push((vec![t], self.asdm.ln1_gain.clone()));
            out.push((vec![t], self.asdm.ln1_bias.clone()));
            out.push((vec![c], self.asdm.ln2_gain.clone()));
            out.push((vec![c], self.asdm.ln2_bias.clone()));
            out.push((vec![c, 2 * c], self.asdm.ff_w1.clone()));
            out.push((vec![2 * c], self.asdm.ff_b1.clone()));
            out.push((vec![2 * c, c], self.asdm.ff_w2.clone()));
            out.push((vec![c], self.asdm.ff_b2.clone()));
        }
        out.push((vec![cfg.temporal_filters, 1, 1, cfg.temporal_kernel], self.temporal_w.clone()));
        out.push((vec![cfg.temporal_filters], self.temporal_b.clone()));
        out.push((vec![cfg.spatial_filters, cfg.temporal_filters, c, 1], self.spatial_w.clone()));
        out.push((vec![cfg.spatial_filters], self.spatial_b.clone()));
        for layer in &self.fc {
            out.push((vec![layer.in_dim, layer.out_dim], layer.w.clone()));
            out.push((vec![layer.out_dim], layer.b.clone()));
        }
        out
    }

    /// Rebuilds params from tensors in the order of [`Self::to_tensors`].
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<(Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let mut params = NetworkParams::init(cfg, &mut rng)?;
        let expected = params.to_tensors(cfg);
        if expected.len() != tensors.len() {
            return Err(Error::format(0, format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, ((es, _), (ts, _))) in expected.iter().zip(&tensors).enumerate() {
            if es != ts {
                return Err(Error::format(0, format!(
                    "tensor {i} has shape {ts:?}, expected {es:?}"
                )));
            }
        }
        let mut it = tensors.into_iter().map(|(_, d)| d);
        let mut next = || it.next().expect("tensor count checked above");
        params.cada.wf = next();
        params.cada.bf = next();
        params.cada.wg = next();
        params.cada.bg = next();
        if cfg.use_asdm {
            params.asdm.theta = next()[0];
            params.asdm.mf = next();
            params.asdm.ln1_gain = next();
            params.asdm.ln1_bias = next();
            params.asdm.ln2_gain = next();
            params.asdm.ln2_bias = next();
            params.asdm.ff_w1 = next();
            params.asdm.ff_b1 = next();
            params.asdm.ff_w2 = next();
            params.asdm.ff_b2 = next();
        }
        params.temporal_w = next();
        params.temporal_b = next();
        params.spatial_w = next();
        params.spatial_b = next();
        for layer in &mut params.fc {
            layer.w = next();
            layer.b = next();
        }
        Ok(params)
    }

    /// Mutable flat views in the same fixed order as [`Self::to_tensors`],
    /// for the optimizer.
    pub fn views_mut(&mut self, use_asdm: bool) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.cada.wf,
            &mut self.cada.bf,
            &mut self.cada.wg,
            &mut self.cada.bg,
        ];
        if use_asdm {
            out.push(std::slice::from_mut(&mut self.asdm.theta));
            out.push(&mut self.asdm.mf);
            out.push(&mut self.asdm.ln1_gain);
            out.push(&mut self.asdm.ln1_bias);
            out.push(&mut self.asdm.ln2_gain);
            out.push(&mut self.asdm.ln2_bias);
            out.push(&mut self.asdm.ff_w1);
            out.push(&mut self.asdm.ff_b1);
            out.push(&mut self.asdm.ff_w2);
            out.push(&mut self.asdm.ff_b2);
        }
        out.push(&mut self.temporal_w);
        out.push(&mut self.temporal_b);
        out.push(&mut self.spatial_w);
        out.push(&mut self.spatial_b);
        for layer in &mut self.fc {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out
    }

    /// Which views from [`Self::views_mut`] are weight matrices, in the
    /// same order. Biases, norm affines, the threshold, and the spectral
    /// weights are excluded from weight decay.
    pub fn decay_mask(&self, use_asdm: bool) -> Vec<bool> {
        let mut out = vec![true, false, true, false];
        if use_asdm {
            out.extend([
                false, false, false, false, false, false, true, false, true, false,
            ]);
        }
        out.extend([true, false, true, false]);
        for _ in &self.fc {
            out.extend([true, false]);
        }
        out
    }

    /// Inserts every trainable tensor into `g` as a leaf.
    pub fn leaves(&self, g: &Graph, cfg: &ModelConfig) -> ModelLeaves {
        let c = cfg.n_channels;
        ModelLeaves {
            cada_wf: g.tensor(self.cada.wf.clone(), &[c, c]),
            cada_bf: g.tensor(self.cada.bf.clone(), &[c]),
            cada_wg: g.tensor(self.cada.wg.clone(), &[c, c]),
            cada_bg: g.tensor(self.cada.bg.clone(), &[c]),
            asdm: self.asdm.leaves(g),
            temporal_w: g.tensor(
                self.temporal_w.clone(),
                &[cfg.temporal_filters, 1, 1, cfg.temporal_kernel],
            ),
            temporal_b: g.tensor(self.temporal_b.clone(), &[cfg.temporal_filters]),
            spatial_w: g.tensor(
                self.spatial_w.clone(),
                &[cfg.spatial_filters, cfg.temporal_filters, c, 1],
            ),
            spatial_b: g.tensor(self.spatial_b.clone(), &[cfg.spatial_filters]),
            fc: self
                .fc
                .iter()
                .map(|l| {
                    (
                        g.tensor(l.w.clone(), &[l.in_dim, l.out_dim]),
                        g.tensor(l.b.clone(), &[l.out_dim]),
                    )
                })
                .collect(),
        }
    }
}

/// Graph-resident copies of [`NetworkParams`] for one forward pass.
pub struct ModelLeaves {
    pub cada_wf: Tensor,
    pub cada_bf: Tensor,
    pub cada_wg: Tensor,
    pub cada_bg: Tensor,
    pub asdm: AsdmLeaves,
    pub temporal_w: Tensor,
    pub temporal_b: Tensor,
    pub spatial_w: Tensor,
    pub spatial_b: Tensor,
    pub fc: Vec<(Tensor, Tensor)>,
}

impl ModelLeaves {
    /// Gradients in the fixed order of [`NetworkParams::to_tensors`].
    pub fn grads(&self, use_asdm: bool) -> Vec<Vec<f64>> {
        let mut out = vec![
            self.cada_wf.grad(),
            self.cada_bf.grad(),
            self.cada_wg.grad(),
            self.cada_bg.grad(),
        ];
        if use_asdm {
            out.push(self.asdm.theta.grad());
            out.push(self.asdm.mf.grad());
            out.push(self.asdm.ln1_gain.grad());
            out.push(self.asdm.ln1_bias.grad());
            out.push(self.asdm.ln2_gain.grad());
            out.push(self.asdm.ln2_bias.grad());
            out.push(self.asdm.ff_w1.grad());
            out.push(self.asdm.ff_b1.grad());
            out.push(self.asdm.ff_w2.grad());
            out.push(self.asdm.ff_b2.grad());
        }
        out.push(self.temporal_w.grad());
        out.push(self.temporal_b.grad());
        out.push(self.spatial_w.grad());
        out.push(self.spatial_b.grad());
        for (w, b) in &self.fc {
            out.push(w.grad());
            out.push(b.grad());
        }
        out
    }
}

/// Forward-pass mode. Training-time remixing happens upstream of the
/// network; the alignment gates run in both modes, so the two modes share
/// the same graph here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Class probabilities for a `[B, C, T]` batch; rows sum to 1.
pub fn forward(
    x: &Tensor,
    leaves: &ModelLeaves,
    cfg: &ModelConfig,
    _mode: Mode,
) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 3 || xs[1] != cfg.n_channels || xs[2] != cfg.n_samples {
        return Err(Error::dim(format!(
            "expected [B, {}, {}] input, got {xs:?}",
            cfg.n_channels, cfg.n_samples
        )));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite value in network input".to_string()));
    }
    let b = xs[0];
    let y = cada_apply(x, &leaves.cada_wf, &leaves.cada_bf, &leaves.cada_wg, &leaves.cada_bg)?;
    let y = if cfg.use_asdm {
        asdm_forward(&y, &leaves.asdm)?
    } else {
        y
    };
    let img = y.reshape(&[b, 1, cfg.n_channels, cfg.n_samples])?;
    let t1 = img.conv2d_valid(&leaves.temporal_w, &leaves.temporal_b)?;
    let t2 = t1.conv2d_valid(&leaves.spatial_w, &leaves.spatial_b)?;
    let pooled = t2.elu(cfg.elu_alpha).avg_pool_time(cfg.pool_width)?;
    let mut h = pooled.reshape(&[b, cfg.flat_size()])?;
    let last = leaves.fc.len() - 1;
    for (i, (w, bias)) in leaves.fc.iter().enumerate() {
        h = h.matmul(w)?.add_rowvec(bias)?;
        if i < last {
            h = h.elu(cfg.elu_alpha);
        }
    }
    Ok(h.softmax())
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Hard class labels for a `[B, C, T]` batch.
pub fn predict(
    x_data: &[f64],
    batch: usize,
    params: &NetworkParams,
    cfg: &ModelConfig,
) -> Result<Vec<usize>> {
    let g = Graph::new();
    let x = g.tensor(x_data.to_vec(), &[batch, cfg.n_channels, cfg.n_samples]);
    let leaves = params.leaves(&g, cfg);
    let probs = forward(&x, &leaves, cfg, Mode::Eval)?;
    let data = probs.data();
    let r = cfg.n_classes;
    Ok((0..batch).map(|i| argmax_row(&data[i * r..(i + 1) * r])).collect())
}

/// Class probabilities for a `[B, C, T]` batch, flat `B x R` row-major.
pub fn predict_proba(
    x_data: &[f64],
    batch: usize,
    params: &NetworkParams,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    let g = Graph::new();
    let x = g.tensor(x_data.to_vec(), &[batch, cfg.n_channels, cfg.n_samples]);
    let leaves = params.leaves(&g, cfg);
    Ok(forward(&x, &leaves, cfg, Mode::Eval)?.data())
}

struct Counter<W> {
    inner: W,
    offset: usize,
}

impl<W: Write> Counter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(Error::Io)?;
        self.offset += bytes.len();
        Ok(())
    }
}

struct Reader<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn take(&mut self, buf: &mut [u8]) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(at as u64, "checkpoint truncated".to_string())
            } else {
                Error::Io(e)
            }
        })?;
        self.offset += buf.len();
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
}

/// Writes config and parameters; values are stored as f32 little-endian.
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &NetworkParams) -> Result<()> {
    let mut w = Counter {
        inner: File::create(path).map_err(Error::Io)?,
        offset: 0,
    };
    w.put(CHECKPOINT_MAGIC)?;
    w.put(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg_text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    w.put(&(cfg_text.len() as u32).to_le_bytes())?;
    w.put(cfg_text.as_bytes())?;
    let tensors = params.to_tensors(cfg);
    w.put(&(tensors.len() as u32).to_le_bytes())?;
    for (shape, data) in tensors {
        w.put(&(shape.len() as u32).to_le_bytes())?;
        for d in &shape {
            w.put(&(*d as u32).to_le_bytes())?;
        }
        for v in data {
            w.put(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, NetworkParams)> {
    let mut r = Reader {
        inner: File::open(path).map_err(Error::Io)?,
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.take(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(0, format!("bad checkpoint magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    let at = r.offset;
    r.take(&mut cfg_bytes)?;
    let cfg_text = String::from_utf8(cfg_bytes)
        .map_err(|_| Error::format(at as u64, "config block is not UTF-8".to_string()))?;
    let cfg: ModelConfig =
        toml::from_str(&cfg_text).map_err(|e| Error::format(at as u64, e.to_string()))?;
    cfg.validate()?;
    let n_tensors = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let mut b = [0u8; 4];
            r.take(&mut b)?;
            data.push(f32::from_le_bytes(b) as f64);
        }
        tensors.push((shape, data));
    }
    let params = NetworkParams::from_tensors(&cfg, tensors)?;
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_channels: 2,
            n_samples: 16,
            n_classes: 3,
            temporal_kernel: 4,
            temporal_filters: 2,
            spatial_filters: 2,
            pool_width: 2,
            fc_hidden: vec![8],
            elu_alpha: 1.0,
            use_asdm: true,
            use_augment: true,
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, cfg: &ModelConfig) -> Vec<f64> {
        (0..b * cfg.n_channels * cfg.n_samples)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect()
    }

    #[test]
    fn rows_are_probability_distributions() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let b = 3;
        let data = random_batch(&mut rng, b, &cfg);
        let g = Graph::new();
        let x = g.tensor(data, &[b, 2, 16]);
        let probs = forward(&x, &params.leaves(&g, &cfg), &cfg, Mode::Eval).unwrap();
        assert_eq!(probs.shape(), vec![b, 3]);
        let d = probs.data();
        for i in 0..b {
            let s: f64 = d[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row {i} sums to {s}");
            assert!(d[i * 3..(i + 1) * 3].iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn identical_inputs_give_identical_rows() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let one: Vec<f64> = random_batch(&mut rng, 1, &cfg);
        let two: Vec<f64> = one.iter().chain(&one).copied().collect();
        let g = Graph::new();
        let x = g.tensor(two, &[2, 2, 16]);
        let d = forward(&x, &params.leaves(&g, &cfg), &cfg, Mode::Eval).unwrap().data();
        assert_eq!(d[..3], d[3..]);
    }

    #[test]
    fn untrained_network_sits_at_chance() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let n = 1000;
        let data = random_batch(&mut rng, n, &cfg);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let preds = predict(&data, n, &params, &cfg).unwrap();
        let acc = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / n as f64;
        assert!((acc - 1.0 / 3.0).abs() < 0.05, "chance accuracy {acc}");
    }

    #[test]
    fn count_matches_enumeration() {
        for cfg in [tiny_config(), ModelConfig::new(8, 175, 40)] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let params = NetworkParams::init(&cfg, &mut rng).unwrap();
            let enumerated: usize = params.to_tensors(&cfg).iter().map(|(_, d)| d.len()).sum();
            assert_eq!(param_count(&cfg), enumerated);
            assert_eq!(param_bytes(&cfg), enumerated * 4);
        }
    }

    #[test]
    fn single_fc_layer_count() {
        // in=8, out=4 with bias → 36.
        assert_eq!((8 + 1) * 4, 36);
        let cfg = ModelConfig::new(8, 175, 40);
        let (i, o) = *cfg.fc_dims().last().unwrap();
        assert_eq!(o, 40);
        assert_eq!((i + 1) * o, i * 40 + 40);
    }

    #[test]
    fn more_filters_mean_more_params() {
        let cfg = ModelConfig::new(8, 175, 40);
        let mut wide = cfg.clone();
        wide.temporal_filters *= 2;
        assert!(param_count(&wide) > param_count(&cfg));
    }

    #[test]
    fn disabling_denoise_removes_exactly_its_params() {
        let cfg = ModelConfig::new(8, 175, 40);
        let mut bare = cfg.clone();
        bare.use_asdm = false;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        assert_eq!(
            param_count(&cfg) - param_count(&bare),
            params.asdm.param_count()
        );
    }

    #[test]
    fn default_model_fits_embedded_size_budget() {
        let cfg = ModelConfig::new(8, 175, 40);
        let mb = param_bytes(&cfg) as f64 / (1024.0 * 1024.0);
        assert!(mb <= 0.6, "model is {mb:.3} MB");
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax_row(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax_row(&[0.5, 0.5]), 0);
        assert_eq!(argmax_row(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn predict_matches_forward_argmax() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let b = 4;
        let data = random_batch(&mut rng, b, &cfg);
        let g = Graph::new();
        let x = g.tensor(data.clone(), &[b, 2, 16]);
        let probs = forward(&x, &params.leaves(&g, &cfg), &cfg, Mode::Eval).unwrap().data();
        let preds = predict(&data, b, &params, &cfg).unwrap();
        for i in 0..b {
            assert_eq!(preds[i], argmax_row(&probs[i * 3..(i + 1) * 3]));
        }
    }

    #[test]
    fn wrong_shape_rejected() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let g = Graph::new();
        let x = g.tensor(vec![0.0; 3 * 16], &[1, 3, 16]);
        assert!(forward(&x, &params.leaves(&g, &cfg), &cfg, Mode::Eval).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = tiny_config();
        cfg.temporal_kernel = 17;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.pool_width = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.fc_hidden = vec![0];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.pool_width = 1000;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn full_network_gradients_check_out() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = NetworkParams::init(&cfg, &mut rng).unwrap();
        // Keep the mask threshold far from any normalized-power value so
        // central differences see a locally smooth function.
        params.asdm.theta = -5.0;
        let data = random_batch(&mut rng, 2, &cfg);
        let target = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let check = |name: &str, flat: &[f64], shape: &[usize], install: fn(&mut ModelLeaves, Tensor)| {
            let (p2, d2, t2) = (params.clone(), data.clone(), target.clone());
            let cfg2 = cfg.clone();
            let err = finite_diff_check(
                move |g, v| {
                    let mut leaves = p2.leaves(g, &cfg2);
                    install(&mut leaves, v.clone());
                    let x = g.tensor(d2.clone(), &[2, 2, 16]);
                    let probs = forward(&x, &leaves, &cfg2, Mode::Train).unwrap();
                    let t = g.tensor(t2.clone(), &[2, 3]);
                    probs.cross_entropy(&t).unwrap()
                },
                flat,
                shape,
                1e-5,
            );
            assert!(err < 1e-4, "{name} gradient error {err}");
        };
        check("temporal_w", &params.temporal_w, &[2, 1, 1, 4], |l, v| l.temporal_w = v);
        check("spatial_b", &params.spatial_b, &[2], |l, v| l.spatial_b = v);
        check("fc0_w", &params.fc[0].w, &[params.fc[0].in_dim, params.fc[0].out_dim], |l, v| {
            l.fc[0].0 = v
        });
        check("fc1_b", &params.fc[1].b, &[3], |l, v| l.fc[1].1 = v);
        check("cada_bf", &params.cada.bf, &[2], |l, v| l.cada_bf = v);
        check("asdm_mf", &params.asdm.mf, &[9], |l, v| l.asdm.mf = v);
        check("asdm_ln2_gain", &params.asdm.ln2_gain, &[2], |l, v| l.asdm.ln2_gain = v);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&p1, &cfg, &params).unwrap();
        let (cfg2, loaded) = load_checkpoint(&p1).unwrap();
        assert_eq!(cfg, cfg2);
        // Values survive as their f32 roundings.
        for ((_, a), (_, b)) in params.to_tensors(&cfg).iter().zip(loaded.to_tensors(&cfg2)) {
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // A second save of the loaded params is bit-identical.
        save_checkpoint(&p2, &cfg2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
        let good = {
            bytes[0] = b'S';
            bytes
        };
        std::fs::write(&path, &good[..good.len() - 7]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn ablated_checkpoint_skips_denoise_tensors() {
        let mut cfg = tiny_config();
        cfg.use_asdm = false;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, loaded) = load_checkpoint(&path).unwrap();
        assert!(!cfg2.use_asdm);
        assert_eq!(loaded.to_tensors(&cfg2).len(), params.to_tensors(&cfg).len());
    }
}
