//! Differentiable tensor operations.

use super::{GraphInner, Tensor};
use crate::{Error, Result};

/// Log argument floor used by cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

impl Tensor {
    fn snapshot(&self) -> (Vec<f64>, Vec<usize>) {
        self.graph.with(|g| {
            let n = &g.nodes[self.id];
            (n.data.clone(), n.shape.clone())
        })
    }

    fn same_shape_binary(
        &self,
        other: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        back: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Tensor {
        let (a, ashape) = self.snapshot();
        let (b, bshape) = other.snapshot();
        assert_eq!(
            ashape, bshape,
            "elementwise op on mismatched shapes {ashape:?} vs {bshape:?}"
        );
        let out: Vec<f64> = a.iter().zip(&b).map(|(&x, &y)| f(x, y)).collect();
        let (ida, idb) = (self.id, other.id);
        self.graph.push(
            out,
            ashape,
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let mut ga = vec![0.0; a.len()];
                let mut gb = vec![0.0; b.len()];
                for i in 0..a.len() {
                    let (da, db) = back(a[i], b[i], g[i]);
                    ga[i] = da;
                    gb[i] = db;
                }
                inner.accum(ida, &ga);
                inner.accum(idb, &gb);
            })),
        )
    }

    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        back: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let (a, shape) = self.snapshot();
        let out: Vec<f64> = a.iter().map(|&x| f(x)).collect();
        let saved_out = out.clone();
        let id = self.id;
        self.graph.push(
            out,
            shape,
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let contrib: Vec<f64> = (0..a.len())
                    .map(|i| back(a[i], saved_out[i], g[i]))
                    .collect();
                inner.accum(id, &contrib);
            })),
        )
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.same_shape_binary(other, |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.same_shape_binary(other, |x, y| x - y, |_, _, g| (g, -g))
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.same_shape_binary(other, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        self.same_shape_binary(other, |x, y| x / y, |x, y, g| (g / y, -g * x / (y * y)))
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_, _, g| -g)
    }

    pub fn recip(&self) -> Tensor {
        self.unary(|x| 1.0 / x, |x, _, g| -g / (x * x))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(move |x| c * x, move |_, _, g| c * g)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, y, g| g * y * (1.0 - y),
        )
    }

    /// Exponential linear unit with slope parameter `a > 0`.
    pub fn elu(&self, a: f64) -> Tensor {
        assert!(a > 0.0, "elu alpha must be positive");
        self.unary(
            move |x| if x > 0.0 { x } else { a * (x.exp() - 1.0) },
            move |x, _, g| if x > 0.0 { g } else { g * a * x.exp() },
        )
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let (a, _) = self.snapshot();
        let total = a.iter().sum();
        let n = a.len();
        let id = self.id;
        self.graph.push(
            vec![total],
            vec![1],
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                inner.accum(id, &vec![g[0]; n]);
            })),
        )
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean_all(&self) -> Tensor {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Matrix product of `[M,K]` and `[K,N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, ashape) = self.snapshot();
        let (b, bshape) = other.snapshot();
        if ashape.len() != 2 || bshape.len() != 2 || ashape[1] != bshape[0] {
            return Err(Error::dim(format!(
                "matmul on {ashape:?} x {bshape:?}"
            )));
        }
        let (m, k, n) = (ashape[0], ashape[1], bshape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let (ida, idb) = (self.id, other.id);
        Ok(self.graph.push(
            out,
            vec![m, n],
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                // da = g . b^T, db = a^T . g
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * b[p * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                for p in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += a[i * k + p] * g[i * n + j];
                        }
                        gb[p * n + j] = s;
                    }
                }
                inner.accum(ida, &ga);
                inner.accum(idb, &gb);
            })),
        ))
    }

    /// Add a `[D]` row vector to every row of a `[M,D]` matrix.
    pub fn add_rowvec(&self, bias: &Tensor) -> Result<Tensor> {
        let (a, ashape) = self.snapshot();
        let (b, bshape) = bias.snapshot();
        if ashape.len() != 2 || bshape != vec![ashape[1]] {
            return Err(Error::dim(format!(
                "add_rowvec on {ashape:?} + {bshape:?}"
            )));
        }
        let (m, d) = (ashape[0], ashape[1]);
        let out: Vec<f64> = (0..m * d).map(|i| a[i] + b[i % d]).collect();
        let (ida, idb) = (self.id, bias.id);
        Ok(self.graph.push(
            out,
            vec![m, d],
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                inner.accum(ida, g);
                let mut gb = vec![0.0; d];
                for i in 0..m {
                    for j in 0..d {
                        gb[j] += g[i * d + j];
                    }
                }
                inner.accum(idb, &gb);
            })),
        ))
    }

    /// Valid (no-padding) cross-correlation, stride 1.
    ///
    /// `x: [B,Cin,H,W]`, `k: [Cout,Cin,kh,kw]`, `bias: [Cout]` →
    /// `[B,Cout,H-kh+1,W-kw+1]`.
    pub fn conv2d_valid(&self, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (x, xs) = self.snapshot();
        let (k, ks) = kernel.snapshot();
        let (bv, bs) = bias.snapshot();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d_valid needs 4-D input and kernel, got {xs:?} and {ks:?}"
            )));
        }
        let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kcin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kcin != cin || bs != vec![cout] {
            return Err(Error::dim(format!(
                "conv2d_valid shapes disagree: input {xs:?}, kernel {ks:?}, bias {bs:?}"
            )));
        }
        if kh > h || kw > w {
            return Err(Error::dim(format!(
                "kernel ({kh},{kw}) larger than input ({h},{w})"
            )));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let mut out = vec![0.0; batch * cout * oh * ow];
        for b in 0..batch {
            for co in 0..cout {
                let obase = (b * cout + co) * oh * ow;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut s = bv[co];
                        for ci in 0..cin {
                            let xbase = (b * cin + ci) * h * w;
                            let kbase = (co * cin + ci) * kh * kw;
                            for p in 0..kh {
                                let xrow = xbase + (i + p) * w + j;
                                let krow = kbase + p * kw;
                                for q in 0..kw {
                                    s += x[xrow + q] * k[krow + q];
                                }
                            }
                        }
                        out[obase + i * ow + j] = s;
                    }
                }
            }
        }
        let (idx, idk, idb) = (self.id, kernel.id, bias.id);
        Ok(self.graph.push(
            out,
            vec![batch, cout, oh, ow],
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let mut gx = vec![0.0; x.len()];
                let mut gk = vec![0.0; k.len()];
                let mut gb = vec![0.0; cout];
                for b in 0..batch {
                    for co in 0..cout {
                        let obase = (b * cout + co) * oh * ow;
                        for i in 0..oh {
                            for j in 0..ow {
                                let go = g[obase + i * ow + j];
                                if go == 0.0 {
                                    continue;
                                }
                                gb[co] += go;
                                for ci in 0..cin {
                                    let xbase = (b * cin + ci) * h * w;
                                    let kbase = (co * cin + ci) * kh * kw;
                                    for p in 0..kh {
                                        let xrow = xbase + (i + p) * w + j;
                                        let krow = kbase + p * kw;
                                        for q in 0..kw {
                                            gx[xrow + q] += go * k[krow + q];
                                            gk[krow + q] += go * x[xrow + q];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                inner.accum(idx, &gx);
                inner.accum(idk, &gk);
                inner.accum(idb, &gb);
            })),
        ))
    }

    /// Layer normalization over the last axis, then affine (gain, bias).
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let (x, xs) = self.snapshot();
        let (gv, gs) = gain.snapshot();
        let (bv, bs) = bias.snapshot();
        let d = *xs.last().unwrap_or(&0);
        if d == 0 {
            return Err(Error::dim("layer_norm over empty last axis".to_string()));
        }
        if gs != vec![d] || bs != vec![d] {
            return Err(Error::dim(format!(
                "layer_norm gain/bias {gs:?}/{bs:?} do not match last axis {d}"
            )));
        }
        let rows = x.len() / d;
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let s = (var + eps).sqrt();
            inv_std[r] = 1.0 / s;
            for j in 0..d {
                let xh = (row[j] - mu) / s;
                xhat[r * d + j] = xh;
                out[r * d + j] = gv[j] * xh + bv[j];
            }
        }
        let (idx, idg, idb) = (self.id, gain.id, bias.id);
        Ok(self.graph.push(
            out,
            xs,
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let mut gx = vec![0.0; x.len()];
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for r in 0..rows {
                    let base = r * d;
                    let mut mean_gy = 0.0;
                    let mut mean_gyxh = 0.0;
                    for j in 0..d {
                        let gy = g[base + j] * gv[j];
                        mean_gy += gy;
                        mean_gyxh += gy * xhat[base + j];
                        gg[j] += g[base + j] * xhat[base + j];
                        gb[j] += g[base + j];
                    }
                    mean_gy /= d as f64;
                    mean_gyxh /= d as f64;
                    for j in 0..d {
                        let gy = g[base + j] * gv[j];
                        gx[base + j] =
                            (gy - mean_gy - xhat[base + j] * mean_gyxh) * inv_std[r];
                    }
                }
                inner.accum(idx, &gx);
                inner.accum(idg, &gg);
                inner.accum(idb, &gb);
            })),
        ))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&self) -> Tensor {
        let (x, xs) = self.snapshot();
        let d = *xs.last().expect("softmax on 0-d tensor");
        let rows = x.len() / d;
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..d {
                let e = (row[j] - m).exp();
                out[r * d + j] = e;
                z += e;
            }
            for j in 0..d {
                out[r * d + j] /= z;
            }
        }
        let y = out.clone();
        let id = self.id;
        self.graph.push(
            out,
            xs,
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let mut gx = vec![0.0; y.len()];
                for r in 0..rows {
                    let base = r * d;
                    let dot: f64 = (0..d).map(|j| g[base + j] * y[base + j]).sum();
                    for j in 0..d {
                        gx[base + j] = y[base + j] * (g[base + j] - dot);
                    }
                }
                inner.accum(id, &gx);
            })),
        )
    }

    /// Mean cross-entropy of predicted probabilities against one-hot
    /// targets, with the log argument clamped at [`LOG_CLAMP`].
    pub fn cross_entropy(&self, target: &Tensor) -> Result<Tensor> {
        let (p, ps) = self.snapshot();
        let (y, ys) = target.snapshot();
        if ps != ys || ps.len() != 2 {
            return Err(Error::dim(format!(
                "cross_entropy on {ps:?} vs {ys:?}"
            )));
        }
        let (n, r) = (ps[0], ps[1]);
        let mut loss = 0.0;
        for i in 0..n * r {
            if y[i] != 0.0 {
                loss -= y[i] * p[i].max(LOG_CLAMP).ln();
            }
        }
        loss /= n as f64;
        let (idp, idy) = (self.id, target.id);
        Ok(self.graph.push(
            vec![loss],
            vec![1],
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let g0 = g[0] / n as f64;
                let mut gp = vec![0.0; p.len()];
                let mut gy = vec![0.0; y.len()];
                for i in 0..p.len() {
                    if p[i] > LOG_CLAMP {
                        gp[i] = -g0 * y[i] / p[i];
                    }
                    gy[i] = -g0 * p[i].max(LOG_CLAMP).ln();
                }
                inner.accum(idp, &gp);
                inner.accum(idy, &gy);
            })),
        ))
    }

    /// Non-overlapping window means over the last axis; the trailing
    /// remainder is dropped.
    pub fn avg_pool_time(&self, w: usize) -> Result<Tensor> {
        if w == 0 {
            return Err(Error::param("avg_pool_time width must be >= 1".to_string()));
        }
        let (x, xs) = self.snapshot();
        let t = *xs.last().expect("avg_pool_time on 0-d tensor");
        let rows = x.len() / t;
        let ot = t / w;
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = ot;
        let mut out = vec![0.0; rows * ot];
        for r in 0..rows {
            for j in 0..ot {
                let mut s = 0.0;
                for q in 0..w {
                    s += x[r * t + j * w + q];
                }
                out[r * ot + j] = s / w as f64;
            }
        }
        let id = self.id;
        Ok(self.graph.push(
            out,
            shape,
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let mut gx = vec![0.0; rows * t];
                for r in 0..rows {
                    for j in 0..ot {
                        let share = g[r * ot + j] / w as f64;
                        for q in 0..w {
                            gx[r * t + j * w + q] = share;
                        }
                    }
                }
                inner.accum(id, &gx);
            })),
        ))
    }

    /// Reinterpret the data with a new shape (row-major, same element count).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let (x, xs) = self.snapshot();
        if shape.iter().product::<usize>() != x.len() {
            return Err(Error::dim(format!(
                "reshape {xs:?} -> {shape:?} changes element count"
            )));
        }
        let id = self.id;
        Ok(self.graph.push(
            x,
            shape.to_vec(),
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                inner.accum(id, g);
            })),
        ))
    }

    /// Swap the last two axes.
    pub fn transpose_last2(&self) -> Tensor {
        let (x, xs) = self.snapshot();
        assert!(xs.len() >= 2, "transpose_last2 needs rank >= 2");
        let (a, b) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let lead = x.len() / (a * b);
        let mut shape = xs.clone();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let mut out = vec![0.0; x.len()];
        for l in 0..lead {
            let base = l * a * b;
            for i in 0..a {
                for j in 0..b {
                    out[base + j * a + i] = x[base + i * b + j];
                }
            }
        }
        let id = self.id;
        self.graph.push(
            out,
            shape,
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let mut gx = vec![0.0; g.len()];
                for l in 0..lead {
                    let base = l * a * b;
                    for i in 0..a {
                        for j in 0..b {
                            gx[base + i * b + j] = g[base + j * a + i];
                        }
                    }
                }
                inner.accum(id, &gx);
            })),
        )
    }

    /// Per-row mean and population standard deviation over the last axis.
    ///
    /// The standard deviation is floored at `sigma_floor`; floored entries
    /// get zero gradient. Returns `(mu, sigma)` with the leading shape.
    pub fn row_stats(&self, sigma_floor: f64) -> Result<(Tensor, Tensor)> {
        let (x, xs) = self.snapshot();
        let t = *xs.last().expect("row_stats on 0-d tensor");
        if t < 2 {
            return Err(Error::param(format!(
                "row_stats needs at least 2 samples per row, got {t}"
            )));
        }
        let rows = x.len() / t;
        let lead: Vec<usize> = xs[..xs.len() - 1].to_vec();
        let mut mu = vec![0.0; rows];
        let mut sigma = vec![0.0; rows];
        let mut floored = vec![false; rows];
        for r in 0..rows {
            let row = &x[r * t..(r + 1) * t];
            let m = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t as f64;
            let s = var.sqrt();
            mu[r] = m;
            if s < sigma_floor {
                sigma[r] = sigma_floor;
                floored[r] = true;
            } else {
                sigma[r] = s;
            }
        }
        let id = self.id;
        let (x2, mu2, sig2, fl2) = (x.clone(), mu.clone(), sigma.clone(), floored.clone());
        let mu_t = self.graph.push(
            mu,
            lead.clone(),
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let mut gx = vec![0.0; rows * t];
                for r in 0..rows {
                    let share = g[r] / t as f64;
                    for j in 0..t {
                        gx[r * t + j] = share;
                    }
                }
                inner.accum(id, &gx);
            })),
        );
        let sigma_t = self.graph.push(
            sigma,
            lead,
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let mut gx = vec![0.0; rows * t];
                for r in 0..rows {
                    if fl2[r] || g[r] == 0.0 {
                        continue;
                    }
                    for j in 0..t {
                        gx[r * t + j] =
                            g[r] * (x2[r * t + j] - mu2[r]) / (t as f64 * sig2[r]);
                    }
                }
                inner.accum(id, &gx);
            })),
        );
        Ok((mu_t, sigma_t))
    }

    /// Per-row affine map over the last axis: `out[r, t] = x[r, t] *
    /// scale[r] + shift[r]`. `scale` and `shift` carry the leading shape.
    pub fn scale_shift_rows(&self, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
        let (x, xs) = self.snapshot();
        let (sc, ss) = scale.snapshot();
        let (sh, hs) = shift.snapshot();
        let t = *xs.last().expect("scale_shift_rows on 0-d tensor");
        let lead: Vec<usize> = xs[..xs.len() - 1].to_vec();
        if ss != lead || hs != lead {
            return Err(Error::dim(format!(
                "scale_shift_rows: x {xs:?} needs row params {lead:?}, got {ss:?}/{hs:?}"
            )));
        }
        let rows = x.len() / t;
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            for j in 0..t {
                out[r * t + j] = x[r * t + j] * sc[r] + sh[r];
            }
        }
        let (idx, idsc, idsh) = (self.id, scale.id, shift.id);
        Ok(self.graph.push(
            out,
            xs,
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let mut gx = vec![0.0; x.len()];
                let mut gsc = vec![0.0; rows];
                let mut gsh = vec![0.0; rows];
                for r in 0..rows {
                    for j in 0..t {
                        let go = g[r * t + j];
                        gx[r * t + j] = go * sc[r];
                        gsc[r] += go * x[r * t + j];
                        gsh[r] += go;
                    }
                }
                inner.accum(idx, &gx);
                inner.accum(idsc, &gsc);
                inner.accum(idsh, &gsh);
            })),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::diff::Graph;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn matmul_identity() {
        let g = Graph::new();
        let i2 = g.tensor(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let m = g.tensor(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let r = i2.matmul(&m).unwrap();
        assert_eq!(r.data(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let g = Graph::new();
        let a = g.tensor(vec![1.0, 2.0], &[1, 2]);
        let b = g.tensor(vec![3.0, 4.0], &[2, 1]);
        assert_eq!(a.matmul(&b).unwrap().data(), vec![11.0]);
    }

    #[test]
    fn matmul_zero() {
        let g = Graph::new();
        let z = g.tensor(vec![0.0; 4], &[2, 2]);
        let m = g.tensor(vec![5.0, -1.0, 2.0, 7.0], &[2, 2]);
        assert_eq!(z.matmul(&m).unwrap().data(), vec![0.0; 4]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let g = Graph::new();
        let a = g.tensor(vec![0.0; 6], &[2, 3]);
        let b = g.tensor(vec![0.0; 4], &[2, 2]);
        let e = a.matmul(&b).unwrap_err().to_string();
        assert!(e.contains("[2, 3]") && e.contains("[2, 2]"), "{e}");
    }

    #[test]
    fn conv_hand_cases() {
        let g = Graph::new();
        let x = g.tensor(vec![1.0, 2.0, 3.0], &[1, 1, 1, 3]);
        let k = g.tensor(vec![1.0, 1.0], &[1, 1, 1, 2]);
        let b = g.tensor(vec![0.0], &[1]);
        assert_eq!(x.conv2d_valid(&k, &b).unwrap().data(), vec![3.0, 5.0]);

        // identity kernel
        let k1 = g.tensor(vec![1.0], &[1, 1, 1, 1]);
        assert_eq!(x.conv2d_valid(&k1, &b).unwrap().data(), vec![1.0, 2.0, 3.0]);

        // spatial (2,1) kernel [1,-1] over [[1,2],[3,4]]
        let x2 = g.tensor(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        let k2 = g.tensor(vec![1.0, -1.0], &[1, 1, 2, 1]);
        assert_eq!(x2.conv2d_valid(&k2, &b).unwrap().data(), vec![-2.0, -2.0]);
    }

    #[test]
    fn conv_kernel_too_large() {
        let g = Graph::new();
        let x = g.tensor(vec![1.0, 2.0], &[1, 1, 1, 2]);
        let k = g.tensor(vec![1.0, 1.0, 1.0], &[1, 1, 1, 3]);
        let b = g.tensor(vec![0.0], &[1]);
        assert!(x.conv2d_valid(&k, &b).is_err());
    }

    #[test]
    fn elu_values() {
        let g = Graph::new();
        let x = g.tensor(vec![2.0, 0.0, -1.0], &[3]);
        let y = x.elu(1.0);
        let d = y.data();
        assert_eq!(d[0], 2.0);
        assert_eq!(d[1], 0.0);
        assert!((d[2] - ((-1.0f64).exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_hand_case() {
        let g = Graph::new();
        let x = g.tensor(vec![1.0, 2.0, 3.0], &[1, 3]);
        let gain = g.tensor(vec![1.0; 3], &[3]);
        let bias = g.tensor(vec![0.0; 3], &[3]);
        let y = x.layer_norm(&gain, &bias, 1e-9).unwrap();
        assert_close(&y.data(), &[-1.224745, 0.0, 1.224745], 1e-5);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let g = Graph::new();
        let x = g.tensor(vec![5.0; 4], &[1, 4]);
        let gain = g.tensor(vec![1.0; 4], &[4]);
        let bias = g.tensor(vec![0.0; 4], &[4]);
        let y = x.layer_norm(&gain, &bias, 1e-5).unwrap();
        assert_close(&y.data(), &[0.0; 4], 1e-9);
    }

    #[test]
    fn layer_norm_zero_gain_gives_bias() {
        let g = Graph::new();
        let x = g.tensor(vec![1.0, 9.0], &[1, 2]);
        let gain = g.tensor(vec![0.0; 2], &[2]);
        let bias = g.tensor(vec![0.7, 0.7], &[2]);
        let y = x.layer_norm(&gain, &bias, 1e-5).unwrap();
        assert_close(&y.data(), &[0.7, 0.7], 1e-12);
    }

    #[test]
    fn softmax_cases() {
        let g = Graph::new();
        let x = g.tensor(vec![0.0, 0.0], &[1, 2]);
        assert_close(&x.softmax().data(), &[0.5, 0.5], 1e-12);

        let y = g.tensor(
            vec![1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()],
            &[1, 3],
        );
        assert_close(
            &y.softmax().data(),
            &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0],
            1e-12,
        );

        // shift invariance
        let a = g.tensor(vec![0.3, -1.2, 2.0], &[1, 3]);
        let b = g.tensor(vec![0.3 + 7.0, -1.2 + 7.0, 2.0 + 7.0], &[1, 3]);
        assert_close(&a.softmax().data(), &b.softmax().data(), 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let g = Graph::new();
        let p = g.tensor(vec![1.0, 0.0], &[1, 2]);
        let y = g.tensor(vec![1.0, 0.0], &[1, 2]);
        assert!(p.cross_entropy(&y).unwrap().item().abs() < 1e-12);

        let p2 = g.tensor(vec![0.5, 0.5], &[1, 2]);
        let l = p2.cross_entropy(&y).unwrap().item();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        // uniform over R classes -> ln R
        let r = 5;
        let pu = g.tensor(vec![1.0 / r as f64; r], &[1, r]);
        let yu = g.tensor(
            (0..r).map(|i| if i == 2 { 1.0 } else { 0.0 }).collect(),
            &[1, r],
        );
        assert!((pu.cross_entropy(&yu).unwrap().item() - (r as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn avg_pool_cases() {
        let g = Graph::new();
        let x = g.tensor(vec![1.0, 3.0, 5.0, 7.0], &[1, 4]);
        assert_eq!(x.avg_pool_time(2).unwrap().data(), vec![2.0, 6.0]);
        assert_eq!(x.avg_pool_time(1).unwrap().data(), x.data());
        let y = g.tensor(vec![1.0, 2.0, 3.0], &[1, 3]);
        assert_eq!(y.avg_pool_time(2).unwrap().data(), vec![1.5]);
        assert!(y.avg_pool_time(0).is_err());
    }

    #[test]
    fn row_stats_hand_case() {
        let g = Graph::new();
        let x = g.tensor(vec![1.0, 2.0, 3.0], &[1, 3]);
        let (mu, sigma) = x.row_stats(1e-8).unwrap();
        assert!((mu.item() - 2.0).abs() < 1e-12);
        assert!((sigma.item() - (2.0f64 / 3.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn row_stats_constant_floors_sigma() {
        let g = Graph::new();
        let x = g.tensor(vec![4.0; 5], &[1, 5]);
        let (mu, sigma) = x.row_stats(1e-8).unwrap();
        assert_eq!(mu.item(), 4.0);
        assert_eq!(sigma.item(), 1e-8);
    }

    #[test]
    fn transpose_round_trip() {
        let g = Graph::new();
        let x = g.tensor((0..24).map(|v| v as f64).collect(), &[2, 3, 4]);
        let t = x.transpose_last2();
        assert_eq!(t.shape(), vec![2, 4, 3]);
        assert_eq!(t.transpose_last2().data(), x.data());
    }
}
