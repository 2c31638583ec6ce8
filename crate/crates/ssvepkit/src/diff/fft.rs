//! DFT kernels and differentiable FFT/IFFT tensor ops.
//!
//! Power-of-two lengths take an iterative radix-2 path with bit
//! reversal; other lengths fall back to a table-driven O(N^2) direct
//! transform. `dft_direct`/`idft_direct` are plain reference transforms
//! kept separate from the fast path so the two routes can be checked
//! against each other.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use super::{GraphInner, Tensor};
use crate::{Error, Result};

/// Frequency-domain view of one or more real rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexSpectrum {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Squared magnitude per bin.
    pub fn mag_sq(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| r * r + i * i)
            .collect()
    }
}

/// Max deviation from conjugate symmetry: bin k against bin N-k.
pub fn hermitian_residual(spec: &ComplexSpectrum) -> f64 {
    let n = spec.len();
    let mut worst = 0.0f64;
    for k in 0..n {
        let m = (n - k) % n;
        worst = worst
            .max((spec.re[k] - spec.re[m]).abs())
            .max((spec.im[k] + spec.im[m]).abs());
    }
    worst
}

thread_local! {
    static TWIDDLES: RefCell<HashMap<usize, Rc<(Vec<f64>, Vec<f64>)>>> =
        RefCell::new(HashMap::new());
}

/// (cos, sin) of 2*pi*m/N for m = 0..N, cached per length.
fn twiddles(n: usize) -> Rc<(Vec<f64>, Vec<f64>)> {
    TWIDDLES.with(|cache| {
        cache
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let mut c = Vec::with_capacity(n);
                let mut s = Vec::with_capacity(n);
                for m in 0..n {
                    let a = 2.0 * PI * m as f64 / n as f64;
                    c.push(a.cos());
                    s.push(a.sin());
                }
                Rc::new((c, s))
            })
            .clone()
    })
}

/// In-place unscaled transform; `sign` is -1 for forward, +1 for inverse.
fn transform_inplace(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2_inplace(re, im, sign);
    } else {
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        mixed_radix(re, im, sign, &mut out_re, &mut out_im);
        re.copy_from_slice(&out_re);
        im.copy_from_slice(&out_im);
    }
}

fn smallest_prime_factor(n: usize) -> usize {
    if n % 2 == 0 {
        return 2;
    }
    let mut p = 3;
    while p * p <= n {
        if n % p == 0 {
            return p;
        }
        p += 2;
    }
    n
}

/// Cooley-Tukey decimation-in-time over the smallest prime factor;
/// prime lengths fall back to the table-driven direct transform.
fn mixed_radix(re: &[f64], im: &[f64], sign: f64, out_re: &mut [f64], out_im: &mut [f64]) {
    let n = re.len();
    if n.is_power_of_two() {
        out_re.copy_from_slice(re);
        out_im.copy_from_slice(im);
        radix2_inplace(out_re, out_im, sign);
        return;
    }
    let p = smallest_prime_factor(n);
    if p == n {
        out_re.copy_from_slice(re);
        out_im.copy_from_slice(im);
        direct_table(out_re, out_im, sign);
        return;
    }
    let m = n / p;
    let tw = twiddles(n);
    let mut sub_re = vec![0.0; n];
    let mut sub_im = vec![0.0; n];
    let mut buf_re = vec![0.0; m];
    let mut buf_im = vec![0.0; m];
    for r in 0..p {
        for j in 0..m {
            buf_re[j] = re[r + j * p];
            buf_im[j] = im[r + j * p];
        }
        mixed_radix(
            &buf_re,
            &buf_im,
            sign,
            &mut sub_re[r * m..(r + 1) * m],
            &mut sub_im[r * m..(r + 1) * m],
        );
    }
    for k in 0..n {
        let km = k % m;
        let mut sr = 0.0;
        let mut si = 0.0;
        for r in 0..p {
            let idx = (r * k) % n;
            let wr = tw.0[idx];
            let wi = sign * tw.1[idx];
            let yr = sub_re[r * m + km];
            let yi = sub_im[r * m + km];
            sr += yr * wr - yi * wi;
            si += yr * wi + yi * wr;
        }
        out_re[k] = sr;
        out_im[k] = si;
    }
}

fn radix2_inplace(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let tw = twiddles(n);
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let wr = tw.0[k * step];
                let wi = sign * tw.1[k * step];
                let (i, j) = (start + k, start + k + half);
                let tr = re[j] * wr - im[j] * wi;
                let ti = re[j] * wi + im[j] * wr;
                re[j] = re[i] - tr;
                im[j] = im[i] - ti;
                re[i] += tr;
                im[i] += ti;
            }
        }
        len <<= 1;
    }
}

fn direct_table(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    let tw = twiddles(n);
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n {
        let mut idx = 0usize;
        let mut sr = 0.0;
        let mut si = 0.0;
        for nn in 0..n {
            let wr = tw.0[idx];
            let wi = sign * tw.1[idx];
            sr += re[nn] * wr - im[nn] * wi;
            si += re[nn] * wi + im[nn] * wr;
            idx += k;
            if idx >= n {
                idx -= n;
            }
        }
        out_re[k] = sr;
        out_im[k] = si;
    }
    re.copy_from_slice(&out_re);
    im.copy_from_slice(&out_im);
}

/// Non-differentiable forward DFT of a real signal.
pub fn fft_real(x: &[f64]) -> Result<ComplexSpectrum> {
    if x.is_empty() {
        return Err(Error::dim("fft of empty signal".to_string()));
    }
    let mut re = x.to_vec();
    let mut im = vec![0.0; x.len()];
    transform_inplace(&mut re, &mut im, -1.0);
    Ok(ComplexSpectrum { re, im })
}

/// Non-differentiable inverse DFT; the input must be (numerically)
/// Hermitian so the reconstruction is real.
pub fn ifft_complex(spec: &ComplexSpectrum) -> Result<Vec<f64>> {
    if spec.is_empty() {
        return Err(Error::dim("ifft of empty spectrum".to_string()));
    }
    let n = spec.len();
    let mut re = spec.re.clone();
    let mut im = spec.im.clone();
    transform_inplace(&mut re, &mut im, 1.0);
    let scale = 1.0 / n as f64;
    for v in re.iter_mut() {
        *v *= scale;
    }
    for v in im.iter_mut() {
        *v *= scale;
    }
    let peak = re.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let residual = im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if residual > 1e-6 * peak {
        return Err(Error::numeric(format!(
            "ifft of non-Hermitian spectrum: imaginary residual {residual:.3e}"
        )));
    }
    Ok(re)
}

/// Naive O(N^2) DFT evaluated straight from the definition. Reference
/// route only; not used by the fast path.
pub fn dft_direct(x_re: &[f64], x_im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x_re.len();
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n {
        for m in 0..n {
            let a = -2.0 * PI * (k * m) as f64 / n as f64;
            let (s, c) = a.sin_cos();
            out_re[k] += x_re[m] * c - x_im[m] * s;
            out_im[k] += x_re[m] * s + x_im[m] * c;
        }
    }
    (out_re, out_im)
}

/// Naive O(N^2) inverse DFT, including the 1/N scale.
pub fn idft_direct(f_re: &[f64], f_im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = f_re.len();
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for m in 0..n {
        for k in 0..n {
            let a = 2.0 * PI * (k * m) as f64 / n as f64;
            let (s, c) = a.sin_cos();
            out_re[m] += f_re[k] * c - f_im[k] * s;
            out_im[m] += f_re[k] * s + f_im[k] * c;
        }
        out_re[m] /= n as f64;
        out_im[m] /= n as f64;
    }
    (out_re, out_im)
}

/// Frequency-domain tensor pair recorded on the tape: real and
/// imaginary parts per row, last axis of length `n`.
#[derive(Clone)]
pub struct SpectrumTensor {
    pub re: Tensor,
    pub im: Tensor,
    pub n: usize,
}

impl Tensor {
    /// Differentiable DFT of real rows along the last axis.
    pub fn fft(&self) -> Result<SpectrumTensor> {
        let (x, xs) = self.graph.with(|g| {
            let n = &g.nodes[self.id];
            (n.data.clone(), n.shape.clone())
        });
        let n = *xs.last().ok_or_else(|| Error::dim("fft of 0-d tensor".to_string()))?;
        if n == 0 {
            return Err(Error::dim("fft over empty last axis".to_string()));
        }
        let rows = x.len() / n;
        let mut re = vec![0.0; x.len()];
        let mut im = vec![0.0; x.len()];
        for r in 0..rows {
            let mut row_re = x[r * n..(r + 1) * n].to_vec();
            let mut row_im = vec![0.0; n];
            transform_inplace(&mut row_re, &mut row_im, -1.0);
            re[r * n..(r + 1) * n].copy_from_slice(&row_re);
            im[r * n..(r + 1) * n].copy_from_slice(&row_im);
        }
        let id = self.id;
        // Gradient of the DFT w.r.t. a real input is the real part of the
        // unscaled inverse transform of the upstream gradient. The real
        // and imaginary outputs contribute independently by linearity.
        let back_for = move |imag_part: bool| {
            Box::new(move |g: &[f64], inner: &mut GraphInner| {
                let mut gx = vec![0.0; rows * n];
                for r in 0..rows {
                    let (mut gr, mut gi) = if imag_part {
                        (vec![0.0; n], g[r * n..(r + 1) * n].to_vec())
                    } else {
                        (g[r * n..(r + 1) * n].to_vec(), vec![0.0; n])
                    };
                    transform_inplace(&mut gr, &mut gi, 1.0);
                    gx[r * n..(r + 1) * n].copy_from_slice(&gr);
                }
                inner.accum(id, &gx);
            }) as super::BackFn
        };
        let re_t = self.graph.push(re, xs.clone(), Some(back_for(false)));
        let im_t = self.graph.push(im, xs, Some(back_for(true)));
        Ok(SpectrumTensor {
            re: re_t,
            im: im_t,
            n,
        })
    }
}

impl SpectrumTensor {
    pub fn shape(&self) -> Vec<usize> {
        self.re.shape()
    }

    /// Differentiable inverse DFT producing real rows. Errors when the
    /// reconstruction has a non-negligible imaginary residual.
    pub fn ifft(&self) -> Result<Tensor> {
        let (fre, shape) = self.re.graph.with(|g| {
            let n = &g.nodes[self.re.id];
            (n.data.clone(), n.shape.clone())
        });
        let fim = self.im.data();
        let n = self.n;
        let rows = fre.len() / n;
        let mut out = vec![0.0; fre.len()];
        let scale = 1.0 / n as f64;
        let mut residual = 0.0f64;
        let mut peak = 1.0f64;
        for r in 0..rows {
            let mut row_re = fre[r * n..(r + 1) * n].to_vec();
            let mut row_im = fim[r * n..(r + 1) * n].to_vec();
            transform_inplace(&mut row_re, &mut row_im, 1.0);
            for j in 0..n {
                let v = row_re[j] * scale;
                out[r * n + j] = v;
                peak = peak.max(v.abs());
                residual = residual.max((row_im[j] * scale).abs());
            }
        }
        if residual > 1e-6 * peak {
            return Err(Error::numeric(format!(
                "ifft of non-Hermitian spectrum: imaginary residual {residual:.3e}"
            )));
        }
        let (id_re, id_im) = (self.re.id, self.im.id);
        let graph = self.re.graph.clone();
        Ok(graph.push(
            out,
            shape,
            Some(Box::new(move |g: &[f64], inner: &mut GraphInner| {
                // d out / d F = (1/N) * forward DFT of the output gradient.
                let mut gre = vec![0.0; rows * n];
                let mut gim = vec![0.0; rows * n];
                for r in 0..rows {
                    let mut gr = g[r * n..(r + 1) * n].to_vec();
                    let mut gi = vec![0.0; n];
                    transform_inplace(&mut gr, &mut gi, -1.0);
                    for j in 0..n {
                        gre[r * n + j] = gr[j] * scale;
                        gim[r * n + j] = gi[j] * scale;
                    }
                }
                inner.accum(id_re, &gre);
                inner.accum(id_im, &gim);
            })),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Graph;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn delta_input_is_flat() {
        let f = fft_real(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_close(&f.re, &[1.0; 4], 1e-12);
        assert_close(&f.im, &[0.0; 4], 1e-12);
    }

    #[test]
    fn dc_input() {
        let f = fft_real(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_close(&f.re, &[4.0, 0.0, 0.0, 0.0], 1e-12);
        assert_close(&f.im, &[0.0; 4], 1e-12);
    }

    #[test]
    fn hand_dft_vector() {
        let f = fft_real(&[0.0, 1.0, 0.0, -1.0]).unwrap();
        assert_close(&f.re, &[0.0, 0.0, 0.0, 0.0], 1e-12);
        assert_close(&f.im, &[0.0, -2.0, 0.0, 2.0], 1e-12);
    }

    #[test]
    fn ifft_hand_vectors() {
        let x = ifft_complex(&ComplexSpectrum {
            re: vec![4.0, 0.0, 0.0, 0.0],
            im: vec![0.0; 4],
        })
        .unwrap();
        assert_close(&x, &[1.0; 4], 1e-12);

        let x2 = ifft_complex(&ComplexSpectrum {
            re: vec![0.0; 4],
            im: vec![0.0, -2.0, 0.0, 2.0],
        })
        .unwrap();
        assert_close(&x2, &[0.0, 1.0, 0.0, -1.0], 1e-12);
    }

    #[test]
    fn round_trip_odd_length() {
        let x = vec![0.3, -1.2, 4.0, 0.0, 2.5];
        let back = ifft_complex(&fft_real(&x).unwrap()).unwrap();
        assert_close(&back, &x, 1e-9);
    }

    #[test]
    fn non_hermitian_rejected() {
        let bad = ComplexSpectrum {
            re: vec![0.0, 1.0, 0.0, 0.0],
            im: vec![0.0; 4],
        };
        assert!(ifft_complex(&bad).is_err());
        assert!(hermitian_residual(&bad) > 0.5);
    }

    #[test]
    fn radix2_matches_direct_reference() {
        let mut state = 0x1234_5678u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for n in [4usize, 8, 16, 32, 64, 128, 256] {
            let x: Vec<f64> = (0..n).map(|_| next()).collect();
            let fast = fft_real(&x).unwrap();
            let (dre, dim) = dft_direct(&x, &vec![0.0; n]);
            for k in 0..n {
                assert!((fast.re[k] - dre[k]).abs() < 1e-10 * n as f64);
                assert!((fast.im[k] - dim[k]).abs() < 1e-10 * n as f64);
            }
        }
    }

    #[test]
    fn parseval_holds() {
        let x = vec![1.0, -0.5, 0.25, 2.0, -3.0, 0.1, 0.0, 7.0];
        let f = fft_real(&x).unwrap();
        let time_energy: f64 = x.iter().map(|v| v * v).sum();
        let freq_energy: f64 = f.mag_sq().iter().sum::<f64>() / x.len() as f64;
        assert!((time_energy - freq_energy).abs() < 1e-9 * time_energy);
    }

    #[test]
    fn tensor_fft_matches_kernel_per_row() {
        let g = Graph::new();
        let x = g.tensor(vec![1.0, 2.0, 3.0, 4.0, 0.0, -1.0, 0.5, 2.0], &[2, 4]);
        let spec = x.fft().unwrap();
        let row1 = fft_real(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_close(&spec.re.data()[..4], &row1.re, 1e-12);
        assert_close(&spec.im.data()[..4], &row1.im, 1e-12);
        let back = spec.ifft().unwrap();
        assert_close(&back.data(), &x.data(), 1e-9);
    }
}
