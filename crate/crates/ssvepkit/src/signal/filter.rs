//! Butterworth band-pass design (analog prototype + bilinear transform
//! with pre-warping) and zero-phase forward-backward filtering.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::EpochSet;
use crate::{Error, Result};

/// Band-pass specification. `order` is the analog low-pass prototype
/// order; the resulting band-pass cascade has `order` biquad sections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub order: usize,
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order % 2 != 0 {
            return Err(Error::param(format!(
                "filter order must be a positive even integer, got {}",
                self.order
            )));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        if !(0.0 < self.low_cut_hz && self.low_cut_hz < self.high_cut_hz) {
            return Err(Error::param(format!(
                "need 0 < low ({}) < high ({})",
                self.low_cut_hz, self.high_cut_hz
            )));
        }
        if self.high_cut_hz >= nyquist {
            return Err(Error::param(format!(
                "high cut {} Hz >= Nyquist {} Hz",
                self.high_cut_hz, nyquist
            )));
        }
        Ok(())
    }
}

/// Second-order section `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Complex frequency response at normalized angular frequency `w`.
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2)
            / (Complex64::new(1.0, 0.0) + self.a[0] * z1 + self.a[1] * z2)
    }
}

/// Magnitude response of a cascade at frequency `f_hz`.
pub fn cascade_gain(sections: &[Biquad], f_hz: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * f_hz / fs;
    sections
        .iter()
        .map(|s| s.response(w).norm())
        .product()
}

/// Design a Butterworth band-pass as a cascade of biquads.
pub fn butter_design(spec: &FilterSpec) -> Result<Vec<Biquad>> {
    spec.validate()?;
    let n = spec.order;
    let fs = spec.sample_rate_hz;
    // Pre-warped band edges.
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let w1 = warp(spec.low_cut_hz);
    let w2 = warp(spec.high_cut_hz);
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;

    // Low-pass prototype poles on the unit circle's left half.
    let mut analog_poles = Vec::with_capacity(2 * n);
    for k in 1..=n {
        let theta = PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        // Band transform: each prototype pole splits into a pair.
        let s = p * (bw / 2.0);
        let disc = (s * s - Complex64::new(w0 * w0, 0.0)).sqrt();
        analog_poles.push(s + disc);
        analog_poles.push(s - disc);
    }

    // Bilinear transform. Analog zeros: n at s=0 -> digital z=+1; the
    // n zeros at infinity map to z=-1.
    let two_fs = Complex64::new(2.0 * fs, 0.0);
    let mut digital_poles = Vec::with_capacity(2 * n);
    let mut gain = Complex64::new(bw.powi(n as i32), 0.0) * two_fs.powu(n as u32);
    for &p in &analog_poles {
        digital_poles.push((two_fs + p) / (two_fs - p));
        gain /= two_fs - p;
    }
    let gain = gain.re;

    // Pair conjugate poles into sections; each section carries one zero
    // at +1 and one at -1: numerator z^2 - 1.
    let mut upper: Vec<Complex64> = digital_poles
        .iter()
        .copied()
        .filter(|p| p.im > 1e-12)
        .collect();
    if upper.len() != n {
        return Err(Error::numeric(format!(
            "pole pairing failed: {} upper-half poles for order {}",
            upper.len(),
            n
        )));
    }
    upper.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    let mut sections = Vec::with_capacity(n);
    for (i, p) in upper.iter().enumerate() {
        let a1 = -2.0 * p.re;
        let a2 = p.norm_sqr();
        let k = if i == 0 { gain } else { 1.0 };
        sections.push(Biquad {
            b: [k, 0.0, -k],
            a: [a1, a2],
        });
    }
    Ok(sections)
}

/// Direct form II transposed, single pass.
fn sos_filter(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in sections {
        let mut z1 = 0.0;
        let mut z2 = 0.0;
        for v in y.iter_mut() {
            let xi = *v;
            let yi = s.b[0] * xi + z1;
            z1 = s.b[1] * xi - s.a[0] * yi + z2;
            z2 = s.b[2] * xi - s.a[1] * yi;
            *v = yi;
        }
    }
    y
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(2.0 * x[0] - x[i]);
    }
    out.extend_from_slice(x);
    for i in (1..=pad).rev() {
        out.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    out
}

pub fn filtfilt_1d(sections: &[Biquad], x: &[f64]) -> Result<Vec<f64>> {
    let pad = 3 * (2 * sections.len() + 1);
    if x.len() <= pad {
        return Err(Error::param(format!(
            "signal length {} too short for zero-phase filtering (needs > {pad})",
            x.len()
        )));
    }
    let padded = reflect_pad(x, pad);
    let fwd = sos_filter(sections, &padded);
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    rev = sos_filter(sections, &rev);
    rev.reverse();
    Ok(rev[pad..pad + x.len()].to_vec())
}

/// Zero-phase (forward-backward) filtering of every channel of every trial.
pub fn filtfilt(set: &EpochSet, sections: &[Biquad]) -> Result<EpochSet> {
    let mut out = set.clone();
    let t = set.n_samples;
    for row in 0..set.n_trials * set.n_channels {
        let seg: Vec<f64> = set.data[row * t..(row + 1) * t]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let filtered = filtfilt_1d(sections, &seg)?;
        for (i, v) in filtered.iter().enumerate() {
            out.data[row * t + i] = *v as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_spec() -> FilterSpec {
        FilterSpec {
            order: 4,
            low_cut_hz: 6.0,
            high_cut_hz: 90.0,
            sample_rate_hz: 250.0,
        }
    }

    fn tone_set(f: f64, fs: f64, n: usize) -> EpochSet {
        let data: Vec<f32> = (0..n)
            .map(|i| (2.0 * PI * f * i as f64 / fs).sin() as f32)
            .collect();
        EpochSet::new(data, 1, 1, n, vec![0], fs).unwrap()
    }

    fn rms(x: &[f32]) -> f64 {
        (x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn band_edges_sit_at_minus_3db() {
        let sections = butter_design(&default_spec()).unwrap();
        let peak = (60..900)
            .map(|i| cascade_gain(&sections, i as f64 / 10.0, 250.0))
            .fold(0.0f64, f64::max);
        let lo = cascade_gain(&sections, 6.0, 250.0);
        let hi = cascade_gain(&sections, 90.0, 250.0);
        let target = peak / 2.0f64.sqrt();
        assert!((lo - target).abs() / target < 0.02, "lo {lo} target {target}");
        assert!((hi - target).abs() / target < 0.02, "hi {hi} target {target}");
    }

    #[test]
    fn dc_is_rejected_and_center_flat() {
        let sections = butter_design(&default_spec()).unwrap();
        assert!(cascade_gain(&sections, 0.0, 250.0) < 1e-3);
        let peak = (60..900)
            .map(|i| cascade_gain(&sections, i as f64 / 10.0, 250.0))
            .fold(0.0f64, f64::max);
        let center = cascade_gain(&sections, (6.0f64 * 90.0).sqrt(), 250.0);
        assert!(center / peak >= 0.95 && center / peak <= 1.0);
    }

    #[test]
    fn cutoff_above_nyquist_rejected() {
        let mut spec = default_spec();
        spec.high_cut_hz = 130.0;
        assert!(butter_design(&spec).is_err());
    }

    #[test]
    fn passband_tone_preserved() {
        let sections = butter_design(&default_spec()).unwrap();
        let set = tone_set(30.0, 250.0, 1000);
        let out = filtfilt(&set, &sections).unwrap();
        let ratio = rms(&out.data) / rms(&set.data);
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn drift_attenuated() {
        let sections = butter_design(&default_spec()).unwrap();
        let set = tone_set(2.0, 250.0, 1000);
        let out = filtfilt(&set, &sections).unwrap();
        let ratio = rms(&out.data) / rms(&set.data);
        assert!(ratio < 0.1, "2 Hz only attenuated to {ratio}");
    }

    #[test]
    fn zero_phase_preserves_symmetry() {
        let sections = butter_design(&default_spec()).unwrap();
        let n = 501;
        let data: Vec<f32> = (0..n)
            .map(|i| {
                let t = (i as f64 - (n - 1) as f64 / 2.0) / 250.0;
                ((2.0 * PI * 20.0 * t).cos() * (-t * t * 8.0).exp()) as f32
            })
            .collect();
        let set = EpochSet::new(data, 1, 1, n, vec![0], 250.0).unwrap();
        let out = filtfilt(&set, &sections).unwrap();
        for i in 0..n / 2 {
            let d = (out.data[i] - out.data[n - 1 - i]).abs();
            assert!(d < 1e-3, "asymmetry {d} at {i}");
        }
    }

    #[test]
    fn double_filtfilt_squares_magnitude() {
        let sections = butter_design(&default_spec()).unwrap();
        for f in [8.0, 30.0, 80.0] {
            let set = tone_set(f, 250.0, 2000);
            let once = filtfilt(&set, &sections).unwrap();
            let twice = filtfilt(&once, &sections).unwrap();
            let g1 = rms(&once.data) / rms(&set.data);
            let g2 = rms(&twice.data) / rms(&set.data);
            assert!((g2 - g1 * g1).abs() / g1.max(1e-6) < 0.1, "f {f}: {g2} vs {}", g1 * g1);
        }
    }

    #[test]
    fn too_short_signal_rejected() {
        let sections = butter_design(&default_spec()).unwrap();
        let set = tone_set(10.0, 250.0, 20);
        assert!(filtfilt(&set, &sections).is_err());
    }
}
