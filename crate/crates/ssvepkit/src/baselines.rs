//! Training-free reference recognizers: canonical correlation analysis
//! against sinusoidal reference banks, with an optional filter-bank
//! extension. These double as analytically checkable oracles for the
//! learned decoder.

use nalgebra::DMatrix;

use crate::signal::{butter_design, filtfilt_1d, FilterSpec};
use crate::{Error, Result};

/// Ridge added to covariance diagonals before inversion.
pub const COV_RIDGE: f64 = 1e-9;

/// Sinusoidal reference templates, one `2·Nh × T` matrix per stimulus.
#[derive(Debug, Clone)]
pub struct ReferenceBank {
    pub frequencies_hz: Vec<f64>,
    pub n_harmonics: usize,
    pub n_samples: usize,
    pub sample_rate_hz: f64,
    templates: Vec<DMatrix<f64>>,
}

impl ReferenceBank {
    /// Builds sin/cos rows for harmonics `1..=n_harmonics` per frequency.
    pub fn new(
        frequencies_hz: &[f64],
        n_samples: usize,
        sample_rate_hz: f64,
        n_harmonics: usize,
    ) -> Result<Self> {
        if frequencies_hz.is_empty() || n_harmonics == 0 {
            return Err(Error::param("reference bank needs frequencies and harmonics".to_string()));
        }
        let nyquist = sample_rate_hz / 2.0;
        for &f in frequencies_hz {
            if f <= 0.0 || f * n_harmonics as f64 >= nyquist {
                return Err(Error::param(format!(
                    "harmonic {n_harmonics}·{f} Hz reaches the Nyquist rate {nyquist} Hz"
                )));
            }
        }
        let templates = frequencies_hz
            .iter()
            .map(|&f| {
                DMatrix::from_fn(2 * n_harmonics, n_samples, |row, t| {
                    let h = (row / 2 + 1) as f64;
                    let phase = 2.0 * std::f64::consts::PI * h * f * t as f64 / sample_rate_hz;
                    if row % 2 == 0 {
                        phase.sin()
                    } else {
                        phase.cos()
                    }
                })
            })
            .collect();
        Ok(ReferenceBank {
            frequencies_hz: frequencies_hz.to_vec(),
            n_harmonics,
            n_samples,
            sample_rate_hz,
            templates,
        })
    }

    pub fn template(&self, class: usize) -> &DMatrix<f64> {
        &self.templates[class]
    }

    pub fn n_classes(&self) -> usize {
        self.templates.len()
    }
}

fn center_rows(m: &mut DMatrix<f64>) {
    let t = m.ncols();
    for mut row in m.row_iter_mut() {
        let mean = row.sum() / t as f64;
        row.add_scalar_mut(-mean);
    }
}

fn rows_matrix(x: &[f64], rows: usize) -> Result<DMatrix<f64>> {
    if rows == 0 || x.len() % rows != 0 {
        return Err(Error::dim(format!(
            "{} values do not split into {rows} rows",
            x.len()
        )));
    }
    let t = x.len() / rows;
    Ok(DMatrix::from_fn(rows, t, |r, c| x[r * t + c]))
}

/// Largest canonical correlation between the row spaces of `X` (C×T,
/// flattened) and `Y` (D×T, flattened); always in [0, 1].
pub fn cca_rho(x: &[f64], c: usize, y: &[f64], d: usize) -> Result<f64> {
    let mut xm = rows_matrix(x, c)?;
    let mut ym = rows_matrix(y, d)?;
    if xm.ncols() != ym.ncols() {
        return Err(Error::dim(format!(
            "operands differ in samples: {} vs {}",
            xm.ncols(),
            ym.ncols()
        )));
    }
    let t = xm.ncols();
    if t <= c || t <= d {
        return Err(Error::param(format!(
            "need more samples ({t}) than rows ({c}, {d})"
        )));
    }
    center_rows(&mut xm);
    center_rows(&mut ym);
    let tf = t as f64;
    let mut cxx = &xm * xm.transpose() / tf;
    let mut cyy = &ym * ym.transpose() / tf;
    let cxy = &xm * ym.transpose() / tf;
    for i in 0..c {
        cxx[(i, i)] += COV_RIDGE;
    }
    for i in 0..d {
        cyy[(i, i)] += COV_RIDGE;
    }
    let lx = cxx
        .cholesky()
        .ok_or_else(|| Error::numeric("signal covariance is not positive definite".to_string()))?
        .l();
    let ly = cyy
        .cholesky()
        .ok_or_else(|| Error::numeric("reference covariance is not positive definite".to_string()))?
        .l();
    // Whitened cross-covariance: Lx⁻¹ Cxy Ly⁻ᵀ; its largest singular
    // value is the first canonical correlation.
    let half = lx
        .solve_lower_triangular(&cxy)
        .ok_or_else(|| Error::numeric("singular whitening factor".to_string()))?;
    let m = ly
        .solve_lower_triangular(&half.transpose())
        .ok_or_else(|| Error::numeric("singular whitening factor".to_string()))?
        .transpose();
    let rho = m.svd(false, false).singular_values.max();
    Ok(rho.clamp(0.0, 1.0))
}

/// Class with the highest canonical correlation; ties break low.
pub fn cca_classify(x: &[f64], n_channels: usize, bank: &ReferenceBank) -> Result<usize> {
    if bank.n_classes() == 0 {
        return Err(Error::param("empty reference bank".to_string()));
    }
    let mut best = 0;
    let mut best_rho = f64::NEG_INFINITY;
    for class in 0..bank.n_classes() {
        let y = bank.template(class);
        let y_flat: Vec<f64> = (0..y.nrows())
            .flat_map(|r| (0..y.ncols()).map(move |c| y[(r, c)]))
            .collect();
        let rho = cca_rho(x, n_channels, &y_flat, y.nrows())?;
        if rho > best_rho {
            best_rho = rho;
            best = class;
        }
    }
    Ok(best)
}

/// Sub-band layout and weighting for the filter-bank variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterBankSpec {
    pub n_bands: usize,
    /// Weight exponents: w(m) = m^(−a) + b.
    pub a: f64,
    pub b: f64,
    pub filter_order: usize,
    pub high_cut_hz: f64,
}

impl Default for FilterBankSpec {
    fn default() -> Self {
        FilterBankSpec {
            n_bands: 5,
            a: 1.25,
            b: 0.25,
            filter_order: 4,
            high_cut_hz: 88.0,
        }
    }
}

impl FilterBankSpec {
    pub fn weight(&self, m: usize) -> f64 {
        (m as f64).powf(-self.a) + self.b
    }

    /// Pass band of sub-band `m` (1-based): [8·m, high cut] Hz.
    pub fn band(&self, m: usize) -> (f64, f64) {
        (8.0 * m as f64, self.high_cut_hz)
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if self.n_bands == 0 {
            return Err(Error::param("filter bank needs at least one band".to_string()));
        }
        let (low, high) = self.band(self.n_bands);
        if low >= high || high >= sample_rate_hz / 2.0 {
            return Err(Error::param(format!(
                "band [{low}, {high}] Hz does not fit under the Nyquist rate"
            )));
        }
        Ok(())
    }
}

/// Filter-bank classification: band-pass the trial per sub-band, score
/// each class by Σ_m w(m)·ρ_m², take the argmax.
pub fn fbcca_classify(
    x: &[f64],
    n_channels: usize,
    bank: &ReferenceBank,
    fb: &FilterBankSpec,
) -> Result<usize> {
    fb.validate(bank.sample_rate_hz)?;
    let t = x.len() / n_channels;
    let mut scores = vec![0.0; bank.n_classes()];
    for m in 1..=fb.n_bands {
        let (low, high) = fb.band(m);
        let sections = butter_design(&FilterSpec {
            order: fb.filter_order,
            low_cut_hz: low,
            high_cut_hz: high,
            sample_rate_hz: bank.sample_rate_hz,
        })?;
        let mut filtered = vec![0.0; x.len()];
        for ch in 0..n_channels {
            let out = filtfilt_1d(&sections, &x[ch * t..(ch + 1) * t])?;
            filtered[ch * t..(ch + 1) * t].copy_from_slice(&out);
        }
        let w = fb.weight(m);
        for class in 0..bank.n_classes() {
            let y = bank.template(class);
            let y_flat: Vec<f64> = (0..y.nrows())
                .flat_map(|r| (0..y.ncols()).map(move |c| y[(r, c)]))
                .collect();
            let rho = cca_rho(&filtered, n_channels, &y_flat, y.nrows())?;
            scores[class] += w * rho * rho;
        }
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}
