//! Epoch container, dataset manifests, windowing and preprocessing.

mod eegt;
mod filter;

pub use eegt::{read_epoch_file, write_epoch_file};
pub use filter::{butter_design, cascade_gain, filtfilt, filtfilt_1d, Biquad, FilterSpec};

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Labeled multi-trial EEG block: `trials x channels x time`, microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    /// Row-major `[trial][channel][sample]`, f32 to match the on-disk unit.
    pub data: Vec<f32>,
    pub n_trials: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    /// Class index per trial.
    pub labels: Vec<u16>,
    pub subject_id: String,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
}

impl EpochSet {
    pub fn new(
        data: Vec<f32>,
        n_trials: usize,
        n_channels: usize,
        n_samples: usize,
        labels: Vec<u16>,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        if data.len() != n_trials * n_channels * n_samples {
            return Err(Error::dim(format!(
                "epoch data length {} does not match {}x{}x{}",
                data.len(),
                n_trials,
                n_channels,
                n_samples
            )));
        }
        if labels.len() != n_trials {
            return Err(Error::dim(format!(
                "{} labels for {} trials",
                labels.len(),
                n_trials
            )));
        }
        Ok(Self {
            data,
            n_trials,
            n_channels,
            n_samples,
            labels,
            subject_id: String::new(),
            sample_rate_hz,
            channel_names: (0..n_channels).map(|i| format!("ch{i}")).collect(),
        })
    }

    pub fn trial(&self, t: usize) -> &[f32] {
        let stride = self.n_channels * self.n_samples;
        &self.data[t * stride..(t + 1) * stride]
    }

    /// One trial as f64, `channels x time` row-major.
    pub fn trial_f64(&self, t: usize) -> Vec<f64> {
        self.trial(t).iter().map(|&v| v as f64).collect()
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    pub fn validate_labels(&self, n_classes: usize) -> Result<()> {
        for (i, &l) in self.labels.iter().enumerate() {
            if l as usize >= n_classes {
                return Err(Error::format(
                    0,
                    format!("trial {i} label {l} >= class count {n_classes}"),
                ));
            }
        }
        Ok(())
    }

    /// Crop every trial to `[round(onset*fs), round(onset*fs) + round(length*fs))`.
    pub fn extract_window(&self, onset_s: f64, length_s: f64) -> Result<EpochSet> {
        let fs = self.sample_rate_hz;
        let start = (onset_s * fs).round() as usize;
        let len = (length_s * fs).round() as usize;
        if start + len > self.n_samples {
            return Err(Error::param(format!(
                "window [{start}, {}) exceeds trial length {}",
                start + len,
                self.n_samples
            )));
        }
        let mut data = Vec::with_capacity(self.n_trials * self.n_channels * len);
        for t in 0..self.n_trials {
            for c in 0..self.n_channels {
                let base = (t * self.n_channels + c) * self.n_samples + start;
                data.extend_from_slice(&self.data[base..base + len]);
            }
        }
        Ok(EpochSet {
            data,
            n_samples: len,
            labels: self.labels.clone(),
            subject_id: self.subject_id.clone(),
            channel_names: self.channel_names.clone(),
            ..*self
        })
    }

    /// Subset/reorder channels by name.
    pub fn select_channels(&self, names: &[String]) -> Result<EpochSet> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.channel_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::Lookup(n.clone()))
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(self.n_trials * idx.len() * self.n_samples);
        for t in 0..self.n_trials {
            for &c in &idx {
                let base = (t * self.n_channels + c) * self.n_samples;
                data.extend_from_slice(&self.data[base..base + self.n_samples]);
            }
        }
        Ok(EpochSet {
            data,
            n_channels: idx.len(),
            labels: self.labels.clone(),
            subject_id: self.subject_id.clone(),
            channel_names: names.to_vec(),
            ..*self
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubjectFile {
    pub id: String,
    pub path: String,
}

/// Dataset description consumed by the training and evaluation harness.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dataset_name: String,
    /// Stimulus frequencies in Hz, strictly increasing; index = class label.
    pub stimulus_frequencies_hz: Vec<f64>,
    /// Stimulus phases in radians; may be empty.
    #[serde(default)]
    pub stimulus_phases_rad: Vec<f64>,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub subjects: Vec<SubjectFile>,
}

impl DatasetManifest {
    pub fn n_classes(&self) -> usize {
        self.stimulus_frequencies_hz.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stimulus_frequencies_hz.is_empty() {
            return Err(Error::param("manifest has no stimulus frequencies"));
        }
        for w in self.stimulus_frequencies_hz.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::param(format!(
                    "stimulus frequencies not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.stimulus_frequencies_hz[0] <= 0.0 {
            return Err(Error::param("stimulus frequencies must be positive"));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::param("sample rate must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: DatasetManifest = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Resolve a subject path relative to the manifest location.
    pub fn subject_path(&self, manifest_path: &Path, subject: &SubjectFile) -> PathBuf {
        let p = Path::new(&subject.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(p)
        }
    }

    /// Load one subject's epochs, cross-checking the header against the
    /// manifest and stamping subject id and channel names.
    pub fn load_subject(&self, manifest_path: &Path, subject: &SubjectFile) -> Result<EpochSet> {
        let path = self.subject_path(manifest_path, subject);
        let mut set = read_epoch_file(&path)?;
        if (set.sample_rate_hz - self.sample_rate_hz).abs() > 1e-9 {
            return Err(Error::format(
                16,
                format!(
                    "{}: sample rate {} disagrees with manifest {}",
                    path.display(),
                    set.sample_rate_hz,
                    self.sample_rate_hz
                ),
            ));
        }
        if set.n_channels != self.channel_names.len() {
            return Err(Error::format(
                12,
                format!(
                    "{}: {} channels but manifest lists {}",
                    path.display(),
                    set.n_channels,
                    self.channel_names.len()
                ),
            ));
        }
        set.validate_labels(self.n_classes())?;
        if set.has_non_finite() {
            return Err(Error::numeric(format!(
                "{}: non-finite samples after loading",
                path.display()
            )));
        }
        set.subject_id = subject.id.clone();
        set.channel_names = self.channel_names.clone();
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set() -> EpochSet {
        // 2 trials, 2 channels, 4 samples at 250 Hz
        let data: Vec<f32> = (0..16).map(|v| v as f32).collect();
        EpochSet::new(data, 2, 2, 4, vec![0, 1], 250.0).unwrap()
    }

    #[test]
    fn window_indices() {
        let fs = 250.0;
        assert_eq!((0.14f64 * fs).round() as usize, 35);
        assert_eq!((0.3f64 * fs).round() as usize, 75);
    }

    #[test]
    fn full_window_is_identity() {
        let s = toy_set();
        let w = s.extract_window(0.0, 4.0 / 250.0).unwrap();
        assert_eq!(w, s);
    }

    #[test]
    fn window_crops_samples() {
        let s = toy_set();
        let w = s.extract_window(1.0 / 250.0, 2.0 / 250.0).unwrap();
        assert_eq!(w.n_samples, 2);
        assert_eq!(w.data, vec![1.0, 2.0, 5.0, 6.0, 9.0, 10.0, 13.0, 14.0]);
        assert!(s.extract_window(0.0, 5.0 / 250.0).is_err());
    }

    #[test]
    fn window_composition() {
        let data: Vec<f32> = (0..100).map(|v| v as f32).collect();
        let s = EpochSet::new(data, 1, 1, 100, vec![0], 250.0).unwrap();
        let once = s.extract_window(20.0 / 250.0, 30.0 / 250.0).unwrap();
        let twice = s
            .extract_window(12.0 / 250.0, 60.0 / 250.0)
            .unwrap()
            .extract_window(8.0 / 250.0, 30.0 / 250.0)
            .unwrap();
        assert_eq!(once.data, twice.data);
    }

    #[test]
    fn select_channels_identity_and_subset() {
        let s = toy_set();
        let all = s.select_channels(&s.channel_names.clone()).unwrap();
        assert_eq!(all, s);
        let one = s.select_channels(&["ch1".to_string()]).unwrap();
        assert_eq!(one.n_channels, 1);
        assert_eq!(one.data, vec![4.0, 5.0, 6.0, 7.0, 12.0, 13.0, 14.0, 15.0]);
        assert!(s.select_channels(&["nope".to_string()]).is_err());
    }

    #[test]
    fn select_channels_reorders() {
        let s = toy_set();
        let swapped = s
            .select_channels(&["ch1".to_string(), "ch0".to_string()])
            .unwrap();
        let back = swapped
            .select_channels(&["ch0".to_string(), "ch1".to_string()])
            .unwrap();
        assert_eq!(back.data, s.data);
    }

    #[test]
    fn manifest_validation() {
        let mut m = DatasetManifest {
            dataset_name: "toy".into(),
            stimulus_frequencies_hz: vec![8.0, 8.2, 8.4],
            stimulus_phases_rad: vec![],
            sample_rate_hz: 250.0,
            channel_names: vec!["Oz".into()],
            subjects: vec![],
        };
        assert!(m.validate().is_ok());
        m.stimulus_frequencies_hz = vec![8.0, 8.0];
        assert!(m.validate().is_err());
    }
}
