//! EEGT binary epoch files.
//!
//! Little-endian layout: magic `EEGT`, u32 version=1, u32 n_trials,
//! u32 n_channels, u32 n_samples, f64 sample_rate_hz, then one u16
//! label per trial, then the f32 payload in `[trial][channel][sample]`
//! order.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::EpochSet;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"EEGT";
const VERSION: u32 = 1;

pub fn write_epoch_file(set: &EpochSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(set.n_trials as u32).to_le_bytes())?;
    w.write_all(&(set.n_channels as u32).to_le_bytes())?;
    w.write_all(&(set.n_samples as u32).to_le_bytes())?;
    w.write_all(&set.sample_rate_hz.to_le_bytes())?;
    for &label in &set.labels {
        w.write_all(&label.to_le_bytes())?;
    }
    for &v in &set.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner
            .read_exact(buf)
            .map_err(|_| Error::format(at, format!("truncated while reading {what}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

pub fn read_epoch_file(path: &Path) -> Result<EpochSet> {
    let mut r = Cursor {
        inner: BufReader::new(std::fs::File::open(path)?),
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.take(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n_trials = r.u32("n_trials")? as usize;
    let n_channels = r.u32("n_channels")? as usize;
    let n_samples = r.u32("n_samples")? as usize;
    let mut fs_bytes = [0u8; 8];
    r.take(&mut fs_bytes, "sample_rate_hz")?;
    let sample_rate_hz = f64::from_le_bytes(fs_bytes);
    if !sample_rate_hz.is_finite() || sample_rate_hz <= 0.0 {
        return Err(Error::format(20, format!("bad sample rate {sample_rate_hz}")));
    }
    let mut labels = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let mut b = [0u8; 2];
        r.take(&mut b, &format!("label {i}"))?;
        labels.push(u16::from_le_bytes(b));
    }
    let n_values = n_trials * n_channels * n_samples;
    let mut data = Vec::with_capacity(n_values);
    for i in 0..n_values {
        let mut b = [0u8; 4];
        r.take(&mut b, &format!("sample {i}"))?;
        data.push(f32::from_le_bytes(b));
    }
    // trailing garbage is tolerated; header/data length already cross-checked
    EpochSet::new(data, n_trials, n_channels, n_samples, labels, sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("ssvepkit-eegt-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let data: Vec<f32> = (0..6).map(|v| v as f32 * 0.5 - 1.0).collect();
        let set = EpochSet::new(data, 2, 1, 3, vec![0, 3], 250.0).unwrap();
        let path = tmpfile("roundtrip.eegt");
        write_epoch_file(&set, &path).unwrap();
        let back = read_epoch_file(&path).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn empty_set_is_valid() {
        let set = EpochSet::new(vec![], 0, 1, 3, vec![], 256.0).unwrap();
        let path = tmpfile("empty.eegt");
        write_epoch_file(&set, &path).unwrap();
        let back = read_epoch_file(&path).unwrap();
        assert_eq!(back.n_trials, 0);
    }

    #[test]
    fn truncation_is_detected() {
        let data: Vec<f32> = vec![1.0; 12];
        let set = EpochSet::new(data, 2, 2, 3, vec![0, 1], 250.0).unwrap();
        let path = tmpfile("trunc.eegt");
        write_epoch_file(&set, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = read_epoch_file(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn corrupt_magic_fails() {
        let set = EpochSet::new(vec![0.0; 3], 1, 1, 3, vec![0], 250.0).unwrap();
        let path = tmpfile("magic.eegt");
        write_epoch_file(&set, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(read_epoch_file(&path).is_err());
    }
}
