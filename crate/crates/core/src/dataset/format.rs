//! Little-endian binary formats for dataset samples ("BGS1") and
//! standalone gain frames ("BGF1"). Both are fixed-layout and
//! bit-exact across platforms.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::physics::{BgsFrame, SweepGrid};

use super::DatasetSample;

pub const SAMPLE_MAGIC: [u8; 4] = *b"BGS1";
pub const SAMPLE_VERSION: u16 = 1;
pub const FRAME_MAGIC: [u8; 4] = *b"BGF1";
pub const FRAME_VERSION: u16 = 1;

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Corrupt("unexpected end of file".into()))?;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(f32::from_le_bytes(self.bytes()?));
        }
        Ok(out)
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(f64::from_le_bytes(self.bytes()?));
        }
        Ok(out)
    }
}

fn check_magic(actual: [u8; 4], expected: [u8; 4], what: &str) -> Result<()> {
    if actual != expected {
        return Err(Error::Format(format!(
            "bad magic for {what}: {:02x?}, expected {:02x?}",
            actual, expected
        )));
    }
    Ok(())
}

fn check_version(actual: u16, expected: u16, what: &str) -> Result<()> {
    if actual != expected {
        return Err(Error::Format(format!(
            "unsupported {what} version {actual}, expected {expected}"
        )));
    }
    Ok(())
}

/// Write one dataset sample.
///
/// Layout: magic, version u16, n_freq u32, width u32, input f32
/// row-major, label f32, truth f64, seed u64, pulse width f64, noise
/// variance f64, config digest 32 bytes.
pub fn write_sample(path: &Path, sample: &DatasetSample) -> Result<()> {
    sample.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&SAMPLE_MAGIC)?;
    w.write_all(&SAMPLE_VERSION.to_le_bytes())?;
    w.write_all(&sample.n_freq.to_le_bytes())?;
    w.write_all(&sample.width.to_le_bytes())?;
    for v in &sample.input {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &sample.label {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &sample.truth_hz {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&sample.seed.to_le_bytes())?;
    w.write_all(&sample.pulse_width_s.to_le_bytes())?;
    w.write_all(&sample.noise_variance.to_le_bytes())?;
    w.write_all(&sample.config_digest)?;
    w.flush()?;
    Ok(())
}

/// Read one dataset sample; lossless inverse of [`write_sample`].
pub fn read_sample(path: &Path) -> Result<DatasetSample> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    check_magic(r.bytes()?, SAMPLE_MAGIC, "sample")?;
    check_version(r.u16()?, SAMPLE_VERSION, "sample")?;
    let n_freq = r.u32()?;
    let width = r.u32()?;
    if n_freq == 0 || width == 0 || (n_freq as u64) * (width as u64) > (1 << 32) {
        return Err(Error::Corrupt(format!(
            "implausible sample dims {n_freq}x{width}"
        )));
    }
    let input = r.f32_vec(n_freq as usize * width as usize)?;
    let label = r.f32_vec(width as usize)?;
    let truth_hz = r.f64_vec(width as usize)?;
    let seed = r.u64()?;
    let pulse_width_s = r.f64()?;
    let noise_variance = r.f64()?;
    let config_digest = r.bytes()?;
    let sample = DatasetSample {
        n_freq,
        width,
        input,
        label,
        truth_hz,
        seed,
        pulse_width_s,
        noise_variance,
        config_digest,
    };
    sample.validate()?;
    Ok(sample)
}

/// Provenance carried by standalone frame files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMeta {
    pub pulse_width_s: f64,
    pub seed: u64,
    pub config_digest: [u8; 32],
}

/// Write a gain frame with its provenance.
pub fn write_frame(path: &Path, frame: &BgsFrame, meta: &FrameMeta) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&FRAME_MAGIC)?;
    w.write_all(&FRAME_VERSION.to_le_bytes())?;
    w.write_all(&(frame.n_freq() as u32).to_le_bytes())?;
    w.write_all(&(frame.n_cols() as u32).to_le_bytes())?;
    w.write_all(&frame.sweep.start_hz.to_le_bytes())?;
    w.write_all(&frame.sweep.step_hz.to_le_bytes())?;
    w.write_all(&(frame.sweep.count as u32).to_le_bytes())?;
    w.write_all(&frame.spatial_pitch.to_le_bytes())?;
    w.write_all(&[frame.normalized as u8])?;
    w.write_all(&meta.pulse_width_s.to_le_bytes())?;
    w.write_all(&meta.seed.to_le_bytes())?;
    w.write_all(&meta.config_digest)?;
    for v in frame.gain() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a gain frame and its provenance.
pub fn read_frame(path: &Path) -> Result<(BgsFrame, FrameMeta)> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    check_magic(r.bytes()?, FRAME_MAGIC, "frame")?;
    check_version(r.u16()?, FRAME_VERSION, "frame")?;
    let n_freq = r.u32()? as usize;
    let n_cols = r.u32()? as usize;
    let sweep = SweepGrid::new(r.f64()?, r.f64()?, r.u32()? as usize)?;
    let spatial_pitch = r.f64()?;
    let normalized = r.bytes::<1>()?[0] != 0;
    let meta = FrameMeta {
        pulse_width_s: r.f64()?,
        seed: r.u64()?,
        config_digest: r.bytes()?,
    };
    if n_freq == 0 || n_cols == 0 || n_freq as u64 * n_cols as u64 > (1 << 32) {
        return Err(Error::Corrupt(format!(
            "implausible frame dims {n_freq}x{n_cols}"
        )));
    }
    let gain = r.f64_vec(n_freq * n_cols)?;
    let frame = BgsFrame::from_rows(gain, n_freq, n_cols, sweep, spatial_pitch, normalized)?;
    Ok((frame, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::SweepGrid;

    fn sample() -> DatasetSample {
        DatasetSample {
            n_freq: 3,
            width: 4,
            input: (0..12).map(|i| i as f32 * 0.25).collect(),
            label: vec![0.0, 0.5, 0.75, 1.0],
            truth_hz: vec![10.81e9, 10.85e9, 10.87e9, 10.89e9],
            seed: 0xDEADBEEF,
            pulse_width_s: 40e-9,
            noise_variance: 1e-3,
            config_digest: [7u8; 32],
        }
    }

    #[test]
    fn sample_round_trip_is_field_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let s = sample();
        write_sample(&path, &s).unwrap();
        let back = read_sample(&path).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn truncated_sample_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_sample(&path, &sample()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(read_sample(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_sample(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_sample(&path), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_sample(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_sample(&path), Err(Error::Format(_))));
    }

    #[test]
    fn frame_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let frame = BgsFrame::from_rows(
            (0..20).map(|i| i as f64).collect(),
            4,
            5,
            SweepGrid::standard(),
            0.1,
            false,
        )
        .unwrap();
        let meta = FrameMeta {
            pulse_width_s: 45e-9,
            seed: 11,
            config_digest: [3u8; 32],
        };
        write_frame(&path, &frame, &meta).unwrap();
        let (back, back_meta) = read_frame(&path).unwrap();
        assert_eq!(frame, back);
        assert_eq!(meta, back_meta);
    }
}
