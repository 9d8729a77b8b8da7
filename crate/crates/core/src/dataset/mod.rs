//! Synthetic training data: random fiber profiles, frame
//! normalization and noise, smoothed/normalized BFS labels, and the
//! on-disk dataset format.

mod format;

pub use format::{read_frame, read_sample, write_frame, write_sample, FrameMeta};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::physics::{
    simulate_bgs, BgsFrame, FiberProfile, PhysicsConstants, PumpPulse, SweepGrid,
};

/// 10-90% rise of a Gaussian-smoothed step spans 2.563σ.
pub const GAUSSIAN_RISE_FACTOR: f64 = 2.563;

/// Random ranges for piecewise fiber profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRanges {
    pub bfs_hz: (f64, f64),
    pub section_m: (f64, f64),
    pub gain: (f64, f64),
    pub linewidth_hz: (f64, f64),
    pub total_length_m: f64,
}

impl Default for ProfileRanges {
    fn default() -> Self {
        ProfileRanges {
            bfs_hz: (10.81e9, 10.89e9),
            section_m: (0.5, 5.0),
            gain: (0.8, 1.0),
            linewidth_hz: (25e6, 35e6),
            total_length_m: 54.0,
        }
    }
}

impl ProfileRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = self.bfs_hz.0 <= self.bfs_hz.1
            && self.section_m.0 <= self.section_m.1
            && self.gain.0 <= self.gain.1
            && self.linewidth_hz.0 <= self.linewidth_hz.1;
        if !ordered {
            return Err(Error::InvalidInput("range min exceeds max".into()));
        }
        if !(self.section_m.0 > 0.0) {
            return Err(Error::InvalidInput("section minimum must be positive".into()));
        }
        if self.total_length_m < self.section_m.1 {
            return Err(Error::InvalidInput(
                "total length shorter than maximum section".into(),
            ));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        Uniform::new_inclusive(range.0, range.1).sample(rng)
    }
}

/// Piecewise-constant random profile per the configured ranges. Draw
/// order per section: length, BFS, gain, linewidth. The final section
/// is truncated to fill the total length exactly.
pub fn sample_fiber_profile(
    rng: &mut impl Rng,
    ranges: &ProfileRanges,
    constants: &PhysicsConstants,
) -> Result<FiberProfile> {
    ranges.validate()?;
    let n_units = (ranges.total_length_m / constants.unit_length).round() as usize;
    let mut bfs = Vec::with_capacity(n_units);
    let mut lw = Vec::with_capacity(n_units);
    let mut gain = Vec::with_capacity(n_units);
    while bfs.len() < n_units {
        let len_units = (draw(rng, ranges.section_m) / constants.unit_length).round() as usize;
        let len_units = len_units.max(1).min(n_units - bfs.len());
        let b = draw(rng, ranges.bfs_hz);
        let g = draw(rng, ranges.gain);
        let w = draw(rng, ranges.linewidth_hz);
        for _ in 0..len_units {
            bfs.push(b);
            lw.push(w);
            gain.push(g);
        }
    }
    FiberProfile::new(bfs, lw, gain, ranges.total_length_m, constants)
}

/// Divide a frame by its global maximum and set the normalized flag.
pub fn normalize_frame(frame: &BgsFrame) -> Result<BgsFrame> {
    let max = frame.max_gain();
    if !(max > 0.0) {
        return Err(Error::Degenerate(
            "frame maximum is not strictly positive".into(),
        ));
    }
    let gain = frame.gain().iter().map(|g| g / max).collect();
    BgsFrame::from_rows(
        gain,
        frame.n_freq(),
        frame.n_cols(),
        frame.sweep,
        frame.spatial_pitch,
        true,
    )
}

/// Add i.i.d. zero-mean Gaussian noise to a normalized frame.
pub fn add_gaussian_noise(
    frame: &BgsFrame,
    variance: f64,
    rng: &mut impl Rng,
) -> Result<BgsFrame> {
    if !frame.normalized {
        return Err(Error::InvalidInput(
            "noise is defined on peak-normalized frames".into(),
        ));
    }
    if variance < 0.0 {
        return Err(Error::InvalidInput("negative noise variance".into()));
    }
    if variance == 0.0 {
        return Ok(frame.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::InvalidInput(format!("noise distribution: {e}")))?;
    let gain = frame.gain().iter().map(|g| g + normal.sample(rng)).collect();
    BgsFrame::from_rows(
        gain,
        frame.n_freq(),
        frame.n_cols(),
        frame.sweep,
        frame.spatial_pitch,
        true,
    )
}

/// SNR of a peak-1 signal with the given noise variance, dB.
pub fn snr_db(variance: f64) -> f64 {
    -10.0 * variance.log10()
}

/// Map a BFS onto [0, 1] over the configured range. Out-of-range
/// values are an error, not a clamp.
pub fn normalize_bfs(bfs_hz: f64, range_hz: (f64, f64)) -> Result<f64> {
    if !(range_hz.0 < range_hz.1) {
        return Err(Error::InvalidInput("bfs range min must be below max".into()));
    }
    if bfs_hz < range_hz.0 || bfs_hz > range_hz.1 {
        return Err(Error::OutOfRange(format!(
            "bfs {} Hz outside [{}, {}]",
            bfs_hz, range_hz.0, range_hz.1
        )));
    }
    Ok((bfs_hz - range_hz.0) / (range_hz.1 - range_hz.0))
}

/// Exact inverse of [`normalize_bfs`].
pub fn denormalize_bfs(normalized: f64, range_hz: (f64, f64)) -> f64 {
    range_hz.0 + normalized * (range_hz.1 - range_hz.0)
}

/// 1-D BFS-vs-position profile with spatial pitch metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct BfsTrace {
    pub values_hz: Vec<f64>,
    pub pitch_m: f64,
}

impl BfsTrace {
    pub fn new(values_hz: Vec<f64>, pitch_m: f64) -> Result<Self> {
        if values_hz.is_empty() {
            return Err(Error::InvalidInput("empty trace".into()));
        }
        if !(pitch_m > 0.0) {
            return Err(Error::InvalidInput("trace pitch must be positive".into()));
        }
        Ok(BfsTrace { values_hz, pitch_m })
    }

    pub fn len(&self) -> usize {
        self.values_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_hz.is_empty()
    }

    pub fn position_m(&self, index: usize) -> f64 {
        index as f64 * self.pitch_m
    }

    /// Keep every `factor`-th sample, starting at index 0.
    pub fn decimate(&self, factor: usize) -> Result<BfsTrace> {
        if factor == 0 {
            return Err(Error::InvalidInput("decimation factor must be >= 1".into()));
        }
        BfsTrace::new(
            self.values_hz.iter().copied().step_by(factor).collect(),
            self.pitch_m * factor as f64,
        )
    }
}

/// Convolve with a spatial Gaussian whose 10-90% step response spans
/// `target_sr_m`, using replication padding at the edges.
pub fn smooth_label(trace: &BfsTrace, target_sr_m: f64) -> Result<BfsTrace> {
    if target_sr_m < 2.0 * trace.pitch_m {
        return Err(Error::InvalidInput(format!(
            "target SR {} m below 2x trace pitch {} m",
            target_sr_m, trace.pitch_m
        )));
    }
    let sigma = target_sr_m / GAUSSIAN_RISE_FACTOR / trace.pitch_m;
    let radius = (4.0 * sigma).ceil() as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for i in 0..=2 * radius {
        let x = i as f64 - radius as f64;
        kernel.push((-0.5 * (x / sigma).powi(2)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let n = trace.len();
    let sample = |i: i64| -> f64 {
        let idx = i.clamp(0, n as i64 - 1) as usize;
        trace.values_hz[idx]
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n as i64 {
        let mut acc = 0.0;
        for (j, k) in kernel.iter().enumerate() {
            acc += k * sample(i + j as i64 - radius as i64);
        }
        out.push(acc);
    }
    BfsTrace::new(out, trace.pitch_m)
}

/// One training pair: normalized noisy frame, smoothed normalized
/// label, and the raw truth at trace resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub n_freq: u32,
    pub width: u32,
    /// Row-major (frequency x width) normalized noisy gain.
    pub input: Vec<f32>,
    /// Normalized smoothed BFS, one entry per column.
    pub label: Vec<f32>,
    /// Raw piecewise BFS in Hz, one entry per column.
    pub truth_hz: Vec<f64>,
    pub seed: u64,
    pub pulse_width_s: f64,
    pub noise_variance: f64,
    pub config_digest: [u8; 32],
}

impl DatasetSample {
    pub fn validate(&self) -> Result<()> {
        let nf = self.n_freq as usize;
        let w = self.width as usize;
        if self.input.len() != nf * w || self.label.len() != w || self.truth_hz.len() != w {
            return Err(Error::ShapeMismatch("sample field lengths disagree".into()));
        }
        if self.label.iter().any(|l| !(0.0..=1.0).contains(&(*l as f64))) {
            return Err(Error::OutOfRange("label entries outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Everything that determines a dataset's bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub global_seed: u64,
    pub pulse_width_s: f64,
    pub sweep: SweepGrid,
    pub ranges: ProfileRanges,
    /// Per-sample noise variance drawn uniformly from this range.
    pub noise_variance: (f64, f64),
    pub target_sr_m: f64,
    pub constants: PhysicsConstants,
}

impl DatasetConfig {
    pub fn standard(n_samples: usize, global_seed: u64) -> Self {
        DatasetConfig {
            n_samples,
            global_seed,
            pulse_width_s: 40e-9,
            sweep: SweepGrid::standard(),
            ranges: ProfileRanges::default(),
            noise_variance: (0.0005, 0.005),
            target_sr_m: 0.5,
            constants: PhysicsConstants::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidInput("dataset needs at least 1 sample".into()));
        }
        self.ranges.validate()?;
        self.constants.validate()?;
        if !(self.pulse_width_s > 0.0) {
            return Err(Error::InvalidInput("pulse width must be positive".into()));
        }
        if self.noise_variance.0 < 0.0 || self.noise_variance.0 > self.noise_variance.1 {
            return Err(Error::InvalidInput("bad noise variance range".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding; any field change
    /// changes the digest.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hasher.finalize().into()
    }
}

/// Manifest written next to the sample files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u16,
    pub sample_count: usize,
    pub config_digest: String,
    pub global_seed: u64,
    pub pulse_width_s: f64,
    pub sweep: SweepGrid,
    pub ranges: ProfileRanges,
    pub target_sr_m: f64,
    pub noise_variance: (f64, f64),
    pub files: Vec<String>,
}

pub fn digest_hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generate one sample from its derived seed. Draw order: profile
/// sections, noise variance, then noise entries row-major.
pub fn generate_sample(config: &DatasetConfig, seed: u64) -> Result<DatasetSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profile = sample_fiber_profile(&mut rng, &config.ranges, &config.constants)?;
    let variance = draw(&mut rng, config.noise_variance);
    let pulse = PumpPulse::rectangular(config.pulse_width_s)?;
    let frame = simulate_bgs(&profile, &pulse, &config.sweep, &config.constants)?;
    let frame = normalize_frame(&frame)?;
    let frame = add_gaussian_noise(&frame, variance, &mut rng)?;

    let upp = config.constants.units_per_sample();
    let unit_trace = BfsTrace::new(profile.bfs().to_vec(), config.constants.unit_length)?;
    let smoothed = smooth_label(&unit_trace, config.target_sr_m)?.decimate(upp)?;
    let truth = unit_trace.decimate(upp)?;
    let width = frame.n_cols().min(smoothed.len());
    let label: Vec<f32> = smoothed.values_hz[..width]
        .iter()
        .map(|&hz| normalize_bfs(hz, config.ranges.bfs_hz).map(|x| x as f32))
        .collect::<Result<_>>()?;
    let sample = DatasetSample {
        n_freq: frame.n_freq() as u32,
        width: width as u32,
        input: frame.gain()[..frame.n_freq() * width]
            .iter()
            .map(|&g| g as f32)
            .collect(),
        label,
        truth_hz: truth.values_hz[..width].to_vec(),
        seed,
        pulse_width_s: config.pulse_width_s,
        noise_variance: variance,
        config_digest: config.digest(),
    };
    sample.validate()?;
    Ok(sample)
}

/// Per-sample seeds derived from the global seed; generation order and
/// parallel scheduling cannot change them.
pub fn derive_seeds(global_seed: u64, n: usize) -> Vec<u64> {
    let mut master = ChaCha8Rng::seed_from_u64(global_seed);
    (0..n).map(|_| master.gen()).collect()
}

/// Generate `config.n_samples` samples plus `manifest.json` under
/// `out_dir`. Identical configs produce bit-identical directories.
pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let seeds = derive_seeds(config.global_seed, config.n_samples);
    let files: Vec<String> = (0..config.n_samples)
        .map(|i| format!("sample_{i:06}.bin"))
        .collect();
    seeds
        .par_iter()
        .zip(files.par_iter())
        .try_for_each(|(&seed, name)| -> Result<()> {
            let sample = generate_sample(config, seed)?;
            write_sample(&out_dir.join(name), &sample)
        })?;
    let manifest = DatasetManifest {
        format_version: format::SAMPLE_VERSION,
        sample_count: config.n_samples,
        config_digest: digest_hex(&config.digest()),
        global_seed: config.global_seed,
        pulse_width_s: config.pulse_width_s,
        sweep: config.sweep,
        ranges: config.ranges,
        target_sr_m: config.target_sr_m,
        noise_variance: config.noise_variance,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Load a manifest and all samples it lists.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<DatasetSample>)> {
    let manifest_path = dir.join("manifest.json");
    let json = std::fs::read_to_string(&manifest_path)?;
    let manifest: DatasetManifest =
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if manifest.files.len() != manifest.sample_count {
        return Err(Error::Corrupt("manifest file list length mismatch".into()));
    }
    let samples = manifest
        .files
        .iter()
        .map(|name| read_sample(&dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}
