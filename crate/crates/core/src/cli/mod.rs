//! Command layer: reproducible runs over the simulation, dataset,
//! training, inference, and baseline modules, with provenance-stamped
//! machine-readable outputs.

pub mod reports;

pub use reports::{
    read_trace_csv, write_metrics, write_trace_csv, HotspotMetrics, MetricsReport, Provenance,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autodiff::{run_suite, GradCheckReport, Shape, Tensor};
use crate::baselines::{bfs_uncertainty, dpp_differential, lcf_trace, LcfReport};
use crate::dataset::{
    self, digest_hex, load_dataset, normalize_frame, read_frame, smooth_label, write_frame,
    BfsTrace, DatasetConfig, FrameMeta,
};
use crate::error::{Error, Result};
use crate::physics::{
    simulate_bgs, BgsFrame, FiberProfile, PhysicsConstants, PumpPulse, SweepGrid,
};
use crate::srnet::{
    self, build_model, infer_long, load_checkpoint, save_checkpoint, train, Checkpoint,
    ModelConfig, TrainHyper,
};

fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    digest_hex(&hasher.finalize().into())
}

/// Model scale selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn model_config(&self) -> ModelConfig {
        match self {
            Scale::Desk => ModelConfig::desk(),
            Scale::Full => ModelConfig::full(),
        }
    }
}

/// Declarative fiber description for simulation configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FiberSpec {
    Uniform {
        length_m: f64,
        bfs_hz: f64,
        linewidth_hz: f64,
        gain: f64,
    },
    Sections {
        sections: Vec<SectionSpec>,
    },
    Hotspots {
        length_m: f64,
        background_bfs_hz: f64,
        linewidth_hz: f64,
        gain: f64,
        delta_hz: f64,
        hotspots: Vec<HotspotSpec>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub length_m: f64,
    pub bfs_hz: f64,
    pub linewidth_hz: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotspotSpec {
    pub start_m: f64,
    pub length_m: f64,
}

/// Materialize a fiber spec at unit resolution.
pub fn build_profile(spec: &FiberSpec, constants: &PhysicsConstants) -> Result<FiberProfile> {
    match spec {
        FiberSpec::Uniform {
            length_m,
            bfs_hz,
            linewidth_hz,
            gain,
        } => FiberProfile::uniform(*length_m, *bfs_hz, *linewidth_hz, *gain, constants),
        FiberSpec::Sections { sections } => {
            if sections.is_empty() {
                return Err(Error::InvalidInput("no fiber sections".into()));
            }
            let mut bfs = Vec::new();
            let mut lw = Vec::new();
            let mut gain = Vec::new();
            let mut total = 0.0;
            for s in sections {
                let units = (s.length_m / constants.unit_length).round() as usize;
                for _ in 0..units {
                    bfs.push(s.bfs_hz);
                    lw.push(s.linewidth_hz);
                    gain.push(s.gain);
                }
                total += units as f64 * constants.unit_length;
            }
            FiberProfile::new(bfs, lw, gain, total, constants)
        }
        FiberSpec::Hotspots {
            length_m,
            background_bfs_hz,
            linewidth_hz,
            gain,
            delta_hz,
            hotspots,
        } => {
            let units = (length_m / constants.unit_length).round() as usize;
            let mut bfs = vec![*background_bfs_hz; units];
            for h in hotspots {
                let a = (h.start_m / constants.unit_length).round() as usize;
                let b = ((h.start_m + h.length_m) / constants.unit_length).round() as usize;
                if b > units {
                    return Err(Error::InvalidInput(format!(
                        "hotspot at {}..{} m exceeds fiber length {} m",
                        h.start_m,
                        h.start_m + h.length_m,
                        length_m
                    )));
                }
                for v in &mut bfs[a..b] {
                    *v = background_bfs_hz + delta_hz;
                }
            }
            FiberProfile::new(
                bfs,
                vec![*linewidth_hz; units],
                vec![*gain; units],
                *length_m,
                constants,
            )
        }
    }
}

/// Gaussian measurement noise on a calibrated (un-normalized) frame:
/// `variance` is defined against the 40 ns uniform-fiber plateau gain
/// of 1; averaging scales the variance down by the trace count.
pub fn add_measurement_noise(
    frame: &BgsFrame,
    variance: f64,
    averages: usize,
    rng: &mut impl Rng,
) -> Result<BgsFrame> {
    if variance < 0.0 || averages == 0 {
        return Err(Error::InvalidInput("bad noise parameters".into()));
    }
    if variance == 0.0 {
        return Ok(frame.clone());
    }
    let std = (variance / averages as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let gain = frame.gain().iter().map(|g| g + normal.sample(rng)).collect();
    BgsFrame::from_rows(
        gain,
        frame.n_freq(),
        frame.n_cols(),
        frame.sweep,
        frame.spatial_pitch,
        frame.normalized,
    )
}

/// `simulate` command configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub fiber: FiberSpec,
    pub pulse_width_ns: f64,
    #[serde(default = "SweepGrid::standard")]
    pub sweep: SweepGrid,
    #[serde(default)]
    pub noise_variance: Option<f64>,
    #[serde(default = "default_averages")]
    pub averages: usize,
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub constants: Option<PhysicsConstants>,
}

fn default_averages() -> usize {
    1
}

/// Simulate one frame, write `frame.bin` (and optional spectra CSV).
pub fn cmd_simulate(
    config: &SimulateConfig,
    seed: u64,
    out_dir: &Path,
    spectra_csv: bool,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let constants = config.constants.unwrap_or_default();
    let profile = build_profile(&config.fiber, &constants)?;
    let pulse = PumpPulse::rectangular(config.pulse_width_ns * 1e-9)?;
    let mut frame = simulate_bgs(&profile, &pulse, &config.sweep, &constants)?;
    if let Some(var) = config.noise_variance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        frame = add_measurement_noise(&frame, var, config.averages, &mut rng)?;
    }
    if config.normalize {
        frame = normalize_frame(&frame)?;
    }
    let digest = digest_of(config);
    let meta = FrameMeta {
        pulse_width_s: config.pulse_width_ns * 1e-9,
        seed,
        config_digest: hex_to_digest(&digest),
    };
    let path = out_dir.join("frame.bin");
    write_frame(&path, &frame, &meta)?;
    if spectra_csv {
        let mut csv = String::new();
        csv.push_str(&format!("# config_digest={digest} seed={seed}\n"));
        csv.push_str("freq_hz");
        for col in 0..frame.n_cols() {
            csv.push_str(&format!(",z_{:.1}m", col as f64 * frame.spatial_pitch));
        }
        csv.push('\n');
        for f in 0..frame.n_freq() {
            csv.push_str(&format!("{:.0}", frame.sweep.frequency(f)));
            for v in frame.row(f) {
                csv.push_str(&format!(",{v:.8e}"));
            }
            csv.push('\n');
        }
        std::fs::write(out_dir.join("spectra.csv"), csv)?;
    }
    Ok(path)
}

fn hex_to_digest(hex: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, chunk) in hex.as_bytes().chunks(2).take(32).enumerate() {
        let s = std::str::from_utf8(chunk).unwrap_or("00");
        out[i] = u8::from_str_radix(s, 16).unwrap_or(0);
    }
    out
}

/// Hotspot fixture: a synthetic replica of the heated-fiber
/// experiment, simulated at several pulse widths with averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotFixtureConfig {
    pub length_m: f64,
    pub background_bfs_hz: f64,
    pub linewidth_hz: f64,
    pub gain: f64,
    /// BFS contrast of the heated sections.
    pub delta_hz: f64,
    pub hotspots: Vec<HotspotSpec>,
    pub pulse_widths_ns: Vec<f64>,
    pub noise_variance: f64,
    pub averages: usize,
    pub target_sr_m: f64,
}

impl Default for HotspotFixtureConfig {
    fn default() -> Self {
        HotspotFixtureConfig {
            length_m: 54.0,
            background_bfs_hz: 10.83e9,
            linewidth_hz: 30e6,
            gain: 1.0,
            delta_hz: 20e6,
            hotspots: vec![
                HotspotSpec {
                    start_m: 28.0,
                    length_m: 3.3,
                },
                HotspotSpec {
                    start_m: 38.0,
                    length_m: 1.0,
                },
                HotspotSpec {
                    start_m: 46.0,
                    length_m: 0.5,
                },
            ],
            pulse_widths_ns: vec![20.0, 30.0, 40.0, 45.0, 50.0],
            noise_variance: 1e-3,
            averages: 64,
            target_sr_m: 0.5,
        }
    }
}

/// Fixture description persisted next to the frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub config: HotspotFixtureConfig,
    pub seed: u64,
    pub config_digest: String,
}

impl FixtureMeta {
    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("fixture meta: {e}")))
    }
}

pub fn fixture_spec(config: &HotspotFixtureConfig) -> FiberSpec {
    FiberSpec::Hotspots {
        length_m: config.length_m,
        background_bfs_hz: config.background_bfs_hz,
        linewidth_hz: config.linewidth_hz,
        gain: config.gain,
        delta_hz: config.delta_hz,
        hotspots: config.hotspots.clone(),
    }
}

/// Raw piecewise truth and the SR-limited reference (truth smoothed to
/// the fixture's target SR), both at trace resolution.
pub fn fixture_truth(
    config: &HotspotFixtureConfig,
    constants: &PhysicsConstants,
) -> Result<(BfsTrace, BfsTrace)> {
    let profile = build_profile(&fixture_spec(config), constants)?;
    let unit_trace = BfsTrace::new(profile.bfs().to_vec(), constants.unit_length)?;
    let upp = constants.units_per_sample();
    let truth = unit_trace.decimate(upp)?;
    let reference = smooth_label(&unit_trace, config.target_sr_m)?.decimate(upp)?;
    Ok((truth, reference))
}

/// Simulate the fixture at every requested pulse width. Writes one
/// clean and one noisy (averaged) un-normalized frame per width plus
/// `truth.csv`, `reference.csv`, and `fixture.json`.
pub fn cmd_hotspot_fixture(
    config: &HotspotFixtureConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<FixtureMeta> {
    std::fs::create_dir_all(out_dir)?;
    let constants = PhysicsConstants::default();
    let profile = build_profile(&fixture_spec(config), &constants)?;
    let sweep = SweepGrid::standard();
    let digest = digest_of(config);
    let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
    for &width_ns in &config.pulse_widths_ns {
        let pulse = PumpPulse::rectangular(width_ns * 1e-9)?;
        let frame = simulate_bgs(&profile, &pulse, &sweep, &constants)?;
        let meta = FrameMeta {
            pulse_width_s: width_ns * 1e-9,
            seed,
            config_digest: hex_to_digest(&digest),
        };
        write_frame(
            &out_dir.join(format!("frame_{width_ns:.0}ns_clean.bin")),
            &frame,
            &meta,
        )?;
        let noise_seed: u64 = seed_rng.gen();
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noisy = add_measurement_noise(&frame, config.noise_variance, config.averages, &mut rng)?;
        write_frame(
            &out_dir.join(format!("frame_{width_ns:.0}ns_noisy.bin")),
            &noisy,
            &meta,
        )?;
    }
    let (truth, reference) = fixture_truth(config, &constants)?;
    let prov = Provenance {
        config_digest: digest.clone(),
        seed,
        method: "truth".into(),
        pulse_width_ns: 0.0,
    };
    write_trace_csv(&out_dir.join("truth.csv"), &truth, &prov)?;
    let prov_ref = Provenance {
        method: "sr_reference".into(),
        ..prov
    };
    write_trace_csv(&out_dir.join("reference.csv"), &reference, &prov_ref)?;
    let meta = FixtureMeta {
        config: config.clone(),
        seed,
        config_digest: digest,
    };
    std::fs::write(
        out_dir.join("fixture.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    Ok(meta)
}

/// `lcf` command: column-wise Lorentzian fits of a stored frame.
pub fn cmd_lcf(frame_path: &Path, out_dir: &Path) -> Result<(BfsTrace, LcfReport)> {
    std::fs::create_dir_all(out_dir)?;
    let (frame, meta) = read_frame(frame_path)?;
    let (trace, report) = lcf_trace(&frame)?;
    let prov = Provenance {
        config_digest: digest_hex(&meta.config_digest),
        seed: meta.seed,
        method: "lcf".into(),
        pulse_width_ns: meta.pulse_width_s * 1e9,
    };
    write_trace_csv(&out_dir.join("lcf_trace.csv"), &trace, &prov)?;
    let summary = serde_json::json!({
        "method": "lcf",
        "failed_columns": report.failed_columns,
        "total_columns": report.total_columns,
        "config_digest": prov.config_digest,
        "seed": prov.seed,
    });
    std::fs::write(
        out_dir.join("lcf_report.json"),
        serde_json::to_string_pretty(&summary).expect("serializes"),
    )?;
    Ok((trace, report))
}

/// Differential position offset: the differential window of a
/// long/short pair sits `(T_short + ΔT/2)·V_g/2` behind the detector
/// position, so the trace is advanced by that many samples.
pub fn dpp_shift_samples(
    long_width_s: f64,
    short_width_s: f64,
    constants: &PhysicsConstants,
) -> usize {
    let offset_m =
        (short_width_s + (long_width_s - short_width_s) / 2.0) * constants.group_velocity / 2.0;
    (offset_m / constants.spatial_pitch()).round() as usize
}

/// DPP reconstruction: subtract, fit per column, re-align to fiber
/// coordinates. The trace tail past the last full window repeats the
/// final value.
pub fn dpp_trace(
    frame_long: &BgsFrame,
    long_width_s: f64,
    frame_short: &BgsFrame,
    short_width_s: f64,
    constants: &PhysicsConstants,
) -> Result<(BgsFrame, BfsTrace, LcfReport)> {
    if long_width_s <= short_width_s {
        return Err(Error::InvalidInput(
            "long pulse must exceed short pulse".into(),
        ));
    }
    let diff = dpp_differential(frame_long, frame_short)?;
    let (fitted, report) = lcf_trace(&diff)?;
    let shift = dpp_shift_samples(long_width_s, short_width_s, constants);
    let n = fitted.len();
    let values: Vec<f64> = (0..n)
        .map(|k| fitted.values_hz[(k + shift).min(n - 1)])
        .collect();
    Ok((diff, BfsTrace::new(values, fitted.pitch_m)?, report))
}

/// `dpp` command over two stored frames.
pub fn cmd_dpp(
    long_path: &Path,
    short_path: &Path,
    out_dir: &Path,
) -> Result<(BfsTrace, LcfReport)> {
    std::fs::create_dir_all(out_dir)?;
    let (frame_long, meta_long) = read_frame(long_path)?;
    let (frame_short, meta_short) = read_frame(short_path)?;
    if meta_long.pulse_width_s <= meta_short.pulse_width_s {
        return Err(Error::InvalidInput(
            "long frame pulse width must exceed short frame pulse width".into(),
        ));
    }
    let constants = PhysicsConstants::default();
    let (diff, trace, report) = dpp_trace(
        &frame_long,
        meta_long.pulse_width_s,
        &frame_short,
        meta_short.pulse_width_s,
        &constants,
    )?;
    write_frame(&out_dir.join("dpp_frame.bin"), &diff, &meta_long)?;
    let prov = Provenance {
        config_digest: digest_hex(&meta_long.config_digest),
        seed: meta_long.seed,
        method: "dpp".into(),
        pulse_width_ns: (meta_long.pulse_width_s - meta_short.pulse_width_s) * 1e9,
    };
    write_trace_csv(&out_dir.join("dpp_trace.csv"), &trace, &prov)?;
    Ok((trace, report))
}

/// `gen-dataset` command: delegates to the dataset generator.
pub fn cmd_gen_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<()> {
    dataset::generate_dataset(config, out_dir)?;
    Ok(())
}

/// `train` command configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scale: Scale,
    /// Samples held out for validation (taken from the end).
    pub val_count: usize,
    pub hyper: TrainHyper,
    pub init_seed: u64,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            scale: Scale::Desk,
            val_count: 200,
            hyper: TrainHyper::desk(seed),
            init_seed: seed ^ 0x5eed,
        }
    }
}

/// Train from a generated dataset directory; writes `checkpoint.bin`
/// and `history.csv`.
pub fn cmd_train(config: &TrainConfig, data_dir: &Path, out_dir: &Path) -> Result<Checkpoint> {
    std::fs::create_dir_all(out_dir)?;
    let (manifest, samples) = load_dataset(data_dir)?;
    if samples.len() <= config.val_count {
        return Err(Error::InvalidInput(format!(
            "dataset has {} samples, validation needs {}",
            samples.len(),
            config.val_count
        )));
    }
    let split = samples.len() - config.val_count;
    let (train_set, val_set) = samples.split_at(split);
    let mut model = build_model(&config.scale.model_config(), config.init_seed)?;
    let history = train(&mut model, train_set, val_set, &config.hyper)?;
    let checkpoint = Checkpoint::new(
        model,
        manifest.ranges.bfs_hz,
        config.hyper.seed,
        history.clone(),
        None,
    );
    save_checkpoint(&out_dir.join("checkpoint.bin"), &checkpoint)?;
    std::fs::write(out_dir.join("history.csv"), srnet::history_csv(&history))?;
    Ok(checkpoint)
}

/// `infer` command: checkpointed model over a stored frame
/// (normalizing it if required), emitting a BFS trace CSV.
pub fn cmd_infer(checkpoint_path: &Path, frame_path: &Path, out_dir: &Path) -> Result<BfsTrace> {
    std::fs::create_dir_all(out_dir)?;
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let (frame, meta) = read_frame(frame_path)?;
    let frame = if frame.normalized {
        frame
    } else {
        normalize_frame(&frame)?
    };
    let trace = infer_long(&checkpoint.model, &frame, checkpoint.bfs_range_hz)?;
    let prov = Provenance {
        config_digest: digest_hex(&meta.config_digest),
        seed: meta.seed,
        method: "cnn".into(),
        pulse_width_ns: meta.pulse_width_s * 1e9,
    };
    write_trace_csv(&out_dir.join("cnn_trace.csv"), &trace, &prov)?;
    Ok(trace)
}

/// Evaluation over one or more repeated prediction traces.
pub fn evaluate(
    preds: &[BfsTrace],
    truth: &BfsTrace,
    reference: Option<&BfsTrace>,
    fixture: Option<&FixtureMeta>,
    bfs_range_hz: Option<(f64, f64)>,
    mask_margin: usize,
    prov: Provenance,
) -> Result<(MetricsReport, Option<crate::baselines::UncertaintyReport>)> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("no prediction traces".into()));
    }
    for p in preds {
        if p.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "prediction length {} vs truth {}",
                p.len(),
                truth.len()
            )));
        }
    }
    if let Some(r) = reference {
        if r.len() != truth.len() {
            return Err(Error::ShapeMismatch("reference length mismatch".into()));
        }
    }
    let started = Instant::now();
    let pred = &preds[0];
    let n = truth.len();
    if n <= 2 * mask_margin {
        return Err(Error::InvalidInput("trace shorter than mask".into()));
    }
    let span = mask_margin..n - mask_margin;
    let mut sq = 0.0f64;
    for k in span.clone() {
        sq += (pred.values_hz[k] - truth.values_hz[k]).powi(2);
    }
    let rmse_mhz = (sq / span.len() as f64).sqrt() / 1e6;
    let masked_mse_normalized = bfs_range_hz.map(|range| {
        let s = range.1 - range.0;
        let mut acc = 0.0;
        for k in span.clone() {
            acc += ((pred.values_hz[k] - truth.values_hz[k]) / s).powi(2);
        }
        acc / span.len() as f64
    });
    let uncertainty = if preds.len() >= 2 {
        Some(bfs_uncertainty(preds)?)
    } else {
        None
    };
    let mut hotspots = Vec::new();
    if let Some(meta) = fixture {
        for h in &meta.config.hotspots {
            let center_m = h.start_m + h.length_m / 2.0;
            let col = (center_m / truth.pitch_m).round() as usize;
            if col >= n {
                continue;
            }
            let raw = (pred.values_hz[col] - truth.values_hz[col]).abs() / 1e6;
            let sr_ref = reference
                .map(|r| (pred.values_hz[col] - r.values_hz[col]).abs() / 1e6)
                .unwrap_or(raw);
            let rise_start = ((h.start_m - 1.5) / truth.pitch_m).floor().max(0.0) as usize;
            let rise_end = (((h.start_m + h.length_m / 2.0) / truth.pitch_m).ceil() as usize)
                .min(n - 1);
            let transition_m =
                crate::baselines::transition_length(pred, rise_start..rise_end + 1).ok();
            hotspots.push(HotspotMetrics {
                center_m,
                length_m: h.length_m,
                raw_error_mhz: raw,
                sr_reference_error_mhz: sr_ref,
                transition_m,
            });
        }
    }
    let report = MetricsReport {
        provenance: prov,
        rmse_mhz,
        masked_mse_normalized,
        mean_uncertainty_mhz: uncertainty.as_ref().map(|u| u.mean_std_hz / 1e6),
        hotspots,
        repeats: preds.len(),
        timing_s: started.elapsed().as_secs_f64(),
    };
    Ok((report, uncertainty))
}

/// `eval` command over trace CSV files.
#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    pred_paths: &[PathBuf],
    truth_path: &Path,
    reference_path: Option<&Path>,
    fixture_path: Option<&Path>,
    bfs_range_hz: Option<(f64, f64)>,
    mask_margin: usize,
    out_dir: &Path,
) -> Result<MetricsReport> {
    std::fs::create_dir_all(out_dir)?;
    let preds: Vec<BfsTrace> = pred_paths
        .iter()
        .map(|p| read_trace_csv(p))
        .collect::<Result<_>>()?;
    let truth = read_trace_csv(truth_path)?;
    let reference = reference_path.map(read_trace_csv).transpose()?;
    let fixture = fixture_path.map(FixtureMeta::load).transpose()?;
    let prov = Provenance {
        config_digest: fixture
            .as_ref()
            .map(|f| f.config_digest.clone())
            .unwrap_or_else(|| "none".into()),
        seed: fixture.as_ref().map(|f| f.seed).unwrap_or(0),
        method: "eval".into(),
        pulse_width_ns: 0.0,
    };
    let (report, uncertainty) = evaluate(
        &preds,
        &truth,
        reference.as_ref(),
        fixture.as_ref(),
        bfs_range_hz,
        mask_margin,
        prov,
    )?;
    write_metrics(
        &out_dir.join("metrics.json"),
        &out_dir.join("metrics.csv"),
        &report,
        &preds[0],
        &truth,
        uncertainty.as_ref(),
    )?;
    Ok(report)
}

/// Throughput comparison: batched network inference vs column-wise
/// iterative fits on identical frames. Absolute numbers are
/// hardware-specific; the ratio is the informative output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub frame_width: usize,
    pub cnn_seconds: f64,
    pub cnn_frames_per_s: f64,
    pub lcf_seconds: f64,
    pub lcf_frames_per_s: f64,
    /// > 1 means the network is faster.
    pub cnn_speedup_over_lcf: f64,
    pub seed: u64,
}

/// `bench` command: times both methods on the same simulated frames.
pub fn cmd_bench(
    checkpoint_path: &Path,
    n_frames: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<BenchReport> {
    std::fs::create_dir_all(out_dir)?;
    if n_frames == 0 {
        return Err(Error::InvalidInput("need at least one frame".into()));
    }
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let config = DatasetConfig::standard(n_frames, seed);
    let seeds = dataset::derive_seeds(seed, n_frames);
    let samples: Vec<_> = seeds
        .iter()
        .map(|&s| dataset::generate_sample(&config, s))
        .collect::<Result<_>>()?;
    // network: batched eval forwards
    let t0 = Instant::now();
    for sample in &samples {
        let x = Tensor::from_vec(
            Shape([1, 1, sample.n_freq as usize, sample.width as usize]),
            sample.input.clone(),
        )?;
        let _ = checkpoint.model.forward_eval(&x)?;
    }
    let cnn_seconds = t0.elapsed().as_secs_f64();
    // classical fits on the same frames
    let t1 = Instant::now();
    for sample in &samples {
        let gain: Vec<f64> = sample.input.iter().map(|&v| v as f64).collect();
        let frame = BgsFrame::from_rows(
            gain,
            sample.n_freq as usize,
            sample.width as usize,
            config.sweep,
            config.constants.spatial_pitch(),
            true,
        )?;
        let _ = lcf_trace(&frame)?;
    }
    let lcf_seconds = t1.elapsed().as_secs_f64();
    let report = BenchReport {
        frames: n_frames,
        frame_width: samples[0].width as usize,
        cnn_seconds,
        cnn_frames_per_s: n_frames as f64 / cnn_seconds,
        lcf_seconds,
        lcf_frames_per_s: n_frames as f64 / lcf_seconds,
        cnn_speedup_over_lcf: lcf_seconds / cnn_seconds,
        seed,
    };
    std::fs::write(
        out_dir.join("bench.json"),
        serde_json::to_string_pretty(&report).expect("serializes"),
    )?;
    Ok(report)
}

/// `grad-check` command: the full finite-difference suite.
pub fn cmd_grad_check(seeds: usize, tolerance: f64, out_dir: &Path) -> Result<Vec<GradCheckReport>> {
    std::fs::create_dir_all(out_dir)?;
    let reports = run_suite(seeds, tolerance)?;
    let json: Vec<_> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "layer": r.layer,
                "seeds": r.seeds,
                "max_rel_err": r.max_rel_err,
                "tolerance": r.tolerance,
                "pass": r.pass,
            })
        })
        .collect();
    std::fs::write(
        out_dir.join("gradcheck.json"),
        serde_json::to_string_pretty(&json).expect("serializes"),
    )?;
    if reports.iter().any(|r| !r.pass) {
        return Err(Error::Numeric("gradient checks failed".into()));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_is_deterministic_and_stamped() {
        let dir = tempfile::tempdir().unwrap();
        let config = SimulateConfig {
            fiber: FiberSpec::Uniform {
                length_m: 6.0,
                bfs_hz: 10.85e9,
                linewidth_hz: 30e6,
                gain: 1.0,
            },
            pulse_width_ns: 40.0,
            sweep: SweepGrid::standard(),
            noise_variance: Some(1e-3),
            averages: 4,
            normalize: false,
            constants: None,
        };
        let p1 = cmd_simulate(&config, 9, &dir.path().join("a"), false).unwrap();
        let p2 = cmd_simulate(&config, 9, &dir.path().join("b"), false).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let (_, meta) = read_frame(&p1).unwrap();
        assert_eq!(meta.seed, 9);
        assert_eq!(meta.pulse_width_s, 40e-9);
    }

    #[test]
    fn simulate_rejects_uncovered_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let config = SimulateConfig {
            fiber: FiberSpec::Uniform {
                length_m: 6.0,
                bfs_hz: 11.2e9,
                linewidth_hz: 30e6,
                gain: 1.0,
            },
            pulse_width_ns: 40.0,
            sweep: SweepGrid::standard(),
            noise_variance: None,
            averages: 1,
            normalize: false,
            constants: None,
        };
        assert!(cmd_simulate(&config, 1, dir.path(), false).is_err());
    }

    #[test]
    fn hotspot_fixture_rejects_overlong_hotspot() {
        let mut config = HotspotFixtureConfig::default();
        config.hotspots.push(HotspotSpec {
            start_m: 53.8,
            length_m: 1.0,
        });
        let spec = fixture_spec(&config);
        assert!(build_profile(&spec, &PhysicsConstants::default()).is_err());
    }

    #[test]
    fn eval_self_comparison_is_all_zero() {
        let trace = BfsTrace::new(
            (0..200).map(|i| 10.83e9 + (i % 7) as f64 * 1e6).collect(),
            0.1,
        )
        .unwrap();
        let prov = Provenance {
            config_digest: "x".into(),
            seed: 0,
            method: "self".into(),
            pulse_width_ns: 40.0,
        };
        let (report, _) = evaluate(
            &[trace.clone()],
            &trace,
            None,
            None,
            Some((10.81e9, 10.89e9)),
            20,
            prov,
        )
        .unwrap();
        assert_eq!(report.rmse_mhz, 0.0);
        assert_eq!(report.masked_mse_normalized, Some(0.0));
    }

    #[test]
    fn dpp_shift_for_45_40_pair_is_42_or_43_samples() {
        let shift = dpp_shift_samples(45e-9, 40e-9, &PhysicsConstants::default());
        // (40 + 2.5) ns -> 4.25 m -> 42.5 samples, rounded
        assert!(shift == 42 || shift == 43, "{shift}");
    }
}
