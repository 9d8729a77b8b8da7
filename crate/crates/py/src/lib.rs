//! Python bindings exposing the simulator, baselines, dataset
//! generator, and checkpointed network inference.

use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use botda_core::baselines;
use botda_core::cli::{build_profile, FiberSpec, SectionSpec};
use botda_core::dataset::{self, BfsTrace, DatasetConfig};
use botda_core::error::Error;
use botda_core::physics::{self, PhysicsConstants, PumpPulse, SweepGrid};
use botda_core::srnet;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A simulated Brillouin gain frame.
#[pyclass]
#[derive(Clone)]
struct BgsFrame {
    inner: physics::BgsFrame,
}

#[pymethods]
impl BgsFrame {
    #[getter]
    fn n_freq(&self) -> usize {
        self.inner.n_freq()
    }

    #[getter]
    fn n_cols(&self) -> usize {
        self.inner.n_cols()
    }

    #[getter]
    fn spatial_pitch_m(&self) -> f64 {
        self.inner.spatial_pitch
    }

    #[getter]
    fn normalized(&self) -> bool {
        self.inner.normalized
    }

    /// Sweep frequencies in Hz.
    fn frequencies(&self) -> Vec<f64> {
        self.inner.sweep.frequencies().collect()
    }

    /// Row-major (n_freq x n_cols) gain values.
    fn gain(&self) -> Vec<f64> {
        self.inner.gain().to_vec()
    }

    /// Gain spectrum at one fiber column.
    fn column(&self, col: usize) -> PyResult<Vec<f64>> {
        if col >= self.inner.n_cols() {
            return Err(PyValueError::new_err("column out of range"));
        }
        Ok(self.inner.column(col))
    }

    /// Peak-normalized copy.
    fn normalize(&self) -> PyResult<BgsFrame> {
        Ok(BgsFrame {
            inner: dataset::normalize_frame(&self.inner).map_err(err)?,
        })
    }
}

/// Simulate a uniform fiber.
#[pyfunction]
#[pyo3(signature = (length_m, bfs_hz, linewidth_hz, pulse_width_ns, gain=1.0))]
fn simulate_uniform(
    length_m: f64,
    bfs_hz: f64,
    linewidth_hz: f64,
    pulse_width_ns: f64,
    gain: f64,
) -> PyResult<BgsFrame> {
    let spec = FiberSpec::Uniform {
        length_m,
        bfs_hz,
        linewidth_hz,
        gain,
    };
    simulate_spec(&spec, pulse_width_ns)
}

/// Simulate a piecewise fiber; sections are
/// (length_m, bfs_hz, linewidth_hz, gain) tuples.
#[pyfunction]
fn simulate_sections(
    sections: Vec<(f64, f64, f64, f64)>,
    pulse_width_ns: f64,
) -> PyResult<BgsFrame> {
    let spec = FiberSpec::Sections {
        sections: sections
            .into_iter()
            .map(|(length_m, bfs_hz, linewidth_hz, gain)| SectionSpec {
                length_m,
                bfs_hz,
                linewidth_hz,
                gain,
            })
            .collect(),
    };
    simulate_spec(&spec, pulse_width_ns)
}

fn simulate_spec(spec: &FiberSpec, pulse_width_ns: f64) -> PyResult<BgsFrame> {
    let constants = PhysicsConstants::default();
    let profile = build_profile(spec, &constants).map_err(err)?;
    let pulse = PumpPulse::rectangular(pulse_width_ns * 1e-9).map_err(err)?;
    let frame = physics::simulate_bgs(&profile, &pulse, &SweepGrid::standard(), &constants)
        .map_err(err)?;
    Ok(BgsFrame { inner: frame })
}

/// Analytic long-pulse spectrum value (test oracle).
#[pyfunction]
fn steady_state_spectrum(v_hz: f64, bfs_hz: f64, linewidth_hz: f64) -> PyResult<f64> {
    physics::steady_state_spectrum(v_hz, bfs_hz, linewidth_hz).map_err(err)
}

/// 4-parameter Lorentzian fit of a spectrum on the standard grid
/// layout (start_hz, step_hz).
#[pyfunction]
fn lorentz_fit(
    spectrum: Vec<f64>,
    start_hz: f64,
    step_hz: f64,
) -> PyResult<(f64, f64, f64, f64, bool)> {
    let grid = SweepGrid::new(start_hz, step_hz, spectrum.len()).map_err(err)?;
    let fit = baselines::lorentz_fit(&spectrum, &grid).map_err(err)?;
    Ok((
        fit.params.bfs_hz,
        fit.params.fwhm_hz,
        fit.params.amplitude,
        fit.params.offset,
        fit.converged,
    ))
}

/// Column-wise Lorentzian fits; returns BFS per column in Hz.
#[pyfunction]
fn lcf_trace(frame: &BgsFrame) -> PyResult<Vec<f64>> {
    let (trace, _) = baselines::lcf_trace(&frame.inner).map_err(err)?;
    Ok(trace.values_hz)
}

/// Entry-wise differential of a long/short un-normalized frame pair.
#[pyfunction]
fn dpp_differential(frame_long: &BgsFrame, frame_short: &BgsFrame) -> PyResult<BgsFrame> {
    Ok(BgsFrame {
        inner: baselines::dpp_differential(&frame_long.inner, &frame_short.inner).map_err(err)?,
    })
}

/// Generate a training dataset directory (manifest + binary samples).
#[pyfunction]
#[pyo3(signature = (out_dir, n_samples, seed, pulse_width_ns=40.0))]
fn generate_dataset(
    out_dir: PathBuf,
    n_samples: usize,
    seed: u64,
    pulse_width_ns: f64,
) -> PyResult<usize> {
    let mut config = DatasetConfig::standard(n_samples, seed);
    config.pulse_width_s = pulse_width_ns * 1e-9;
    let manifest = dataset::generate_dataset(&config, &out_dir).map_err(err)?;
    Ok(manifest.sample_count)
}

/// A loaded retrieval-network checkpoint.
#[pyclass]
struct Model {
    checkpoint: srnet::Checkpoint,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Model> {
        Ok(Model {
            checkpoint: srnet::load_checkpoint(Path::new(&path)).map_err(err)?,
        })
    }

    #[getter]
    fn bfs_range_hz(&self) -> (f64, f64) {
        self.checkpoint.bfs_range_hz
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.checkpoint.model.parameter_count()
    }

    /// BFS trace in Hz from a (normalized or raw) frame.
    fn infer(&self, frame: &BgsFrame) -> PyResult<Vec<f64>> {
        let normalized = if frame.inner.normalized {
            frame.inner.clone()
        } else {
            dataset::normalize_frame(&frame.inner).map_err(err)?
        };
        let trace = srnet::infer_long(
            &self.checkpoint.model,
            &normalized,
            self.checkpoint.bfs_range_hz,
        )
        .map_err(err)?;
        Ok(trace.values_hz)
    }
}

/// Gaussian label smoothing to a target spatial resolution.
#[pyfunction]
fn smooth_label(values_hz: Vec<f64>, pitch_m: f64, target_sr_m: f64) -> PyResult<Vec<f64>> {
    let trace = BfsTrace::new(values_hz, pitch_m).map_err(err)?;
    Ok(dataset::smooth_label(&trace, target_sr_m).map_err(err)?.values_hz)
}

/// 10-90% transition length (m) inside [start, end) of a trace.
#[pyfunction]
fn transition_length(
    values_hz: Vec<f64>,
    pitch_m: f64,
    start: usize,
    end: usize,
) -> PyResult<f64> {
    let trace = BfsTrace::new(values_hz, pitch_m).map_err(err)?;
    baselines::transition_length(&trace, start..end).map_err(err)
}

/// SNR in dB of a peak-1 signal with the given noise variance.
#[pyfunction]
fn snr_db(variance: f64) -> f64 {
    dataset::snr_db(variance)
}

#[pymodule]
fn botda_sr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<BgsFrame>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(simulate_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_sections, m)?)?;
    m.add_function(wrap_pyfunction!(steady_state_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(lorentz_fit, m)?)?;
    m.add_function(wrap_pyfunction!(lcf_trace, m)?)?;
    m.add_function(wrap_pyfunction!(dpp_differential, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_label, m)?)?;
    m.add_function(wrap_pyfunction!(transition_length, m)?)?;
    m.add_function(wrap_pyfunction!(snr_db, m)?)?;
    Ok(())
}
