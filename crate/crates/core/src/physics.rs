//! Transient Brillouin gain simulation.
//!
//! A pump pulse of width `T` travelling at `V_g` interacts with the
//! counter-propagating probe. The probe sample mapped to position `z`
//! accumulates gain from short fiber units behind `z`; the unit reached
//! `N` steps back was exposed to the pump for `(2N-1)·Δz/V_g`, so its
//! acoustic field is only partially built up. Each unit contributes the
//! real part of
//!
//! ```text
//! gain_scale · Δz · (1 - exp(-Γ·τ)) / (2Γ),   Γ = iπ(v_B² - v² - i·v·Δv_B) / v
//! ```
//!
//! gated to the pump window `τ ∈ [0, T)`. Summing the units inside the
//! window reproduces the pulse-width-limited spatial resolution of
//! `T·V_g/2` and the spectral broadening of short pulses.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pulse width used to pin the global gain calibration.
pub const CALIBRATION_PULSE_S: f64 = 40e-9;
/// Intrinsic linewidth used to pin the global gain calibration.
pub const CALIBRATION_LINEWIDTH_HZ: f64 = 30e6;

/// Fixed simulation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConstants {
    /// Group velocity in the fiber, m/s.
    pub group_velocity: f64,
    /// Length of one short fiber unit Δz, m.
    pub unit_length: f64,
    /// Acquisition rate, samples/s.
    pub sample_rate: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        PhysicsConstants {
            group_velocity: 2.0e8,
            unit_length: 0.01,
            sample_rate: 1e9,
        }
    }
}

impl PhysicsConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.group_velocity > 0.0 && self.unit_length > 0.0 && self.sample_rate > 0.0) {
            return Err(Error::InvalidInput(
                "physics constants must be strictly positive".into(),
            ));
        }
        let ratio = self.spatial_pitch() / self.unit_length;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::InvalidInput(format!(
                "spatial pitch {} m must be an integer multiple of unit length {} m",
                self.spatial_pitch(),
                self.unit_length
            )));
        }
        Ok(())
    }

    /// Distance between consecutive trace samples: V_g / (2·rate).
    pub fn spatial_pitch(&self) -> f64 {
        self.group_velocity / (2.0 * self.sample_rate)
    }

    /// Fiber units per trace sample.
    pub fn units_per_sample(&self) -> usize {
        (self.spatial_pitch() / self.unit_length).round() as usize
    }

    /// One-way transit time of a single unit, s.
    pub fn unit_transit(&self) -> f64 {
        self.unit_length / self.group_velocity
    }

    /// Global gain calibration: a uniform fiber with `gain_scale = 1`,
    /// the 40 ns reference pulse and 30 MHz linewidth has an
    /// un-normalized plateau peak of exactly 1.
    pub fn calibration_constant(&self) -> f64 {
        let gamma = Complex64::new(std::f64::consts::PI * CALIBRATION_LINEWIDTH_HZ, 0.0);
        let delta = self.unit_transit();
        let n_max = gate_unit_count(CALIBRATION_PULSE_S, self.group_velocity, self.unit_length);
        let mut acc = 0.0;
        for n in 1..=n_max {
            let tau = (2 * n - 1) as f64 * delta;
            acc += (((1.0 - (-gamma * tau).exp()) / (2.0 * gamma)).re) * self.unit_length;
        }
        1.0 / acc
    }
}

/// Largest unit count `N` whose exposure `(2N-1)·Δz/V_g` is inside the
/// pump window `[0, T)`.
fn gate_unit_count(pulse_width_s: f64, group_velocity: f64, unit_length: f64) -> usize {
    let units_in_pulse = pulse_width_s * group_velocity / unit_length;
    let bound = ((units_in_pulse + 1.0) / 2.0).ceil() - 1.0;
    if bound < 1.0 {
        0
    } else {
        bound as usize
    }
}

/// Piecewise ground-truth fiber state at unit resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberProfile {
    bfs: Vec<f64>,
    linewidth: Vec<f64>,
    gain_scale: Vec<f64>,
    length_m: f64,
}

impl FiberProfile {
    pub fn new(
        bfs: Vec<f64>,
        linewidth: Vec<f64>,
        gain_scale: Vec<f64>,
        length_m: f64,
        constants: &PhysicsConstants,
    ) -> Result<Self> {
        constants.validate()?;
        let expect = (length_m / constants.unit_length).round() as usize;
        if expect == 0 {
            return Err(Error::InvalidInput("fiber has zero length".into()));
        }
        if bfs.len() != expect || linewidth.len() != expect || gain_scale.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "profile arrays must have {} units for {} m",
                expect, length_m
            )));
        }
        if bfs.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("bfs must be positive".into()));
        }
        if linewidth.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("linewidth must be positive".into()));
        }
        if gain_scale.iter().any(|g| !(*g > 0.0 && *g <= 1.0)) {
            return Err(Error::InvalidInput("gain_scale must lie in (0, 1]".into()));
        }
        Ok(FiberProfile {
            bfs,
            linewidth,
            gain_scale,
            length_m,
        })
    }

    /// Uniform fiber helper.
    pub fn uniform(
        length_m: f64,
        bfs_hz: f64,
        linewidth_hz: f64,
        gain: f64,
        constants: &PhysicsConstants,
    ) -> Result<Self> {
        let n = (length_m / constants.unit_length).round() as usize;
        FiberProfile::new(
            vec![bfs_hz; n],
            vec![linewidth_hz; n],
            vec![gain; n],
            length_m,
            constants,
        )
    }

    pub fn unit_count(&self) -> usize {
        self.bfs.len()
    }

    pub fn length_m(&self) -> f64 {
        self.length_m
    }

    pub fn bfs(&self) -> &[f64] {
        &self.bfs
    }

    pub fn linewidth(&self) -> &[f64] {
        &self.linewidth
    }

    pub fn gain_scale(&self) -> &[f64] {
        &self.gain_scale
    }

    pub fn bfs_min(&self) -> f64 {
        self.bfs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn bfs_max(&self) -> f64 {
        self.bfs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Maximal runs of units sharing (bfs, linewidth, gain_scale).
    /// Returned as half-open unit ranges.
    fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..self.unit_count() {
            if self.bfs[i] != self.bfs[start]
                || self.linewidth[i] != self.linewidth[start]
                || self.gain_scale[i] != self.gain_scale[start]
            {
                runs.push((start, i));
                start = i;
            }
        }
        runs.push((start, self.unit_count()));
        runs
    }
}

/// Rectangular pump pulse of width `T` (unit amplitude on `[0, T)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpPulse {
    pub width_s: f64,
    pub shape: PulseShape,
}

/// Pulse shape plug-in point; only the ideal rectangle is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseShape {
    Rectangular,
}

impl PumpPulse {
    pub fn rectangular(width_s: f64) -> Result<Self> {
        if !(width_s > 0.0) {
            return Err(Error::InvalidInput("pulse width must be positive".into()));
        }
        Ok(PumpPulse {
            width_s,
            shape: PulseShape::Rectangular,
        })
    }

    /// Spatial pulse length l = T·V_g, m.
    pub fn length_m(&self, constants: &PhysicsConstants) -> f64 {
        self.width_s * constants.group_velocity
    }
}

/// Probe frequency sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub start_hz: f64,
    pub step_hz: f64,
    pub count: usize,
}

impl SweepGrid {
    pub fn new(start_hz: f64, step_hz: f64, count: usize) -> Result<Self> {
        if !(step_hz > 0.0) {
            return Err(Error::InvalidInput("sweep step must be positive".into()));
        }
        if count < 2 {
            return Err(Error::InvalidInput("sweep needs at least 2 points".into()));
        }
        Ok(SweepGrid {
            start_hz,
            step_hz,
            count,
        })
    }

    /// The 10.78-10.92 GHz grid in 2 MHz steps (71 frequencies).
    pub fn standard() -> Self {
        SweepGrid {
            start_hz: 10.78e9,
            step_hz: 2e6,
            count: 71,
        }
    }

    pub fn frequency(&self, index: usize) -> f64 {
        self.start_hz + self.step_hz * index as f64
    }

    pub fn end_hz(&self) -> f64 {
        self.frequency(self.count - 1)
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.frequency(i))
    }

    pub fn covers(&self, lo_hz: f64, hi_hz: f64) -> bool {
        self.start_hz <= lo_hz && hi_hz <= self.end_hz()
    }
}

/// 2-D gain matrix: one row per sweep frequency, one column per trace
/// sample along the fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct BgsFrame {
    gain: Vec<f64>,
    n_freq: usize,
    n_cols: usize,
    pub sweep: SweepGrid,
    pub spatial_pitch: f64,
    pub normalized: bool,
}

impl BgsFrame {
    pub fn from_rows(
        gain: Vec<f64>,
        n_freq: usize,
        n_cols: usize,
        sweep: SweepGrid,
        spatial_pitch: f64,
        normalized: bool,
    ) -> Result<Self> {
        if gain.len() != n_freq * n_cols {
            return Err(Error::ShapeMismatch(format!(
                "gain has {} entries, expected {}x{}",
                gain.len(),
                n_freq,
                n_cols
            )));
        }
        if gain.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("frame contains non-finite gain".into()));
        }
        Ok(BgsFrame {
            gain,
            n_freq,
            n_cols,
            sweep,
            spatial_pitch,
            normalized,
        })
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    pub fn gain_mut(&mut self) -> &mut [f64] {
        &mut self.gain
    }

    pub fn row(&self, freq_index: usize) -> &[f64] {
        &self.gain[freq_index * self.n_cols..(freq_index + 1) * self.n_cols]
    }

    /// Spectrum at one fiber column (allocates).
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_freq)
            .map(|f| self.gain[f * self.n_cols + col])
            .collect()
    }

    pub fn max_gain(&self) -> f64 {
        self.gain.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Complex detuning parameter Γ_A* = iπ(v_B² - v² - i·v·Δv_B)/v.
///
/// On resonance the real part is π·Δv_B, the inverse of the acoustic
/// lifetime.
pub fn detuning_parameter(v_hz: f64, bfs_hz: f64, linewidth_hz: f64) -> Result<Complex64> {
    if !(v_hz > 0.0 && bfs_hz > 0.0 && linewidth_hz > 0.0) {
        return Err(Error::InvalidInput(
            "detuning arguments must be positive".into(),
        ));
    }
    Ok(gamma_unchecked(v_hz, bfs_hz, linewidth_hz))
}

#[inline]
fn gamma_unchecked(v: f64, vb: f64, dv: f64) -> Complex64 {
    let re = std::f64::consts::PI * dv;
    let im = std::f64::consts::PI * (vb * vb - v * v) / v;
    Complex64::new(re, im)
}

/// Gain of a single fiber unit at absolute time `t`, for sweep
/// frequency `v`. Exactly zero outside the pump window.
pub fn unit_gain(
    unit_index: usize,
    t_s: f64,
    v_hz: f64,
    profile: &FiberProfile,
    pulse: &PumpPulse,
    constants: &PhysicsConstants,
) -> Result<f64> {
    if unit_index >= profile.unit_count() {
        return Err(Error::OutOfRange(format!(
            "unit index {} >= {}",
            unit_index,
            profile.unit_count()
        )));
    }
    let arrival = (unit_index as f64 + 1.0) * constants.unit_length / constants.group_velocity;
    let elapsed = t_s - arrival;
    if elapsed < 0.0 || elapsed >= pulse.width_s {
        return Ok(0.0);
    }
    let gamma = detuning_parameter(v_hz, profile.bfs[unit_index], profile.linewidth[unit_index])?;
    let build = (1.0 - (-gamma * elapsed).exp()) / (2.0 * gamma);
    Ok(profile.gain_scale[unit_index]
        * constants.unit_length
        * constants.calibration_constant()
        * build.re)
}

/// Time series of gain at one sweep frequency, one sample per
/// acquisition tick over the fiber round trip. Sample `k` maps to
/// position `z = k · spatial_pitch` and sums the unit contributions
/// inside the pump window behind `z`.
pub fn trace_at_frequency(
    profile: &FiberProfile,
    pulse: &PumpPulse,
    v_hz: f64,
    constants: &PhysicsConstants,
) -> Result<Vec<f64>> {
    constants.validate()?;
    if profile.unit_count() == 0 {
        return Err(Error::InvalidInput("empty fiber profile".into()));
    }
    if !(v_hz > 0.0) {
        return Err(Error::InvalidInput("sweep frequency must be positive".into()));
    }
    let calibration = constants.calibration_constant();
    let runs = profile.runs();
    Ok(trace_with_runs(
        profile, pulse, v_hz, constants, &runs, calibration,
    ))
}

/// Inner trace evaluation. Exposures within one run of identical fiber
/// parameters form a geometric series in exp(-2Γ·Δz/V_g), so each run
/// in the window is summed in closed form.
fn trace_with_runs(
    profile: &FiberProfile,
    pulse: &PumpPulse,
    v_hz: f64,
    constants: &PhysicsConstants,
    runs: &[(usize, usize)],
    calibration: f64,
) -> Vec<f64> {
    let upp = constants.units_per_sample();
    let n_cols = (profile.length_m() / constants.spatial_pitch()).round() as usize;
    let delta = constants.unit_transit();
    let n_gate = gate_unit_count(pulse.width_s, constants.group_velocity, constants.unit_length);
    let dz = constants.unit_length;

    struct RunCtx {
        start: usize,
        end: usize,
        gain: f64,
        inv_two_gamma: Complex64,
        two_delta_gamma: Complex64,
        gamma: Complex64,
    }
    let ctx: Vec<RunCtx> = runs
        .iter()
        .map(|&(start, end)| {
            let gamma = gamma_unchecked(v_hz, profile.bfs[start], profile.linewidth[start]);
            RunCtx {
                start,
                end,
                gain: profile.gain_scale[start],
                inv_two_gamma: Complex64::new(1.0, 0.0) / (2.0 * gamma),
                two_delta_gamma: 2.0 * delta * gamma,
                gamma,
            }
        })
        .collect();

    let mut out = vec![0.0; n_cols];
    if n_gate == 0 {
        return out;
    }
    let mut first_run = 0usize;
    for (k, slot) in out.iter_mut().enumerate() {
        let j_hi = (upp * k) as i64 - 1;
        if j_hi < 0 {
            continue;
        }
        let j_lo = ((upp * k) as i64 - n_gate as i64).max(0);
        // Runs are scanned left to right; the window only moves right.
        while ctx[first_run].end as i64 <= j_lo {
            first_run += 1;
        }
        let mut acc = 0.0;
        for run in &ctx[first_run..] {
            if run.start as i64 > j_hi {
                break;
            }
            let lo = (run.start as i64).max(j_lo);
            let hi = (run.end as i64 - 1).min(j_hi);
            let n_near = (upp * k) as i64 - hi; // smallest N in this run
            let count = hi - lo + 1;
            let first = (-run.gamma * ((2 * n_near - 1) as f64 * delta)).exp();
            let geo = first * (1.0 - (-run.two_delta_gamma * count as f64).exp())
                / (1.0 - (-run.two_delta_gamma).exp());
            acc += run.gain * ((count as f64 - geo) * run.inv_two_gamma).re;
        }
        *slot = acc * dz * calibration;
    }
    out
}

/// Full BGS frame: one `trace_at_frequency` row per sweep frequency.
pub fn simulate_bgs(
    profile: &FiberProfile,
    pulse: &PumpPulse,
    sweep: &SweepGrid,
    constants: &PhysicsConstants,
) -> Result<BgsFrame> {
    constants.validate()?;
    if profile.unit_count() == 0 {
        return Err(Error::InvalidInput("empty fiber profile".into()));
    }
    if !sweep.covers(profile.bfs_min(), profile.bfs_max()) {
        return Err(Error::InvalidInput(format!(
            "sweep [{:.4}, {:.4}] GHz does not cover profile BFS range [{:.4}, {:.4}] GHz",
            sweep.start_hz / 1e9,
            sweep.end_hz() / 1e9,
            profile.bfs_min() / 1e9,
            profile.bfs_max() / 1e9
        )));
    }
    let calibration = constants.calibration_constant();
    let runs = profile.runs();
    let n_cols = (profile.length_m() / constants.spatial_pitch()).round() as usize;
    let freqs: Vec<f64> = sweep.frequencies().collect();
    let rows: Vec<Vec<f64>> = freqs
        .par_iter()
        .map(|&v| trace_with_runs(profile, pulse, v, constants, &runs, calibration))
        .collect();
    let mut gain = Vec::with_capacity(sweep.count * n_cols);
    for row in rows {
        gain.extend_from_slice(&row);
    }
    BgsFrame::from_rows(
        gain,
        sweep.count,
        n_cols,
        *sweep,
        constants.spatial_pitch(),
        false,
    )
}

/// Analytic long-pulse limit Re{1/(2Γ_A*)}: Lorentzian in `v` with
/// FWHM Δv_B. Used as a test oracle for the simulator.
pub fn steady_state_spectrum(v_hz: f64, bfs_hz: f64, linewidth_hz: f64) -> Result<f64> {
    let gamma = detuning_parameter(v_hz, bfs_hz, linewidth_hz)?;
    Ok((Complex64::new(1.0, 0.0) / (2.0 * gamma)).re)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PI: f64 = std::f64::consts::PI;

    fn constants() -> PhysicsConstants {
        PhysicsConstants::default()
    }

    /// Independent scalar oracle for one unit's gain, written directly
    /// against the complex expression.
    fn unit_gain_oracle(
        elapsed: f64,
        pulse_width: f64,
        v: f64,
        vb: f64,
        dv: f64,
        gain: f64,
        c: &PhysicsConstants,
    ) -> f64 {
        if elapsed < 0.0 || elapsed >= pulse_width {
            return 0.0;
        }
        let g = Complex64::new(PI * dv, PI * (vb * vb - v * v) / v);
        let val = (Complex64::new(1.0, 0.0) - (-g * elapsed).exp()) / (2.0 * g);
        gain * c.unit_length * c.calibration_constant() * val.re
    }

    #[test]
    fn detuning_on_resonance_is_real() {
        let g = detuning_parameter(10.85e9, 10.85e9, 30e6).unwrap();
        assert!((g.re - PI * 30e6).abs() < 1e-3);
        assert_eq!(g.im, 0.0);
        // decay time ~10.6 ns
        let tau = 1.0 / g.re;
        assert!((tau - 10.6e-9).abs() < 0.1e-9);
    }

    #[test]
    fn detuning_off_resonance_imaginary_part() {
        // independent complex-arithmetic oracle in double precision
        let (v, vb, dv) = (10.84e9, 10.85e9, 30e6);
        let expect_im = PI * (vb * vb - v * v) / v;
        let g = detuning_parameter(v, vb, dv).unwrap();
        assert!((g.im - expect_im).abs() / expect_im.abs() < 1e-12);
        assert!(g.re > 0.0);
    }

    #[test]
    fn detuning_rejects_non_positive() {
        assert!(detuning_parameter(0.0, 10.85e9, 30e6).is_err());
        assert!(detuning_parameter(10.85e9, -1.0, 30e6).is_err());
        assert!(detuning_parameter(10.85e9, 10.85e9, 0.0).is_err());
    }

    #[test]
    fn unit_gain_zero_before_arrival() {
        let c = constants();
        let profile = FiberProfile::uniform(54.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        let pulse = PumpPulse::rectangular(40e-9).unwrap();
        // unit 1000 is at 10 m; arrival at (10.01 m)/V_g ~ 50 ns
        let g = unit_gain(1000, 40e-9, 10.85e9, &profile, &pulse, &c).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn unit_gain_deep_window_reaches_steady_value() {
        let c = constants();
        let profile = FiberProfile::uniform(54.0, 10.85e9, 30e6, 0.9, &c).unwrap();
        let pulse = PumpPulse::rectangular(200e-9).unwrap();
        let arrival = 1.0 * c.unit_length / c.group_velocity;
        let elapsed = 150e-9; // Γτ ~ 14
        let g = unit_gain(0, arrival + elapsed, 10.85e9, &profile, &pulse, &c).unwrap();
        let steady = 0.9 * c.unit_length * c.calibration_constant() / (2.0 * PI * 30e6);
        assert!((g - steady).abs() / steady < 1e-5);
    }

    #[test]
    fn unit_gain_mid_window_matches_scalar_oracle() {
        let c = constants();
        let profile = FiberProfile::uniform(54.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        let pulse = PumpPulse::rectangular(40e-9).unwrap();
        let gamma_re = PI * 30e6;
        let elapsed = 1.0 / gamma_re;
        let arrival = 1.0 * c.unit_length / c.group_velocity;
        let g = unit_gain(0, arrival + elapsed, 10.85e9, &profile, &pulse, &c).unwrap();
        let oracle = unit_gain_oracle(elapsed, 40e-9, 10.85e9, 10.85e9, 30e6, 1.0, &c);
        assert!((g - oracle).abs() <= 1e-15 * oracle.abs().max(1.0));
        // on resonance: (1 - e⁻¹) of the steady value
        let steady = c.unit_length * c.calibration_constant() / (2.0 * gamma_re);
        assert!((g - steady * (1.0 - (-1.0f64).exp())).abs() / steady < 1e-9);
    }

    #[test]
    fn unit_gain_out_of_range_index() {
        let c = constants();
        let profile = FiberProfile::uniform(1.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        let pulse = PumpPulse::rectangular(40e-9).unwrap();
        assert!(unit_gain(100, 1e-9, 10.85e9, &profile, &pulse, &c).is_err());
    }

    /// Naive Eq.-(1) reference: per-sample sum of `unit_gain` terms.
    fn trace_reference(
        profile: &FiberProfile,
        pulse: &PumpPulse,
        v: f64,
        c: &PhysicsConstants,
    ) -> Vec<f64> {
        let upp = c.units_per_sample();
        let n_cols = (profile.length_m() / c.spatial_pitch()).round() as usize;
        let units_in_pulse =
            (pulse.width_s * c.group_velocity / c.unit_length).floor() as usize;
        let mut out = vec![0.0; n_cols];
        for (k, slot) in out.iter_mut().enumerate() {
            let z = k as f64 * c.spatial_pitch();
            let t = 2.0 * z / c.group_velocity;
            let mut acc = 0.0;
            for n in 0..=units_in_pulse {
                let j = (upp * k) as i64 - n as i64;
                if j < 0 {
                    break;
                }
                // Eq. (1): unit z - NΔz evaluated at (z + NΔz)/V_g
                let t_eval = t / 2.0 + (n as f64) * c.unit_length / c.group_velocity;
                acc += unit_gain(j as usize, t_eval, v, profile, pulse, c).unwrap();
            }
            *slot = acc;
        }
        out
    }

    #[test]
    fn trace_matches_naive_reference_on_piecewise_profile() {
        let c = constants();
        // short fiber keeps the naive reference cheap
        let mut bfs = vec![10.83e9; 800];
        let mut lw = vec![28e6; 800];
        let mut gain = vec![0.9; 800];
        for i in 300..420 {
            bfs[i] = 10.86e9;
            lw[i] = 33e6;
            gain[i] = 1.0;
        }
        let profile = FiberProfile::new(bfs, lw, gain, 8.0, &c).unwrap();
        let pulse = PumpPulse::rectangular(25e-9).unwrap();
        for &v in &[10.83e9, 10.855e9, 10.86e9] {
            let fast = trace_at_frequency(&profile, &pulse, v, &c).unwrap();
            let naive = trace_reference(&profile, &pulse, v, &c);
            let scale = naive.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for (a, b) in fast.iter().zip(&naive) {
                assert!(
                    (a - b).abs() <= 1e-10 * scale,
                    "fast {a} vs naive {b} at scale {scale}"
                );
            }
        }
    }

    #[test]
    fn trace_zero_pulse_shorter_than_unit() {
        let c = constants();
        let profile = FiberProfile::uniform(2.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        // l = 0.004 m < Δz: empty sum
        let pulse = PumpPulse::rectangular(0.02e-9).unwrap();
        let tr = trace_at_frequency(&profile, &pulse, 10.85e9, &c).unwrap();
        assert!(tr.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn trace_plateau_matches_closed_form_sum() {
        let c = constants();
        let profile = FiberProfile::uniform(54.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        let pulse = PumpPulse::rectangular(40e-9).unwrap();
        let tr = trace_at_frequency(&profile, &pulse, 10.85e9, &c).unwrap();
        // closed-form steady sum oracle over the gated window
        let gamma = Complex64::new(PI * 30e6, 0.0);
        let delta = c.unit_transit();
        let n_gate = 400; // (2N-1)·Δz/V_g < 40 ns
        let mut expect = 0.0;
        for n in 1..=n_gate {
            let tau = (2 * n - 1) as f64 * delta;
            expect += ((1.0 - (-gamma * tau).exp()) / (2.0 * gamma)).re;
        }
        expect *= c.unit_length * c.calibration_constant();
        // plateau region: after l/V_g + T of round-trip time
        let start = ((pulse.length_m(&c) / c.group_velocity + pulse.width_s)
            * c.sample_rate)
            .ceil() as usize;
        for k in start..tr.len() {
            assert!(
                (tr[k] - expect).abs() <= 1e-9 * expect,
                "sample {k}: {} vs {}",
                tr[k],
                expect
            );
        }
        // calibration pins the 40 ns plateau peak to 1
        assert!((expect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_pulse_longer_than_fiber_truncates() {
        let c = constants();
        let profile = FiberProfile::uniform(2.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        let pulse = PumpPulse::rectangular(100e-9).unwrap(); // 20 m pulse
        let tr = trace_at_frequency(&profile, &pulse, 10.85e9, &c).unwrap();
        assert_eq!(tr.len(), 20);
        assert!(tr[0] == 0.0);
        assert!(tr[19] > 0.0);
    }

    #[test]
    fn causality_gain_zero_before_pulse_reaches_position() {
        let c = constants();
        let profile = FiberProfile::uniform(10.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        let pulse = PumpPulse::rectangular(40e-9).unwrap();
        let tr = trace_at_frequency(&profile, &pulse, 10.85e9, &c).unwrap();
        assert_eq!(tr[0], 0.0);
        assert!(tr[1] > 0.0);
    }

    #[test]
    fn simulate_bgs_shape_and_peak() {
        let c = constants();
        let profile = FiberProfile::uniform(54.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        let pulse = PumpPulse::rectangular(40e-9).unwrap();
        let sweep = SweepGrid::standard();
        let frame = simulate_bgs(&profile, &pulse, &sweep, &c).unwrap();
        assert_eq!(frame.n_freq(), 71);
        assert_eq!(frame.n_cols(), 540);
        assert!(!frame.normalized);
        // per-column spectral peak at v_B (grid index 35) for interior columns
        for col in [100, 300, 539] {
            let spec = frame.column(col);
            let peak = spec
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(peak, 35, "column {col}");
        }
    }

    #[test]
    fn simulate_bgs_rejects_uncovered_sweep() {
        let c = constants();
        let profile = FiberProfile::uniform(10.0, 11.0e9, 30e6, 1.0, &c).unwrap();
        let pulse = PumpPulse::rectangular(40e-9).unwrap();
        let sweep = SweepGrid::standard();
        assert!(simulate_bgs(&profile, &pulse, &sweep, &c).is_err());
    }

    #[test]
    fn linearity_in_gain_scale() {
        let c = constants();
        let pulse = PumpPulse::rectangular(30e-9).unwrap();
        let a = FiberProfile::uniform(6.0, 10.85e9, 30e6, 0.25, &c).unwrap();
        let b = FiberProfile::uniform(6.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        let ta = trace_at_frequency(&a, &pulse, 10.84e9, &c).unwrap();
        let tb = trace_at_frequency(&b, &pulse, 10.84e9, &c).unwrap();
        for (x, y) in ta.iter().zip(&tb) {
            assert!((4.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-30));
        }
    }

    #[test]
    fn determinism_bit_identical_frames() {
        let c = constants();
        let profile = FiberProfile::uniform(10.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        let pulse = PumpPulse::rectangular(40e-9).unwrap();
        let sweep = SweepGrid::standard();
        let f1 = simulate_bgs(&profile, &pulse, &sweep, &c).unwrap();
        let f2 = simulate_bgs(&profile, &pulse, &sweep, &c).unwrap();
        assert_eq!(f1.gain(), f2.gain());
    }

    #[test]
    fn steady_state_peak_and_half_maximum() {
        let (vb, dv) = (10.85e9, 30e6);
        let peak = steady_state_spectrum(vb, vb, dv).unwrap();
        // resonance is the maximum over the sweep
        for v in SweepGrid::standard().frequencies() {
            assert!(steady_state_spectrum(v, vb, dv).unwrap() <= peak + 1e-18);
        }
        // half maximum at v_B ± Δv_B/2 (up to the ~Δv_B/v_B skew of the
        // exact expression)
        for v in [vb - dv / 2.0, vb + dv / 2.0] {
            let s = steady_state_spectrum(v, vb, dv).unwrap();
            assert!((s / peak - 0.5).abs() < 5e-3, "{}", s / peak);
        }
    }

    #[test]
    fn long_pulse_spectra_converge_to_steady_state() {
        // Lorentzian limit: sup-norm error of the normalized interior
        // spectrum decreases with pulse width.
        let c = constants();
        let profile = FiberProfile::uniform(54.0, 10.85e9, 30e6, 1.0, &c).unwrap();
        let sweep = SweepGrid::standard();
        let steady: Vec<f64> = sweep
            .frequencies()
            .map(|v| steady_state_spectrum(v, 10.85e9, 30e6).unwrap())
            .collect();
        let steady_peak = steady.iter().cloned().fold(f64::MIN, f64::max);
        let sup_err = |width: f64| -> f64 {
            let pulse = PumpPulse::rectangular(width).unwrap();
            let frame = simulate_bgs(&profile, &pulse, &sweep, &c).unwrap();
            let col = frame.column(450);
            let peak = col.iter().cloned().fold(f64::MIN, f64::max);
            col.iter()
                .zip(&steady)
                .map(|(a, s)| (a / peak - s / steady_peak).abs())
                .fold(0.0, f64::max)
        };
        let (e40, e100, e200) = (sup_err(40e-9), sup_err(100e-9), sup_err(200e-9));
        assert!(e40 > e100 && e100 > e200, "{e40} {e100} {e200}");
        // oracle-computed transient deficit at 200 ns is ~2.8%
        assert!(e200 < 0.04, "{e200}");
    }

    #[test]
    fn profile_validation() {
        let c = constants();
        assert!(FiberProfile::uniform(54.0, 10.85e9, 0.0, 1.0, &c).is_err());
        assert!(FiberProfile::uniform(54.0, 10.85e9, 30e6, 1.5, &c).is_err());
        assert!(FiberProfile::new(vec![], vec![], vec![], 0.0, &c).is_err());
        let short = FiberProfile::new(vec![10.85e9; 10], vec![30e6; 9], vec![1.0; 10], 0.1, &c);
        assert!(short.is_err());
    }

    #[test]
    fn constants_validation() {
        let mut c = PhysicsConstants::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.units_per_sample(), 10);
        c.sample_rate = 0.9e9; // pitch no longer a unit multiple
        assert!(c.validate().is_err());
        let bad = PhysicsConstants {
            group_velocity: -1.0,
            ..PhysicsConstants::default()
        };
        assert!(bad.validate().is_err());
    }
}
