//! Classical reference methods: column-wise Lorentzian curve fitting,
//! differential pulse-width pair reconstruction, and the uncertainty /
//! spatial-resolution metrics used for comparison.

use rayon::prelude::*;

use crate::dataset::BfsTrace;
use crate::error::{Error, Result};
use crate::physics::{BgsFrame, SweepGrid};

/// Fitted 4-parameter Lorentzian `a / (1 + 4(v-v0)²/w²) + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzParams {
    pub bfs_hz: f64,
    pub fwhm_hz: f64,
    pub amplitude: f64,
    pub offset: f64,
}

/// Fit result with convergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzFit {
    pub params: LorentzParams,
    pub converged: bool,
    pub iterations: usize,
    pub cost: f64,
}

const MAX_ITERATIONS: usize = 200;
const COST_TOLERANCE: f64 = 1e-10;

/// Damped (Levenberg-Marquardt style) nonlinear least squares on one
/// spectrum. The problem is solved in grid-centered MHz coordinates so
/// that shifting the sweep grid shifts the fitted center exactly.
pub fn lorentz_fit(spectrum: &[f64], grid: &SweepGrid) -> Result<LorentzFit> {
    if grid.count < 5 {
        return Err(Error::InvalidInput("need at least 5 sweep points".into()));
    }
    if spectrum.len() != grid.count {
        return Err(Error::ShapeMismatch(format!(
            "spectrum has {} points, grid {}",
            spectrum.len(),
            grid.count
        )));
    }
    if spectrum.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("spectrum contains non-finite values".into()));
    }
    let (mut peak_idx, mut max) = (0usize, f64::NEG_INFINITY);
    let mut min = f64::INFINITY;
    for (i, &v) in spectrum.iter().enumerate() {
        if v > max {
            max = v;
            peak_idx = i;
        }
        min = min.min(v);
    }
    if !(max > min) {
        return Err(Error::Degenerate("flat spectrum".into()));
    }
    if !(max > 0.0) {
        return Err(Error::Degenerate("spectrum has no positive peak".into()));
    }

    // Internal coordinates: u = (v - v_peak)/1e6. Grid differences are
    // identical under a grid shift, so the fit is shift-equivariant.
    let center = grid.frequency(peak_idx);
    let u: Vec<f64> = (0..grid.count)
        .map(|i| (grid.frequency(i) - center) / 1e6)
        .collect();

    // initial width from the half-maximum extent of the discrete peak
    let half = min + 0.5 * (max - min);
    let mut lo = peak_idx;
    while lo > 0 && spectrum[lo - 1] > half {
        lo -= 1;
    }
    let mut hi = peak_idx;
    while hi + 1 < grid.count && spectrum[hi + 1] > half {
        hi += 1;
    }
    let mut w0 = (hi - lo) as f64 * grid.step_hz / 1e6;
    if w0 <= 0.0 {
        w0 = grid.step_hz / 1e6;
    }
    let mut p = [max - min, 0.0, w0, min]; // a, u0, w, c

    let model = |p: &[f64; 4], u: f64| -> f64 {
        let d = u - p[1];
        p[0] / (1.0 + 4.0 * d * d / (p[2] * p[2])) + p[3]
    };
    let cost_of = |p: &[f64; 4]| -> f64 {
        u.iter()
            .zip(spectrum)
            .map(|(&ui, &y)| {
                let r = model(p, ui) - y;
                r * r
            })
            .sum()
    };

    let mut cost = cost_of(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS && !converged {
        iterations += 1;
        // normal equations J'J and J'r with the analytic Jacobian
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for (&ui, &y) in u.iter().zip(spectrum) {
            let d = ui - p[1];
            let w2 = p[2] * p[2];
            let den = 1.0 + 4.0 * d * d / w2;
            let l = 1.0 / den;
            let r = p[0] * l + p[3] - y;
            let dl = p[0] * l * l;
            let j = [l, dl * 8.0 * d / w2, dl * 8.0 * d * d / (w2 * p[2]), 1.0];
            for (a, &ja) in j.iter().enumerate() {
                jtr[a] += ja * r;
                for (b, &jb) in j.iter().enumerate() {
                    jtj[a][b] += ja * jb;
                }
            }
        }
        let mut accepted = false;
        for _ in 0..12 {
            let mut lhs = jtj;
            for (d, row) in lhs.iter_mut().enumerate() {
                row[d] += lambda * jtj[d][d].max(1e-12);
            }
            let rhs = [-jtr[0], -jtr[1], -jtr[2], -jtr[3]];
            let Some(step) = solve4(lhs, rhs) else {
                lambda *= 3.0;
                continue;
            };
            let mut trial = p;
            for (t, s) in trial.iter_mut().zip(step) {
                *t += s;
            }
            trial[2] = trial[2].abs().max(1e-9); // width sign is degenerate
            let trial_cost = cost_of(&trial);
            if trial_cost.is_finite() && trial_cost < cost {
                let rel_drop = (cost - trial_cost) / cost.max(1e-300);
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_drop < COST_TOLERANCE {
                    converged = true;
                }
                break;
            }
            lambda *= 3.0;
        }
        if !accepted {
            // damping exhausted: no direction improves the cost
            converged = true;
        }
    }
    if !(p[0] > 0.0) {
        return Err(Error::Numeric(
            "fit collapsed to non-positive amplitude".into(),
        ));
    }
    Ok(LorentzFit {
        params: LorentzParams {
            bfs_hz: center + p[1] * 1e6,
            fwhm_hz: p[2].abs() * 1e6,
            amplitude: p[0],
            offset: p[3],
        },
        converged,
        iterations,
        cost,
    })
}

/// Gaussian elimination with partial pivoting for the 4x4 LM step.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let mut pivot = col;
        for row in col + 1..4 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for col in (0..4).rev() {
        let mut acc = b[col];
        for k in col + 1..4 {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Per-trace summary of column fits.
#[derive(Debug, Clone, PartialEq)]
pub struct LcfReport {
    /// Columns whose fit failed or did not converge; their trace value
    /// falls back to the discrete peak frequency.
    pub failed_columns: Vec<usize>,
    pub total_columns: usize,
}

/// Column-wise Lorentzian fit of a frame. Per-column failures are
/// recorded, not fatal, up to a 10% budget.
pub fn lcf_trace(frame: &BgsFrame) -> Result<(BfsTrace, LcfReport)> {
    let n = frame.n_cols();
    if n == 0 {
        return Err(Error::InvalidInput("frame has no columns".into()));
    }
    let columns: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|col| {
            let spec = frame.column(col);
            match lorentz_fit(&spec, &frame.sweep) {
                Ok(fit) if fit.converged => (fit.params.bfs_hz, false),
                Ok(fit) => (fit.params.bfs_hz, true),
                Err(_) => {
                    let peak = spec
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    (frame.sweep.frequency(peak), true)
                }
            }
        })
        .collect();
    let failed_columns: Vec<usize> = columns
        .iter()
        .enumerate()
        .filter_map(|(i, (_, failed))| failed.then_some(i))
        .collect();
    if failed_columns.len() * 10 > n {
        return Err(Error::Numeric(format!(
            "{} of {} column fits failed",
            failed_columns.len(),
            n
        )));
    }
    let trace = BfsTrace::new(
        columns.into_iter().map(|(bfs, _)| bfs).collect(),
        frame.spatial_pitch,
    )?;
    Ok((
        trace,
        LcfReport {
            failed_columns,
            total_columns: n,
        },
    ))
}

/// Entry-wise difference of two un-normalized frames acquired with a
/// long and a short pump pulse. The result's effective pulse is the
/// width difference.
pub fn dpp_differential(frame_long: &BgsFrame, frame_short: &BgsFrame) -> Result<BgsFrame> {
    if frame_long.sweep != frame_short.sweep {
        return Err(Error::ShapeMismatch("sweep grids differ".into()));
    }
    if frame_long.spatial_pitch != frame_short.spatial_pitch {
        return Err(Error::ShapeMismatch("spatial pitches differ".into()));
    }
    if frame_long.n_freq() != frame_short.n_freq() || frame_long.n_cols() != frame_short.n_cols()
    {
        return Err(Error::ShapeMismatch("frame dimensions differ".into()));
    }
    if frame_long.normalized || frame_short.normalized {
        return Err(Error::InvalidInput(
            "differential subtraction operates on un-normalized gain".into(),
        ));
    }
    let gain = frame_long
        .gain()
        .iter()
        .zip(frame_short.gain())
        .map(|(a, b)| a - b)
        .collect();
    BgsFrame::from_rows(
        gain,
        frame_long.n_freq(),
        frame_long.n_cols(),
        frame_long.sweep,
        frame_long.spatial_pitch,
        false,
    )
}

/// BFS uncertainty over repeated measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub per_position_std_hz: Vec<f64>,
    pub mean_std_hz: f64,
    pub pitch_m: f64,
}

/// Per-position sample standard deviation over repeated traces.
pub fn bfs_uncertainty(traces: &[BfsTrace]) -> Result<UncertaintyReport> {
    if traces.len() < 2 {
        return Err(Error::InvalidInput(
            "uncertainty needs at least 2 traces".into(),
        ));
    }
    let len = traces[0].len();
    let pitch = traces[0].pitch_m;
    for t in traces {
        if t.len() != len {
            return Err(Error::ShapeMismatch("trace lengths differ".into()));
        }
    }
    let m = traces.len() as f64;
    let mut per_position = Vec::with_capacity(len);
    let mut vals = vec![0.0f64; traces.len()];
    for i in 0..len {
        for (slot, t) in vals.iter_mut().zip(traces) {
            *slot = t.values_hz[i];
        }
        // fixed summation order makes the result independent of the
        // trace list order
        vals.sort_by(f64::total_cmp);
        let mean: f64 = vals.iter().sum::<f64>() / m;
        let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        per_position.push(var.sqrt());
    }
    let mean_std = per_position.iter().sum::<f64>() / len as f64;
    Ok(UncertaintyReport {
        per_position_std_hz: per_position,
        mean_std_hz: mean_std,
        pitch_m: pitch,
    })
}

/// Distance between the 10% and 90% crossings of a plateau-to-plateau
/// transition inside `window`, linearly interpolated between samples.
pub fn transition_length(trace: &BfsTrace, window: std::ops::Range<usize>) -> Result<f64> {
    if window.start >= window.end || window.end > trace.len() {
        return Err(Error::InvalidInput("bad transition window".into()));
    }
    let seg = &trace.values_hz[window.clone()];
    if seg.len() < 3 {
        return Err(Error::InvalidInput("window too short".into()));
    }
    let lo = seg[0];
    let hi = seg[seg.len() - 1];
    if lo == hi {
        return Err(Error::Degenerate("no edge inside window".into()));
    }
    let l10 = lo + 0.1 * (hi - lo);
    let l90 = lo + 0.9 * (hi - lo);
    let rising = hi > lo;
    let cross_from = |start: usize, level: f64| -> Option<f64> {
        for i in start..seg.len() - 1 {
            let (a, b) = (seg[i], seg[i + 1]);
            let crossed = if rising {
                a <= level && b > level
            } else {
                a >= level && b < level
            };
            if crossed {
                return Some(i as f64 + (level - a) / (b - a));
            }
        }
        None
    };
    let x10 =
        cross_from(0, l10).ok_or_else(|| Error::Degenerate("10% level never crossed".into()))?;
    let x90 = cross_from(x10.floor() as usize, l90)
        .ok_or_else(|| Error::Degenerate("90% level not crossed after 10%".into()))?;
    if x90 < x10 {
        return Err(Error::Degenerate("non-monotone window".into()));
    }
    Ok((x90 - x10) * trace.pitch_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{smooth_label, GAUSSIAN_RISE_FACTOR};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lorentz(v: f64, a: f64, v0: f64, w: f64, c: f64) -> f64 {
        a / (1.0 + 4.0 * (v - v0) * (v - v0) / (w * w)) + c
    }

    fn synth(grid: &SweepGrid, a: f64, v0: f64, w: f64, c: f64) -> Vec<f64> {
        grid.frequencies()
            .map(|v| lorentz(v, a, v0, w, c))
            .collect()
    }

    #[test]
    fn exact_lorentzian_recovered() {
        let grid = SweepGrid::standard();
        let spec = synth(&grid, 0.9, 10.86e9, 30e6, 0.0);
        let fit = lorentz_fit(&spec, &grid).unwrap();
        assert!(fit.converged);
        assert!(
            (fit.params.bfs_hz - 10.86e9).abs() < 0.01e6,
            "{}",
            fit.params.bfs_hz
        );
        assert!((fit.params.fwhm_hz - 30e6).abs() < 0.05e6);
        assert!((fit.params.amplitude - 0.9).abs() < 1e-3);
        assert!(fit.params.offset.abs() < 1e-4);
    }

    #[test]
    fn off_grid_center_recovered() {
        let grid = SweepGrid::standard();
        let spec = synth(&grid, 0.5, 10.8517e9, 27.3e6, 0.04);
        let fit = lorentz_fit(&spec, &grid).unwrap();
        assert!((fit.params.bfs_hz - 10.8517e9).abs() < 0.01e6);
        assert!((fit.params.fwhm_hz - 27.3e6).abs() < 0.05e6);
    }

    #[test]
    fn shift_equivariance_power_of_two_delta() {
        let grid = SweepGrid::standard();
        let spec = synth(&grid, 0.8, 10.845e9, 31e6, 0.02);
        let fit = lorentz_fit(&spec, &grid).unwrap();
        let delta = (1u64 << 20) as f64; // exactly representable shift
        let shifted = SweepGrid::new(grid.start_hz + delta, grid.step_hz, grid.count).unwrap();
        let fit2 = lorentz_fit(&spec, &shifted).unwrap();
        assert_eq!(fit2.params.bfs_hz, fit.params.bfs_hz + delta);
        assert_eq!(fit2.params.fwhm_hz, fit.params.fwhm_hz);
    }

    #[test]
    fn amplitude_invariance_of_center_and_width() {
        let grid = SweepGrid::standard();
        let spec = synth(&grid, 0.6, 10.8552e9, 29e6, 0.0);
        let scaled: Vec<f64> = spec.iter().map(|v| v * 5.5).collect();
        let f1 = lorentz_fit(&spec, &grid).unwrap();
        let f2 = lorentz_fit(&scaled, &grid).unwrap();
        assert!((f2.params.bfs_hz - f1.params.bfs_hz).abs() < 1.0);
        assert!((f2.params.fwhm_hz - f1.params.fwhm_hz).abs() < 10.0);
        assert!((f2.params.amplitude / f1.params.amplitude - 5.5).abs() < 1e-6);
    }

    #[test]
    fn noise_grows_fit_scatter_monotonically() {
        let grid = SweepGrid::standard();
        let clean = synth(&grid, 1.0, 10.85e9, 30e6, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut std_of = |noise: f64, rng: &mut ChaCha8Rng| -> f64 {
            let fits: Vec<f64> = (0..60)
                .map(|_| {
                    let spec: Vec<f64> = clean
                        .iter()
                        .map(|v| v + noise * rng.sample::<f64, _>(rand_distr::StandardNormal))
                        .collect();
                    lorentz_fit(&spec, &grid).unwrap().params.bfs_hz
                })
                .collect();
            let mean = fits.iter().sum::<f64>() / fits.len() as f64;
            (fits.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (fits.len() - 1) as f64)
                .sqrt()
        };
        let s1 = std_of(0.005, &mut rng);
        let s2 = std_of(0.02, &mut rng);
        let s3 = std_of(0.08, &mut rng);
        assert!(s1 < s2 && s2 < s3, "{s1} {s2} {s3}");
    }

    #[test]
    fn flat_spectrum_is_degenerate() {
        let grid = SweepGrid::standard();
        assert!(matches!(
            lorentz_fit(&vec![0.5; 71], &grid),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn lcf_trace_on_synthetic_frame() {
        let grid = SweepGrid::standard();
        let n_cols = 40;
        let mut gain = vec![0.0; grid.count * n_cols];
        for (f, v) in grid.frequencies().enumerate() {
            for col in 0..n_cols {
                gain[f * n_cols + col] = lorentz(v, 0.9, 10.85e9, 30e6, 0.0);
            }
        }
        let frame = BgsFrame::from_rows(gain, grid.count, n_cols, grid, 0.1, false).unwrap();
        let (trace, report) = lcf_trace(&frame).unwrap();
        assert_eq!(trace.len(), n_cols);
        assert!(report.failed_columns.is_empty());
        for &v in &trace.values_hz {
            assert!((v - 10.85e9).abs() < 1e4);
        }
    }

    #[test]
    fn dpp_identical_frames_give_zero() {
        let grid = SweepGrid::standard();
        let frame = BgsFrame::from_rows(
            (0..grid.count * 8).map(|i| (i % 13) as f64).collect(),
            grid.count,
            8,
            grid,
            0.1,
            false,
        )
        .unwrap();
        let diff = dpp_differential(&frame, &frame).unwrap();
        assert!(diff.gain().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dpp_rejects_mismatched_grids_and_normalized_frames() {
        let a =
            BgsFrame::from_rows(vec![1.0; 71], 71, 1, SweepGrid::standard(), 0.1, false).unwrap();
        let other = SweepGrid::new(10.779e9, 2e6, 71).unwrap();
        let b = BgsFrame::from_rows(vec![1.0; 71], 71, 1, other, 0.1, false).unwrap();
        assert!(dpp_differential(&a, &b).is_err());
        let normalized =
            BgsFrame::from_rows(vec![1.0; 71], 71, 1, SweepGrid::standard(), 0.1, true).unwrap();
        assert!(dpp_differential(&a, &normalized).is_err());
    }

    #[test]
    fn dpp_linearity() {
        let grid = SweepGrid::standard();
        let x = BgsFrame::from_rows((0..142).map(f64::from).collect(), 71, 2, grid, 0.1, false)
            .unwrap();
        let y = BgsFrame::from_rows(
            (0..142).map(|i| f64::from(i) * 0.5 + 1.0).collect(),
            71,
            2,
            grid,
            0.1,
            false,
        )
        .unwrap();
        let scale = |f: &BgsFrame, s: f64| {
            BgsFrame::from_rows(
                f.gain().iter().map(|g| g * s).collect(),
                f.n_freq(),
                f.n_cols(),
                f.sweep,
                f.spatial_pitch,
                false,
            )
            .unwrap()
        };
        let d1 = dpp_differential(&scale(&x, 3.0), &scale(&y, 3.0)).unwrap();
        let d2 = dpp_differential(&x, &y).unwrap();
        for (a, b) in d1.gain().iter().zip(d2.gain()) {
            assert!((a - 3.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn uncertainty_identical_traces_zero() {
        let t = BfsTrace::new(vec![10.85e9; 50], 0.1).unwrap();
        let rep = bfs_uncertainty(&[t.clone(), t.clone(), t]).unwrap();
        assert!(rep.per_position_std_hz.iter().all(|&s| s == 0.0));
        assert_eq!(rep.mean_std_hz, 0.0);
    }

    #[test]
    fn uncertainty_matches_injected_noise() {
        // 6 traces x 500 positions with 0.5 MHz i.i.d. noise
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = 0.5e6;
        let traces: Vec<BfsTrace> = (0..6)
            .map(|_| {
                BfsTrace::new(
                    (0..500)
                        .map(|_| {
                            10.85e9 + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)
                        })
                        .collect(),
                    0.1,
                )
                .unwrap()
            })
            .collect();
        let rep = bfs_uncertainty(&traces).unwrap();
        assert!(
            (rep.mean_std_hz - sigma).abs() / sigma < 0.1,
            "{}",
            rep.mean_std_hz
        );
    }

    #[test]
    fn uncertainty_contract_errors() {
        let t = BfsTrace::new(vec![1.0; 10], 0.1).unwrap();
        assert!(bfs_uncertainty(&[t.clone()]).is_err());
        let short = BfsTrace::new(vec![1.0; 9], 0.1).unwrap();
        assert!(bfs_uncertainty(&[t, short]).is_err());
        assert!(bfs_uncertainty(&[]).is_err());
    }

    #[test]
    fn uncertainty_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let traces: Vec<BfsTrace> = (0..4)
            .map(|_| {
                BfsTrace::new((0..30).map(|_| rng.gen_range(0.0..1.0)).collect(), 0.1).unwrap()
            })
            .collect();
        let rep1 = bfs_uncertainty(&traces).unwrap();
        let permuted = vec![
            traces[2].clone(),
            traces[0].clone(),
            traces[3].clone(),
            traces[1].clone(),
        ];
        let rep2 = bfs_uncertainty(&permuted).unwrap();
        assert_eq!(rep1.per_position_std_hz, rep2.per_position_std_hz);
    }

    #[test]
    fn transition_of_one_sample_step() {
        let mut vals = vec![0.0; 30];
        for v in vals.iter_mut().skip(15) {
            *v = 1.0;
        }
        let t = BfsTrace::new(vals, 0.1).unwrap();
        let len = transition_length(&t, 5..25).unwrap();
        assert!(len <= 0.1 + 1e-12, "{len}");
    }

    #[test]
    fn transition_of_smoothed_step_matches_sigma() {
        // Gaussian-smoothed step: 10-90% length = 2.563 sigma
        let mut vals = vec![10.83e9; 400];
        for v in vals.iter_mut().skip(200) {
            *v = 10.87e9;
        }
        let step = BfsTrace::new(vals, 0.01).unwrap();
        let sm = smooth_label(&step, 0.8).unwrap();
        let sigma_m = 0.8 / GAUSSIAN_RISE_FACTOR;
        let len = transition_length(&sm, 100..300).unwrap();
        assert!(
            (len - GAUSSIAN_RISE_FACTOR * sigma_m).abs() <= 0.01 + 1e-9,
            "{len}"
        );
    }

    #[test]
    fn transition_flat_trace_errors() {
        let t = BfsTrace::new(vec![2.0; 40], 0.1).unwrap();
        assert!(matches!(
            transition_length(&t, 0..40),
            Err(Error::Degenerate(_))
        ));
    }
}
