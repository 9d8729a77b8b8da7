//! Machine-readable outputs: trace CSV, metrics report, provenance
//! headers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::UncertaintyReport;
use crate::dataset::BfsTrace;
use crate::error::{Error, Result};

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub seed: u64,
    pub method: String,
    pub pulse_width_ns: f64,
}

/// Write a trace as CSV with a provenance comment header.
pub fn write_trace_csv(path: &Path, trace: &BfsTrace, prov: &Provenance) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "# config_digest={} seed={} method={} pulse_width_ns={}\n",
        prov.config_digest, prov.seed, prov.method, prov.pulse_width_ns
    ));
    out.push_str("position_m,bfs_hz\n");
    for (i, v) in trace.values_hz.iter().enumerate() {
        out.push_str(&format!("{:.6},{:.6}\n", trace.position_m(i), v));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a trace CSV produced by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path) -> Result<BfsTrace> {
    let text = std::fs::read_to_string(path)?;
    let mut positions = Vec::new();
    let mut values = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("position_m") {
            continue;
        }
        let mut parts = line.split(',');
        let pos: f64 = parts
            .next()
            .and_then(|p| p.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("bad trace row: {line}")))?;
        let val: f64 = parts
            .next()
            .and_then(|p| p.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("bad trace row: {line}")))?;
        positions.push(pos);
        values.push(val);
    }
    if values.len() < 2 {
        return Err(Error::Corrupt("trace csv has fewer than 2 rows".into()));
    }
    let pitch = positions[1] - positions[0];
    if !(pitch > 0.0) {
        return Err(Error::Corrupt("trace csv positions are not increasing".into()));
    }
    BfsTrace::new(values, pitch)
}

/// Error metrics at one hotspot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotspotMetrics {
    pub center_m: f64,
    pub length_m: f64,
    /// |prediction - raw piecewise truth| at the hotspot center, MHz.
    pub raw_error_mhz: f64,
    /// |prediction - 0.5 m SR reference (smoothed truth)| at the
    /// center, MHz. A 0.5 m hotspot's smoothed reference peaks at 80%
    /// of the raw contrast, which bounds what any retrieval trained on
    /// SR-limited labels can report.
    pub sr_reference_error_mhz: f64,
    /// 10-90% transition length of the rising edge, m (if measurable).
    pub transition_m: Option<f64>,
}

/// Full evaluation report for one method on one fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub provenance: Provenance,
    pub rmse_mhz: f64,
    /// Masked MSE on the normalized BFS scale, when a range is known.
    pub masked_mse_normalized: Option<f64>,
    pub mean_uncertainty_mhz: Option<f64>,
    pub hotspots: Vec<HotspotMetrics>,
    pub repeats: usize,
    pub timing_s: f64,
}

/// Scalars as JSON plus per-position arrays as CSV.
pub fn write_metrics(
    json_path: &Path,
    csv_path: &Path,
    report: &MetricsReport,
    pred: &BfsTrace,
    truth: &BfsTrace,
    uncertainty: Option<&UncertaintyReport>,
) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(json_path, json)?;
    let mut csv = String::new();
    csv.push_str(&format!(
        "# config_digest={} seed={} method={}\n",
        report.provenance.config_digest, report.provenance.seed, report.provenance.method
    ));
    csv.push_str("position_m,pred_hz,truth_hz,error_mhz,uncertainty_mhz\n");
    for i in 0..pred.len() {
        let unc = uncertainty
            .map(|u| u.per_position_std_hz[i] / 1e6)
            .unwrap_or(f64::NAN);
        csv.push_str(&format!(
            "{:.6},{:.6},{:.6},{:.8},{:.8}\n",
            pred.position_m(i),
            pred.values_hz[i],
            truth.values_hz[i],
            (pred.values_hz[i] - truth.values_hz[i]) / 1e6,
            unc
        ));
    }
    std::fs::write(csv_path, csv)?;
    Ok(())
}
