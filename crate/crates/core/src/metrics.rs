//! Error metrics over horizon bins and interval calibration.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const BIN_SECS: i64 = 300;
pub const N_BINS: usize = 6;
pub const DEFAULT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// One predicted station event with its observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub train_id: String,
    pub station_index: usize,
    /// Point forecast of the delay, seconds.
    pub predicted: f64,
    pub observed: f64,
    pub observed_arrival: i64,
    pub reference_clock: i64,
    /// Ensemble delay samples; empty for direct predictions.
    pub samples: Vec<f64>,
}

impl PredictionRecord {
    /// Lead time of the observed arrival.
    pub fn lead(&self) -> i64 {
        self.observed_arrival - self.reference_clock
    }

    pub fn in_horizon(&self, horizon: i64) -> bool {
        self.lead() > 0 && self.lead() <= horizon
    }

    /// 5-minute bin of the lead time; a lead of exactly 30 minutes falls in the last bin.
    pub fn bin(&self) -> usize {
        ((self.lead() / BIN_SECS) as usize).min(N_BINS - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub mae: f64,
    pub rmse: f64,
    /// `None` for bins without events.
    pub mae_by_bin: [Option<f64>; N_BINS],
    pub count_by_bin: [usize; N_BINS],
    pub calibration: Vec<(f64, f64)>,
    pub n_predictions: usize,
}

impl EvaluationReport {
    /// Mean absolute error over the events in bins `lo..=hi`.
    pub fn mae_over_bins(&self, lo: usize, hi: usize) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0);
        for b in lo..=hi {
            if let Some(m) = self.mae_by_bin[b] {
                sum += m * self.count_by_bin[b] as f64;
                n += self.count_by_bin[b];
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// `key=value` lines.
    pub fn to_text(&self, meta: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in meta {
            let _ = writeln!(out, "{k}={v}");
        }
        let _ = writeln!(out, "n_predictions={}", self.n_predictions);
        let _ = writeln!(out, "mae={:.6}", self.mae);
        let _ = writeln!(out, "rmse={:.6}", self.rmse);
        for b in 0..N_BINS {
            let _ = writeln!(out, "mae_bin_{b}={}", fmt_opt(self.mae_by_bin[b]));
            let _ = writeln!(out, "count_bin_{b}={}", self.count_by_bin[b]);
        }
        for (level, cov) in &self.calibration {
            let _ = writeln!(out, "coverage_{level:.1}={cov:.6}");
        }
        out
    }

    /// `metric,bin,value` rows; whole-horizon metrics use bin `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,bin,value\n");
        let _ = writeln!(out, "n_predictions,all,{}", self.n_predictions);
        let _ = writeln!(out, "mae,all,{:.6}", self.mae);
        let _ = writeln!(out, "rmse,all,{:.6}", self.rmse);
        for b in 0..N_BINS {
            let _ = writeln!(out, "mae,{b},{}", fmt_opt(self.mae_by_bin[b]));
            let _ = writeln!(out, "count,{b},{}", self.count_by_bin[b]);
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into())
}

/// MAE, RMSE and per-bin MAE over events observed within `(reference, reference + horizon]`.
/// Calibration is filled when every retained record carries at least two samples.
pub fn evaluate(records: &[PredictionRecord], horizon: i64) -> Result<EvaluationReport> {
    let kept: Vec<&PredictionRecord> = records.iter().filter(|r| r.in_horizon(horizon)).collect();
    if kept.is_empty() {
        return Err(Error::Data("no prediction falls inside the horizon".into()));
    }
    let (mut abs, mut sq) = (0.0, 0.0);
    let mut bin_sum = [0.0; N_BINS];
    let mut bin_n = [0usize; N_BINS];
    for r in &kept {
        let e = r.predicted - r.observed;
        abs += e.abs();
        sq += e * e;
        bin_sum[r.bin()] += e.abs();
        bin_n[r.bin()] += 1;
    }
    let n = kept.len() as f64;
    let mut mae_by_bin = [None; N_BINS];
    for b in 0..N_BINS {
        if bin_n[b] > 0 {
            mae_by_bin[b] = Some(bin_sum[b] / bin_n[b] as f64);
        }
    }
    let calibration = if kept.iter().all(|r| r.samples.len() >= 2) {
        let cells: Vec<(&[f64], f64)> = kept.iter().map(|r| (r.samples.as_slice(), r.observed)).collect();
        calibration_curve(&cells, &DEFAULT_LEVELS)?
    } else {
        Vec::new()
    };
    Ok(EvaluationReport {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mae_by_bin,
        count_by_bin: bin_n,
        calibration,
        n_predictions: kept.len(),
    })
}

/// Percentile of sorted data, interpolating linearly at position `q * (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fraction of observations inside the central interval of each nominal level.
pub fn calibration_curve(cells: &[(&[f64], f64)], levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    if cells.is_empty() {
        return Err(Error::Data("calibration needs at least one event".into()));
    }
    let mut sorted: Vec<Vec<f64>> = Vec::with_capacity(cells.len());
    for (samples, _) in cells {
        if samples.len() < 2 {
            return Err(Error::Data("calibration needs at least 2 samples per event".into()));
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        sorted.push(s);
    }
    Ok(levels
        .iter()
        .map(|&p| {
            let inside = sorted
                .iter()
                .zip(cells)
                .filter(|(s, (_, obs))| {
                    let lo = percentile(s, (1.0 - p) / 2.0);
                    let hi = percentile(s, (1.0 + p) / 2.0);
                    *obs >= lo && *obs <= hi
                })
                .count();
            (p, inside as f64 / cells.len() as f64)
        })
        .collect())
}

/// `nominal,empirical` rows.
pub fn calibration_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("nominal,empirical\n");
    for (p, c) in curve {
        let _ = writeln!(out, "{p:.1},{c:.6}");
    }
    out
}
