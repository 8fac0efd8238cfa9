//! How many sources a ULA can resolve under each signal model, by scanning
//! the rank of the bounds over the source count.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crb::{det_crb, det_nc_crb};
use crate::error::{Error, Result};
use crate::geometry::{build_steering_set, Reference, SamplingGrid};
use crate::linalg::RMatrix;
use crate::report::format_float;
use crate::signal::{exact_moment_symbols, signal_covariance, stream_rng, uniform_correlation, SourceScenario, SymbolBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Arbitrary,
    StrictlyNoncircular,
}

/// `M − 1` for arbitrary signals, `2(M − 1)` for strictly non-circular ones.
pub fn max_resolvable(m: usize, model: Model) -> Result<usize> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 sensors, got {m}")));
    }
    Ok(match model {
        Model::Arbitrary => m - 1,
        Model::StrictlyNoncircular => 2 * (m - 1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvabilityRow {
    pub d: usize,
    pub crb_rmse: f64,
    pub nc_crb_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvabilityReport {
    pub m: usize,
    pub snapshots: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub rows: Vec<ResolvabilityRow>,
}

/// Where the rotation phases of a scan come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseDraw {
    /// Uniform on `[0, π)`, one stream per source count.
    Random,
    /// Every source at the same phase.
    Equal(f64),
}

/// Frequencies equally spaced over `[−2, 2]`, or `0` for one source.
pub fn table_frequencies(d: usize) -> Vec<f64> {
    if d == 1 {
        vec![0.0]
    } else {
        (0..d).map(|i| -2.0 + 4.0 * i as f64 / (d - 1) as f64).collect()
    }
}

fn unit_symbols(scenario: &SourceScenario, seed: u64, stream: u64) -> Result<SymbolBlock> {
    if scenario.snapshots >= scenario.sources() {
        return exact_moment_symbols(scenario, seed, stream);
    }
    // Too few snapshots for exact moments: rescale each row to unit power.
    let block = crate::signal::generate_symbols_stream(scenario, seed, stream)?;
    let mut s0 = block.s0;
    for mut row in s0.row_iter_mut() {
        let p = row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64;
        if p > 0.0 {
            row /= p.sqrt();
        }
    }
    SymbolBlock::from_symbols(s0)
}

/// Both bounds for `d` unit-power uncorrelated sources on an `M`-element
/// centered ULA, as per-source RMSE.
pub fn evaluate_row(m: usize, snapshots: usize, sigma2: f64, phi: &[f64], seed: u64) -> Result<ResolvabilityRow> {
    let d = phi.len();
    let mu = RMatrix::from_row_slice(1, d, &table_frequencies(d));
    let grid = SamplingGrid::ula(m, Reference::Centroid)?;
    let steering = build_steering_set(&grid, &mu)?;
    let scenario = SourceScenario::new(mu, phi.to_vec(), vec![1.0; d], uniform_correlation(d, 0.0), snapshots, sigma2)?;
    let symbols = unit_symbols(&scenario, seed, 2000 + d as u64)?;
    let crb = det_crb(&steering, &signal_covariance(&symbols.rhat, phi)?, sigma2, snapshots)?;
    let nc = det_nc_crb(&steering, phi, &symbols.rhat, sigma2, snapshots)?;
    Ok(ResolvabilityRow {
        d,
        crb_rmse: crb.rmse(),
        nc_crb_rmse: nc.rmse(),
    })
}

/// Scan `d = 1..=d_max` with frequencies spread over `[−2, 2]`, unit powers,
/// uncorrelated symbols and `σ² = 10^(−SNR/10)`.
pub fn scan_table(m: usize, snapshots: usize, snr_db: f64, d_max: usize, seed: u64, phases: PhaseDraw) -> Result<ResolvabilityReport> {
    if d_max == 0 {
        return Err(Error::InvalidInput("d_max must be ≥ 1".into()));
    }
    if m < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 sensors, got {m}")));
    }
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    let rows = (1..=d_max)
        .into_par_iter()
        .map(|d| {
            let phi: Vec<f64> = match phases {
                PhaseDraw::Random => {
                    let mut rng = stream_rng(seed, 1000 + d as u64);
                    (0..d).map(|_| rng.random_range(0.0..PI)).collect()
                }
                PhaseDraw::Equal(p) => vec![p; d],
            };
            evaluate_row(m, snapshots, sigma2, &phi, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResolvabilityReport {
        m,
        snapshots,
        snr_db,
        seed,
        rows,
    })
}

impl ResolvabilityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d,crb_rmse,nc_crb_rmse\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.d, format_float(r.crb_rmse), format_float(r.nc_crb_rmse));
        }
        out
    }

    /// Aligned table with one column per source count.
    pub fn to_text_table(&self) -> String {
        let cell = |x: f64| if x.is_finite() { format!("{x:.4}") } else { "∞".to_string() };
        let header: Vec<String> = std::iter::once("d".to_string())
            .chain(self.rows.iter().map(|r| r.d.to_string()))
            .collect();
        let crb: Vec<String> = std::iter::once("CRB".to_string())
            .chain(self.rows.iter().map(|r| cell(r.crb_rmse)))
            .collect();
        let nc: Vec<String> = std::iter::once("NC CRB".to_string())
            .chain(self.rows.iter().map(|r| cell(r.nc_crb_rmse)))
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| [&header, &crb, &nc].iter().map(|row| row[i].chars().count()).max().unwrap_or(0))
            .collect();
        let line = |row: &[String]| {
            row.iter()
                .zip(&widths)
                .map(|(s, w)| format!("{}{}", " ".repeat(w - s.chars().count()), s))
                .collect::<Vec<_>>()
                .join("  ")
        };
        format!(
            "M = {}, N = {}, SNR = {} dB\n{}\n{}\n{}\n",
            self.m,
            self.snapshots,
            format_float(self.snr_db),
            line(&header),
            line(&crb),
            line(&nc)
        )
    }

    /// Largest `d` with a finite entry, per model.
    pub fn finite_limits(&self) -> (usize, usize) {
        let last = |f: fn(&ResolvabilityRow) -> f64| {
            self.rows.iter().filter(|r| f(r).is_finite()).map(|r| r.d).max().unwrap_or(0)
        };
        (last(|r| r.crb_rmse), last(|r| r.nc_crb_rmse))
    }
}
