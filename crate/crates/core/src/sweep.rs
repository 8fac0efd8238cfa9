//! Sweep execution, run manifests, CSV/JSON rendering and plot scripts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::closed_form::{nc_gain, two_source_crb, two_source_nc_crb, TwoSourceParams};
use crate::config::{sigma2_from_snr_db, Axis, Output, SweepSpec, SymbolMode};
use crate::crb::{det_crb, det_nc_crb, fim_assemble, fim_mu_block_inverse};
use crate::error::{Error, Result};
use crate::geometry::{build_steering_set, phase_reference, SamplingGrid};
use crate::report::{format_float, json_float};
use crate::signal::{exact_moment_symbols, generate_symbols_stream, signal_covariance, uniform_correlation, SourceScenario};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// First RNG stream used for per-point symbol draws; point `i` uses
/// `POINT_STREAM_BASE + i`.
pub const POINT_STREAM_BASE: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub schema: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_clock_unix: f64,
    pub statuses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub axis_value: Option<f64>,
    pub values: Vec<f64>,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub manifest: RunManifest,
    pub columns: Vec<String>,
    pub rows: Vec<PointResult>,
}

/// SHA-256 of the JSON form of `value`, hex encoded.
pub fn hash_serialized<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("value serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// SHA-256 of the resolved spec, hex encoded.
pub fn config_hash(spec: &SweepSpec) -> String {
    hash_serialized(spec)
}

impl RunManifest {
    /// Manifest stamped with the current wall clock.
    pub fn new(config_hash: String, seed: u64, statuses: Vec<String>) -> Self {
        let wall_clock_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Self {
            schema: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            config_hash,
            seed,
            wall_clock_unix,
            statuses,
        }
    }

    /// Header lines, each starting with `#`.
    pub fn header(&self) -> String {
        format!(
            "# schema={}\n# tool=nccrb {}\n# config_hash={}\n# seed={}\n# wall_clock_unix={:.3}\n",
            self.schema, self.tool_version, self.config_hash, self.seed, self.wall_clock_unix
        )
    }
}

fn output_column(o: Output) -> &'static str {
    match o {
        Output::Crb => "crb_rmse",
        Output::NcCrb => "nc_crb_rmse",
        Output::FimOracle => "fim_oracle_rmse",
        Output::CrbClosed => "crb_closed_rmse",
        Output::NcCrbClosed => "nc_crb_closed_rmse",
        Output::NcGain => "nc_gain",
    }
}

fn has_numeric_gain(spec: &SweepSpec) -> bool {
    spec.outputs.contains(&Output::Crb) && spec.outputs.contains(&Output::NcCrb)
}

/// Value columns in output order (the axis column and `status` excluded).
pub fn value_columns(spec: &SweepSpec) -> Vec<String> {
    let mut cols: Vec<String> = spec.outputs.iter().map(|o| output_column(*o).to_string()).collect();
    if has_numeric_gain(spec) {
        cols.push("nc_gain_numeric".into());
    }
    cols
}

struct PointInputs {
    grid: SamplingGrid,
    scenario: SourceScenario,
}

fn point_inputs(spec: &SweepSpec, axis_value: Option<f64>) -> Result<PointInputs> {
    let t = &spec.scenario;
    let mut grid = spec.grid.clone();
    let mut mu = t.mu.clone();
    let mut phi = t.phi.clone();
    let mut corr = t.corr.clone();
    let mut sigma2 = t.sigma2();
    if let (Some(sweep), Some(v)) = (&spec.sweep, axis_value) {
        match sweep.axis {
            Axis::SnrDb => sigma2 = sigma2_from_snr_db(&t.powers, v),
            Axis::Sensors => grid = SamplingGrid::ula(v as usize, sweep.reference)?,
            Axis::DeltaMu => mu[(0, 1)] = mu[(0, 0)] + v,
            Axis::Correlation => corr = uniform_correlation(t.sources(), v),
            Axis::DeltaPhi => phi[1] = phi[0] + v,
        }
    }
    let scenario = SourceScenario::new(mu, phi, t.powers.clone(), corr, t.snapshots, sigma2)?;
    Ok(PointInputs { grid, scenario })
}

fn evaluate(spec: &SweepSpec, axis_value: Option<f64>, index: usize) -> Result<(Vec<f64>, Vec<&'static str>)> {
    let PointInputs { grid, scenario } = point_inputs(spec, axis_value)?;
    let stream = POINT_STREAM_BASE + index as u64;
    let block = match spec.scenario.symbols {
        SymbolMode::Exact => exact_moment_symbols(&scenario, spec.seed, stream)?,
        SymbolMode::Random => generate_symbols_stream(&scenario, spec.seed, stream)?,
    };
    let steering = build_steering_set(&grid, &scenario.mu)?;
    let (sigma2, n, phi) = (scenario.sigma2, scenario.snapshots, &scenario.phi);
    let d = scenario.sources() as f64;

    let mut singular = Vec::new();
    let mut crb_trace = None;
    let mut nc_trace = None;
    let mut values = Vec::new();
    let closed = if spec.outputs.iter().any(|o| o.needs_two_source_ula()) {
        let m = grid.size();
        let snr: Vec<f64> = block.powers.iter().map(|p| n as f64 * p / sigma2).collect();
        Some(TwoSourceParams::from_sources(
            m,
            [scenario.mu[(0, 0)], scenario.mu[(0, 1)]],
            [phi[0], phi[1]],
            phase_reference(grid.mode(0)),
            block.rho[(0, 1)],
            [snr[0], snr[1]],
        )?)
    } else {
        None
    };
    for o in &spec.outputs {
        let v = match o {
            Output::Crb => {
                let b = det_crb(&steering, &signal_covariance(&block.rhat, phi)?, sigma2, n)?;
                crb_trace = Some(b.trace);
                b.rmse()
            }
            Output::NcCrb => {
                let b = det_nc_crb(&steering, phi, &block.rhat, sigma2, n)?;
                nc_trace = Some(b.trace);
                b.rmse()
            }
            Output::FimOracle => fim_mu_block_inverse(&fim_assemble(&steering, phi, &block.s0, sigma2)?)?.rmse(),
            Output::CrbClosed => (two_source_crb(closed.as_ref().expect("closed params")) / d).sqrt(),
            Output::NcCrbClosed => (two_source_nc_crb(closed.as_ref().expect("closed params")) / d).sqrt(),
            Output::NcGain => nc_gain(closed.as_ref().expect("closed params")),
        };
        if !v.is_finite() {
            singular.push(output_column(*o));
        }
        values.push(v);
    }
    if has_numeric_gain(spec) {
        let (c, nc) = (crb_trace.unwrap_or(f64::NAN), nc_trace.unwrap_or(f64::NAN));
        values.push(if c.is_infinite() && nc.is_infinite() { f64::NAN } else { c / nc });
    }
    Ok((values, singular))
}

/// One row of a sweep. Failures never propagate: they land in `status`.
pub fn evaluate_point(spec: &SweepSpec, axis_value: Option<f64>, index: usize) -> PointResult {
    let width = value_columns(spec).len();
    match evaluate(spec, axis_value, index) {
        Ok((values, singular)) => PointResult {
            axis_value,
            values,
            status: if singular.is_empty() {
                "ok".into()
            } else {
                format!("singular:{}", singular.join("+"))
            },
        },
        Err(e) => PointResult {
            axis_value,
            values: vec![f64::NAN; width],
            status: format!("error:{}", e.to_string().replace([',', '\n'], ";")),
        },
    }
}

/// Evaluate every axis point (or the single scenario when no sweep is
/// given) on a pool of `threads` workers; output order is axis order.
pub fn run_sweep(spec: &SweepSpec, threads: Option<usize>) -> Result<SweepResult> {
    let values: Vec<Option<f64>> = match &spec.sweep {
        Some(s) => s.values().into_iter().map(Some).collect(),
        None => vec![None],
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<PointResult> = pool.install(|| {
        values
            .par_iter()
            .enumerate()
            .map(|(i, v)| evaluate_point(spec, *v, i))
            .collect()
    });
    let manifest = RunManifest::new(config_hash(spec), spec.seed, rows.iter().map(|r| r.status.clone()).collect());
    let mut columns = Vec::new();
    if let Some(s) = &spec.sweep {
        columns.push(s.axis.label().to_string());
    }
    columns.extend(value_columns(spec));
    columns.push("status".into());
    Ok(SweepResult {
        spec: spec.clone(),
        manifest,
        columns,
        rows,
    })
}

impl SweepResult {
    /// Manifest header lines, each starting with `#`.
    pub fn manifest_header(&self) -> String {
        self.manifest.header()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.manifest_header();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            let mut cells: Vec<String> = Vec::new();
            if let Some(v) = r.axis_value {
                cells.push(format_float(v));
            }
            cells.extend(r.values.iter().map(|v| format_float(*v)));
            cells.push(r.status.clone());
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut obj = serde_json::Map::new();
                let mut cols = self.columns.iter();
                if let Some(v) = r.axis_value {
                    obj.insert(cols.next().expect("axis column").clone(), json_float(v));
                }
                for (c, v) in cols.by_ref().zip(&r.values) {
                    obj.insert(c.clone(), json_float(*v));
                }
                obj.insert("status".into(), serde_json::Value::String(r.status.clone()));
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::json!({
            "manifest": self.manifest,
            "config": self.spec,
            "columns": self.columns,
            "rows": rows,
        })
    }

    /// Column values by name, for tests and callers that post-process.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        let offset = usize::from(self.spec.sweep.is_some());
        Some(
            self.rows
                .iter()
                .map(|r| if idx < offset { r.axis_value.unwrap_or(f64::NAN) } else { r.values[idx - offset] })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    RmseSnr,
    RmseSensors,
    GainSep,
    Table,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmse_snr" => Ok(PlotKind::RmseSnr),
            "rmse_sensors" => Ok(PlotKind::RmseSensors),
            "gain_sep" => Ok(PlotKind::GainSep),
            "table" => Ok(PlotKind::Table),
            other => Err(Error::InvalidInput(format!("unknown plot kind `{other}`"))),
        }
    }
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput(format!("{} has no header row", path.display())))?;
    let columns = header.split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((columns, rows))
}

/// Write a gnuplot script next to `csv_path` (or, for [`PlotKind::Table`],
/// an aligned text table) and return its path.
pub fn emit_plot_script(csv_path: &Path, kind: PlotKind) -> Result<PathBuf> {
    let (columns, rows) = read_csv(csv_path)?;
    let missing = |name: &str| Error::InvalidInput(format!("{} lacks column `{name}`", csv_path.display()));
    let idx = |name: &str| columns.iter().position(|c| c == name);

    if kind == PlotKind::Table {
        let d = idx("d").ok_or_else(|| missing("d"))?;
        let crb = idx("crb_rmse").ok_or_else(|| missing("crb_rmse"))?;
        let nc = idx("nc_crb_rmse").ok_or_else(|| missing("nc_crb_rmse"))?;
        let cell = |s: &str| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => format!("{v:.4}"),
            Ok(_) => "∞".to_string(),
            Err(_) => s.to_string(),
        };
        let table: Vec<Vec<String>> = vec![
            std::iter::once("d".to_string()).chain(rows.iter().map(|r| r[d].clone())).collect(),
            std::iter::once("CRB".to_string()).chain(rows.iter().map(|r| cell(&r[crb]))).collect(),
            std::iter::once("NC CRB".to_string()).chain(rows.iter().map(|r| cell(&r[nc]))).collect(),
        ];
        let widths: Vec<usize> = (0..table[0].len())
            .map(|i| table.iter().map(|row| row[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &table {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{}{}", " ".repeat(w - s.chars().count()), s))
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        let path = csv_path.with_extension("txt");
        write_file(&path, &out)?;
        return Ok(path);
    }

    let (x, ylabel, logx, wanted): (&str, &str, bool, fn(&str) -> bool) = match kind {
        PlotKind::RmseSnr => ("snr_db", "RMSE", false, |c| c.ends_with("_rmse")),
        PlotKind::RmseSensors => ("sensors", "RMSE", true, |c| c.ends_with("_rmse")),
        PlotKind::GainSep => ("delta_mu", "NC gain", true, |c| c.starts_with("nc_gain")),
        PlotKind::Table => unreachable!(),
    };
    let xi = idx(x).ok_or_else(|| missing(x))?;
    let series: Vec<(usize, &String)> = columns.iter().enumerate().filter(|(_, c)| wanted(c)).collect();
    if series.is_empty() {
        return Err(missing(if kind == PlotKind::GainSep { "nc_gain" } else { "*_rmse" }));
    }
    let data = csv_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let png = csv_path.with_extension("png");
    let png = png.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut out = String::new();
    let _ = writeln!(out, "set terminal pngcairo size 800,600");
    let _ = writeln!(out, "set output '{png}'");
    let _ = writeln!(out, "set datafile separator ','");
    let _ = writeln!(out, "set datafile commentschars '#'");
    let _ = writeln!(out, "set datafile missing 'inf'");
    let _ = writeln!(out, "set key autotitle columnhead");
    let _ = writeln!(out, "set grid");
    let _ = writeln!(out, "set logscale y");
    if logx {
        let _ = writeln!(out, "set logscale x");
    }
    let xlabel = match kind {
        PlotKind::RmseSnr => "SNR [dB]",
        PlotKind::RmseSensors => "number of sensors M",
        _ => "source separation [rad]",
    };
    let _ = writeln!(out, "set xlabel '{xlabel}'");
    let _ = writeln!(out, "set ylabel '{ylabel}'");
    let plots: Vec<String> = series
        .iter()
        .map(|(i, name)| format!("'{data}' using {}:{} with linespoints title '{}'", xi + 1, i + 1, name.replace('_', " ")))
        .collect();
    let _ = writeln!(out, "plot {}", plots.join(", \\\n     "));
    let path = csv_path.with_extension("gp");
    write_file(&path, &out)?;
    Ok(path)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
