//! TOML experiment files.
//!
//! ```toml
//! seed = 7
//! out = "fig1.csv"
//!
//! [geometry]
//! modes = ["ula(4, centroid)", "ula(3, centroid)"]   # or explicit coordinate lists
//!
//! [scenario]
//! mu = [[-0.5, 0.2, 0.9], [0.4, -0.6, 0.1]]   # one row per mode; a flat list for 1-D
//! phi = [0, "pi/4", "pi/2"]
//! powers = [1, 1, 1]        # default: all ones
//! corr = 0.9                # scalar (all pairs) or full matrix; default 0
//! snapshots = 20
//! snr_db = 10               # or sigma2, never both
//! symbols = "exact"         # "exact" (sample moments hit the target) or "random"
//!
//! [sweep]
//! axis = "snr_db"           # snr_db | sensors | delta_mu | correlation | delta_phi
//! start = -10
//! stop = 30
//! points = 41
//! scale = "linear"          # or "log"
//! outputs = ["crb", "nc_crb"]
//! reference = "centroid"    # sensors axis only
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ula_coords, Reference, SamplingGrid};
use crate::linalg::RMatrix;
use crate::signal::{psd_factor, uniform_correlation};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    geometry: RawGeometry,
    scenario: RawScenario,
    sweep: Option<RawSweep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    modes: Vec<RawMode>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawMode {
    Coords(Vec<f64>),
    Helper(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawAngle {
    Number(f64),
    Expr(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawMu {
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawCorr {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    mu: RawMu,
    phi: Vec<RawAngle>,
    powers: Option<Vec<f64>>,
    corr: Option<RawCorr>,
    snapshots: usize,
    sigma2: Option<f64>,
    snr_db: Option<f64>,
    symbols: Option<SymbolMode>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    axis: Axis,
    start: f64,
    stop: f64,
    points: usize,
    scale: Option<Scale>,
    outputs: Option<Vec<Output>>,
    reference: Option<Reference>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolMode {
    Exact,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    SnrDb,
    Sensors,
    DeltaMu,
    Correlation,
    DeltaPhi,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::SnrDb => "snr_db",
            Axis::Sensors => "sensors",
            Axis::DeltaMu => "delta_mu",
            Axis::Correlation => "correlation",
            Axis::DeltaPhi => "delta_phi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Crb,
    NcCrb,
    NcCrbClosed,
    CrbClosed,
    NcGain,
    FimOracle,
}

impl Output {
    pub fn needs_two_source_ula(self) -> bool {
        matches!(self, Output::NcCrbClosed | Output::CrbClosed | Output::NcGain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Sigma2(f64),
    SnrDb(f64),
}

/// Scenario fields before the sweep axis is applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioTemplate {
    #[serde(serialize_with = "rows")]
    pub mu: RMatrix,
    pub phi: Vec<f64>,
    pub powers: Vec<f64>,
    #[serde(serialize_with = "rows")]
    pub corr: RMatrix,
    pub snapshots: usize,
    pub noise: Noise,
    pub symbols: SymbolMode,
}

impl ScenarioTemplate {
    pub fn sources(&self) -> usize {
        self.phi.len()
    }

    /// `σ²`, converting an SNR against the weakest source power.
    pub fn sigma2(&self) -> f64 {
        match self.noise {
            Noise::Sigma2(s) => s,
            Noise::SnrDb(db) => sigma2_from_snr_db(&self.powers, db),
        }
    }
}

fn rows<S: serde::Serializer>(m: &RMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

/// `P_min / 10^(SNR/10)`.
pub fn sigma2_from_snr_db(powers: &[f64], snr_db: f64) -> f64 {
    let p_min = powers.iter().copied().fold(f64::INFINITY, f64::min);
    p_min / 10f64.powf(snr_db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRange {
    pub axis: Axis,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub scale: Scale,
    pub reference: Reference,
}

impl SweepRange {
    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                let v = match self.scale {
                    Scale::Linear => self.start + t * (self.stop - self.start),
                    Scale::Log => (self.start.ln() + t * (self.stop.ln() - self.start.ln())).exp(),
                };
                if self.axis == Axis::Sensors {
                    v.round()
                } else {
                    v
                }
            })
            .collect()
    }
}

/// A validated experiment: geometry, scenario template, optional sweep and
/// the requested outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub seed: u64,
    pub out_path: Option<PathBuf>,
    pub grid: SamplingGrid,
    pub scenario: ScenarioTemplate,
    pub sweep: Option<SweepRange>,
    pub outputs: Vec<Output>,
}

fn semantic(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::ConfigSemantic {
        key: key.into(),
        message: message.into(),
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.chars().count(), |i| before[i + 1..].chars().count()) + 1;
    (line, column)
}

/// `ula(M)` or `ula(M, centroid|first)`.
fn parse_mode_helper(s: &str) -> std::result::Result<Vec<f64>, String> {
    let s = s.trim();
    let inner = s
        .strip_prefix("ula(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("unknown mode helper `{s}`, expected ula(M) or ula(M, centroid|first)"))?;
    let mut parts = inner.split(',').map(str::trim);
    let m: usize = parts
        .next()
        .unwrap_or("")
        .parse()
        .map_err(|_| format!("bad sensor count in `{s}`"))?;
    let reference = match parts.next() {
        None | Some("centroid") => Reference::Centroid,
        Some("first") => Reference::First,
        Some(other) => return Err(format!("unknown phase reference `{other}`")),
    };
    if parts.next().is_some() {
        return Err(format!("too many arguments in `{s}`"));
    }
    ula_coords(m, reference).map_err(|e| e.to_string())
}

/// Numbers, `pi`, `k*pi`, `kpi`, `pi/n`, `k*pi/n`, optionally negated.
pub fn parse_angle(s: &str) -> std::result::Result<f64, String> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let err = || format!("cannot read angle `{s}`");
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.as_str()),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().map_err(|_| err())?),
        None => (body, 1.0),
    };
    let coef = num.strip_suffix("pi").ok_or_else(err)?;
    let coef = coef.strip_suffix('*').unwrap_or(coef);
    let k = if coef.is_empty() { 1.0 } else { coef.parse::<f64>().map_err(|_| err())? };
    let v = k * PI / den;
    Ok(if neg { -v } else { v })
}

pub fn parse_config(path: &Path) -> Result<SweepSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<SweepSpec> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        Error::ConfigParse {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<SweepSpec> {
    if raw.geometry.modes.is_empty() {
        return Err(semantic("geometry.modes", "need at least one mode"));
    }
    let modes = raw
        .geometry
        .modes
        .into_iter()
        .enumerate()
        .map(|(i, m)| match m {
            RawMode::Coords(c) => Ok(c),
            RawMode::Helper(h) => parse_mode_helper(&h).map_err(|e| semantic(format!("geometry.modes[{i}]"), e)),
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = SamplingGrid::new(modes).map_err(|e| semantic("geometry.modes", e.to_string()))?;
    let r = grid.dims();

    let sc = raw.scenario;
    let phi = sc
        .phi
        .iter()
        .enumerate()
        .map(|(i, a)| match a {
            RawAngle::Number(v) => Ok(*v),
            RawAngle::Expr(s) => parse_angle(s).map_err(|e| semantic(format!("scenario.phi[{i}]"), e)),
        })
        .collect::<Result<Vec<_>>>()?;
    let d = phi.len();
    if d == 0 {
        return Err(semantic("scenario.phi", "need at least one source"));
    }
    let mu = match sc.mu {
        RawMu::Flat(v) if r == 1 => RMatrix::from_row_slice(1, v.len(), &v),
        RawMu::Flat(_) => return Err(semantic("scenario.mu", format!("grid has {r} modes; give one row of frequencies per mode"))),
        RawMu::Rows(rows) => {
            if rows.len() != r {
                return Err(semantic("scenario.mu", format!("expected {r} rows, got {}", rows.len())));
            }
            if rows.iter().any(|row| row.len() != d) {
                return Err(semantic("scenario.mu", format!("every row needs {d} entries")));
            }
            RMatrix::from_fn(r, d, |i, j| rows[i][j])
        }
    };
    if mu.ncols() != d {
        return Err(semantic("scenario.mu", format!("expected {d} frequencies to match scenario.phi, got {}", mu.ncols())));
    }
    let powers = sc.powers.unwrap_or_else(|| vec![1.0; d]);
    if powers.len() != d {
        return Err(semantic("scenario.powers", format!("expected {d} entries, got {}", powers.len())));
    }
    if powers.iter().any(|p| !(*p > 0.0)) {
        return Err(semantic("scenario.powers", "powers must be positive"));
    }
    let corr = match sc.corr {
        None => uniform_correlation(d, 0.0),
        Some(RawCorr::Scalar(rho)) => uniform_correlation(d, rho),
        Some(RawCorr::Matrix(rows)) => {
            if rows.len() != d || rows.iter().any(|row| row.len() != d) {
                return Err(semantic("scenario.corr", format!("expected a {d}x{d} matrix")));
            }
            RMatrix::from_fn(d, d, |i, j| rows[i][j])
        }
    };
    if sc.snapshots == 0 {
        return Err(semantic("scenario.snapshots", "must be ≥ 1"));
    }
    let noise = match (sc.sigma2, sc.snr_db) {
        (Some(_), Some(_)) => return Err(semantic("scenario.sigma2", "give either sigma2 or snr_db, not both")),
        (None, None) => return Err(semantic("scenario.sigma2", "one of sigma2 or snr_db is required")),
        (Some(s), None) if !(s > 0.0) || !s.is_finite() => return Err(semantic("scenario.sigma2", "must be positive")),
        (Some(s), None) => Noise::Sigma2(s),
        (None, Some(db)) if !db.is_finite() => return Err(semantic("scenario.snr_db", "must be finite")),
        (None, Some(db)) => Noise::SnrDb(db),
    };
    let scenario = ScenarioTemplate {
        mu,
        phi,
        powers,
        corr,
        snapshots: sc.snapshots,
        noise,
        symbols: sc.symbols.unwrap_or(SymbolMode::Exact),
    };

    let (sweep, outputs) = match raw.sweep {
        None => (None, vec![Output::Crb, Output::NcCrb, Output::FimOracle]),
        Some(s) => {
            let outputs = s.outputs.unwrap_or_else(|| vec![Output::Crb, Output::NcCrb]);
            let range = SweepRange {
                axis: s.axis,
                start: s.start,
                stop: s.stop,
                points: s.points,
                scale: s.scale.unwrap_or(Scale::Linear),
                reference: s.reference.unwrap_or(Reference::Centroid),
            };
            (Some(range), outputs)
        }
    };
    let spec = SweepSpec {
        seed: raw.seed.unwrap_or(0),
        out_path: raw.out,
        grid,
        scenario,
        sweep,
        outputs,
    };
    validate(&spec)?;
    Ok(spec)
}

fn is_unit_ula(grid: &SamplingGrid) -> bool {
    grid.dims() == 1 && grid.mode(0).windows(2).all(|w| ((w[1] - w[0]) - 1.0).abs() < 1e-9)
}

fn validate(spec: &SweepSpec) -> Result<()> {
    let sc = &spec.scenario;
    let d = sc.sources();
    let varies_corr = spec.sweep.as_ref().is_some_and(|s| s.axis == Axis::Correlation);
    if !varies_corr {
        for i in 0..d {
            for j in 0..d {
                let v = sc.corr[(i, j)];
                if (i == j && (v - 1.0).abs() > 1e-12) || (sc.corr[(j, i)] - v).abs() > 1e-12 || v.abs() > 1.0 {
                    return Err(semantic("scenario.corr", "must be symmetric with unit diagonal and entries in [-1, 1]"));
                }
            }
        }
        psd_factor(&sc.corr).map_err(|e| semantic("scenario.corr", e.to_string()))?;
    }
    if spec.outputs.is_empty() {
        return Err(semantic("sweep.outputs", "request at least one output"));
    }
    let Some(sweep) = &spec.sweep else {
        return check_closed_outputs(spec, &spec.grid);
    };
    if sweep.points < 2 {
        return Err(semantic("sweep.points", format!("need at least 2 points, got {}", sweep.points)));
    }
    if !sweep.start.is_finite() || !sweep.stop.is_finite() {
        return Err(semantic("sweep.start", "range must be finite"));
    }
    if sweep.scale == Scale::Log && !(sweep.start > 0.0 && sweep.stop > 0.0) {
        return Err(semantic("sweep.scale", "log scale needs a positive range"));
    }
    match sweep.axis {
        Axis::Sensors => {
            if spec.grid.dims() != 1 {
                return Err(semantic("sweep.axis", "sensors sweeps use a 1-D ULA; give a single geometry mode"));
            }
            if sweep.start.min(sweep.stop).round() < 2.0 {
                return Err(semantic("sweep.start", "sensor counts must be ≥ 2"));
            }
            let smallest = sweep.start.min(sweep.stop).round() as usize;
            let grid = SamplingGrid::ula(smallest.max(2), sweep.reference)?;
            check_closed_outputs(spec, &grid)?;
            if spec.outputs.iter().any(|o| o.needs_two_source_ula()) && smallest < 4 {
                return Err(semantic("sweep.start", "closed-form outputs need M ≥ 4"));
            }
        }
        Axis::DeltaMu | Axis::DeltaPhi => {
            if d != 2 {
                return Err(semantic("sweep.axis", format!("{} sweeps need exactly 2 sources, got {d}", sweep.axis.label())));
            }
            check_closed_outputs(spec, &spec.grid)?;
        }
        Axis::Correlation => {
            if d < 2 {
                return Err(semantic("sweep.axis", "correlation sweeps need at least 2 sources"));
            }
            if sweep.start.abs() > 1.0 || sweep.stop.abs() > 1.0 {
                return Err(semantic("sweep.start", "correlation must lie in [-1, 1]"));
            }
            check_closed_outputs(spec, &spec.grid)?;
        }
        Axis::SnrDb => check_closed_outputs(spec, &spec.grid)?,
    }
    Ok(())
}

fn check_closed_outputs(spec: &SweepSpec, grid: &SamplingGrid) -> Result<()> {
    if let Some(o) = spec.outputs.iter().find(|o| o.needs_two_source_ula()) {
        if spec.scenario.sources() != 2 || !is_unit_ula(grid) {
            return Err(semantic(
                "sweep.outputs",
                format!("{o:?} needs exactly 2 sources on a 1-D ULA with unit spacing"),
            ));
        }
        if grid.size() < 4 {
            return Err(semantic("sweep.outputs", format!("{o:?} needs M ≥ 4")));
        }
    }
    Ok(())
}
