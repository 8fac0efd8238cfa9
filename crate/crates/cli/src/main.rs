//! `nccrb` command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nccrb::closed_form::{nc_crb_limit_zero_sep, nc_gain, two_source_crb, two_source_nc_crb, TwoSourceParams};
use nccrb::config::{parse_angle, parse_config, Output, SweepSpec};
use nccrb::report::{format_float, json_float};
use nccrb::resolvability::{scan_table, PhaseDraw};
use nccrb::selftest::run_selftest;
use nccrb::sweep::{emit_plot_script, hash_serialized, run_sweep, write_file, PlotKind, RunManifest, SweepResult};
use nccrb::Error;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "nccrb", version, about = "Deterministic CRBs for R-D estimation with strictly non-circular sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output file; stdout when absent.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Worker threads for sweeps and scans.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Both bounds and the FIM oracle for the config scenario.
    Bound,
    /// Evaluate the config sweep, one row per axis point.
    Sweep {
        /// Also write a plot script next to `--out`:
        /// rmse_snr, rmse_sensors, gain_sep or table.
        #[arg(long, value_name = "KIND")]
        plot: Option<String>,
    },
    /// Resolvability scan on a centered ULA.
    Table {
        #[arg(long, default_value_t = 4)]
        sensors: usize,
        #[arg(long, default_value_t = 20)]
        snapshots: usize,
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        snr_db: f64,
        /// Largest source count; defaults to 2(M−1)+1.
        #[arg(long)]
        d_max: Option<usize>,
        /// Put every source at this phase instead of drawing phases.
        #[arg(long, value_name = "ANGLE")]
        equal_phase: Option<String>,
        /// Also write an aligned text table next to `--out`.
        #[arg(long)]
        plot: bool,
    },
    /// Closed-form two-source bounds and NC gain.
    Gain {
        #[arg(long, default_value_t = 15)]
        sensors: usize,
        /// One or more separations, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        delta_mu: Vec<f64>,
        /// Rotation-phase separation.
        #[arg(long, default_value = "pi/2", value_name = "ANGLE")]
        delta_phi: String,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        rho: f64,
        /// Effective SNR of source 1 (N·P/σ², linear).
        #[arg(long, default_value_t = 1.0)]
        snr1: f64,
        #[arg(long, default_value_t = 1.0)]
        snr2: f64,
        /// Phase-reference offset from the centroid.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        delta: f64,
    },
    /// Seeded consistency checks of the bound implementations.
    Selftest,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigParse { .. } | Error::ConfigSemantic { .. } | Error::Io { .. } | Error::InvalidInput(_) => {
                Failure::config(e.to_string())
            }
            other => Failure::numeric(other.to_string()),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn load_spec(cli: &Cli) -> CliResult<SweepSpec> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::config("this subcommand needs --config PATH"))?;
    let mut spec = parse_config(path)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => Ok(write_file(path, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn render_sweep(res: &SweepResult, format: Format) -> String {
    match format {
        Format::Csv => res.to_csv(),
        Format::Json => format!("{:#}\n", res.to_json()),
    }
}

fn bound(cli: &Cli) -> CliResult {
    let mut spec = load_spec(cli)?;
    spec.sweep = None;
    for o in [Output::Crb, Output::NcCrb, Output::FimOracle] {
        if !spec.outputs.contains(&o) {
            spec.outputs.push(o);
        }
    }
    let out = cli.out.clone().or_else(|| spec.out_path.clone());
    let res = run_sweep(&spec, cli.threads)?;
    emit(out.as_deref(), &render_sweep(&res, cli.format))?;
    let row = &res.rows[0];
    if row.status != "ok" || row.values.iter().any(|v| !v.is_finite()) {
        return Err(Failure::numeric(format!("bound evaluation failed: {}", row.status)));
    }
    Ok(())
}

fn sweep(cli: &Cli, plot: Option<&str>) -> CliResult {
    let spec = load_spec(cli)?;
    let kind: Option<PlotKind> = plot.map(str::parse).transpose()?;
    let out = cli.out.clone().or_else(|| spec.out_path.clone());
    if kind.is_some() && (out.is_none() || cli.format != Format::Csv) {
        return Err(Failure::config("--plot needs a CSV written to --out"));
    }
    let res = run_sweep(&spec, cli.threads)?;
    emit(out.as_deref(), &render_sweep(&res, cli.format))?;
    if let (Some(kind), Some(path)) = (kind, out) {
        let script = emit_plot_script(&path, kind)?;
        eprintln!("wrote {}", script.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn table(
    cli: &Cli,
    sensors: usize,
    snapshots: usize,
    snr_db: f64,
    d_max: Option<usize>,
    equal_phase: Option<&str>,
    plot: bool,
) -> CliResult {
    let seed = cli.seed.unwrap_or(0);
    let d_max = d_max.unwrap_or(2 * sensors.saturating_sub(1) + 1);
    let phases = match equal_phase {
        Some(s) => PhaseDraw::Equal(parse_angle(s).map_err(Failure::config)?),
        None => PhaseDraw::Random,
    };
    if plot && (cli.out.is_none() || cli.format != Format::Csv) {
        return Err(Failure::config("--plot needs a CSV written to --out"));
    }
    let pool = threads_pool(cli.threads)?;
    let report = pool.install(|| scan_table(sensors, snapshots, snr_db, d_max, seed, phases))?;
    let params = json!({
        "sensors": sensors,
        "snapshots": snapshots,
        "snr_db": snr_db,
        "d_max": d_max,
        "equal_phase": equal_phase,
        "seed": seed,
    });
    let statuses = report
        .rows
        .iter()
        .map(|r| if r.crb_rmse.is_finite() && r.nc_crb_rmse.is_finite() { "ok" } else { "singular" }.to_string())
        .collect();
    let manifest = RunManifest::new(hash_serialized(&params), seed, statuses);
    let text = match cli.format {
        Format::Csv => format!("{}{}", manifest.header(), report.to_csv()),
        Format::Json => {
            let rows: Vec<_> = report
                .rows
                .iter()
                .map(|r| json!({"d": r.d, "crb_rmse": json_float(r.crb_rmse), "nc_crb_rmse": json_float(r.nc_crb_rmse)}))
                .collect();
            format!("{:#}\n", json!({"manifest": manifest, "config": params, "rows": rows}))
        }
    };
    emit(cli.out.as_deref(), &text)?;
    if plot {
        let path = cli.out.as_deref().expect("checked above");
        let txt = emit_plot_script(path, PlotKind::Table)?;
        eprintln!("wrote {}", txt.display());
    } else if cli.out.is_some() {
        eprint!("{}", report.to_text_table());
    }
    Ok(())
}

fn threads_pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Failure::config(format!("cannot start worker pool: {e}")))
}

#[allow(clippy::too_many_arguments)]
fn gain(cli: &Cli, sensors: usize, delta_mu: &[f64], delta_phi: &str, rho: f64, snr: [f64; 2], delta: f64) -> CliResult {
    let dphi = parse_angle(delta_phi).map_err(Failure::config)?;
    let mut rows = Vec::with_capacity(delta_mu.len());
    for &dm in delta_mu {
        let p = TwoSourceParams::from_sources(sensors, [0.0, dm], [0.0, dphi], delta, rho, snr)?;
        rows.push((p, two_source_crb(&p), two_source_nc_crb(&p), nc_crb_limit_zero_sep(&p), nc_gain(&p)));
    }
    let params = json!({
        "sensors": sensors,
        "delta_mu": delta_mu,
        "delta_phi": dphi,
        "rho": rho,
        "snr1": snr[0],
        "snr2": snr[1],
        "delta": delta,
    });
    let manifest = RunManifest::new(hash_serialized(&params), cli.seed.unwrap_or(0), vec!["ok".into(); rows.len()]);
    let text = match cli.format {
        Format::Csv => {
            let mut s = manifest.header();
            s.push_str("delta_mu,delta_phi,crb_closed,nc_crb_closed,nc_crb_limit,nc_gain\n");
            for (p, crb, nc, lim, g) in &rows {
                let cells = [p.delta_mu, p.delta_phi, *crb, *nc, *lim, *g].map(format_float);
                let _ = writeln!(s, "{}", cells.join(","));
            }
            s
        }
        Format::Json => {
            let rows: Vec<_> = rows
                .iter()
                .map(|(p, crb, nc, lim, g)| {
                    json!({
                        "delta_mu": p.delta_mu,
                        "delta_phi": p.delta_phi,
                        "crb_closed": json_float(*crb),
                        "nc_crb_closed": json_float(*nc),
                        "nc_crb_limit": json_float(*lim),
                        "nc_gain": json_float(*g),
                    })
                })
                .collect();
            format!("{:#}\n", json!({"manifest": manifest, "config": params, "rows": rows}))
        }
    };
    emit(cli.out.as_deref(), &text)
}

fn selftest(cli: &Cli) -> CliResult<bool> {
    let seed = cli.seed.unwrap_or(0);
    let checks = run_selftest(seed);
    let all = checks.iter().all(|c| c.passed);
    let manifest = RunManifest::new(
        hash_serialized(&json!({"seed": seed})),
        seed,
        checks.iter().map(|c| if c.passed { "ok" } else { "fail" }.to_string()).collect(),
    );
    let text = match cli.format {
        Format::Csv => {
            let mut s = manifest.header();
            s.push_str("check,cases,worst,tolerance,passed\n");
            for c in &checks {
                let _ = writeln!(s, "{},{},{},{},{}", c.name, c.cases, format_float(c.worst), format_float(c.tolerance), c.passed);
            }
            s
        }
        Format::Json => format!("{:#}\n", json!({"manifest": manifest, "checks": checks})),
    };
    emit(cli.out.as_deref(), &text)?;
    for c in &checks {
        eprintln!("{} {} ({} cases, worst {:.3e}, tol {:.0e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.cases, c.worst, c.tolerance);
    }
    Ok(all)
}

fn run(cli: &Cli) -> CliResult<bool> {
    match &cli.command {
        Command::Bound => bound(cli).map(|_| true),
        Command::Sweep { plot } => sweep(cli, plot.as_deref()).map(|_| true),
        Command::Table {
            sensors,
            snapshots,
            snr_db,
            d_max,
            equal_phase,
            plot,
        } => table(cli, *sensors, *snapshots, *snr_db, *d_max, equal_phase.as_deref(), *plot).map(|_| true),
        Command::Gain {
            sensors,
            delta_mu,
            delta_phi,
            rho,
            snr1,
            snr2,
            delta,
        } => gain(cli, *sensors, delta_mu, delta_phi, *rho, [*snr1, *snr2], *delta).map(|_| true),
        Command::Selftest => selftest(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("nccrb: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
