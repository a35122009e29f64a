//! Command-line front end. Every failure is reported on stderr as one JSON
//! object and mapped to a distinct exit code.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::boa::{boundary_manifold, is_in_boa, is_in_boa_by_manifold, membership_grid_csv, plot_phi_range, BoaOptions, ClearingSystems, Membership, BOUNDARY_BAND};
use crate::config::{resolve_preset, ConfigError, Method, RunManifest, ScenarioConfig, SweepSpec, MANIFEST_FILE};
use crate::error::ModelError;
use crate::params::REFERENCE_PRESET;
use crate::report::{fmt_sig, CctReport, CCT_CSV_HEADER};
use crate::sim::{Outcome, Scenario, DEFAULT_DT};
use crate::study::{assess, export_figure, preflight, reproduce_table, AssessOptions, Assessment, FIGURES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_PARAMETER: i32 = 4;
pub const EXIT_METHOD: i32 = 5;
pub const EXIT_IO: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "tsslab", version, about = "DFIG ride-through simulation and PLL synchronization stability assessment")]
pub struct Cli {
    /// Parameter preset (built-in `paper-appendix`, or a file in $TSSLAB_PRESET_DIR).
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "tsslab-out")]
    pub out: PathBuf,
    /// Integration step, s.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Worker threads for sweeps and tables (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the methods listed in a scenario config.
    Run { config: PathBuf },
    /// Single-method assessment.
    #[command(subcommand)]
    Assess(AssessCmd),
    /// Critical clearing time by simulation, basin and equal areas.
    Cct {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run a config over the axes of its `[sweep]` section.
    Sweep { config: PathBuf },
    /// Regenerate a reference CCT table (1 or 2).
    ReproduceTable {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=2))]
        table: u8,
    },
    /// Write plot data for a figure.
    ExportFigure {
        #[arg(value_parser = FIGURES)]
        figure: String,
        /// Undisturbed run for the time-series figure.
        #[arg(long)]
        no_fault: bool,
    },
    /// Write a template scenario config.
    Init {
        #[arg(default_value = "scenario.toml")]
        path: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum AssessCmd {
    /// Equal-area critical clearing angle and time.
    Eac(AssessArgs),
    /// Basin-of-attraction clearing time, with optional boundary and grid export.
    Boa {
        #[command(flatten)]
        args: AssessArgs,
        /// Write the stable-manifold boundary CSV.
        #[arg(long)]
        boundary: bool,
        /// Write an N x N membership grid CSV.
        #[arg(long)]
        grid: Option<usize>,
        /// Compare both membership tests on N random points.
        #[arg(long)]
        monte_carlo: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    pub config: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Self { code, kind, message: message.into() }
    }

    pub fn to_json(&self) -> String {
        json!({"error": self.kind, "message": self.message, "exit_code": self.code}).to_string()
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::new(EXIT_CONFIG, "config_read", e.to_string()),
            ConfigError::Parse { .. } => CliError::new(EXIT_CONFIG, "config_parse", e.to_string()),
            ConfigError::Invalid(_) => CliError::new(EXIT_USAGE, "config_invalid", e.to_string()),
            ConfigError::UnknownPreset { .. } => CliError::new(EXIT_CONFIG, "unknown_preset", e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidParameter { .. } | ModelError::NoEquilibrium { .. } | ModelError::CapacityExhausted { .. } => {
                CliError::new(EXIT_PARAMETER, "invalid_parameter", e.to_string())
            }
            _ => CliError::new(EXIT_METHOD, "method_failure", e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(EXIT_IO, "io", format!("{}: {e}", path.display()))
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let err = CliError::new(EXIT_USAGE, "usage", e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::new(EXIT_USAGE, "usage", e.to_string()))?;
    if let Some(dt) = cli.dt {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CliError::new(EXIT_USAGE, "usage", format!("--dt must be > 0, got {dt}")));
        }
    }
    pool.install(|| match &cli.command {
        Command::Run { config } => cmd_run(cli, config),
        Command::Assess(AssessCmd::Eac(a)) => cmd_assess(cli, a, Method::Eac),
        Command::Assess(AssessCmd::Boa { args, boundary, grid, monte_carlo }) => {
            cmd_assess(cli, args, Method::Boa)?;
            cmd_boa_extras(cli, &args.config, *boundary, *grid, *monte_carlo)
        }
        Command::Cct { config, format } => cmd_cct(cli, config, *format),
        Command::Sweep { config } => cmd_sweep(cli, config),
        Command::ReproduceTable { table } => cmd_table(cli, *table),
        Command::ExportFigure { figure, no_fault } => cmd_figure(cli, figure, *no_fault),
        Command::Init { path, force } => cmd_init(path, *force),
    })
}

struct Loaded {
    cfg: ScenarioConfig,
    text: String,
    preset: String,
    scenario: Scenario,
}

fn load(cli: &Cli, path: &Path) -> Result<Loaded, CliError> {
    let (cfg, text) = ScenarioConfig::load(path)?;
    cfg.validate()?;
    let preset = cli.preset.clone().unwrap_or_else(|| cfg.preset.clone());
    let base = resolve_preset(&preset)?;
    let mut scenario = cfg.scenario(&base);
    if let Some(dt) = cli.dt {
        scenario.dt = dt;
        scenario.sample_interval = scenario.sample_interval.max(dt);
    }
    preflight(&scenario)?;
    Ok(Loaded { cfg, text, preset, scenario })
}

struct Writer {
    dir: PathBuf,
    written: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn put(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn manifest(mut self, mut m: RunManifest) -> Result<(), CliError> {
        m.outputs = std::mem::take(&mut self.written);
        m.finish();
        self.put(MANIFEST_FILE, &m.to_json())
    }
}

fn check_failures(a: &Assessment) -> Result<(), CliError> {
    match a.failures.first() {
        None => Ok(()),
        Some((m, e)) => Err(CliError::new(EXIT_METHOD, "method_failure", format!("{}: {e}", m.name()))),
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    name: &'a str,
    manifest: &'a str,
    config_sha256: String,
    outcome: Option<Outcome>,
    reason: Option<&'a str>,
    report: &'a CctReport,
}

fn cmd_run(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let l = load(cli, path)?;
    let opts = AssessOptions::for_scenario(&l.scenario, (&l.cfg.cct).into());
    let a = assess(&l.cfg.name, &l.scenario, &l.cfg.methods, &opts);
    let mut w = Writer::new(&cli.out)?;
    let name = &l.cfg.name;
    if let Some(traj) = &a.trajectory {
        w.put(&format!("{name}_trajectory.csv"), &traj.to_csv())?;
        w.put(&format!("{name}_transitions.json"), &traj.transitions_json())?;
    }
    w.put(&format!("{name}_cct.csv"), &format!("{CCT_CSV_HEADER}\n{}\n", a.report.csv_row()))?;
    let mut manifest = RunManifest::new("run", &l.preset, &l.text);
    let report = RunReport {
        name,
        manifest: MANIFEST_FILE,
        config_sha256: manifest.config_sha256.clone(),
        outcome: a.verdict.as_ref().map(|v| v.outcome),
        reason: a.verdict.as_ref().map(|v| v.reason.as_str()),
        report: &a.report,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    w.put(&format!("{name}_report.json"), &json)?;
    manifest.rows.push(crate::config::RowStatus {
        index: 0,
        label: name.clone(),
        ok: a.failures.is_empty(),
        message: a.failures.first().map(|(m, e)| format!("{}: {e}", m.name())),
    });
    w.manifest(manifest)?;
    println!("{json}");
    check_failures(&a)
}

fn print_report(r: &CctReport, format: Format) {
    match format {
        Format::Csv => println!("{CCT_CSV_HEADER}\n{}", r.csv_row()),
        Format::Json => println!("{}", serde_json::to_string_pretty(r).expect("report serializes")),
    }
}

fn cmd_assess(cli: &Cli, a: &AssessArgs, method: Method) -> Result<(), CliError> {
    let l = load(cli, &a.config)?;
    let opts = AssessOptions::for_scenario(&l.scenario, (&l.cfg.cct).into());
    let res = assess(&l.cfg.name, &l.scenario, &[method], &opts);
    print_report(&res.report, a.format);
    check_failures(&res)
}

fn cmd_boa_extras(
    cli: &Cli,
    config: &Path,
    boundary: bool,
    grid: Option<usize>,
    monte_carlo: Option<usize>,
) -> Result<(), CliError> {
    if !boundary && grid.is_none() && monte_carlo.is_none() {
        return Ok(());
    }
    let l = load(cli, config)?;
    let sys = ClearingSystems::from_scenario(&l.scenario)?;
    let g = sys.recovered;
    let b = boundary_manifold(&g, 60.0, None)?;
    let opts = BoaOptions { dt: l.scenario.dt, ..BoaOptions::default() };
    let mut w = Writer::new(&cli.out)?;
    let name = &l.cfg.name;
    if boundary {
        w.put(&format!("{name}_boa_boundary.csv"), &b.to_csv())?;
    }
    if let Some(n) = grid {
        let csv = membership_grid_csv(&g, plot_phi_range(b.phi_u), (0.95, 1.05), n, n, &opts)?;
        w.put(&format!("{name}_boa_grid.csv"), &csv)?;
    }
    if let Some(n) = monte_carlo {
        let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(b.phi_u - std::f64::consts::TAU..b.phi_u), rng.gen_range(0.97..1.03)))
            .collect();
        let results: Vec<(bool, Membership, Membership)> = pts
            .par_iter()
            .map(|&(phi, x)| {
                let near = b.distance(phi, x) < BOUNDARY_BAND;
                let sim = is_in_boa(phi, x, &g, &opts).map(|m| m.verdict).unwrap_or(Membership::Indeterminate);
                (near, sim, is_in_boa_by_manifold(phi, x, &b).verdict)
            })
            .collect();
        let band = results.iter().filter(|r| r.0).count();
        let compared: Vec<_> = results
            .iter()
            .filter(|r| !r.0 && r.1 != Membership::Indeterminate && r.2 != Membership::Indeterminate)
            .collect();
        let agree = compared.iter().filter(|r| r.1 == r.2).count();
        let summary = json!({
            "seed": cli.seed,
            "samples": n,
            "in_boundary_band": band,
            "compared": compared.len(),
            "agree": agree,
            "disagree": compared.len() - agree,
        });
        let text = serde_json::to_string_pretty(&summary).expect("json");
        w.put(&format!("{name}_boa_agreement.json"), &text)?;
        println!("{text}");
    }
    w.manifest(RunManifest::new("assess boa", &l.preset, &l.text))
}

fn cmd_cct(cli: &Cli, path: &Path, format: Format) -> Result<(), CliError> {
    let l = load(cli, path)?;
    let opts = AssessOptions::for_scenario(&l.scenario, (&l.cfg.cct).into());
    let res = assess(&l.cfg.name, &l.scenario, &[Method::Cct, Method::Boa, Method::Eac], &opts);
    print_report(&res.report, format);
    check_failures(&res)
}

fn cmd_sweep(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let l = load(cli, path)?;
    let base = resolve_preset(&l.preset)?;
    let mut spec = SweepSpec::from_config(&l.cfg, &base)?;
    if let Some(dt) = cli.dt {
        spec.base.dt = dt;
    }
    let points = spec.points();
    let axis_names: Vec<&str> = spec.axes.iter().map(|a| a.name.column()).collect();
    let results: Vec<Assessment> = points
        .par_iter()
        .map(|pt| {
            let mut sc = pt.scenario.clone();
            sc.dt = spec.base.dt;
            let label = format!("{}_{}", l.cfg.name, pt.index);
            match preflight(&sc) {
                Ok(()) => assess(&label, &sc, &spec.methods, &AssessOptions::for_scenario(&sc, spec.search)),
                Err(e) => {
                    let mut r = CctReport::new(label, sc.ug2, f64::NAN, sc.i_rd2, sc.params.kramp);
                    r.diagnostics.push(format!("invalid: {e}"));
                    Assessment { report: r, trajectory: None, verdict: None, failures: vec![(Method::Simulate, e)] }
                }
            }
        })
        .collect();
    let mut csv = String::from("index,");
    for n in &axis_names {
        csv.push_str(n);
        csv.push(',');
    }
    csv.push_str("outcome,");
    csv.push_str(CCT_CSV_HEADER);
    csv.push('\n');
    let mut manifest = RunManifest::new("sweep", &l.preset, &l.text);
    for (pt, a) in points.iter().zip(&results) {
        csv.push_str(&pt.index.to_string());
        csv.push(',');
        for n in &axis_names {
            csv.push_str(&fmt_sig(pt.values[n]));
            csv.push(',');
        }
        if let Some(v) = &a.verdict {
            csv.push_str(&v.outcome.to_string());
        }
        csv.push(',');
        csv.push_str(&a.report.csv_row());
        csv.push('\n');
        manifest.rows.push(crate::config::RowStatus {
            index: pt.index,
            label: a.report.scenario.clone(),
            ok: a.failures.is_empty(),
            message: a.failures.first().map(|(m, e)| format!("{}: {e}", m.name())),
        });
    }
    let mut w = Writer::new(&cli.out)?;
    w.put(&format!("{}_sweep.csv", l.cfg.name), &csv)?;
    w.manifest(manifest)?;
    print!("{csv}");
    Ok(())
}

fn cmd_table(cli: &Cli, table: u8) -> Result<(), CliError> {
    let preset = cli.preset.clone().unwrap_or_else(|| REFERENCE_PRESET.to_string());
    let p = resolve_preset(&preset)?;
    let rows = reproduce_table(table, &p, cli.dt.unwrap_or(DEFAULT_DT), Default::default());
    let mut csv = String::from(CCT_CSV_HEADER);
    csv.push('\n');
    let mut manifest = RunManifest::new(&format!("reproduce-table {table}"), &preset, &format!("table {table}"));
    for (i, a) in rows.iter().enumerate() {
        csv.push_str(&a.report.csv_row());
        csv.push('\n');
        manifest.rows.push(crate::config::RowStatus {
            index: i,
            label: a.report.scenario.clone(),
            ok: a.failures.is_empty(),
            message: a.failures.first().map(|(m, e)| format!("{}: {e}", m.name())),
        });
    }
    let mut w = Writer::new(&cli.out)?;
    w.put(&format!("table{table}.csv"), &csv)?;
    w.manifest(manifest)?;
    print!("{csv}");
    Ok(())
}

fn cmd_figure(cli: &Cli, figure: &str, no_fault: bool) -> Result<(), CliError> {
    let preset = cli.preset.clone().unwrap_or_else(|| REFERENCE_PRESET.to_string());
    let p = resolve_preset(&preset)?;
    let bundle = export_figure(figure, &p, cli.dt.unwrap_or(DEFAULT_DT), no_fault)?;
    let mut w = Writer::new(&cli.out)?;
    for (name, contents) in &bundle {
        w.put(name, contents)?;
        println!("{}", cli.out.join(name).display());
    }
    let key = format!("export-figure {figure}{}", if no_fault { " --no-fault" } else { "" });
    w.manifest(RunManifest::new(&key, &preset, &key))
}

fn cmd_init(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::new(
            EXIT_IO,
            "io",
            format!("{} exists; pass --force to overwrite", path.display()),
        ));
    }
    fs::write(path, ScenarioConfig::template().to_toml()).map_err(|e| io_err(path, e))?;
    println!("{}", path.display());
    Ok(())
}
