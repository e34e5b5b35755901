//! Command-line front end: simulate, calibrate, metrics, run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use exant::campaign::{
    compute_amr, export_ground_truth, export_report, export_snapshots, import_snapshots, load_report,
    run_calibration, run_simulation, CampaignConfig, CampaignError, CampaignReport, OnBodyLabel, SnapshotFormat,
};
use exant::estimator::estimate_noise_variance;

#[derive(Parser)]
#[command(name = "exant", version, about = "Extended-antenna UWB simulation and scatterer calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize snapshots and ground truth from a configuration.
    Simulate(Common),
    /// Calibrate a snapshot file and write report files.
    Calibrate(CalibrateArgs),
    /// Print AMR/PAR tables for one or more reports.
    Metrics(MetricsArgs),
    /// Simulate, then calibrate.
    Run(RunArgs),
}

#[derive(Args)]
struct Common {
    /// Flat TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// On-body preset (0, C, L or R); ignored when --config is given.
    #[arg(long, value_parser = parse_label)]
    preset: Option<OnBodyLabel>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Option<SnapshotFormat>,
    #[arg(long)]
    sectors: Option<usize>,
    /// Per-sample noise variance; overrides the configuration.
    #[arg(long)]
    noise_variance: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Snapshot file; the format follows the extension unless --format is given.
    #[arg(long)]
    input: PathBuf,
    /// Label-0 report.json used as AMR reference.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// report.json files.
    #[arg(long = "report", required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Directory for metrics.csv; printed only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_label(s: &str) -> Result<OnBodyLabel, String> {
    s.parse().map_err(|e: CampaignError| e.to_string())
}

fn parse_format(s: &str) -> Result<SnapshotFormat, String> {
    s.parse().map_err(|e: CampaignError| e.to_string())
}

impl Common {
    fn config(&self) -> Result<CampaignConfig, CampaignError> {
        let mut c = match &self.config {
            Some(path) => CampaignConfig::load(path)?,
            None => CampaignConfig::preset(self.preset.unwrap_or_default()),
        };
        if let Some(seed) = self.seed {
            c = c.with_seed(seed);
        }
        if let Some(n) = self.sectors {
            c.n_sectors = n;
        }
        if let Some(v) = self.noise_variance {
            c.noise.variance = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn format(&self) -> SnapshotFormat {
        self.format.unwrap_or_default()
    }
}

fn snapshot_path(out: &Path, format: SnapshotFormat) -> PathBuf {
    out.join(format!("snapshots.{}", format.extension()))
}

fn simulate(args: &Common) -> Result<(), CampaignError> {
    let config = args.config()?;
    let (set, truth) = run_simulation(&config)?;
    fs::create_dir_all(&args.out)?;
    export_snapshots(&set, &snapshot_path(&args.out, args.format()), args.format())?;
    export_ground_truth(&truth, &args.out.join("ground_truth.json"))?;
    fs::write(args.out.join("config.toml"), config.to_toml_string())?;
    println!("{} snapshots, {} scatterers -> {}", set.len(), truth.points.len(), args.out.display());
    Ok(())
}

fn load_reference(path: &Option<PathBuf>) -> Result<Option<CampaignReport>, CampaignError> {
    path.as_deref().map(load_report).transpose()
}

fn calibrate(args: &CalibrateArgs) -> Result<(), CampaignError> {
    let mut config = args.common.config()?;
    let format = args.common.format.unwrap_or_else(|| {
        match args.input.extension().and_then(|e| e.to_str()) {
            Some("bin") => SnapshotFormat::Binary,
            _ => SnapshotFormat::Csv,
        }
    });
    let set = import_snapshots(&args.input, format)?;
    if args.common.noise_variance.is_none() {
        config.noise.variance = estimate_noise_variance(&set)?;
    }
    config.pulse = set.spec;
    let reference = load_reference(&args.reference)?;
    let report = run_calibration(&set, &config, reference.as_ref())?;
    export_report(&report, &args.common.out)?;
    print_summary(&report);
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), CampaignError> {
    let config = args.common.config()?;
    let reference = load_reference(&args.reference)?;
    let (set, truth) = run_simulation(&config)?;
    let mut report = run_calibration(&set, &config, reference.as_ref())?;
    report.ground_truth = Some(truth.clone());
    let out = &args.common.out;
    fs::create_dir_all(out)?;
    let format = args.common.format();
    export_snapshots(&set, &snapshot_path(out, format), format)?;
    export_ground_truth(&truth, &out.join("ground_truth.json"))?;
    fs::write(out.join("config.toml"), config.to_toml_string())?;
    export_report(&report, out)?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &CampaignReport) {
    println!(
        "label {}: {} scatterers, alpha_bar {:.4}, PAR_LOS {:.2} dB",
        report.label,
        report.n_scatterers(),
        report.alpha_bar,
        report.par.los_db
    );
}

fn metrics(args: &MetricsArgs) -> Result<(), CampaignError> {
    let reference = load_reference(&args.reference)?;
    let mut table = String::from("report,label,item,beta_bar,par_db,amr_db\n");
    for path in &args.reports {
        let report = load_report(path)?;
        let amr = compute_amr(&report, reference.as_ref())?;
        let name = path.display();
        let _ = writeln!(
            table,
            "{name},{},los,{},{},{}",
            report.label, report.alpha_bar, report.par.los_db, amr.los_db
        );
        for j in 0..report.n_scatterers() {
            let _ = writeln!(
                table,
                "{name},{},scatterer_{j},{},{},{}",
                report.label, report.beta_bar[j], report.par.scatterers_db[j], amr.scatterers_db[j]
            );
        }
    }
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("metrics.csv"), &table)?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Calibrate(args) => calibrate(args),
        Command::Metrics(args) => metrics(args),
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CampaignError::Config(_) => 1,
                ref e if e.is_numerical() => 3,
                _ => 2,
            })
        }
    }
}
