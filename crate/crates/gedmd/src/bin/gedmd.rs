//! Command-line front end: one experiment config in, CSV out.
//!
//! Every subcommand reads the same TOML experiment description; the
//! subcommand picks which part of it to run. Records go to `--out` (or the
//! config's `out`, or stdout); sweep summaries land next to the records as
//! `<stem>.summary.csv`. Exit codes: 0 success, 1 config problem, 2 runtime
//! failure.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use gedmd::error::{Error, Result};
use gedmd::harness::{
    estimate_once, prepare, run_bound_report, run_coupled_sweep, run_data_sweep,
    run_dictionary_sweep, run_noise_sweep, ExperimentConfig, Scale, SweepOutput,
};
use gedmd::spectral::{eigensystem, track_eigenvalues, Normalization};

#[derive(Parser)]
#[command(
    name = "gedmd",
    version,
    about = "Galerkin estimation of transfer operators and their generators, \
             with sample-size certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimation error versus sample size (sweep.kind = "data").
    SweepData(RunArgs),
    /// Error versus dictionary size at fixed samples ("dictionary"), or at
    /// the certified per-size sample budget ("coupled").
    SweepDict(RunArgs),
    /// Error versus evaluation-noise level ("noise").
    SweepNoise(RunArgs),
    /// Certificate table over the [bounds] deviation grid.
    Bounds(RunArgs),
    /// Leading eigenvalue trajectories across the sample-size grid.
    Eigs(RunArgs),
    /// One-shot estimate at the largest configured sample size; dumps the
    /// operator matrix (column convention) as headerless CSV.
    Estimate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Published-protocol grids (hours) instead of desk grids (minutes).
    #[arg(long)]
    paper_scale: bool,
    /// Output CSV path; overrides the config's `out`. Omitted everywhere =
    /// stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, Scale)> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(Error::Config("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.display().to_string());
        }
        let scale = if self.paper_scale {
            Scale::Paper
        } else {
            Scale::Desk
        };
        Ok((cfg, scale))
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are config-class failures; --help/--version are
            // successes.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SweepData(args) => {
            let (cfg, scale) = args.load()?;
            expect_kind(&cfg, &["data"])?;
            write_sweep(&cfg, run_data_sweep(&cfg, scale)?)
        }
        Command::SweepDict(args) => {
            let (cfg, scale) = args.load()?;
            expect_kind(&cfg, &["dictionary", "coupled"])?;
            let out = if cfg.sweep.kind == "coupled" {
                run_coupled_sweep(&cfg, scale)?
            } else {
                run_dictionary_sweep(&cfg, scale)?
            };
            write_sweep(&cfg, out)
        }
        Command::SweepNoise(args) => {
            let (cfg, scale) = args.load()?;
            expect_kind(&cfg, &["noise"])?;
            write_sweep(&cfg, run_noise_sweep(&cfg, scale)?)
        }
        Command::Bounds(args) => {
            let (cfg, scale) = args.load()?;
            let table = run_bound_report(&cfg, scale)?;
            emit(cfg.out.as_deref(), &table.to_csv()?)
        }
        Command::Eigs(args) => {
            let (cfg, scale) = args.load()?;
            emit_eigs(&cfg, scale)
        }
        Command::Estimate(args) => {
            let (cfg, scale) = args.load()?;
            emit_estimate(&cfg, scale)
        }
    }
}

fn expect_kind(cfg: &ExperimentConfig, allowed: &[&str]) -> Result<()> {
    if allowed.contains(&cfg.sweep.kind.as_str()) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "this subcommand runs sweep.kind {allowed:?}, but the config says \"{}\"",
            cfg.sweep.kind
        )))
    }
}

/// Records to the output path (or stdout), the summary to a sibling
/// `.summary.csv`, failures to stderr. A sweep in which nothing ran at all
/// is a runtime failure.
fn write_sweep(cfg: &ExperimentConfig, out: SweepOutput) -> Result<()> {
    for f in &out.failures {
        match f.replicate {
            Some(rep) => eprintln!("skipped {} replicate {rep}: {}", f.cell, f.message),
            None => eprintln!("skipped {}: {}", f.cell, f.message),
        }
    }
    if out.records.is_empty() {
        return Err(Error::Numerical(
            "no grid cell produced a record; see the skip messages above".into(),
        ));
    }
    match cfg.out.as_deref() {
        Some(path) => {
            let path = Path::new(path);
            std::fs::write(path, out.records_csv()?)?;
            let summary_path = summary_path_for(path);
            std::fs::write(&summary_path, out.summary_csv()?)?;
            eprintln!(
                "wrote {} records to {} (summary: {})",
                out.records.len(),
                path.display(),
                summary_path.display()
            );
            Ok(())
        }
        None => emit(None, &out.records_csv()?),
    }
}

fn summary_path_for(records: &Path) -> PathBuf {
    match records.extension().and_then(|e| e.to_str()) {
        Some(ext) => records.with_extension(format!("summary.{ext}")),
        None => records.with_extension("summary.csv"),
    }
}

fn emit(out: Option<&str>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            Ok(())
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Grid of sample sizes the one-shot commands reuse.
fn m_grid(cfg: &ExperimentConfig, scale: Scale) -> Vec<usize> {
    cfg.sweep
        .m
        .clone()
        .unwrap_or_else(|| scale.default_m_grid())
}

fn emit_eigs(cfg: &ExperimentConfig, scale: Scale) -> Result<()> {
    let prep = prepare(cfg, scale)?;
    let grid = m_grid(cfg, scale);
    let mut steps = Vec::with_capacity(grid.len());
    for (mi, &m) in grid.iter().enumerate() {
        let est = estimate_once(&prep, cfg, m, mi as u64)?;
        steps.push(eigensystem(&est, &prep.reference, Normalization::L2)?);
    }
    let k = steps.iter().map(|s| s.len()).min().unwrap_or(0).min(8);
    let tracks = track_eigenvalues(&steps, k)?;
    let mut text = String::from("M,index,re,im,residual\n");
    for track in &tracks {
        for (step, (lambda, residual)) in
            track.lambdas.iter().zip(&track.residuals).enumerate()
        {
            text.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e}\n",
                grid[step], track.index, lambda.re, lambda.im, residual
            ));
        }
    }
    emit(cfg.out.as_deref(), &text)
}

fn emit_estimate(cfg: &ExperimentConfig, scale: Scale) -> Result<()> {
    let prep = prepare(cfg, scale)?;
    let m = *m_grid(cfg, scale).last().expect("grids are nonempty");
    let est = estimate_once(&prep, cfg, m, 0)?;
    let mut text = String::new();
    for i in 0..est.a.nrows() {
        let row: Vec<String> = (0..est.a.ncols())
            .map(|j| format!("{:.16e}", est.a[(i, j)]))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    emit(cfg.out.as_deref(), &text)
}
