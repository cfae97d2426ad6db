//! `hemiray` batch harness: forward data, reconstructions, sweeps and invariant checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use hemiray::hemi_xray::{t_lambda_forward, HemiRayData, RayGrid, SphereField};
use hemiray::io::{write_table, SCHEMA_LINE};
use hemiray::logcvx::{loglog_slope, shrinking_m_sweep, SweepRow};
use hemiray::recon::{
    add_noise, calibrate_cd, hemi_reconstruct, sphere_relative_error, stability_probe,
    write_stability_csv, HemiReconOptions, Phantom, PhantomSet, StabilityOptions,
    DEFAULT_PROBE_WIDTH,
};
use hemiray::Error;

mod checks;

const EXIT_FAIL: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "hemiray",
    version,
    about = "Attenuated hemisphere ray transform experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Flags,
}

#[derive(Args, Debug, Clone, Default)]
struct Flags {
    /// Grid size (plane grid, sphere grid or check resolution, per subcommand).
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Number of angles (α samples for hemisphere rays, φ samples for planar lines).
    #[arg(long, global = true)]
    angles: Option<usize>,
    /// Attenuation; comma-separated list for sweeps.
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    lambda: Vec<f64>,
    /// Smoothness index σ; comma-separated list for sweeps.
    #[arg(long, global = true, value_delimiter = ',')]
    sigma: Vec<f64>,
    /// Relative noise level; comma-separated list for sweeps.
    #[arg(long, global = true, value_delimiter = ',')]
    noise: Vec<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; fixes the parallel schedule for reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the invariant suite (santalo, duality, measure, quasimode-norm).
    Validate {
        /// Run a single check.
        #[arg(long)]
        only: Option<String>,
    },
    /// Compute T_λ⁺f for a phantom and write the ray table.
    Forward,
    /// Invert a ray table written by `forward`.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
    },
    /// Forward, optional noise, and reconstruction; prints the relative error.
    Roundtrip,
    /// Parameter sweeps.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
    },
    /// Fit the normal-operator constant.
    Calibrate,
    /// Majorization and log-log bound checks.
    LemmaCheck,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SweepKind {
    Stability,
    Lemma,
}

/// Fields of `--config`; all optional.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    grid: Option<usize>,
    angles: Option<usize>,
    lambda: Option<Vec<f64>>,
    sigma: Option<Vec<f64>>,
    noise: Option<Vec<f64>>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    alpha0: Option<f64>,
    phantoms: Option<Vec<Phantom>>,
    threshold: Option<f64>,
    probe_width: Option<f64>,
    bumps: Option<usize>,
}

/// Flags merged over the config file.
#[derive(Debug)]
struct Run {
    grid: Option<usize>,
    angles: Option<usize>,
    lambda: Vec<f64>,
    sigma: Vec<f64>,
    noise: Vec<f64>,
    seed: u64,
    out: Option<PathBuf>,
    alpha0: f64,
    phantoms: Option<Vec<Phantom>>,
    threshold: f64,
    probe_width: f64,
    bumps: usize,
}

enum Failure {
    Usage(String),
    Check(String),
    Diverged(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } => Failure::Diverged(e.to_string()),
            Error::InvalidInput(_)
            | Error::OutOfRange { .. }
            | Error::Support(_)
            | Error::Json(_) => Failure::Usage(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn merge(flags: Flags) -> Result<Run, Failure> {
    let cfg: RunConfig = match &flags.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let pick = |flag: Vec<f64>, cfg: Option<Vec<f64>>| {
        if flag.is_empty() {
            cfg.unwrap_or_default()
        } else {
            flag
        }
    };
    let threads = flags.threads.or(cfg.threads);
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Other(e.to_string()))?;
    }
    let run = Run {
        grid: flags.grid.or(cfg.grid),
        angles: flags.angles.or(cfg.angles),
        lambda: pick(flags.lambda, cfg.lambda),
        sigma: pick(flags.sigma, cfg.sigma),
        noise: pick(flags.noise, cfg.noise),
        seed: flags.seed.or(cfg.seed).unwrap_or(0),
        out: flags.out.or(cfg.out),
        alpha0: cfg.alpha0.unwrap_or(0.5),
        phantoms: cfg.phantoms,
        threshold: cfg.threshold.unwrap_or(0.05),
        probe_width: cfg.probe_width.unwrap_or(DEFAULT_PROBE_WIDTH),
        bumps: cfg.bumps.unwrap_or(500),
    };
    if run.grid == Some(0) || run.angles.is_some_and(|a| a < 2) {
        return Err(Failure::Usage(
            "--grid must be positive and --angles at least 2".into(),
        ));
    }
    if run
        .lambda
        .iter()
        .chain(&run.noise)
        .any(|v| !(*v >= 0.0) || !v.is_finite())
    {
        return Err(Failure::Usage(
            "lambda and noise values must be finite and nonnegative".into(),
        ));
    }
    if run.sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Failure::Usage("sigma values must be positive".into()));
    }
    Ok(run)
}

impl Run {
    fn output(&self) -> Result<Box<dyn Write>, Failure> {
        Ok(match &self.out {
            Some(p) => Box::new(io::BufWriter::new(
                File::create(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }

    fn phantom(&self) -> Result<PhantomSet, Failure> {
        Ok(match &self.phantoms {
            Some(list) => PhantomSet::new(list.clone(), self.alpha0)?,
            None => PhantomSet::default_cap(self.alpha0)?,
        })
    }

    fn single_lambda(&self) -> Result<f64, Failure> {
        match self.lambda.as_slice() {
            [] => Ok(0.0),
            [l] => Ok(*l),
            _ => Err(Failure::Usage(
                "this subcommand takes a single --lambda".into(),
            )),
        }
    }

    fn single_noise(&self) -> Result<f64, Failure> {
        match self.noise.as_slice() {
            [] => Ok(0.0),
            [n] => Ok(*n),
            _ => Err(Failure::Usage(
                "this subcommand takes a single --noise".into(),
            )),
        }
    }

    fn rays(&self) -> Result<RayGrid, Failure> {
        Ok(match self.angles {
            Some(a) => RayGrid::new(a, (a / 2).max(2))?,
            None => RayGrid::default(),
        })
    }

    fn recon(&self) -> HemiReconOptions {
        let mut o = HemiReconOptions::default();
        if let Some(g) = self.grid {
            o.plane_grid = g;
        }
        if let Some(a) = self.angles {
            o.angles = a;
        }
        o
    }
}

fn write_sphere_field<W: Write>(out: W, f: &SphereField) -> Result<(), Failure> {
    let (nt, np) = f.dims();
    let rows: Vec<Vec<f64>> = (0..nt * np)
        .map(|k| vec![f.theta(k / np), f.psi(k % np), f.values()[k]])
        .collect();
    write_table(out, &["theta", "psi", "value"], &rows)?;
    Ok(())
}

fn cmd_validate(run: &Run, only: Option<&str>) -> Result<(), Failure> {
    let names: Vec<&str> = match only {
        Some(n) if checks::NAMES.contains(&n) => vec![n],
        Some(n) => {
            return Err(Failure::Usage(format!(
                "unknown check '{n}' (expected one of {})",
                checks::NAMES.join(", ")
            )))
        }
        None => checks::NAMES.to_vec(),
    };
    let res = checks::Resolution::from_grid(run.grid, run.angles);
    let mut rows = Vec::new();
    for name in names {
        rows.push(checks::run(name, &res, run.seed)?);
    }
    let mut out = run.output()?;
    writeln!(out, "{SCHEMA_LINE}")?;
    writeln!(out, "check,value,tolerance,pass")?;
    for r in &rows {
        writeln!(out, "{},{:?},{:?},{}", r.name, r.value, r.tolerance, r.pass)?;
    }
    out.flush()?;
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "failed checks: {}",
            failed.join(", ")
        )))
    }
}

fn cmd_forward(run: &Run) -> Result<(), Failure> {
    let p = run.phantom()?;
    let data = t_lambda_forward(&p, run.single_lambda()?, &run.rays()?)?;
    let data = add_noise(&data, run.single_noise()?, run.seed)?;
    let mut out = run.output()?;
    data.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_reconstruct(run: &Run, input: &PathBuf) -> Result<(), Failure> {
    let file =
        File::open(input).map_err(|e| Failure::Usage(format!("{}: {e}", input.display())))?;
    let data = HemiRayData::read_csv(BufReader::new(file))?;
    let mut opts = run.recon();
    opts.invert.noise_level = run.single_noise()?;
    let (f, report) = hemi_reconstruct(&data, data.lambda(), run.alpha0, &opts)?;
    let mut out = run.output()?;
    write_sphere_field(&mut out, &f)?;
    out.flush()?;
    eprintln!("{}", report.to_json()?);
    Ok(())
}

fn cmd_roundtrip(run: &Run) -> Result<(), Failure> {
    let p = run.phantom()?;
    let lambda = run.single_lambda()?;
    let noise = run.single_noise()?;
    let data = add_noise(
        &t_lambda_forward(&p, lambda, &run.rays()?)?,
        noise,
        run.seed,
    )?;
    let mut opts = run.recon();
    opts.invert.noise_level = noise;
    let (f, report) = hemi_reconstruct(&data, lambda, run.alpha0, &opts)?;
    let err = sphere_relative_error(&f, &p)?;
    let mut out = run.output()?;
    writeln!(out, "{SCHEMA_LINE}")?;
    writeln!(out, "lambda,noise,iterations,relative_error,threshold")?;
    writeln!(
        out,
        "{lambda:?},{noise:?},{},{err:?},{:?}",
        report.iterations, run.threshold
    )?;
    out.flush()?;
    if err < run.threshold {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "relative error {err:.3e} is not below the threshold {:.3e}",
            run.threshold
        )))
    }
}

fn cmd_sweep(run: &Run, kind: SweepKind) -> Result<(), Failure> {
    match kind {
        SweepKind::Stability => {
            let lambdas = if run.lambda.is_empty() {
                vec![0.0, 0.05, 0.1]
            } else {
                run.lambda.clone()
            };
            let noises = if run.noise.is_empty() {
                vec![0.0, 0.01, 0.02]
            } else {
                run.noise.clone()
            };
            let opts = StabilityOptions {
                rays: run.rays()?,
                recon: run.recon(),
                reconstruct: true,
                seed: run.seed,
            };
            let rows = stability_probe(&[run.phantom()?], &lambdas, &noises, &opts)?;
            let mut out = run.output()?;
            write_stability_csv(&mut out, &rows)?;
            out.flush()?;
        }
        SweepKind::Lemma => {
            let sigmas = if run.sigma.is_empty() {
                vec![0.25, 0.5]
            } else {
                run.sigma.clone()
            };
            let omegas = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
            let mut table = Vec::new();
            for &s in &sigmas {
                let slope = loglog_slope(s, 1.0, 1e-40, 1e-8, 25)?;
                for r in shrinking_m_sweep(s, 1.0, 1.0, &omegas)? {
                    let SweepRow {
                        m,
                        sigma,
                        lambda0,
                        bound,
                        measured_l2,
                        k,
                        omega,
                        exponent,
                        ..
                    } = r;
                    table.push(vec![
                        m,
                        sigma,
                        lambda0,
                        bound,
                        measured_l2,
                        k,
                        omega,
                        exponent,
                        slope,
                    ]);
                }
            }
            let mut out = run.output()?;
            write_table(
                &mut out,
                &[
                    "M",
                    "sigma",
                    "lambda0",
                    "bound",
                    "measured_l2",
                    "K",
                    "omega",
                    "exponent",
                    "slope",
                ],
                &table,
            )?;
            out.flush()?;
        }
    }
    Ok(())
}

fn cmd_calibrate(run: &Run) -> Result<(), Failure> {
    let n = run.grid.unwrap_or(hemiray::recon::DEFAULT_GRID);
    let angles = run.angles.unwrap_or(hemiray::recon::DEFAULT_ANGLES);
    let report = match calibrate_cd(n, run.probe_width, angles) {
        Ok(r) => r,
        Err(e @ Error::Calibration { .. }) => return Err(Failure::Check(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let mut out = run.output()?;
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Failure::Other(e.to_string()))?
    )?;
    out.flush()?;
    Ok(())
}

fn cmd_lemma_check(run: &Run) -> Result<(), Failure> {
    let sigmas = if run.sigma.is_empty() {
        vec![0.25, 0.5]
    } else {
        run.sigma.clone()
    };
    let rows = checks::lemma_suite(run.bumps, &sigmas, run.seed)?;
    let mut out = run.output()?;
    writeln!(out, "{SCHEMA_LINE}")?;
    writeln!(out, "check,value,tolerance,pass")?;
    for r in &rows {
        writeln!(out, "{},{:?},{:?},{}", r.name, r.value, r.tolerance, r.pass)?;
    }
    out.flush()?;
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "failed checks: {}",
            failed.join(", ")
        )))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = merge(cli.opts).and_then(|run| match &cli.command {
        Command::Validate { only } => cmd_validate(&run, only.as_deref()),
        Command::Forward => cmd_forward(&run),
        Command::Reconstruct { input } => cmd_reconstruct(&run, input),
        Command::Roundtrip => cmd_roundtrip(&run),
        Command::Sweep { kind } => cmd_sweep(&run, *kind),
        Command::Calibrate => cmd_calibrate(&run),
        Command::LemmaCheck => cmd_lemma_check(&run),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Check(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_FAIL)
        }
        Err(Failure::Diverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}
