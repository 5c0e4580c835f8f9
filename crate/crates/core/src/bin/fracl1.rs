use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fracl1::analysis_checks::{run_check_suite, CheckRow, SuiteConfig};
use fracl1::harness::{
    render, run_study_with, ConstCoefficients, ConvergenceReport, Grading, MeshSource, OutputFormat, RunOptions,
    SpatialSpec, StudyConfig,
};
use fracl1::{exec, ExecPolicy, Result};

#[derive(Parser)]
#[command(name = "fracl1", version, about = "L1 solver and verification harness for time-fractional parabolic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// csv, markdown or plotdata.
    #[arg(long, global = true, default_value = "csv")]
    format: OutputFormat,
    /// Worker threads; 1 runs every kernel sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Temporal sweep for the scalar problem D^α u = f.
    Scalar(ScalarArgs),
    /// Finite-difference study on the unit cube.
    Fd(FdArgs),
    /// Lumped-mass P1 study on a triangulation.
    Fem(FemArgs),
    /// Randomized stability, barrier, comparison and decay certificates.
    Checks {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Runs one or more JSON study configs into a single table.
    Converge {
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON study config; the flags below are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long = "T", default_value_t = 1.0)]
    t_final: f64,
    /// Grading exponent r; optimal (2−α)/α when absent.
    #[arg(long)]
    grading: Option<f64>,
    /// Comma-separated step counts M.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    steps: Vec<usize>,
    #[arg(long)]
    solution: Option<String>,
}

#[derive(Args)]
struct ScalarArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FdArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Comma-separated interval counts N.
    #[arg(long, value_delimiter = ',', default_value = "32")]
    intervals: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    diffusion: f64,
    /// Comma-separated constant convection vector.
    #[arg(long, value_delimiter = ',')]
    convection: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    reaction: f64,
}

#[derive(Args)]
struct FemArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated structured-mesh interval counts N.
    #[arg(long, value_delimiter = ',', default_value = "32", conflicts_with = "mesh")]
    intervals: Vec<usize>,
    /// Mesh file in the `V F` text format.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    reaction: f64,
}

fn study_from(common: &Common, spatial: SpatialSpec, default_solution: &str) -> Result<StudyConfig> {
    if let Some(path) = &common.config {
        let cfg = StudyConfig::load(path)?;
        if std::mem::discriminant(&cfg.spatial) != std::mem::discriminant(&spatial) {
            return Err(fracl1::Error::Config {
                path: "spatial.kind".into(),
                msg: "config kind does not match the subcommand".into(),
            });
        }
        return Ok(cfg);
    }
    let cfg = StudyConfig {
        alpha: common.alpha,
        t_final: common.t_final,
        grading: common.grading.map(Grading::Value).unwrap_or_default(),
        steps: common.steps.clone(),
        spatial,
        solution: common.solution.clone().unwrap_or_else(|| default_solution.into()),
        sweep: None,
        label: None,
        outputs: Default::default(),
        solver: Default::default(),
        checks: Default::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn render_checks(rows: &[CheckRow], format: OutputFormat) -> String {
    let mut s = String::new();
    match format {
        OutputFormat::Markdown => {
            s.push_str("| check | params | value | pass |\n|---|---|---:|---|\n");
            for r in rows {
                s.push_str(&format!("| {} | {} | {:.6e} | {} |\n", r.check, r.params, r.value, r.pass));
            }
        }
        _ => {
            s.push_str("check,params,value,pass\n");
            for r in rows {
                s.push_str(&format!("{},\"{}\",{},{}\n", r.check, r.params, r.value, r.pass));
            }
        }
    }
    s
}

fn write_out(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_reports(cli: &Cli, configs: &[StudyConfig], policy: ExecPolicy) -> Result<bool> {
    let mut reports: Vec<ConvergenceReport> = Vec::with_capacity(configs.len());
    for cfg in configs {
        let report = run_study_with(cfg, RunOptions { policy })?;
        fracl1::harness::emit_configured(&report, &cfg.outputs)?;
        for note in &report.notes {
            eprintln!("{}: {note}", report.label);
        }
        reports.push(report);
    }
    write_out(cli, &render(&reports, cli.format))?;
    let checks: Vec<CheckRow> = reports.iter().flat_map(|r| r.checks.clone()).collect();
    if !checks.is_empty() {
        eprint!("{}", render_checks(&checks, OutputFormat::Csv));
    }
    Ok(checks.iter().all(|c| c.pass))
}

fn run(cli: &Cli) -> Result<bool> {
    let policy = match cli.threads {
        Some(1) => ExecPolicy::Sequential,
        Some(k) => {
            if !exec::init_threads(k) {
                eprintln!("warning: --threads {k} ignored (pool already built or parallel feature disabled)");
            }
            ExecPolicy::Parallel
        }
        None => ExecPolicy::default(),
    };
    match &cli.command {
        Command::Scalar(a) => {
            let cfg = study_from(&a.common, SpatialSpec::Scalar, "t_alpha")?;
            run_reports(cli, &[cfg], policy)
        }
        Command::Fd(a) => {
            let spatial = SpatialSpec::Fd {
                dim: a.dim,
                intervals: a.intervals.clone(),
                coefficients: ConstCoefficients {
                    diffusion: a.diffusion,
                    convection: a.convection.clone(),
                    reaction: a.reaction,
                },
            };
            let cfg = study_from(&a.common, spatial, "t_alpha_sinsin")?;
            run_reports(cli, &[cfg], policy)
        }
        Command::Fem(a) => {
            let mesh = match &a.mesh {
                Some(p) => MeshSource::File(p.clone()),
                None => MeshSource::Structured(a.intervals.clone()),
            };
            let spatial = SpatialSpec::Fem {
                mesh,
                reaction: a.reaction,
            };
            let cfg = study_from(&a.common, spatial, "t_alpha_cosxy")?;
            run_reports(cli, &[cfg], policy)
        }
        Command::Converge { config } => {
            let configs = config.iter().map(|p| StudyConfig::load(p)).collect::<Result<Vec<_>>>()?;
            run_reports(cli, &configs, policy)
        }
        Command::Checks { seed } => {
            let cfg = SuiteConfig {
                seed: *seed,
                policy,
                ..SuiteConfig::default()
            };
            let rows = run_check_suite(&cfg)?;
            write_out(cli, &render_checks(&rows, cli.format))?;
            Ok(rows.iter().all(|r| r.pass))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(2)
        }
    }
}
