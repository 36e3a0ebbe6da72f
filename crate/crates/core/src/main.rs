//! Command-line driver: `run` executes one configured experiment,
//! `sweep-equivalence` tabulates the detection-equivalence chain, and
//! `dv-counterexample` prints the discrete-variable marginal counterexample.
//!
//! Exit codes: 0 on success, 1 on validation errors, 2 on numerical errors.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cvmdi::error::Error;
use cvmdi::estimation::dv_marginal_counterexample;
use cvmdi::pipeline::{run_equivalence_sweep, run_experiment, sweep_table, ExperimentConfig};
use cvmdi::relay::RelayStrategy;

#[derive(Parser)]
#[command(name = "cvmdi", version, about = "CV MDI QKD simulator and estimator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file plus flag overrides.
    Run(RunArgs),
    /// Tabulate the prepare-and-measure vs direct-detection difference over
    /// a squeezing grid.
    SweepEquivalence(SweepArgs),
    /// Print two discrete joint distributions with identical pairwise
    /// marginals but different joints.
    DvCounterexample(OutputArg),
}

// Flag names mirror the config field names exactly.
#[derive(Args)]
struct RunArgs {
    /// Config file in flat `key = value` form.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "v_a")]
    v_a: Option<f64>,
    #[arg(long = "v_b")]
    v_b: Option<f64>,
    #[arg(long = "eta_a")]
    eta_a: Option<f64>,
    #[arg(long = "eta_b")]
    eta_b: Option<f64>,
    #[arg(long = "excess_noise")]
    excess_noise: Option<f64>,
    #[arg(long = "n_rounds")]
    n_rounds: Option<usize>,
    #[arg(long = "seed")]
    seed: Option<u64>,
    /// honest, announce_noise, or rescaled:<k>
    #[arg(long = "relay_strategy")]
    relay_strategy: Option<String>,
    #[arg(long = "baseline_f")]
    baseline_f: Option<f64>,
    #[arg(long = "confidence")]
    confidence: Option<f64>,
    /// Report destination; `-` writes to standard output.
    #[arg(long = "output_path", visible_alias = "output")]
    output_path: Option<String>,
    /// json or csv
    #[arg(long = "report_format")]
    report_format: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated squeezing values, e.g. `0,0.5,1,2,4,10`.
    #[arg(long)]
    r_grid: String,
    /// Table destination; `-` writes to standard output.
    #[arg(long, default_value = "-")]
    output: String,
}

#[derive(Args)]
struct OutputArg {
    /// Destination; `-` writes to standard output.
    #[arg(long, default_value = "-")]
    output: String,
}

fn write_output(path: &str, content: &str) -> Result<(), Error> {
    if path == "-" {
        std::io::stdout().write_all(content.as_bytes())?;
    } else {
        std::fs::write(path, content)?;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    if let Some(v) = args.v_a {
        cfg.v_a = v;
    }
    if let Some(v) = args.v_b {
        cfg.v_b = v;
    }
    if let Some(v) = args.eta_a {
        cfg.eta_a = v;
    }
    if let Some(v) = args.eta_b {
        cfg.eta_b = v;
    }
    if let Some(v) = args.excess_noise {
        cfg.excess_noise = v;
    }
    if let Some(v) = args.n_rounds {
        cfg.n_rounds = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.relay_strategy {
        cfg.relay_strategy = RelayStrategy::parse(v)?;
    }
    if let Some(v) = args.baseline_f {
        cfg.baseline_f = v;
    }
    if let Some(v) = args.confidence {
        cfg.confidence = v;
    }
    if let Some(v) = &args.output_path {
        cfg.output_path = v.clone();
    }
    if let Some(v) = &args.report_format {
        cfg.report_format = cvmdi::pipeline::config::ReportFormat::parse(v)?;
    }

    let report = run_experiment(&cfg)?;
    let rendered = report.render(cfg.report_format)?;
    write_output(&cfg.output_path, &rendered)?;
    if cfg.output_path != "-" {
        eprintln!("report written to {}", cfg.output_path);
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let grid: Vec<f64> = args
        .r_grid
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad grid value `{s}`")))
        })
        .collect::<Result<_, _>>()?;
    let rows = run_equivalence_sweep(&grid)?;
    write_output(&args.output, &sweep_table(&rows))
}

fn cmd_dv_counterexample(args: OutputArg) -> Result<(), Error> {
    let (p1, p2) = dv_marginal_counterexample();
    let mut out = String::new();
    out.push_str("# Two joints over X,Y in {0,1} and Z in {0..3} with equal pairwise marginals\n");
    for (name, pmf, note) in [
        ("P1", &p1, "uniform Z x perfectly correlated uniform (X,Y)"),
        ("P2", &p2, "uniform Z x independent uniform X, Y"),
    ] {
        out.push_str(&format!("{name}: {note}\n"));
        out.push_str("x,y,z,p\n");
        for x in 0..pmf.nx {
            for y in 0..pmf.ny {
                for z in 0..pmf.nz {
                    out.push_str(&format!("{x},{y},{z},{}\n", pmf.prob(x, y, z)));
                }
            }
        }
    }
    let max_diff = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
    };
    out.push_str(&format!(
        "max |P1(XZ) - P2(XZ)| = {}\n",
        max_diff(&p1.marginal_xz(), &p2.marginal_xz())
    ));
    out.push_str(&format!(
        "max |P1(YZ) - P2(YZ)| = {}\n",
        max_diff(&p1.marginal_yz(), &p2.marginal_yz())
    ));
    out.push_str(&format!("TV(P1, P2) = {}\n", p1.tv_distance(&p2)?));
    write_output(&args.output, &out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::SweepEquivalence(args) => cmd_sweep(args),
        Command::DvCounterexample(args) => cmd_dv_counterexample(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
