use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, ValueEnum};
use rdelab::experiment::{
    run, ExperimentConfig, OutputFormat, Overrides, RunOutcome, Subcommand, Verdict,
};

/// Monte Carlo laboratory for random differential equations with
/// multiplicative colored noise.
#[derive(Parser)]
#[command(name = "rdelab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Simulate and write the recorded path ensembles.
    Simulate(Common),
    /// Quasi-norm curves over (p, t).
    Moments(Common),
    /// Critical exponent and diffusion constant estimates.
    Beta(Common),
    /// Structural identities and exact inequalities.
    Verify(Common),
    /// Weak-topology convergence diagnostics.
    Converge(Common),
    /// Merge the JSON summaries found in the output directory.
    Report(Common),
    /// Every subcommand except report.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores. Never changes results.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Replaces the orders of every quasi_norm request.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    n_paths: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Plotdata,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            out: self.out.clone(),
            format: self.format.map(|f| match f {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
                Format::Plotdata => OutputFormat::Plotdata,
            }),
            p: self.p,
            t_max: self.t_max,
            n_paths: self.n_paths,
        }
    }
}

fn execute(sub: Subcommand, args: &Common) -> rdelab::Result<RunOutcome> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply(&args.overrides())?;
    run(&cfg, sub)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (sub, args) = match &cli.command {
        Command::Simulate(a) => (Subcommand::Simulate, a),
        Command::Moments(a) => (Subcommand::Moments, a),
        Command::Beta(a) => (Subcommand::Beta, a),
        Command::Verify(a) => (Subcommand::Verify, a),
        Command::Converge(a) => (Subcommand::Converge, a),
        Command::Report(a) => (Subcommand::Report, a),
        Command::Run(a) => (Subcommand::All, a),
    };
    match execute(sub, args) {
        Ok(out) => {
            for r in &out.summary.results {
                let verdict = match r.verdict {
                    Verdict::Pass => "PASS",
                    Verdict::Fail => "FAIL",
                    Verdict::Info => "INFO",
                };
                let est = r.estimate.map_or("-".to_string(), |e| format!("{e:.6}"));
                let ci =
                    r.ci.map_or(String::new(), |[lo, hi]| format!(" [{lo:.6}, {hi:.6}]"));
                let analytic = r
                    .analytic
                    .map_or(String::new(), |a| format!(" analytic {a:.6}"));
                println!("{verdict} {} {est}{ci}{analytic}  {}", r.name, r.note);
            }
            let m = &out.manifest;
            println!(
                "{}: {} pass, {} fail, {} info; {} artifacts in {:.1}s",
                m.subcommand,
                m.pass,
                m.fail,
                m.info,
                m.artifacts.len(),
                m.wall_clock_seconds
            );
            if out.failed() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error {}: {e}", e.code());
            ExitCode::from(2)
        }
    }
}
