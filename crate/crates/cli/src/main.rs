use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tvm_core::harness::{exit_code, parse_engine, run_experiment, Mode, SpecInput, Summary};

/// Threshold voter model experiments on the torus.
#[derive(Parser, Debug)]
#[command(name = "tvm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Replicated simulation of the threshold voter model.
    Simulate(Common),
    /// Threshold voter model coupled with the death process.
    Couple(Common),
    /// Sup-deviation from the fluid curve across a list of dimensions.
    Sweep(Common),
    /// Dominance chain of the ball-in-box processes.
    Ballgame(Common),
    /// Exact expectations, variances and transient means.
    Oracle(Common),
    /// Finite-d large-deviation rates.
    Ldp(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Dimension, or comma-separated list.
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    /// Side length of the torus.
    #[arg(long)]
    r: Option<usize>,
    /// Initial density, or comma-separated list.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    /// Time horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Points of the reporting time grid (also the M-grid size for ballgame).
    #[arg(long)]
    grid: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Fixed initial state such as 110, vertex 0 first.
    #[arg(long)]
    init: Option<String>,
    /// Event engine: active or uniform.
    #[arg(long, value_parser = parse_engine)]
    engine: Option<tvm_core::Engine>,
}

impl Common {
    fn into_input(self, mode: Mode) -> tvm_core::Result<SpecInput> {
        let base = match &self.config {
            Some(path) => SpecInput::from_file(path)?,
            None => SpecInput::default(),
        };
        Ok(base.overlay(SpecInput {
            mode: Some(mode),
            d: self.d,
            r: self.r,
            p: self.p,
            horizon: self.horizon,
            replicas: self.replicas,
            seed: self.seed,
            grid: self.grid,
            out: self.out,
            workers: self.workers,
            init: self.init,
            engine: self.engine,
        }))
    }
}

fn report(s: &Summary) {
    let out = s.spec.out.display();
    println!("{} -> {out}/rows.csv, {out}/summary.json", s.spec.mode);
    for g in &s.groups {
        let mut line = format!("d={} r={} p={}", g.d, g.r, g.p);
        if let Some(st) = g.stats.get("final_frac") {
            line += &format!(" frac(T)={:.6}±{:.6}", st.mean, st.se);
        }
        if let Some(q) = g.quantiles.get("sup_deviation") {
            line += &format!(" sup-dev median={:.6} p90={:.6}", q.q50, q.q90);
        }
        if let Some(v) = g.values.get("violations") {
            line += &format!(" violations={v}");
        }
        println!("  {line}");
    }
    for t in &s.trends {
        println!(
            "  trend p={}: {}/{} decreasing pairs, log-slope {:.4}",
            t.p, t.decreasing_pairs, t.pairs, t.log_slope
        );
    }
    for dm in &s.dominance {
        println!(
            "  dominance d={} p={}: {} of {} checks violated",
            dm.d, dm.p, dm.violations, dm.checks
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match cli.command {
        Command::Simulate(c) => (Mode::Simulate, c),
        Command::Couple(c) => (Mode::Couple, c),
        Command::Sweep(c) => (Mode::Sweep, c),
        Command::Ballgame(c) => (Mode::Ballgame, c),
        Command::Oracle(c) => (Mode::Oracle, c),
        Command::Ldp(c) => (Mode::Ldp, c),
    };
    let result = common
        .into_input(mode)
        .and_then(SpecInput::build)
        .and_then(|spec| run_experiment(&spec));
    match result {
        Ok(summary) => {
            report(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
