use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use jumplab::model::{KernelSpec, LatticeSpec};
use jumplab_cli::{execute, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "lab", version, about = "Heat-kernel, Harnack and condition experiments for jump processes on graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML file.
    Run {
        #[arg(value_name = "CONFIG")]
        file: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Heat kernel on a truncated window.
    Heat(Overrides),
    /// Mean exit times, by linear solve and by sampling.
    ExitTime(Overrides),
    /// Poincare constants on balls.
    Poincare(Overrides),
    /// Parabolic Harnack constant on boxes.
    Phi(Overrides),
    /// Elliptic Harnack constant on balls.
    Ehi(Overrides),
    /// Sweep of the structural conditions.
    Conditions(Overrides),
    /// Counterexample experiments.
    Cex {
        #[command(subcommand)]
        which: Cex,
    },
}

#[derive(Subcommand)]
enum Cex {
    /// Polynomial kernel with one pair of jumps removed.
    Suppressed(Overrides),
    /// Ladder kernels over several ranges.
    Ladder(Overrides),
}

#[derive(Args, Clone, Debug, Default)]
struct Overrides {
    /// Base config; the subcommand sets the experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory of the run directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Run directory name (default: experiment plus config hash).
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Kernel index of the model (or of the counterexample family).
    #[arg(long)]
    alpha: Option<f64>,
    /// Lattice dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated radii; for `cex` these are the pair distances or ladder ranges.
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    trajectories: Option<usize>,
    /// Box aspect in (0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Tracked exterior out to this multiple of the window radius.
    #[arg(long)]
    lambda_ext: Option<f64>,
    /// Exit 1 when a headline check fails.
    #[arg(long = "assert")]
    assert: bool,
    /// Worker threads (also LAB_WORKERS).
    #[arg(long, env = "LAB_WORKERS")]
    workers: Option<usize>,
}

fn integers(v: &[f64], flag: &str) -> Result<Vec<i64>> {
    v.iter()
        .map(|r| if r.fract() == 0.0 && *r >= 1.0 { Ok(*r as i64) } else { bail!("--{flag}: {r} is not a positive integer") })
        .collect()
}

fn set_alpha(kernel: &mut KernelSpec, a: f64) -> Result<()> {
    match kernel {
        KernelSpec::Polynomial { alpha } | KernelSpec::LadderSum { alpha, .. } => *alpha = a,
        KernelSpec::SuppressedPair { base, .. } => set_alpha(base, a)?,
        KernelSpec::Tabulated { .. } => bail!("--alpha: tabulated kernels have no index"),
    }
    Ok(())
}

fn build(experiment: Option<Experiment>, base: Option<PathBuf>, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match base.or(o.config.clone()) {
        Some(p) => ExperimentConfig::load(&p)?,
        None => ExperimentConfig::new(experiment.expect("subcommands name their experiment")),
    };
    if let Some(e) = experiment {
        cfg.experiment = e;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(p) = &o.output {
        cfg.output = p.clone();
    }
    if let Some(n) = &o.name {
        cfg.name = Some(n.clone());
    }
    if let Some(t) = o.tolerance {
        cfg.tolerance = t;
    }
    if let Some(n) = o.trajectories {
        cfg.monte_carlo.trajectories = n;
    }
    if let Some(l) = o.lambda {
        cfg.harnack.lambda = l;
    }
    if let Some(s) = o.steps {
        cfg.harnack.steps = s;
    }
    if let Some(l) = o.lambda_ext {
        cfg.harnack.lambda_ext = l;
    }
    if let Some(t) = &o.times {
        cfg.grid.times = t.clone();
    }
    cfg.assert_headlines |= o.assert;
    match cfg.experiment {
        Experiment::CexSuppressed => {
            let p = &mut cfg.cex_suppressed;
            p.alpha = o.alpha.unwrap_or(p.alpha);
            p.dim = o.dim.unwrap_or(p.dim);
            if let Some(r) = &o.radii {
                p.radii = integers(r, "radii")?;
            }
        }
        Experiment::CexLadder => {
            let p = &mut cfg.cex_ladder;
            p.alpha = o.alpha.unwrap_or(p.alpha);
            if o.dim.is_some_and(|d| d != 1) {
                bail!("--dim: ladder kernels live on Z");
            }
            if let Some(r) = &o.radii {
                p.ranges = integers(r, "radii")?;
            }
        }
        _ => {
            if let Some(a) = o.alpha {
                set_alpha(&mut cfg.model.kernel, a)?;
            }
            if let Some(d) = o.dim {
                match &mut cfg.model.lattice {
                    LatticeSpec::IntegerLattice { dim, .. } => *dim = d,
                    _ => bail!("--dim: the model is not an integer lattice"),
                }
            }
            if let Some(r) = &o.radii {
                cfg.grid.radii = r.clone();
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, base, over) = match cli.command {
        Command::Run { file, over } => (None, Some(file), over),
        Command::Heat(o) => (Some(Experiment::Heat), None, o),
        Command::ExitTime(o) => (Some(Experiment::ExitTime), None, o),
        Command::Poincare(o) => (Some(Experiment::Poincare), None, o),
        Command::Phi(o) => (Some(Experiment::Phi), None, o),
        Command::Ehi(o) => (Some(Experiment::Ehi), None, o),
        Command::Conditions(o) => (Some(Experiment::ConditionsSweep), None, o),
        Command::Cex { which: Cex::Suppressed(o) } => (Some(Experiment::CexSuppressed), None, o),
        Command::Cex { which: Cex::Ladder(o) } => (Some(Experiment::CexLadder), None, o),
    };
    if let Some(n) = over.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: workers: {e}");
            return ExitCode::from(2);
        }
    }
    let result = build(experiment, base, &over).and_then(|cfg| Ok((execute(&cfg)?, cfg.assert_headlines)));
    match result {
        Ok(((report, dir), assert)) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for t in &report.thresholds {
                let v = t.value.map_or("missing".to_string(), jumplab::io::real_text);
                println!("{} {} = {v}", if t.passed { "PASS" } else { "FAIL" }, t.constant);
            }
            for (k, ok) in &report.headlines {
                if !ok {
                    println!("headline failed: {k}");
                }
            }
            println!("{}: {} constants, {} headline checks, written to {}", report.experiment, report.constants.len(), report.headlines.len(), dir.display());
            ExitCode::from(report.status(assert) as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
