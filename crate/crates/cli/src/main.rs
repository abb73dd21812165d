use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use radar_slam::harness::{ate, ate_aligned, kitti_drift, load_dataset, mean_rpe, simulate, write_dataset, SyntheticWorld};
use radar_slam::pipeline::run_dataset;
use radar_slam::{ConfigPreset, SessionMode, SlamConfig, Trajectory};

#[derive(Parser)]
#[command(name = "slam", version, about = "Planar radar SLAM on intensity-augmented NDT submaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a dataset directory and write a TUM trajectory.
    Run {
        /// Config file, or one of the preset names indoor, outdoor, mixed.
        #[arg(long, default_value = "indoor")]
        config: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_loop_closure: bool,
        /// Run loop closure inline so that repeated runs are bit-identical.
        #[arg(long)]
        deterministic: bool,
        /// Per-scan diagnostics, one line per scan.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// One line per loop-closure attempt.
        #[arg(long)]
        loop_log: Option<PathBuf>,
        /// Final pose graph in g2o format.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Render a world file into a dataset directory.
    Simulate {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimated trajectory with ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Ate)]
        metric: Metric,
        /// Rigidly align the estimate before computing ATE.
        #[arg(long)]
        align: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Ate,
    Rpe,
    Kitti,
}

fn load_config(arg: &str) -> Result<SlamConfig> {
    let path = Path::new(arg);
    if path.exists() {
        return SlamConfig::load(path).with_context(|| format!("loading config {}", path.display()));
    }
    match arg.parse::<ConfigPreset>() {
        Ok(p) => Ok(SlamConfig::preset(p)),
        Err(_) => bail!("{arg:?} is neither a config file nor a preset name"),
    }
}

fn write_lines<T: std::fmt::Display>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        writeln!(w, "{item}")?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &str,
    dataset: &Path,
    out: &Path,
    no_loop_closure: bool,
    deterministic: bool,
    diagnostics: Option<&Path>,
    loop_log: Option<&Path>,
    graph: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if no_loop_closure {
        cfg.loop_closure.enabled = false;
    }
    let data = load_dataset(dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    let mode = if deterministic { SessionMode::Deterministic } else { SessionMode::Background };
    let output = run_dataset(&cfg, &data, mode)?;
    output.trajectory.write_tum(out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = diagnostics {
        write_lines(p, &output.diagnostics)?;
    }
    if let Some(p) = loop_log {
        write_lines(p, &output.loop_events)?;
    }
    if let Some(p) = graph {
        let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        output.graph.write_g2o(&mut w)?;
        w.flush()?;
    }
    let degraded = output.diagnostics.iter().filter(|d| d.degraded).count();
    eprintln!(
        "{} scans, {} degraded, {} keyframes, {} loop closures",
        output.diagnostics.len(),
        degraded,
        output.graph.len(),
        output.graph.loop_count()
    );
    Ok(())
}

fn eval(est: &Path, gt: &Path, metric: Metric, align: bool) -> Result<()> {
    let est = Trajectory::read_tum(est).with_context(|| format!("reading {}", est.display()))?;
    let gt = Trajectory::read_tum(gt).with_context(|| format!("reading {}", gt.display()))?;
    match metric {
        Metric::Ate if align => println!("ate_aligned = {:.6}", ate_aligned(&est, &gt)?),
        Metric::Ate => println!("ate = {:.6}", ate(&est, &gt)?),
        Metric::Rpe => {
            let (t, r) = mean_rpe(&est, &gt)?;
            println!("rpe_translation_m = {t:.6}");
            println!("rpe_rotation_deg = {r:.6}");
        }
        Metric::Kitti => {
            let (t, r) = kitti_drift(&est, &gt)?;
            println!("kitti_translation_pct = {t:.6}");
            println!("kitti_rotation_deg_per_100m = {r:.6}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            dataset,
            out,
            no_loop_closure,
            deterministic,
            diagnostics,
            loop_log,
            graph,
        } => run(
            config,
            dataset,
            out,
            *no_loop_closure,
            *deterministic,
            diagnostics.as_deref(),
            loop_log.as_deref(),
            graph.as_deref(),
        ),
        Command::Simulate { world, seed, out } => SyntheticWorld::load(world)
            .and_then(|w| simulate(&w, *seed))
            .and_then(|d| {
                fs::create_dir_all(out)?;
                write_dataset(out, &d)
            })
            .map_err(Into::into),
        Command::Eval { est, gt, metric, align } => eval(est, gt, *metric, *align),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
