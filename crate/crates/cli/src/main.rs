//! `meltpinn`: data generation, forward/inverse training, evaluation,
//! resolution sweeps and solver checks.
//!
//! Exit codes: 0 success, 2 usage, 3 numerical failure, 4 I/O.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use meltpinn_core::dataset::{CollocationSet, SampleConfig};
use meltpinn_core::evaluation::{
    evaluate_model, resolution_study, write_profiles_csv, write_report_csv, write_sweep_csv,
};
use meltpinn_core::io::hash_file;
use meltpinn_core::network::{load_checkpoint, save_checkpoint};
use meltpinn_core::physics::{MaterialProps, NondimParams};
use meltpinn_core::refsolver::{cavity_selfcheck, run_to_steady, MaskedGrid, RunConfig, SnapshotSet};
use meltpinn_core::training::{train_forward, train_inverse, FileObserver};
use meltpinn_core::losses::LossMode;
use meltpinn_core::Error;

use config::{FileConfig, TrainOverrides};
use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "meltpinn", version, about = "Melt-pool PINN workflow driver")]
struct Cli {
    /// Seed for sampling, initialization and batch order.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 keeps runs bitwise reproducible across machines).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the reference solver to steady state and write snapshots.
    GenData(GenData),
    /// Train velocity and pressure from temperature data.
    TrainForward(TrainForward),
    /// Infer Re and Pe from temperature and velocity data.
    TrainInverse(TrainInverse),
    /// Score a checkpoint against the steady snapshot.
    Eval(Eval),
    /// Forward training over a grid of data resolutions.
    ResolutionStudy(ResolutionStudy),
    /// Square-cavity grid convergence of the reference solver.
    BenchSolver(BenchSolver),
}

#[derive(Args, Debug)]
struct GenData {
    /// Reynolds number
    #[arg(long, allow_negative_numbers = true)]
    re: Option<f64>,
    /// Peclet number
    #[arg(long, allow_negative_numbers = true)]
    pe: Option<f64>,
    /// Material file (key = value); Re and Pe follow from it with --velocity and --length.
    #[arg(long)]
    material: Option<PathBuf>,
    /// Reference velocity in m/s (with --material)
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    velocity: f64,
    /// Reference length (pool diameter) in m (with --material)
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
    length: f64,
    /// Cells across the pool diameter
    #[arg(long, default_value_t = 96)]
    grid_n: usize,
    /// Snapshots from rest to steady state
    #[arg(long, default_value_t = 14)]
    snapshots: usize,
    /// Also write snapshots.csv.
    #[arg(long)]
    csv: bool,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// Adam iterations
    #[arg(long)]
    iterations: Option<usize>,
    /// Adam learning rate
    #[arg(long, allow_negative_numbers = true)]
    learning_rate: Option<f64>,
    /// Points per mini-batch across all loss terms
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden layers
    #[arg(long)]
    hidden_layers: Option<usize>,
    /// Units per hidden layer
    #[arg(long)]
    width: Option<usize>,
    /// Iterations between full-set evaluations and checkpoints
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainForward {
    /// Snapshot directory from gen-data
    #[arg(long)]
    data: PathBuf,
    /// Interior points per selected snapshot [default: 850]
    #[arg(long)]
    points_per_time: Option<usize>,
    /// Snapshots used, evenly spaced [default: 7]
    #[arg(long)]
    times: Option<usize>,
    /// Drop the lid and wall loss terms.
    #[arg(long)]
    no_bc: bool,
    #[command(flatten)]
    train: TrainFlags,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainInverse {
    /// Snapshot directory from gen-data
    #[arg(long)]
    data: PathBuf,
    /// Initial guess for Re
    #[arg(long, allow_negative_numbers = true)]
    guess_re: f64,
    /// Initial guess for Pe
    #[arg(long, allow_negative_numbers = true)]
    guess_pe: f64,
    /// Known Re, only for reporting the error
    #[arg(long, allow_negative_numbers = true)]
    truth_re: Option<f64>,
    /// Known Pe, only for reporting the error
    #[arg(long, allow_negative_numbers = true)]
    truth_pe: Option<f64>,
    /// Defaults to every interior cell.
    #[arg(long)]
    points_per_time: Option<usize>,
    /// Defaults to every snapshot.
    #[arg(long)]
    times: Option<usize>,
    /// Drop the temperature data term.
    #[arg(long)]
    no_temperature_data: bool,
    #[command(flatten)]
    train: TrainFlags,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Eval {
    /// Checkpoint file
    #[arg(long)]
    model: PathBuf,
    /// Snapshot directory the model is scored against
    #[arg(long)]
    data: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ResolutionStudy {
    /// Snapshot directory from gen-data
    #[arg(long)]
    data: PathBuf,
    /// Interior points per time (capped at the grid)
    #[arg(long, value_delimiter = ',', default_values_t = [50, 850, 13500])]
    points: Vec<usize>,
    /// Snapshot counts
    #[arg(long, value_delimiter = ',', default_values_t = [3, 7, 13])]
    times: Vec<usize>,
    #[command(flatten)]
    train: TrainFlags,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchSolver {
    /// Square-cavity resolutions, each a multiple of the first
    #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128])]
    grids: Vec<usize>,
    /// Output directory for the report
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            3
        } else if e.is_io() {
            4
        } else {
            2
        };
        let mut message = e.to_string();
        if let Error::Divergence { history, .. } = &e {
            message.push_str(&format!(" ({} change-rate samples recorded)", history.len()));
        }
        Failure { code, message }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, message: msg.into() }
}

type CmdResult = Result<serde_json::Value, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    // the global pool can only be set once per process, which is all we need
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();

    let file = match &cli.config {
        Some(p) => match FileConfig::load(p) {
            Ok(c) => c,
            Err(f) => {
                eprintln!("error: {}", f.message);
                return ExitCode::from(f.code);
            }
        },
        None => FileConfig::default(),
    };
    let out_dir = match &cli.command {
        Command::GenData(a) => Some(a.out.clone()),
        Command::TrainForward(a) => Some(a.out.clone()),
        Command::TrainInverse(a) => Some(a.out.clone()),
        Command::Eval(a) => Some(a.out.clone()),
        Command::ResolutionStudy(a) => Some(a.out.clone()),
        Command::BenchSolver(a) => a.out.clone(),
    };
    let mut manifest = RunManifest::start(std::env::args().collect(), cli.seed, cli.threads);
    if let Some(path) = &cli.config {
        if let Err(f) = manifest.input(path) {
            eprintln!("error: {}", f.message);
            return ExitCode::from(f.code);
        }
    }
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a, &mut manifest),
        Command::TrainForward(a) => train_fwd(a, &cli, &file, &mut manifest),
        Command::TrainInverse(a) => train_inv(a, &cli, &file, &mut manifest),
        Command::Eval(a) => eval(a, &mut manifest),
        Command::ResolutionStudy(a) => sweep(a, &cli, &file, &mut manifest),
        Command::BenchSolver(a) => bench(a, &mut manifest),
    };
    let code = match &result {
        Ok(_) => 0,
        Err(f) => f.code,
    };
    if let Err(f) = &result {
        eprintln!("error: {}", f.message);
    }
    if let Some(dir) = out_dir {
        // usage errors before any work leave no manifest behind
        if code != 2 || dir.exists() {
            let results = result.as_ref().ok().cloned().unwrap_or(json!({"error": result.as_ref().err().map(|f| f.message.clone())}));
            if let Err(e) = manifest.finish(code, results).write(&dir.join("manifest.json")) {
                eprintln!("error: writing manifest: {e}");
                return ExitCode::from(4);
            }
        }
    }
    ExitCode::from(code)
}

fn positive(name: &str, v: f64) -> Result<f64, Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("--{name} must be positive, got {v}")))
    }
}

fn gen_data(a: &GenData, m: &mut RunManifest) -> CmdResult {
    let nd = match (&a.material, a.re, a.pe) {
        (Some(path), None, None) => {
            m.input(path)?;
            let mat = MaterialProps::load(path)?;
            NondimParams::from_material(&mat, positive("velocity", a.velocity)?, positive("length", a.length)?)?
        }
        (None, Some(re), Some(pe)) => NondimParams::new(positive("re", re)?, positive("pe", pe)?)?,
        _ => return Err(usage("give either --re and --pe, or --material")),
    };
    if a.snapshots < 2 {
        return Err(usage("--snapshots must be at least 2"));
    }
    m.config = json!({"re": nd.re, "pe": nd.pe, "grid_n": a.grid_n, "snapshots": a.snapshots});
    let grid = MaskedGrid::half_disk(a.grid_n)?;
    let started = Instant::now();
    let set = run_to_steady(grid, nd, a.snapshots)?;
    set.save(&a.out)?;
    if a.csv {
        set.write_csv(&a.out.join("snapshots.csv"))?;
    }
    println!(
        "wrote {} snapshots (t* = 0 .. {:.4}, {} steps) to {}",
        set.snapshots.len(),
        set.last().t_star,
        set.header.steady_steps,
        a.out.display()
    );
    Ok(json!({
        "provenance": set.provenance_hash(),
        "steady_steps": set.header.steady_steps,
        "t_final": set.last().t_star,
        "seconds": started.elapsed().as_secs_f64(),
    }))
}

fn load_data(dir: &Path, m: &mut RunManifest) -> Result<SnapshotSet, Failure> {
    m.input(&dir.join("header.json"))?;
    Ok(SnapshotSet::load(dir)?)
}

fn train_fwd(a: &TrainForward, cli: &Cli, file: &FileConfig, m: &mut RunManifest) -> CmdResult {
    let snaps = load_data(&a.data, m)?;
    let nd = snaps.header.nd;
    let mut cfg = file.train_config(cli.seed, &overrides(&a.train))?;
    if a.no_bc {
        cfg.boundary_losses = false;
    }
    let ppt = a.points_per_time.or(file.data.points_per_time).unwrap_or(850);
    let times = a.times.or(file.data.times).unwrap_or(7);
    m.config = json!({"train": cfg, "points_per_time": ppt, "times": times, "re": nd.re, "pe": nd.pe});
    let set = CollocationSet::sample(&snaps, &SampleConfig::new(ppt, times, cfg.seed))?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure { code: 4, message: format!("{}: {e}", a.out.display()) })?;
    set.save(&a.out.join("dataset.mpds"))?;
    let mut obs = FileObserver::new(&a.out.join("history.csv"), &a.out.join("checkpoint.mpck"))?;
    let out = train_forward(&set, &nd, &cfg, &mut obs)?;
    save_checkpoint(&a.out.join("checkpoint.mpck"), &out.checkpoint(LossMode::Forward))?;
    let ev = evaluate_model(&out.params, &snaps, &nd)?;
    write_report_csv(&a.out.join("report.csv"), &ev.report)?;
    write_profiles_csv(&a.out.join("profiles.csv"), &ev.profiles)?;
    let r = &ev.report;
    println!(
        "relative L2 at t* = {:.4}: T {:.4e}  u {:.4e}  v {:.4e}  p (mean-removed) {:.4e}",
        r.t_star, r.epsilon_t, r.epsilon_u, r.epsilon_v, r.epsilon_p_shifted
    );
    Ok(json!({
        "dataset_provenance": set.provenance,
        "report": r,
        "final_loss": out.final_loss(),
        "checkpoint_sha256": hash_file(&a.out.join("checkpoint.mpck"))?,
    }))
}

fn train_inv(a: &TrainInverse, cli: &Cli, file: &FileConfig, m: &mut RunManifest) -> CmdResult {
    let guess = (positive("guess-re", a.guess_re)?, positive("guess-pe", a.guess_pe)?);
    let snaps = load_data(&a.data, m)?;
    let mut cfg = file.train_config(cli.seed, &overrides(&a.train))?;
    if a.no_temperature_data {
        cfg.temperature_data = false;
    }
    let ppt = a.points_per_time.or(file.data.points_per_time).unwrap_or(snaps.header.interior_count);
    let times = a.times.or(file.data.times).unwrap_or(snaps.snapshots.len());
    m.config = json!({"train": cfg, "points_per_time": ppt, "times": times, "guess": [guess.0, guess.1]});
    let set = CollocationSet::sample(&snaps, &SampleConfig::new(ppt, times, cfg.seed))?.attach_velocity_labels(&snaps)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure { code: 4, message: format!("{}: {e}", a.out.display()) })?;
    let mut obs = FileObserver::new(&a.out.join("history.csv"), &a.out.join("checkpoint.mpck"))?;
    let out = train_inverse(&set, &cfg, guess, &mut obs)?;
    save_checkpoint(&a.out.join("checkpoint.mpck"), &out.checkpoint(LossMode::Inverse))?;
    let truth = (a.truth_re.unwrap_or(snaps.header.nd.re), a.truth_pe.unwrap_or(snaps.header.nd.pe));
    let (re, pe) = (out.re(), out.pe());
    let err = |x: f64, t: f64| 100.0 * (x - t).abs() / t;
    println!("guess     Re = {:.4}  Pe = {:.4}", guess.0, guess.1);
    println!("inferred  Re = {re:.4}  Pe = {pe:.4}");
    println!("truth     Re = {:.4}  Pe = {:.4}", truth.0, truth.1);
    println!("relative error  Re {:.2}%  Pe {:.2}%", err(re, truth.0), err(pe, truth.1));
    Ok(json!({
        "guess": {"re": guess.0, "pe": guess.1},
        "inferred": {"re": re, "pe": pe},
        "truth": {"re": truth.0, "pe": truth.1},
        "relative_error_percent": {"re": err(re, truth.0), "pe": err(pe, truth.1)},
        "dataset_provenance": set.provenance,
        "final_loss": out.final_loss(),
    }))
}

fn eval(a: &Eval, m: &mut RunManifest) -> CmdResult {
    m.input(&a.model)?;
    let ck = load_checkpoint(&a.model)?;
    let snaps = load_data(&a.data, m)?;
    // inverse checkpoints carry their own Re, Pe; fields are scored on the data's
    let ev = evaluate_model(&ck.params, &snaps, &snaps.header.nd)?;
    write_report_csv(&a.out.join("report.csv"), &ev.report)?;
    write_profiles_csv(&a.out.join("profiles.csv"), &ev.profiles)?;
    let r = &ev.report;
    println!(
        "relative L2 at t* = {:.4}: T {:.4e}  u {:.4e}  v {:.4e}  p (mean-removed) {:.4e}",
        r.t_star, r.epsilon_t, r.epsilon_u, r.epsilon_v, r.epsilon_p_shifted
    );
    Ok(json!({"report": r}))
}

fn sweep(a: &ResolutionStudy, cli: &Cli, file: &FileConfig, m: &mut RunManifest) -> CmdResult {
    let snaps = load_data(&a.data, m)?;
    let nd = snaps.header.nd;
    let cfg = file.train_config(cli.seed, &overrides(&a.train))?;
    m.config = json!({"train": cfg, "points": a.points, "times": a.times});
    let cells = resolution_study(&snaps, &nd, &a.points, &a.times, &cfg, |c| match &c.outcome {
        Ok(r) => println!("points {:>6} times {:>3}: eps_u {:.4e} eps_v {:.4e} eps_T {:.4e}", c.points_per_time, c.time_count, r.epsilon_u, r.epsilon_v, r.epsilon_t),
        Err(e) => println!("points {:>6} times {:>3}: failed: {e}", c.points_per_time, c.time_count),
    })?;
    write_sweep_csv(&a.out.join("sweep.csv"), &cells)?;
    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    Ok(json!({"cells": cells.len(), "failed": failed}))
}

fn bench(a: &BenchSolver, m: &mut RunManifest) -> CmdResult {
    m.config = json!({"grids": a.grids});
    let started = Instant::now();
    let rep = cavity_selfcheck(&a.grids, &RunConfig::default())?;
    for ((n, s), d) in rep.resolutions.iter().zip(&rep.steps).zip(rep.differences.iter().map(Some).chain([None])) {
        match d {
            Some(d) => println!("n = {n:>4}: {s} steps, difference to next grid {d:.4e}"),
            None => println!("n = {n:>4}: {s} steps"),
        }
    }
    for o in &rep.orders {
        println!("observed order {o:.3}");
    }
    println!("max divergence {:.2e}, {:.1}s", rep.max_divergence, started.elapsed().as_secs_f64());
    if let Some(out) = &a.out {
        let mut text = String::from("n,steps\n");
        for (n, s) in rep.resolutions.iter().zip(&rep.steps) {
            text.push_str(&format!("{n},{s}\n"));
        }
        meltpinn_core::io::write_atomic(&out.join("bench.csv"), text.as_bytes())?;
    }
    Ok(json!({"orders": rep.orders, "differences": rep.differences, "steps": rep.steps, "max_divergence": rep.max_divergence}))
}

fn overrides(t: &TrainFlags) -> TrainOverrides {
    TrainOverrides {
        max_iterations: t.iterations,
        learning_rate: t.learning_rate,
        batch_size: t.batch_size,
        hidden_layers: t.hidden_layers,
        width: t.width,
        eval_every: t.eval_every,
    }
}
