mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikereg::materials::Experiment;
use spikereg::network::Preset;
use spikereg::neuron::{GradientMode, Recurrence};
use spikereg::training::{LossKind, ResetGrad};
use spikereg::{Error, ErrorKind, Result};

use config::{parse_kebab, RunConfig, Split};

#[derive(Parser)]
#[command(
    name = "spikereg",
    version,
    about = "Spiking neural network surrogates for material models"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for chunked forward/backward passes.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run single-threaded.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Master seed (falls back to the config file, then SPIKEREG_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test CSVs and the dataset.json sidecar.
    Gen(GenArgs),
    /// Train a network; writes report.json, metrics.csv and snapshot.bin.
    Train(TrainArgs),
    /// Evaluate a snapshot; writes metrics.json and predictions.csv.
    Eval(EvalArgs),
    /// Estimate inference energy; writes energy.json and energy.txt.
    Profile(ProfileArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_kebab::<Experiment>)]
    experiment: Option<Experiment>,
    /// Time steps per sequence.
    #[arg(long)]
    dt: Option<usize>,
    #[arg(long = "train")]
    train_size: Option<usize>,
    #[arg(long = "val")]
    val_size: Option<usize>,
    #[arg(long = "test")]
    test_size: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct OptimArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, value_parser = parse_kebab::<LossKind>)]
    loss: Option<LossKind>,
    /// surrogate or smooth.
    #[arg(long, value_parser = parse_kebab::<GradientMode>)]
    gradient_mode: Option<GradientMode>,
    /// detached or full.
    #[arg(long, value_parser = parse_kebab::<ResetGrad>)]
    reset: Option<ResetGrad>,
    /// Global gradient-norm clip; 0 disables it.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Sequences per forward/backward chunk.
    #[arg(long)]
    chunk_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_kebab::<Preset>)]
    preset: Option<Preset>,
    /// Time steps per sequence; must match the dataset.
    #[arg(long)]
    dt: Option<usize>,
    #[arg(long)]
    n_u: Option<usize>,
    #[arg(long)]
    n_o: Option<usize>,
    /// Hidden layers.
    #[arg(long)]
    layers: Option<usize>,
    /// paper-literal or self.
    #[arg(long, value_parser = parse_kebab::<Recurrence>)]
    recurrence: Option<Recurrence>,
    #[command(flatten)]
    optim: OptimArgs,
    /// Run the finite-difference gradient check first.
    #[arg(long)]
    grad_check: bool,
}

#[derive(Args)]
struct SnapshotArgs {
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_kebab::<Split>)]
    split: Option<Split>,
    #[arg(long)]
    chunk_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: SnapshotArgs,
    #[arg(long, value_parser = parse_kebab::<LossKind>)]
    loss: Option<LossKind>,
    #[arg(long, value_parser = parse_kebab::<GradientMode>)]
    gradient_mode: Option<GradientMode>,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    inputs: SnapshotArgs,
    /// JSON file with `spiking` and `dense` device profiles.
    #[arg(long)]
    devices: Option<PathBuf>,
}

impl SnapshotArgs {
    fn apply(&self, c: &mut RunConfig) {
        c.snapshot = self.snapshot.clone();
        c.data = self.data.data.clone();
        c.split = self.split;
        c.chunk_size = self.chunk_size;
    }
}

impl Cli {
    /// Flag values as a config layer, plus the device-profile file if any.
    fn flags(&self) -> (RunConfig, Option<PathBuf>) {
        let mut c = RunConfig {
            threads: self.threads,
            deterministic: self.deterministic.then_some(true),
            seed: self.seed,
            out: self.out.clone(),
            ..RunConfig::default()
        };
        let mut devices = None;
        match &self.command {
            Command::Gen(a) => {
                c.experiment = a.experiment;
                c.dt = a.dt;
                c.train_size = a.train_size;
                c.val_size = a.val_size;
                c.test_size = a.test_size;
            }
            Command::Train(a) => {
                c.data = a.data.data.clone();
                c.preset = a.preset;
                c.dt = a.dt;
                c.n_u = a.n_u;
                c.n_o = a.n_o;
                c.layers = a.layers;
                c.recurrence = a.recurrence;
                let o = &a.optim;
                c.epochs = o.epochs;
                c.batch_size = o.batch_size;
                c.learning_rate = o.learning_rate;
                c.weight_decay = o.weight_decay;
                c.loss = o.loss;
                c.gradient_mode = o.gradient_mode;
                c.reset = o.reset;
                c.clip_norm = o.clip_norm;
                c.chunk_size = o.chunk_size;
                c.grad_check = a.grad_check.then_some(true);
            }
            Command::Eval(a) => {
                a.inputs.apply(&mut c);
                c.loss = a.loss;
                c.gradient_mode = a.gradient_mode;
            }
            Command::Profile(a) => {
                a.inputs.apply(&mut c);
                devices = a.devices.clone();
            }
        }
        (c, devices)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (flags, devices) = cli.flags();
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = file.overlay(&flags);
    match cli.command {
        Command::Gen(_) => commands::gen(cfg),
        Command::Train(_) => commands::train_cmd(cfg),
        Command::Eval(_) => commands::eval(cfg),
        Command::Profile(_) => commands::profile(cfg, devices.as_deref()),
    }
}

/// Keeps large per-chunk buffers on the heap instead of fresh mmap pages.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    // SAFETY: plain libc calls made before any other thread exists.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 25);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tune_allocator();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
