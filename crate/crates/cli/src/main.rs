use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use neural_spde::dataset::Generator;
use neural_spde::io::{read_dataset, write_atomic, Checkpoint, DatasetWriter, RunConfig};
use neural_spde::solvers::NsConfig;
use neural_spde::training::{evaluate, train, ModelKind, OperatorModel, Task};
use neural_spde::{Error, Result};

/// Neural SPDE and FNO operators: generate data, train, evaluate.
#[derive(Debug, Parser)]
#[command(name = "nspde", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an equation and write a dataset file.
    Generate {
        /// Equation to simulate.
        #[arg(long, value_parser = ["phi41", "ns2d", "ns2d-det"])]
        equation: String,
        /// TOML run configuration; the [phi41] or [ns] section is used.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Output dataset file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Override the number of samples.
        #[arg(long, value_name = "N")]
        samples: Option<usize>,
    },
    /// Train a model and write checkpoint.nspc, metrics.csv and timing.csv.
    Train {
        /// Operator architecture.
        #[arg(long, value_parser = ["nspde", "fno"])]
        model: String,
        /// Inputs the model sees: initial condition, noise, or both.
        #[arg(long, value_parser = ["u0", "xi", "u0xi"])]
        task: String,
        /// Dataset file.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// TOML run configuration; [train], [nspde] and [fno] are used.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the number of epochs.
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Override the training seed.
        #[arg(long, value_name = "SEED")]
        seed: Option<u64>,
        /// Not supported: training always starts from a fresh initialization.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Print the mean relative L2 error of a checkpoint on a dataset.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Dataset file.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Evaluate on this spatial grid (e.g. 64x64 or 128) through the
        /// zero-shot path; finer data is subsampled to it.
        #[arg(long, value_name = "RxR")]
        resolution: Option<String>,
        /// Samples per forward pass.
        #[arg(long, value_name = "N", default_value_t = 20)]
        batch_size: usize,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn generate(equation: &str, config: Option<&Path>, out: &Path, samples: Option<usize>) -> Result<()> {
    let cfg = load_config(config)?;
    let generator = match equation {
        "phi41" => {
            let mut c = cfg.phi41()?;
            if let Some(n) = samples {
                c.samples = n;
            }
            Generator::Phi41(c)
        }
        _ => {
            let deterministic = equation == "ns2d-det";
            let base = if deterministic { NsConfig::deterministic() } else { NsConfig::default() };
            let mut c = cfg.ns(base)?;
            if deterministic {
                c.sigma = 0.0;
            } else if c.sigma == 0.0 {
                return Err(Error::Config("ns2d needs sigma != 0; use ns2d-det for noise-free data".into()));
            }
            if let Some(n) = samples {
                if n == 0 {
                    return Err(Error::Config("samples must be positive".into()));
                }
                let per = if c.window == 0 { 1 } else { c.windows_per_trajectory };
                if n % per != 0 {
                    return Err(Error::Config(format!("{n} samples is not a multiple of {per} windows per trajectory")));
                }
                c.trajectories = n / per;
            }
            Generator::Ns(c)
        }
    };
    let meta = generator.meta()?;
    let mut writer = DatasetWriter::create(out, &meta)?;
    generator.run(&mut |s| writer.push(&s))?;
    writer.finish()?;
    println!(
        "equation={} seed={} samples={} out={}",
        meta.equation,
        meta.noise_seed,
        meta.samples,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    model: &str,
    task: &str,
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    epochs: Option<usize>,
    seed: Option<u64>,
    resume: Option<&Path>,
) -> Result<()> {
    if resume.is_some() {
        return Err(Error::InvalidArgument("resuming from a checkpoint is not supported".into()));
    }
    let cfg = load_config(config)?;
    let mut tc = cfg.train()?;
    tc.model = model.parse::<ModelKind>()?;
    tc.task = task.parse::<Task>()?;
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    if let Some(s) = seed {
        tc.seed = s;
    }
    tc.validate()?;
    let data = read_dataset(data)?;
    let mut m = OperatorModel::build(tc.model, tc.task, cfg.nspde()?, cfg.fno()?, &data.meta)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let metrics = train(&tc, &mut m, &data, &mut |r| {
        eprintln!(
            "epoch {:>4}  lr {:.2e}  train_loss {:.6e}  test_rel_l2 {:.6}  {:.1}s",
            r.epoch, r.lr, r.train_loss, r.test_rel_l2, r.seconds
        )
    })?;
    Checkpoint { model: m, task: tc.task }.save(out.join("checkpoint.nspc"))?;
    write_atomic(&out.join("metrics.csv"), metrics.to_csv().as_bytes())?;
    write_atomic(&out.join("timing.csv"), metrics.timing_csv().as_bytes())?;
    println!(
        "model={} task={} params={} test_rel_l2={} out={}",
        tc.model.label(),
        tc.task.label(),
        metrics.param_count,
        metrics.final_test_error(),
        out.display()
    );
    Ok(())
}

fn parse_resolution(text: &str, dims: usize) -> Result<Vec<usize>> {
    let parts: std::result::Result<Vec<usize>, _> = text.split('x').map(str::parse).collect();
    match parts {
        Ok(p) if p.len() == dims && p.iter().all(|&n| n > 0) => Ok(p),
        Ok(p) if p.len() == 1 && p[0] > 0 => Ok(vec![p[0]; dims]),
        _ => Err(Error::InvalidArgument(format!("resolution {text:?} for a {dims}-d grid"))),
    }
}

fn eval_cmd(checkpoint: &Path, data: &Path, resolution: Option<&str>, batch_size: usize) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut data = read_dataset(data)?;
    let superres = resolution.is_some();
    if let Some(text) = resolution {
        let want = parse_resolution(text, data.meta.space.len())?;
        let have = &data.meta.space;
        let factor = have[0] / want[0];
        if have.iter().zip(&want).any(|(h, w)| w > h || h % w != 0 || h / w != factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot bring data on {have:?} to {want:?} by uniform subsampling"
            )));
        }
        if factor > 1 {
            data = data.downsample_space(factor)?;
        }
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let err = evaluate(&ck.model, &data, &all, ck.task, batch_size, superres)?;
    let grid = data.meta.space.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
    println!(
        "model={} task={} grid={} trained_grid={:?} samples={} rel_l2={}",
        ck.model.kind().label(),
        ck.task.label(),
        grid,
        ck.model.trained_grid(),
        data.len(),
        err
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            equation,
            config,
            out,
            samples,
        } => generate(&equation, config.as_deref(), &out, samples),
        Command::Train {
            model,
            task,
            data,
            config,
            out,
            epochs,
            seed,
            resume,
        } => train_cmd(&model, &task, &data, config.as_deref(), &out, epochs, seed, resume.as_deref()),
        Command::Eval {
            checkpoint,
            data,
            resolution,
            batch_size,
        } => eval_cmd(&checkpoint, &data, resolution.as_deref(), batch_size),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage message={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} message={}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
