use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tfcnet::cost::{cost_network, operator_ratios};
use tfcnet::nn::{place_tfc_blocks, Architecture, NetworkConfig, TfcPolicy};
use tfcnet::sampling::Strategy;
use tfcnet::synth::{export_dataset, load_split, Difficulty, Split, SynthConfig};
use tfcnet::train::{
    data_rng, eval_plans, evaluate_checkpoint, load_checkpoint, train_epoch_plans, train_on, Dataset, MetricsRow,
    PlannedClip, TrainConfig, CSV_HEADER,
};
use tfcnet::verify::run_suite;
use tfcnet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tfcnet",
    version,
    about = "Temporal fully connected video networks on a synthetic benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network described by a key = value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Print the first epoch's frame plans as JSON lines instead of training.
        #[arg(long)]
        dump_plan: bool,
    },
    /// Evaluate a saved checkpoint on one dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        /// Dataset directory; defaults to the one in the run's config.txt.
        #[arg(long)]
        data: Option<PathBuf>,
        /// `video` or `clip`; defaults to the run's sampling.
        #[arg(long)]
        sampling: Option<Strategy>,
        /// Print the evaluation frame plans as JSON lines instead of evaluating.
        #[arg(long)]
        dump_plan: bool,
    },
    /// Run the oracle suite; exits with status 1 if any check fails.
    Verify {
        #[arg(long)]
        json: bool,
    },
    /// Parameter and FLOP counts of a network, or operator ratios.
    Cost {
        /// Take the network from a training config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `mini` or `resnet50`.
        #[arg(long, default_value = "mini")]
        profile: String,
        #[arg(long, default_value = "v3d")]
        arch: Architecture,
        #[arg(long, default_value = "none")]
        tfc: TfcPolicy,
        #[arg(long, default_value_t = 0)]
        tfc_phase: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        /// Add ratios against the same network without TFC branches.
        #[arg(long)]
        baseline: bool,
        /// Operator ratios for `C_in,C_out,T,K` instead of a network.
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic snitch-localization dataset.
    GenData {
        #[arg(long, default_value_t = 4)]
        grid: usize,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 512)]
        train_count: usize,
        #[arg(long, default_value_t = 128)]
        val_count: usize,
        #[arg(long, default_value = "hard")]
        difficulty: Difficulty,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_plans(split: Split, ids: &[String], plans: &[PlannedClip]) {
    for p in plans {
        let line = serde_json::json!({
            "split": split.to_string(),
            "video": ids[p.video],
            "indices": p.indices,
            "crop": p.crop,
        });
        println!("{line}");
    }
}

fn row_line(r: &MetricsRow) -> String {
    format!(
        "{},{},{},{:.4},{:.4},{:.4},{:.4}",
        r.epoch, r.split, r.lr, r.top1, r.top5, r.loss, r.l1
    )
}

fn train(config: &Path, dump_plan: bool) -> Result<()> {
    let cfg = TrainConfig::from_file(config)?;
    cfg.validate()?;
    let data = Dataset::load(&cfg.data)?;
    if dump_plan {
        let limit = match cfg.train_limit {
            0 => data.train.len(),
            n => n.min(data.train.len()),
        };
        let samples = &data.train[..limit];
        let plans = train_epoch_plans(&cfg, samples, &mut data_rng(cfg.seed))?;
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        print_plans(Split::Train, &ids, &plans);
        return Ok(());
    }
    println!("{CSV_HEADER}");
    let outcome = train_on(&cfg, &data, &mut |r| println!("{}", row_line(r)))?;
    eprintln!(
        "final val top1 {:.4}; metrics and checkpoint in {}",
        outcome.final_val.top1,
        cfg.out.display()
    );
    Ok(())
}

fn eval(
    checkpoint: &Path,
    split: Split,
    data: Option<PathBuf>,
    sampling: Option<Strategy>,
    dump_plan: bool,
) -> Result<()> {
    let run_config = checkpoint.parent().map(|p| p.join("config.txt")).filter(|p| p.exists());
    let mut cfg = match &run_config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    let (_, manifest) = load_checkpoint(checkpoint)?;
    cfg.network = manifest.network;
    if let Some(s) = sampling {
        cfg.sampling = s;
    }
    let data = match (data, &run_config) {
        (Some(d), _) => d,
        (None, Some(_)) => cfg.data.clone(),
        (None, None) => return Err(Error::Usage("no config.txt next to the checkpoint; pass --data".into())),
    };
    let opts = cfg.eval_options();
    if dump_plan {
        let (_, samples) = load_split(&data, split)?;
        let plans = eval_plans(&samples, opts, cfg.network.frames)?;
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        print_plans(split, &ids, &plans);
        return Ok(());
    }
    let row = evaluate_checkpoint(checkpoint, &data, split, opts)?;
    println!("{CSV_HEADER}\n{}", row_line(&row));
    Ok(())
}

fn verify(json: bool) -> Result<bool> {
    let outcomes = run_suite()?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&outcomes).expect("outcomes serialize")
        );
    } else {
        for o in &outcomes {
            println!("{}", o.line());
        }
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

#[allow(clippy::too_many_arguments)]
fn cost(
    config: Option<PathBuf>,
    profile: &str,
    arch: Architecture,
    mut tfc: TfcPolicy,
    tfc_phase: usize,
    batch: usize,
    baseline: bool,
    ratios: Option<String>,
    json: bool,
) -> Result<()> {
    let report = if let Some(dims) = ratios {
        let d: Vec<usize> = dims
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::Usage(format!("bad dimension `{v}` in --ratios")))
            })
            .collect::<Result<_>>()?;
        let [c_in, c_out, t, k] = d[..] else {
            return Err(Error::Usage("--ratios takes C_in,C_out,T,K".into()));
        };
        operator_ratios(c_in, c_out, t, k)?
    } else {
        let network = match config {
            Some(p) => TrainConfig::from_file(&p)?.network,
            None => {
                if let TfcPolicy::V3d { phase } = &mut tfc {
                    *phase = tfc_phase;
                }
                match profile {
                    "mini" => NetworkConfig::mini(arch, tfc),
                    "resnet50" => NetworkConfig::resnet50(arch, tfc),
                    other => return Err(Error::Config(format!("unknown profile `{other}`"))),
                }
            }
        };
        let spec = network.build_spec()?;
        let report = cost_network(&spec, batch, network.size, network.size)?;
        if baseline {
            let base = place_tfc_blocks(&spec, TfcPolicy::None)?;
            report.with_baseline("no TFC", &cost_network(&base, batch, network.size, network.size)?)
        } else {
            report
        }
    };
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gen_data(
    grid: usize,
    frames: usize,
    size: usize,
    train_count: usize,
    val_count: usize,
    difficulty: Difficulty,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = SynthConfig {
        grid,
        frames,
        height: size,
        width: size,
        difficulty,
        ..SynthConfig::default()
    };
    let manifest = export_dataset(&cfg, train_count, val_count, out, seed)?;
    println!(
        "wrote {} videos ({train_count} train, {val_count} val, {difficulty}) to {}",
        manifest.videos.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, dump_plan } => train(&config, dump_plan).map(|_| true),
        Command::Eval {
            checkpoint,
            split,
            data,
            sampling,
            dump_plan,
        } => eval(&checkpoint, split, data, sampling, dump_plan).map(|_| true),
        Command::Verify { json } => verify(json),
        Command::Cost {
            config,
            profile,
            arch,
            tfc,
            tfc_phase,
            batch,
            baseline,
            ratios,
            json,
        } => cost(config, &profile, arch, tfc, tfc_phase, batch, baseline, ratios, json).map(|_| true),
        Command::GenData {
            grid,
            frames,
            size,
            train_count,
            val_count,
            difficulty,
            seed,
            out,
        } => gen_data(grid, frames, size, train_count, val_count, difficulty, seed, &out).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
