//! Command-line front end: dataset generation, training, evaluation,
//! latency benchmarking, sweeps and plotting.

use clap::{Parser, Subcommand};
use icmf::error::Result;
use icmf::eval::bench::{run_bench, BenchConfig};
use icmf::harness::sweep::{plot_summary, sweep, SweepAxis, SweepResult};
use icmf::harness::{
    load_checkpoint, load_datasets, run_eval, train, write_datasets, ExperimentConfig, JointModel,
};
use icmf::tensorad::optim::Adam;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "icmf",
    about = "Joint BEV detection and motion forecasting with convolutional and graph interaction stages on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct ConfigArgs {
    /// Configuration file (key = value sections); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the smaller trend preset instead of the full desk defaults.
    #[arg(long, default_value_t = false)]
    trend: bool,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the interaction-region size in meters.
    #[arg(long)]
    ir_size: Option<f64>,
    /// Override the graph stage on/off.
    #[arg(long)]
    gnn: Option<bool>,
    /// Override the interaction loss on/off.
    #[arg(long)]
    interaction_loss: Option<bool>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if self.trend => ExperimentConfig::trend_preset(),
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(v) = self.ir_size {
            cfg.model.ir_size_m = v;
        }
        if let Some(v) = self.gnn {
            cfg.model.gnn_enabled = v;
        }
        if let Some(v) = self.interaction_loss {
            cfg.model.interaction_loss_enabled = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/validation scene datasets.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for train.icms and val.icms.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated dataset.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory containing train.icms / val.icms.
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for the checkpoint and run record.
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate on the validation split after training.
        #[arg(long, default_value_t = true)]
        eval_after: bool,
    },
    /// Evaluate a checkpoint on a dataset's validation split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark second-stage module latencies.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Actor count for the headline comparison.
        #[arg(long)]
        actors: Option<usize>,
        /// Timed repeats per measurement.
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train/evaluate along one config axis over several seeds.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Axis: ir_size | front_to_back | gnn_on_off | interaction_loss.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (meters, ratio, or 0/1 toggles).
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG plots from a sweep output directory.
    Plot {
        /// Directory containing sweep.json from `sweep`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration and exit.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = config.load()?;
            write_datasets(&cfg, &out)?;
            cfg.save(&out.join("config.cfg"))?;
            println!(
                "wrote {} train and {} validation scenes to {}",
                cfg.data.train_scenes,
                cfg.data.val_scenes,
                out.display()
            );
        }
        Command::Train {
            config,
            dataset,
            out,
            eval_after,
        } => {
            let cfg = config.load()?;
            let (train_set, val_set) = load_datasets(&dataset)?;
            let model = JointModel::new(&cfg)?;
            std::fs::create_dir_all(&out)?;
            let mut record = train(&model, &train_set, Some(&out))?;
            println!(
                "trained {} iterations in {:.1} s (final loss {:.4})",
                record.losses.len(),
                record.wall_ms as f64 / 1e3,
                record.losses.last().map(|l| l.total).unwrap_or(f64::NAN)
            );
            if eval_after {
                let report = run_eval(&model, &val_set);
                std::fs::write(out.join("metrics.csv"), report.to_csv())?;
                write_json(&out.join("metrics.json"), &report)?;
                println!(
                    "eval: AP {:.3}, DE@4s {:.2} m, actor-static overlap {:.2}%",
                    report.ap_at_iou50, report.de_4s, report.actor_static_overlap
                );
                record.final_metrics = Some(report);
            }
            record.save(&out.join("run_record.json"))?;
        }
        Command::Eval {
            config,
            checkpoint,
            dataset,
            out,
        } => {
            let cfg = config.load()?;
            let (_, val_set) = load_datasets(&dataset)?;
            let model = JointModel::new(&cfg)?;
            let set = model.params();
            let mut adam = Adam::new(&set.params);
            load_checkpoint(&model, &mut adam, &checkpoint)?;
            let report = run_eval(&model, &val_set);
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("metrics.csv"), report.to_csv())?;
            write_json(&out.join("metrics.json"), &report)?;
            print!("{}", report.to_csv());
        }
        Command::Bench {
            config,
            actors,
            repeats,
            out,
        } => {
            let cfg = config.load()?;
            let mut bench_cfg = BenchConfig {
                channels: cfg.model.channels,
                grid: cfg.grid,
                ir_size_max: cfg.bench.ir_size_max,
                gnn_iterations: cfg.model.gnn_iterations,
                repeats: cfg.bench.repeats,
                actors: cfg.bench.actors,
                ..Default::default()
            };
            if let Some(a) = actors {
                bench_cfg.actors = a;
            }
            if let Some(r) = repeats {
                bench_cfg.repeats = r;
            }
            let report = run_bench(&bench_cfg);
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("latency.csv"), report.to_csv())?;
            write_json(&out.join("latency.json"), &report)?;
            println!(
                "V={}: icm(0m) {:.2} ms | icm({}m) {:.2} ms | gnn {:.2} ms  [{}]",
                report.actors,
                report.icm0_ms,
                bench_cfg.ir_size_max,
                report.icm_max_ms,
                report.gnn_ms,
                report.hardware
            );
            println!(
                "scaling: icm linear R2={:.3}, gnn log-log slope={:.2} (R2={:.3})",
                report.icm_fit.r2, report.gnn_loglog.slope, report.gnn_loglog.r2
            );
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let cfg = config.load()?;
            let axis: SweepAxis = axis.parse()?;
            let result = sweep(&cfg, axis, &values, &seeds, Some(&out))?;
            write_json(&out.join("sweep.json"), &result)?;
            plot_summary(&result, &out.join("plots"))?;
            println!(
                "{} runs complete; results under {}",
                result.runs.len(),
                out.display()
            );
        }
        Command::Plot { input, out } => {
            let json = input.join("sweep.json");
            let result: SweepResult = serde_json::from_str(
                &std::fs::read_to_string(&json).map_err(icmf::error::Error::Io)?,
            )
            .map_err(|e| icmf::error::Error::Format(format!("bad sweep.json: {e}")))?;
            plot_summary(&result, &out)?;
            println!("plots written to {}", out.display());
        }
        Command::Config { config } => {
            let cfg = config.load()?;
            print!("{}", cfg.to_text());
        }
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| icmf::error::Error::Format(format!("json serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}
