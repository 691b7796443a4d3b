use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dstgtn::ablate::{render_table, run_ablation};
use dstgtn::checkpoint::{load_checkpoint, save_checkpoint};
use dstgtn::config::{AppConfig, ModelConfig, TrainConfig};
use dstgtn::data::{
    generate_synthetic, load_dataset, make_windows, write_stts, Dataset, SyntheticConfig,
};
use dstgtn::error::{DataError, Error, TrainError};
use dstgtn::gradcheck;
use dstgtn::model::variants::{static_adjacency_from_coords, uniform_off_diagonal_adjacency};
use dstgtn::model::Model;
use dstgtn::train::{
    denormalize, evaluate, materialize_batch, protocol, train, Clock, EVAL_BATCH,
};
use dstgtn_tensor::{no_grad, Element};

/// Dynamic spatio-temporal graph transformer for traffic forecasting.
#[derive(Parser)]
#[command(name = "dstgtn", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config covering the model and training protocol.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the model variant from the config.
    #[arg(long)]
    variant: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<AppConfig, Error> {
        let mut app = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                AppConfig::from_json(&text)?
            }
            None => AppConfig::default(),
        };
        if let Some(seed) = self.seed {
            app.train.seed = seed;
        }
        if let Some(variant) = &self.variant {
            app.model.variant = variant.clone();
        }
        Ok(app)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset with a hidden diffusion graph.
    Synth {
        /// Output path for the STTS container.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        nodes: usize,
        #[arg(long, default_value_t = 2016)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Diffusion weight of the hidden graph, in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Observation noise standard deviation.
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        /// Scale of the per-node daily sinusoids.
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
        /// Share of graph mass on a random node cycle, in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        direction_bias: f64,
        /// Sampling interval in seconds (must divide a day).
        #[arg(long, default_value_t = 300)]
        interval: u32,
        /// Where to write the hidden graph (JSON); defaults to <out>.graph.json.
        #[arg(long)]
        graph_out: Option<PathBuf>,
    },
    /// Train a model and save the best-validation checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Training-log JSONL path; defaults to <out>.log.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Precision::F32)]
        precision: Precision,
        /// Stamp 0.0 in the per-epoch seconds field so logs are byte-reproducible.
        #[arg(long)]
        fixed_clock: bool,
        /// Write per-layer adjacency and filter weights to this JSONL file.
        #[arg(long)]
        dump_graphs: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one chronological split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which 6:2:2 split to score: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Precision::F32)]
        precision: Precision,
        #[arg(long)]
        dump_graphs: Option<PathBuf>,
    },
    /// Forecast one window and write a predictions CSV.
    Forecast {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Step index where the input window starts.
        #[arg(long)]
        offset: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Precision::F32)]
        precision: Precision,
    },
    /// Run the finite-difference gradient suite on the micro architecture.
    Gradcheck {
        #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Train and score every model variant on one dataset.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write the comparison rows as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Synth {
            out,
            nodes,
            steps,
            seed,
            alpha,
            sigma,
            amplitude,
            direction_bias,
            interval,
            graph_out,
        } => {
            let cfg = SyntheticConfig {
                nodes,
                t_total: steps,
                seed,
                alpha,
                sigma,
                amplitude,
                direction_bias,
                interval_seconds: interval,
                ..SyntheticConfig::default()
            };
            let result = generate_synthetic(&cfg)?;
            write_stts(&result.dataset, &out)?;
            let graph_path = graph_out.unwrap_or_else(|| {
                let mut p = out.as_os_str().to_owned();
                p.push(".graph.json");
                PathBuf::from(p)
            });
            let rows: Vec<Vec<f64>> = result.graph.chunks(nodes).map(|r| r.to_vec()).collect();
            std::fs::write(&graph_path, serde_json::to_string_pretty(&rows).unwrap())?;
            println!(
                "wrote {} ({} steps × {} nodes) and hidden graph {}",
                out.display(),
                steps,
                nodes,
                graph_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Train {
            data,
            out,
            config,
            log,
            precision,
            fixed_clock,
            dump_graphs,
        } => {
            let ds = load_dataset(&data)?;
            let app = config.load()?;
            let clock = if fixed_clock { Clock::Fixed } else { Clock::Wall };
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.as_os_str().to_owned();
                p.push(".log.jsonl");
                PathBuf::from(p)
            });
            match precision {
                Precision::F32 => run_train::<f32>(&ds, app, &out, &log_path, clock, dump_graphs),
                Precision::F64 => run_train::<f64>(&ds, app, &out, &log_path, clock, dump_graphs),
            }
        }

        Command::Eval {
            data,
            checkpoint,
            split,
            out,
            precision,
            dump_graphs,
        } => {
            let ds = load_dataset(&data)?;
            match precision {
                Precision::F32 => run_eval::<f32>(&ds, &checkpoint, &split, out, dump_graphs),
                Precision::F64 => run_eval::<f64>(&ds, &checkpoint, &split, out, dump_graphs),
            }
        }

        Command::Forecast {
            data,
            checkpoint,
            offset,
            out,
            precision,
        } => {
            let ds = load_dataset(&data)?;
            match precision {
                Precision::F32 => run_forecast::<f32>(&ds, &checkpoint, offset, &out),
                Precision::F64 => run_forecast::<f64>(&ds, &checkpoint, offset, &out),
            }
        }

        Command::Gradcheck { step, tolerance } => {
            let results = gradcheck::run_suite(step, tolerance)?;
            let mut all_passed = true;
            for r in &results {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{status}  {:<42} max_rel_err {:.3e} (tol {:.0e})",
                    r.name, r.max_rel_error, r.tolerance
                );
                all_passed &= r.passed();
            }
            if all_passed {
                println!("all {} checks passed", results.len());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("error: gradient check failed");
                Ok(ExitCode::from(3))
            }
        }

        Command::Ablate { data, config, out } => {
            let ds = load_dataset(&data)?;
            let app = config.load()?;
            let rows = run_ablation::<f32>(&ds, &app.model, &app.train, Clock::Wall)?;
            print!("{}", render_table(&rows));
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&rows).unwrap())?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Fills in the static adjacency for the static-graph variant when the
/// config does not carry one: Gaussian kernel over sensor coordinates if
/// present, else a uniform binary graph.
fn resolve_static_adjacency(cfg: &mut ModelConfig, ds: &Dataset) {
    if cfg.variant == "static_graph" && cfg.static_adjacency.is_none() {
        cfg.static_adjacency = Some(match &ds.coordinates {
            Some(coords) => static_adjacency_from_coords(coords),
            None => uniform_off_diagonal_adjacency(ds.nodes),
        });
    }
}

fn run_train<T: Element>(
    ds: &Dataset,
    app: AppConfig,
    out: &Path,
    log_path: &Path,
    clock: Clock,
    dump_graphs: Option<PathBuf>,
) -> Result<ExitCode, Error> {
    let mut model_cfg = app.model.with_nodes(ds.nodes)?;
    resolve_static_adjacency(&mut model_cfg, ds);
    let train_cfg: TrainConfig = app.train;
    let model = Model::<T>::build(&model_cfg, train_cfg.seed)?;

    let outcome = match train(&model, ds, &train_cfg, clock) {
        Ok(outcome) => outcome,
        Err(Error::Train(TrainError::Diverged { epoch, log })) => {
            // Persist the completed epochs, then surface the numeric failure.
            let mut text = String::new();
            for record in &log {
                text.push_str(&serde_json::to_string(record).unwrap());
                text.push('\n');
            }
            std::fs::write(log_path, text)?;
            return Err(TrainError::Diverged { epoch, log }.into());
        }
        Err(e) => return Err(e),
    };

    save_checkpoint(&model, out)?;
    std::fs::write(log_path, outcome.log_jsonl())?;
    if let Some(path) = dump_graphs {
        write_graph_dump(&model, &path)?;
    }
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": out.display().to_string(),
            "log": log_path.display().to_string(),
            "epochs": outcome.log.len(),
            "best_epoch": outcome.best_epoch,
            "best_val_mae": outcome.best_val_mae,
            "parameters": model.registry.value_count(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn run_eval<T: Element>(
    ds: &Dataset,
    checkpoint: &Path,
    split: &str,
    out: Option<PathBuf>,
    dump_graphs: Option<PathBuf>,
) -> Result<ExitCode, Error> {
    let model = load_checkpoint::<T>(checkpoint)?;
    model.check_dataset(ds)?;
    let proto = protocol(ds, model.cfg.t_in, model.cfg.t_out)?;
    let range = proto.splits.named(split).ok_or_else(|| {
        DataError::Invalid(format!("unknown split '{split}'; use train, val or test"))
    })?;
    let windows = make_windows(ds, range, model.cfg.t_in, model.cfg.t_out)?;
    let report = evaluate(&model, &windows, &proto.stats, EVAL_BATCH)?;
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "split": split,
        "windows": windows.len(),
        "mae": report.mae,
        "rmse": report.rmse,
        "mape_percent": report.mape_percent,
        "count": report.count,
    }))
    .unwrap();
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(&path, text)?;
    }
    if let Some(path) = dump_graphs {
        write_graph_dump(&model, &path)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn write_graph_dump<T: Element>(model: &Model<T>, path: &Path) -> Result<(), Error> {
    let snaps = model.graph_snapshots()?;
    let mut file = std::fs::File::create(path)?;
    for snap in snaps {
        let record = serde_json::json!({
            "layer": snap.layer,
            "t_in": snap.t_in,
            "nodes": snap.nodes,
            "a_st": snap.a_st,
            "lambda_local": snap.lambda_local,
            "lambda_global": snap.lambda_global,
        });
        writeln!(file, "{record}")?;
    }
    Ok(())
}

fn run_forecast<T: Element>(
    ds: &Dataset,
    checkpoint: &Path,
    offset: usize,
    out: &Path,
) -> Result<ExitCode, Error> {
    let model = load_checkpoint::<T>(checkpoint)?;
    model.check_dataset(ds)?;
    let (t_in, t_out) = (model.cfg.t_in, model.cfg.t_out);
    if offset + t_in + t_out > ds.t_total {
        return Err(DataError::Invalid(format!(
            "window at offset {offset} needs {} steps, dataset has {}",
            t_in + t_out,
            ds.t_total
        ))
        .into());
    }
    let proto = protocol(ds, t_in, t_out)?;
    let windows = make_windows(ds, offset..offset + t_in + t_out, t_in, t_out)?;
    let batch = materialize_batch::<T>(&windows, &[0], &proto.stats);
    let pred = no_grad(|| -> Result<_, Error> {
        let y = model.forward(&batch.x, &batch.timestamps, ds.interval_seconds)?;
        Ok(denormalize(&y, &proto.stats))
    })?;

    let mut writer =
        csv::Writer::from_path(out).map_err(|e| DataError::Invalid(format!("csv open: {e}")))?;
    writer
        .write_record(["timestamp", "node_id", "horizon", "prediction", "truth", "mask"])
        .map_err(|e| DataError::Invalid(format!("csv write: {e}")))?;
    let w = windows.window(0);
    let truth = w.target();
    let mask = w.target_mask();
    for (h, ts) in w.target_timestamps().enumerate() {
        for n in 0..ds.nodes {
            for c in 0..ds.channels {
                let i = (h * ds.nodes + n) * ds.channels + c;
                writer
                    .write_record([
                        ts.to_string(),
                        ds.node_ids[n].clone(),
                        (h + 1).to_string(),
                        format!("{}", pred.data()[i].as_f64()),
                        format!("{}", truth[i]),
                        mask[i].to_string(),
                    ])
                    .map_err(|e| DataError::Invalid(format!("csv write: {e}")))?;
            }
        }
    }
    writer.flush().map_err(DataError::Io)?;
    println!("wrote {} ({} horizons × {} nodes)", out.display(), t_out, ds.nodes);
    Ok(ExitCode::SUCCESS)
}
