//! Optimization and evaluation harness: z-score normalization, Adam with
//! MAE loss on denormalized values, seeded epoch shuffles, early stopping on
//! validation MAE, and pointwise metric aggregation.

mod adam;
mod zscore;

pub use adam::{adam_step, AdamState};
pub use zscore::ZScoreStats;

use std::time::Instant;

use dstgtn_tensor::{no_grad, Element, Tensor};
use serde::Serialize;

use crate::config::TrainConfig;
use crate::data::{chronological_split, make_windows, Dataset, SplitRanges, WindowSet};
use crate::error::{Error, TrainError};
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::model::Model;
use crate::rng::Lcg64;

/// Windows evaluated per forward pass during validation/test; metrics are
/// pointwise so the choice never changes results.
pub const EVAL_BATCH: usize = 64;

/// Epoch timing source. `Fixed` stamps 0.0 so logs are reproducible
/// byte-for-byte; `Wall` measures real time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    Wall,
    Fixed,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_mape: f64,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stats: ZScoreStats,
}

impl TrainOutcome {
    /// JSON-lines rendering of the per-epoch log, one record per line.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.log {
            out.push_str(&serde_json::to_string(record).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }
}

/// One normalized batch plus raw-unit targets.
pub struct Batch<T: Element> {
    pub x: Tensor<T>,
    pub timestamps: Vec<i64>,
    pub target: Tensor<T>,
    pub mask: Tensor<T>,
    pub observed: u64,
}

/// Materializes the given windows: inputs are z-scored (missing inputs fed
/// as 0, the normalized mean); targets stay in original units with their
/// observation mask.
pub fn materialize_batch<T: Element>(
    windows: &WindowSet<'_>,
    picks: &[usize],
    stats: &ZScoreStats,
) -> Batch<T> {
    let ds = windows.dataset();
    let b = picks.len();
    let first = windows.window(picks[0]);
    let t_in = first.input().len() / (ds.nodes * ds.channels);
    let t_out = first.target().len() / (ds.nodes * ds.channels);
    let in_width = t_in * ds.nodes * ds.channels;
    let out_width = t_out * ds.nodes * ds.channels;

    let mut x = Vec::with_capacity(b * in_width);
    let mut y = Vec::with_capacity(b * out_width);
    let mut m = Vec::with_capacity(b * out_width);
    let mut timestamps = Vec::with_capacity(b * t_in);
    let mut observed = 0u64;
    for &i in picks {
        let w = windows.window(i);
        for (&v, &seen) in w.input().iter().zip(w.input_mask()) {
            x.push(if seen != 0 { T::of(stats.apply(v as f64)) } else { T::zero() });
        }
        for (&v, &seen) in w.target().iter().zip(w.target_mask()) {
            y.push(T::of(v as f64));
            m.push(if seen != 0 { T::one() } else { T::zero() });
            observed += (seen != 0) as u64;
        }
        timestamps.extend(w.input_timestamps());
    }
    let x_shape = [b, t_in, ds.nodes, ds.channels];
    let y_shape = [b, t_out, ds.nodes, ds.channels];
    Batch {
        x: Tensor::from_vec(x, &x_shape).expect("batch shape"),
        timestamps,
        target: Tensor::from_vec(y, &y_shape).expect("target shape"),
        mask: Tensor::from_vec(m, &y_shape).expect("mask shape"),
        observed,
    }
}

/// Masked mean absolute error `Σ mask·|pred−target| / Σ mask` as a graph
/// scalar; `pred` must already be in original units.
pub fn mae_loss<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: &Tensor<T>,
    observed: u64,
) -> Result<Tensor<T>, TrainError> {
    if observed == 0 {
        return Err(TrainError::AllMasked);
    }
    let err = pred.sub(target)?.abs().mul(mask)?;
    Ok(err.sum_all().mul_scalar(T::of(1.0 / observed as f64)))
}

/// Rescales normalized model output back to original units inside the graph
/// so the loss (and its gradients) live in data units.
pub fn denormalize<T: Element>(pred_norm: &Tensor<T>, stats: &ZScoreStats) -> Tensor<T> {
    pred_norm.mul_scalar(T::of(stats.std)).add_scalar(T::of(stats.mean))
}

/// Inference over every window of a split, denormalized, aggregated jointly
/// over all horizons and nodes. Aggregation is a fixed-order pointwise sum,
/// so the evaluation batch size never affects the report.
pub fn evaluate<T: Element>(
    model: &Model<T>,
    windows: &WindowSet<'_>,
    stats: &ZScoreStats,
    batch_size: usize,
) -> Result<MetricReport, Error> {
    let ds = windows.dataset();
    model.check_dataset(ds)?;
    let picks: Vec<usize> = (0..windows.len()).collect();
    let mut acc = MetricAccumulator::new();
    no_grad(|| -> Result<(), Error> {
        for chunk in picks.chunks(batch_size.max(1)) {
            let batch = materialize_batch::<T>(windows, chunk, stats);
            let pred = model.forward(&batch.x, &batch.timestamps, ds.interval_seconds)?;
            let pred = denormalize(&pred, stats);
            for ((&p, &t), &m) in pred
                .data()
                .iter()
                .zip(batch.target.data())
                .zip(batch.mask.data())
            {
                acc.push(p.as_f64(), t.as_f64(), m != T::zero());
            }
        }
        Ok(())
    })?;
    Ok(acc.finish()?)
}

/// Report for the constant predictor that always answers the training-split
/// mean; the floor any trained model must beat.
pub fn constant_mean_report(
    windows: &WindowSet<'_>,
    stats: &ZScoreStats,
) -> Result<MetricReport, Error> {
    let mut acc = MetricAccumulator::new();
    for w in windows.iter() {
        for (&t, &m) in w.target().iter().zip(w.target_mask()) {
            acc.push(stats.mean, t as f64, m != 0);
        }
    }
    Ok(acc.finish()?)
}

/// Standard chronological 6:2:2 protocol bundle for one dataset.
pub struct Protocol<'a> {
    pub splits: SplitRanges,
    pub train: WindowSet<'a>,
    pub val: WindowSet<'a>,
    pub test: WindowSet<'a>,
    pub stats: ZScoreStats,
}

pub fn protocol<'a>(ds: &'a Dataset, t_in: usize, t_out: usize) -> Result<Protocol<'a>, Error> {
    let splits = chronological_split(ds, (6, 2, 2), t_in, t_out)?;
    let w = ds.nodes * ds.channels;
    let stats = ZScoreStats::fit(
        &ds.values[splits.train.start * w..splits.train.end * w],
        &ds.mask[splits.train.start * w..splits.train.end * w],
    )?;
    Ok(Protocol {
        train: make_windows(ds, splits.train.clone(), t_in, t_out)?,
        val: make_windows(ds, splits.val.clone(), t_in, t_out)?,
        test: make_windows(ds, splits.test.clone(), t_in, t_out)?,
        stats,
        splits,
    })
}

/// Full optimization run: seeded epoch shuffles, Adam on the MAE loss,
/// per-epoch validation, strict-improvement early stopping. The model is
/// left holding the best-validation parameters.
pub fn train<T: Element>(
    model: &Model<T>,
    ds: &Dataset,
    cfg: &TrainConfig,
    clock: Clock,
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    model.check_dataset(ds)?;
    let proto = protocol(ds, model.cfg.t_in, model.cfg.t_out)?;
    let stats = proto.stats;

    // Dedicated shuffle stream, decoupled from the init stream by a fixed
    // tweak so both can start from the same user seed.
    let mut shuffle_rng = Lcg64::new(cfg.seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let mut state = AdamState::new(&model.registry);
    let mut log: Vec<EpochRecord> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_values: Vec<Vec<T>> = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let perm = shuffle_rng.permutation(proto.train.len());
        let mut abs_weighted = 0.0f64;
        let mut total_observed = 0u64;
        for chunk in perm.chunks(cfg.batch_size) {
            let batch = materialize_batch::<T>(&proto.train, chunk, &stats);
            model.registry.zero_grads();
            let pred = model.forward(&batch.x, &batch.timestamps, ds.interval_seconds)?;
            let pred = denormalize(&pred, &stats);
            let loss = mae_loss(&pred, &batch.target, &batch.mask, batch.observed)?;
            let loss_value = loss.item().as_f64();
            if loss_value.is_nan() {
                return Err(TrainError::Diverged { epoch, log }.into());
            }
            loss.backward().map_err(TrainError::from)?;
            adam_step(&model.registry, &mut state, cfg, epoch)?;
            abs_weighted += loss_value * batch.observed as f64;
            total_observed += batch.observed;
        }
        let train_mae = abs_weighted / total_observed.max(1) as f64;
        let val = evaluate(model, &proto.val, &stats, EVAL_BATCH)?;
        let seconds = match clock {
            Clock::Wall => started.elapsed().as_secs_f64(),
            Clock::Fixed => 0.0,
        };
        log.push(EpochRecord {
            epoch,
            train_mae,
            val_mae: val.mae,
            val_rmse: val.rmse,
            val_mape: val.mape_percent,
            seconds,
        });

        if val.mae < best_val {
            best_val = val.mae;
            best_epoch = epoch;
            best_values = model.registry.iter().map(|p| p.value().to_vec()).collect();
        } else if epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }

    for (param, values) in model.registry.iter().zip(best_values) {
        param.set_value(values);
    }
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_mae: best_val,
        stats,
    })
}
