//! Runs every registered variant through the same train/evaluate protocol
//! for side-by-side comparison.

use dstgtn_tensor::Element;
use serde::Serialize;

use crate::config::{ModelConfig, TrainConfig};
use crate::data::Dataset;
use crate::error::Error;
use crate::metrics::MetricReport;
use crate::model::variants::{static_adjacency_from_coords, uniform_off_diagonal_adjacency};
use crate::model::{expected_param_count, Model};
use crate::train::{evaluate, protocol, train, Clock, EVAL_BATCH};

pub const ABLATION_VARIANTS: [&str; 6] =
    ["full", "no_tt", "no_tt_st", "reverse", "static_graph", "no_nfl"];

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub best_epoch: usize,
    pub test_mae: f64,
    pub test_rmse: f64,
    pub test_mape: f64,
}

/// Trains and evaluates all six configurations with identical seeds and
/// budget. The static-graph variant derives its adjacency from sensor
/// coordinates when present, else falls back to a uniform binary graph.
pub fn run_ablation<T: Element>(
    ds: &Dataset,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    clock: Clock,
) -> Result<Vec<AblationRow>, Error> {
    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for variant in ABLATION_VARIANTS {
        let mut cfg = base.clone().with_nodes(ds.nodes)?;
        cfg.variant = variant.to_string();
        cfg.static_adjacency = if variant == "static_graph" {
            Some(match &ds.coordinates {
                Some(coords) => static_adjacency_from_coords(coords),
                None => uniform_off_diagonal_adjacency(ds.nodes),
            })
        } else {
            None
        };
        let model = Model::<T>::build(&cfg, train_cfg.seed)?;
        let outcome = train(&model, ds, train_cfg, clock)?;
        let proto = protocol(ds, cfg.t_in, cfg.t_out)?;
        let report: MetricReport = evaluate(&model, &proto.test, &outcome.stats, EVAL_BATCH)?;
        rows.push(AblationRow {
            variant: variant.to_string(),
            params: expected_param_count(&cfg),
            best_epoch: outcome.best_epoch,
            test_mae: report.mae,
            test_rmse: report.rmse,
            test_mape: report.mape_percent,
        });
    }
    Ok(rows)
}

/// Fixed-width text table of the comparison.
pub fn render_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>9} {:>11} {:>10} {:>10} {:>9}\n",
        "variant", "params", "best_epoch", "test_mae", "test_rmse", "mape%"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<14} {:>9} {:>11} {:>10.4} {:>10.4} {:>9.3}\n",
            r.variant, r.params, r.best_epoch, r.test_mae, r.test_rmse, r.test_mape
        ));
    }
    out
}
