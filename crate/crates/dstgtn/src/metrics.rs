//! Forecast quality metrics over masked points, in original units.

use serde::Serialize;

use crate::error::TrainError;

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub mape_percent: f64,
    /// Number of observed (unmasked) points behind mae/rmse.
    pub count: u64,
}

/// Streaming accumulator so evaluation can aggregate any number of windows
/// in a fixed order without keeping predictions around.
#[derive(Debug, Default, Clone)]
pub struct MetricAccumulator {
    abs_sum: f64,
    sq_sum: f64,
    count: u64,
    ape_sum: f64,
    ape_count: u64,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, prediction: f64, target: f64, observed: bool) {
        if !observed {
            return;
        }
        let err = prediction - target;
        self.abs_sum += err.abs();
        self.sq_sum += err * err;
        self.count += 1;
        // Percentage error is undefined at zero targets; those points are
        // excluded from MAPE only.
        if target != 0.0 {
            self.ape_sum += (err / target).abs();
            self.ape_count += 1;
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> Result<MetricReport, TrainError> {
        if self.count == 0 {
            return Err(TrainError::NoEvaluablePoints { metric: "mae/rmse" });
        }
        if self.ape_count == 0 {
            return Err(TrainError::NoEvaluablePoints { metric: "mape" });
        }
        Ok(MetricReport {
            mae: self.abs_sum / self.count as f64,
            rmse: (self.sq_sum / self.count as f64).sqrt(),
            mape_percent: 100.0 * self.ape_sum / self.ape_count as f64,
            count: self.count,
        })
    }
}

/// Metrics over flat slices; `mask` is 1 where observed.
pub fn metrics(pred: &[f64], target: &[f64], mask: &[u8]) -> Result<MetricReport, TrainError> {
    assert_eq!(pred.len(), target.len());
    assert_eq!(pred.len(), mask.len());
    let mut acc = MetricAccumulator::new();
    for ((&p, &t), &m) in pred.iter().zip(target).zip(mask) {
        acc.push(p, t, m != 0);
    }
    acc.finish()
}
