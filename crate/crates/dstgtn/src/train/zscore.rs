//! Z-score normalization fitted on training-split values only.

use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: f64,
    pub std: f64,
}

impl ZScoreStats {
    /// Population statistics over observed values; errors on constant data.
    pub fn fit(values: &[f32], mask: &[u8]) -> Result<Self, DataError> {
        assert_eq!(values.len(), mask.len());
        let mut sum = 0.0f64;
        let mut count = 0u64;
        for (&v, &m) in values.iter().zip(mask) {
            if m != 0 {
                sum += v as f64;
                count += 1;
            }
        }
        if count == 0 {
            return Err(DataError::AllMissing);
        }
        let mean = sum / count as f64;
        let mut var = 0.0f64;
        for (&v, &m) in values.iter().zip(mask) {
            if m != 0 {
                let d = v as f64 - mean;
                var += d * d;
            }
        }
        let std = (var / count as f64).sqrt();
        if std == 0.0 {
            return Err(DataError::ConstantData);
        }
        Ok(ZScoreStats { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}
