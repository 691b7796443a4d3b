//! Architecture and optimization configuration.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Architecture dimensions. `nodes` of 0 means "resolve from the dataset".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub nodes: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub channels: usize,
    /// Width of the projected traffic embedding H.
    pub d: usize,
    /// Width of each temporal identity embedding (daily and weekly).
    pub d1: usize,
    /// Width of the dynamic spatio-temporal embedding.
    pub d2: usize,
    pub heads: usize,
    pub temporal_layers: usize,
    pub dstm_layers: usize,
    /// Rows of the within-day identity table; must equal 86400 / interval.
    pub samples_per_day: usize,
    pub variant: String,
    /// Row-stochastic N×N matrix; required iff `variant == "static_graph"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub static_adjacency: Option<Vec<Vec<f64>>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nodes: 0,
            t_in: 12,
            t_out: 12,
            channels: 1,
            d: 24,
            d1: 24,
            d2: 80,
            heads: 4,
            temporal_layers: 3,
            dstm_layers: 3,
            samples_per_day: 288,
            variant: "full".into(),
            static_adjacency: None,
        }
    }
}

impl ModelConfig {
    /// Concatenated embedding width D = d + 2·d1 + d2.
    pub fn embed_dim(&self) -> usize {
        self.d + 2 * self.d1 + self.d2
    }

    /// Hidden width of the per-node output head (max(T·D/2, 1)).
    pub fn output_hidden(&self) -> usize {
        (self.t_in * self.embed_dim() / 2).max(1)
    }

    /// Fills `nodes` from the dataset, or cross-checks it when already set.
    pub fn with_nodes(mut self, nodes: usize) -> Result<Self, ModelError> {
        if self.nodes == 0 {
            self.nodes = nodes;
        } else if self.nodes != nodes {
            return Err(ModelError::Config(format!(
                "config expects {} nodes but the dataset has {}",
                self.nodes, nodes
            )));
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.nodes == 0 {
            return bad("node count unresolved; attach a dataset first".into());
        }
        for (name, v) in [
            ("t_in", self.t_in),
            ("t_out", self.t_out),
            ("channels", self.channels),
            ("d", self.d),
            ("d1", self.d1),
            ("d2", self.d2),
            ("heads", self.heads),
            ("samples_per_day", self.samples_per_day),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.t_in != self.t_out {
            return bad(format!(
                "equal-length forecasting requires t_in == t_out, got {} and {}",
                self.t_in, self.t_out
            ));
        }
        if self.embed_dim() % self.heads != 0 {
            return bad(format!(
                "embedding width {} is not divisible by {} heads",
                self.embed_dim(),
                self.heads
            ));
        }
        if self.d2 % self.heads != 0 {
            return bad(format!(
                "d2 = {} is not divisible by {} heads",
                self.d2, self.heads
            ));
        }
        if self.variant == "static_graph" {
            let adj = self
                .static_adjacency
                .as_ref()
                .ok_or(ModelError::MissingStaticAdjacency)?;
            if adj.len() != self.nodes || adj.iter().any(|row| row.len() != self.nodes) {
                return bad(format!(
                    "static adjacency must be {n}×{n}",
                    n = self.nodes
                ));
            }
            for (i, row) in adj.iter().enumerate() {
                if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return bad(format!("static adjacency row {i} has negative or non-finite entries"));
                }
                if row.iter().sum::<f64>() <= 0.0 {
                    return bad(format!("static adjacency row {i} sums to zero"));
                }
            }
        } else if self.static_adjacency.is_some() {
            return bad(format!(
                "static_adjacency is only meaningful for the static_graph variant, not '{}'",
                self.variant
            ));
        }
        Ok(())
    }
}

/// Appendix-style optimization protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 16,
            max_epochs: 200,
            early_stop_patience: 20,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if !(self.lr > 0.0) {
            return bad("lr must be positive".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return bad("batch_size, max_epochs and early_stop_patience must be positive".into());
        }
        if self.early_stop_patience > self.max_epochs {
            return bad(format!(
                "patience {} exceeds max_epochs {}",
                self.early_stop_patience, self.max_epochs
            ));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1/beta2 must lie in (0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        Ok(())
    }
}

/// On-disk JSON config: `{ "model": {...}, "train": {...} }`, both optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Config(format!("bad config JSON: {e}")))
    }
}
