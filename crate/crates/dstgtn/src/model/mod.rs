//! End-to-end forecaster: embedding, a variant-defined pipeline of stages,
//! and the per-node output head that emits all horizons at once.

pub mod variants;

use std::rc::Rc;

use dstgtn_tensor::{Element, ParamRegistry, Parameter, Tensor};

use crate::config::ModelConfig;
use crate::data::Dataset;
use crate::dstm::{DstmStack, GraphSnapshot};
use crate::embedding::EmbeddingLayer;
use crate::error::ModelError;
use crate::nn::{linear, ParamInit};
use crate::rng::Lcg64;
use crate::temporal::TemporalStack;

use variants::{ModelBuilder, VariantRegistry};

/// One interchangeable pipeline step operating on `[B,T,N,D]` activations.
pub trait Stage<T: Element> {
    fn name(&self) -> &'static str;
    fn forward(&self, z: Tensor<T>) -> Result<Tensor<T>, ModelError>;
    /// Per-layer graph diagnostics; only graph-bearing stages answer.
    fn snapshots(&self) -> Option<Result<Vec<GraphSnapshot>, ModelError>> {
        None
    }
}

impl<T: Element> Stage<T> for TemporalStack<T> {
    fn name(&self) -> &'static str {
        "temporal"
    }
    fn forward(&self, z: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        TemporalStack::forward(self, z)
    }
}

impl<T: Element> Stage<T> for DstmStack<T> {
    fn name(&self) -> &'static str {
        "dstm"
    }
    fn forward(&self, z: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        DstmStack::forward(self, z)
    }
    fn snapshots(&self) -> Option<Result<Vec<GraphSnapshot>, ModelError>> {
        Some(DstmStack::snapshots(self))
    }
}

/// Per-node head: flattens the T×D activations of a node, applies a
/// two-layer MLP (T·D → T·D/2, ReLU, → T·C) shared across nodes, and
/// reshapes to all T horizons at once.
pub struct OutputLayer<T: Element> {
    w1: Rc<Parameter<T>>,
    b1: Rc<Parameter<T>>,
    w2: Rc<Parameter<T>>,
    b2: Rc<Parameter<T>>,
    t_in: usize,
    t_out: usize,
    nodes: usize,
    channels: usize,
    embed: usize,
}

impl<T: Element> OutputLayer<T> {
    fn build(cfg: &ModelConfig, init: &mut ParamInit<T>) -> Result<Self, ModelError> {
        let flat = cfg.t_in * cfg.embed_dim();
        let hidden = cfg.output_hidden();
        let out = cfg.t_out * cfg.channels;
        Ok(OutputLayer {
            w1: init.uniform("output.w1", &[flat, hidden], flat)?,
            b1: init.zeros("output.b1", &[hidden])?,
            w2: init.uniform("output.w2", &[hidden, out], hidden)?,
            b2: init.zeros("output.b2", &[out])?,
            t_in: cfg.t_in,
            t_out: cfg.t_out,
            nodes: cfg.nodes,
            channels: cfg.channels,
            embed: cfg.embed_dim(),
        })
    }

    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let batch = z.shape()[0];
        let per_node = z
            .permute(&[0, 2, 1, 3])? // [B,N,T,D]
            .reshape(&[batch, self.nodes, self.t_in * self.embed])?;
        let hidden = linear(&per_node, &self.w1.leaf(), Some(&self.b1.leaf()))?.relu();
        let flat = linear(&hidden, &self.w2.leaf(), Some(&self.b2.leaf()))?;
        Ok(flat
            .reshape(&[batch, self.nodes, self.t_out, self.channels])?
            .permute(&[0, 2, 1, 3])?)
    }
}

pub struct Model<T: Element> {
    pub cfg: ModelConfig,
    pub registry: ParamRegistry<T>,
    pub embedding: EmbeddingLayer<T>,
    pub stages: Vec<Box<dyn Stage<T>>>,
    pub output: OutputLayer<T>,
}

impl<T: Element> Model<T> {
    /// Builds the variant named in the config, drawing all initial values
    /// from one seeded stream in registration order.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut registry = ParamRegistry::new();
        let mut rng = Lcg64::new(seed);
        let mut init = ParamInit {
            registry: &mut registry,
            rng: &mut rng,
        };
        let embedding = EmbeddingLayer::build(cfg, &mut init)?;
        let mut builder = ModelBuilder {
            cfg,
            init,
            dyn_st: embedding.dyn_st.clone(),
        };
        let recipes = VariantRegistry::<T>::builtin();
        let stages = recipes.get(&cfg.variant)?.build_stages(&mut builder)?;
        let output = OutputLayer::build(cfg, &mut builder.init)?;
        drop(builder);
        Ok(Model {
            cfg: cfg.clone(),
            registry,
            embedding,
            stages,
            output,
        })
    }

    /// Checks a dataset is shaped and sampled the way this model expects.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<(), ModelError> {
        if ds.nodes != self.cfg.nodes || ds.channels != self.cfg.channels {
            return Err(ModelError::Config(format!(
                "model is built for {}×{} (nodes×channels), dataset has {}×{}",
                self.cfg.nodes, self.cfg.channels, ds.nodes, ds.channels
            )));
        }
        let implied = 86400 / ds.interval_seconds as usize;
        if implied != self.cfg.samples_per_day {
            return Err(ModelError::Config(format!(
                "model expects {} samples per day, dataset interval {}s implies {}",
                self.cfg.samples_per_day, ds.interval_seconds, implied
            )));
        }
        Ok(())
    }

    /// Full pass on a normalized batch `[B,T,N,C]` with flat per-sample
    /// timestamps `[B·T]`; the pipeline runs embedding, every stage in
    /// variant order, then the output head.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        timestamps: &[i64],
        interval_seconds: u32,
    ) -> Result<Tensor<T>, ModelError> {
        let mut z = self.embedding.forward(x, timestamps, interval_seconds)?;
        for stage in &self.stages {
            z = stage.forward(z)?;
        }
        self.output.forward(&z)
    }

    /// Like [`Model::forward`] but records each stage's name and output, in
    /// invocation order.
    pub fn forward_traced(
        &self,
        x: &Tensor<T>,
        timestamps: &[i64],
        interval_seconds: u32,
    ) -> Result<(Tensor<T>, Vec<(&'static str, Tensor<T>)>), ModelError> {
        let mut trace = Vec::with_capacity(self.stages.len());
        let mut z = self.embedding.forward(x, timestamps, interval_seconds)?;
        for stage in &self.stages {
            z = stage.forward(z)?;
            trace.push((stage.name(), z.clone()));
        }
        let y = self.output.forward(&z)?;
        Ok((y, trace))
    }

    pub fn stage_names(&self) -> Vec<&'static str> {
        self.stages.iter().map(|s| s.name()).collect()
    }

    /// Graph/filter snapshots of every graph-bearing stage, in stage order.
    pub fn graph_snapshots(&self) -> Result<Vec<GraphSnapshot>, ModelError> {
        let mut all = Vec::new();
        for stage in &self.stages {
            if let Some(snaps) = stage.snapshots() {
                all.extend(snaps?);
            }
        }
        Ok(all)
    }

    pub fn param_value_count(&self) -> usize {
        self.registry.value_count()
    }
}

/// Closed-form parameter count per variant; kept in sync with the builders
/// and asserted against the registry in tests.
pub fn expected_param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.embed_dim();
    let d2 = cfg.d2;
    let embedding = cfg.channels * cfg.d + cfg.d            // input projection
        + cfg.samples_per_day * cfg.d1 + 7 * cfg.d1         // identity tables
        + cfg.t_in * cfg.nodes * d2;                        // dynamic embedding
    let temporal_block = 4 * d * d                          // q,k,v,o
        + d * 4 * d + 4 * d + 4 * d * d + d                 // ffn
        + 4 * d;                                            // two norm pairs
    let graph_gen = 2 * d2 * d2 + cfg.heads + 1;
    let frequency = d2 * d2 + 2 * d2 + 1;
    let dstm_layer_base = d * d + 2 * d;
    let flat = cfg.t_in * d;
    let hidden = cfg.output_hidden();
    let output = flat * hidden + hidden + hidden * cfg.t_out * cfg.channels + cfg.t_out * cfg.channels;

    let (temporal_layers, dstm_layers, with_graph_gen, with_frequency) = match cfg.variant.as_str() {
        "full" | "reverse" => (cfg.temporal_layers, cfg.dstm_layers, true, true),
        "no_tt" => (0, cfg.dstm_layers, true, true),
        "no_tt_st" => (0, 0, false, false),
        "static_graph" => (cfg.temporal_layers, cfg.dstm_layers, false, true),
        "no_nfl" => (cfg.temporal_layers, cfg.dstm_layers, true, false),
        _ => (cfg.temporal_layers, cfg.dstm_layers, true, true),
    };
    let dstm_layer = dstm_layer_base
        + if with_graph_gen { graph_gen } else { 0 }
        + if with_frequency { frequency } else { 0 };
    embedding + temporal_layers * temporal_block + dstm_layers * dstm_layer + output
}
