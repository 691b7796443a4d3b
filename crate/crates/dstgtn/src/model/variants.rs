//! Model variants as interchangeable construction strategies.
//!
//! Every variant sits behind [`VariantRecipe`] and is looked up by name at
//! build time, so configs and the CLI select architectures at runtime. A
//! recipe only decides which stages exist, in which order, and how each DSTM
//! stack sources its graph and filter weights; the embedding and output head
//! are common to all variants.

use std::rc::Rc;

use dstgtn_tensor::{Element, Parameter, Tensor};

use crate::config::ModelConfig;
use crate::dstm::{DstmLayer, DstmStack};
use crate::error::ModelError;
use crate::model::Stage;
use crate::nn::ParamInit;
use crate::temporal::TemporalStack;

pub struct ModelBuilder<'a, T: Element> {
    pub cfg: &'a ModelConfig,
    pub init: ParamInit<'a, T>,
    pub dyn_st: Rc<Parameter<T>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Learned,
    Static,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Learned,
    Unit,
}

impl<'a, T: Element> ModelBuilder<'a, T> {
    pub fn temporal_stack(&mut self) -> Result<Box<dyn Stage<T>>, ModelError> {
        let stack = TemporalStack::build(self.cfg, self.cfg.temporal_layers, &mut self.init)?;
        Ok(Box::new(stack))
    }

    pub fn dstm_stack(&mut self, graph: GraphKind, filter: FilterKind) -> Result<Box<dyn Stage<T>>, ModelError> {
        let static_graph = match graph {
            GraphKind::Learned => None,
            GraphKind::Static => Some(self.static_graph_tensor()?),
        };
        let layers = (0..self.cfg.dstm_layers)
            .map(|i| {
                DstmLayer::build(
                    &format!("dstm.{i}"),
                    self.cfg,
                    &mut self.init,
                    static_graph.as_ref(),
                    filter == FilterKind::Learned,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Box::new(DstmStack {
            layers,
            dyn_st: self.dyn_st.clone(),
        }))
    }

    /// Row-renormalized static adjacency as an untracked `[N,N]` constant.
    fn static_graph_tensor(&self) -> Result<Tensor<T>, ModelError> {
        let adj = self
            .cfg
            .static_adjacency
            .as_ref()
            .ok_or(ModelError::MissingStaticAdjacency)?;
        let n = self.cfg.nodes;
        let mut data = Vec::with_capacity(n * n);
        for row in adj {
            let sum: f64 = row.iter().sum();
            for &v in row {
                data.push(T::of(v / sum));
            }
        }
        Ok(Tensor::from_vec(data, &[n, n])?)
    }
}

pub trait VariantRecipe<T: Element> {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn build_stages(&self, b: &mut ModelBuilder<'_, T>) -> Result<Vec<Box<dyn Stage<T>>>, ModelError>;
}

struct Full;
struct WithoutTemporal;
struct EmbeddingOnly;
struct Reversed;
struct StaticGraph;
struct WithoutFrequencyLearning;

impl<T: Element> VariantRecipe<T> for Full {
    fn name(&self) -> &'static str {
        "full"
    }
    fn description(&self) -> &'static str {
        "temporal stack followed by the dynamic graph stack"
    }
    fn build_stages(&self, b: &mut ModelBuilder<'_, T>) -> Result<Vec<Box<dyn Stage<T>>>, ModelError> {
        Ok(vec![
            b.temporal_stack()?,
            b.dstm_stack(GraphKind::Learned, FilterKind::Learned)?,
        ])
    }
}

impl<T: Element> VariantRecipe<T> for WithoutTemporal {
    fn name(&self) -> &'static str {
        "no_tt"
    }
    fn description(&self) -> &'static str {
        "drops the temporal transformer stack"
    }
    fn build_stages(&self, b: &mut ModelBuilder<'_, T>) -> Result<Vec<Box<dyn Stage<T>>>, ModelError> {
        Ok(vec![b.dstm_stack(GraphKind::Learned, FilterKind::Learned)?])
    }
}

impl<T: Element> VariantRecipe<T> for EmbeddingOnly {
    fn name(&self) -> &'static str {
        "no_tt_st"
    }
    fn description(&self) -> &'static str {
        "drops both stacks; embedding feeds the output head directly"
    }
    fn build_stages(&self, _b: &mut ModelBuilder<'_, T>) -> Result<Vec<Box<dyn Stage<T>>>, ModelError> {
        Ok(Vec::new())
    }
}

impl<T: Element> VariantRecipe<T> for Reversed {
    fn name(&self) -> &'static str {
        "reverse"
    }
    fn description(&self) -> &'static str {
        "dynamic graph stack before the temporal stack"
    }
    fn build_stages(&self, b: &mut ModelBuilder<'_, T>) -> Result<Vec<Box<dyn Stage<T>>>, ModelError> {
        Ok(vec![
            b.dstm_stack(GraphKind::Learned, FilterKind::Learned)?,
            b.temporal_stack()?,
        ])
    }
}

impl<T: Element> VariantRecipe<T> for StaticGraph {
    fn name(&self) -> &'static str {
        "static_graph"
    }
    fn description(&self) -> &'static str {
        "replaces the generated graph with a fixed distance-based adjacency"
    }
    fn build_stages(&self, b: &mut ModelBuilder<'_, T>) -> Result<Vec<Box<dyn Stage<T>>>, ModelError> {
        Ok(vec![
            b.temporal_stack()?,
            b.dstm_stack(GraphKind::Static, FilterKind::Learned)?,
        ])
    }
}

impl<T: Element> VariantRecipe<T> for WithoutFrequencyLearning {
    fn name(&self) -> &'static str {
        "no_nfl"
    }
    fn description(&self) -> &'static str {
        "fixes both filter weights at 1 instead of learning them"
    }
    fn build_stages(&self, b: &mut ModelBuilder<'_, T>) -> Result<Vec<Box<dyn Stage<T>>>, ModelError> {
        Ok(vec![
            b.temporal_stack()?,
            b.dstm_stack(GraphKind::Learned, FilterKind::Unit)?,
        ])
    }
}

pub struct VariantRegistry<T: Element> {
    recipes: Vec<Box<dyn VariantRecipe<T>>>,
}

impl<T: Element> VariantRegistry<T> {
    pub fn builtin() -> Self {
        VariantRegistry {
            recipes: vec![
                Box::new(Full),
                Box::new(WithoutTemporal),
                Box::new(EmbeddingOnly),
                Box::new(Reversed),
                Box::new(StaticGraph),
                Box::new(WithoutFrequencyLearning),
            ],
        }
    }

    pub fn get(&self, name: &str) -> Result<&dyn VariantRecipe<T>, ModelError> {
        self.recipes
            .iter()
            .find(|r| r.name() == name)
            .map(|r| r.as_ref())
            .ok_or_else(|| ModelError::UnknownVariant {
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.recipes.iter().map(|r| r.name()).collect()
    }
}

/// Gaussian-kernel adjacency from sensor coordinates: weights
/// `exp(−dist²/(2σ²))` with σ the standard deviation of pairwise distances,
/// zero diagonal, rows softmax-normalized over their nonzero entries. With
/// no coordinates available, callers fall back to
/// [`uniform_off_diagonal_adjacency`].
pub fn static_adjacency_from_coords(coords: &[[f64; 2]]) -> Vec<Vec<f64>> {
    let n = coords.len();
    if n == 1 {
        return vec![vec![1.0]];
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            dists.push((dx * dx + dy * dy).sqrt());
        }
    }
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    let var = dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / dists.len() as f64;
    let sigma2 = var.max(1e-12);

    let mut adj = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                adj[i][j] = (-(dx * dx + dy * dy) / (2.0 * sigma2)).exp();
            }
        }
    }
    softmax_rows_over_nonzero(&mut adj);
    adj
}

/// Binary fallback adjacency: every off-diagonal edge present, rows
/// normalized to probability mass 1/(N−1) each.
pub fn uniform_off_diagonal_adjacency(n: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![1.0]];
    }
    let mut adj = vec![vec![1.0f64; n]; n];
    for (i, row) in adj.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    softmax_rows_over_nonzero(&mut adj);
    adj
}

fn softmax_rows_over_nonzero(adj: &mut [Vec<f64>]) {
    for row in adj.iter_mut() {
        let active: Vec<usize> = (0..row.len()).filter(|&j| row[j] != 0.0).collect();
        if active.is_empty() {
            let w = 1.0 / row.len() as f64;
            row.iter_mut().for_each(|v| *v = w);
            continue;
        }
        let hi = active.iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for &j in &active {
            row[j] = (row[j] - hi).exp();
            total += row[j];
        }
        for &j in &active {
            row[j] /= total;
        }
    }
}
