//! Dynamic spatio-temporal module: generates a softmax-normalized graph per
//! time slice from the dynamic embedding (multi-head spatial self-attention
//! fused by a learned head mix), learns per-(time, node) filter weights
//! splitting unit mass between an all-pass identity term and a low-pass
//! neighbor-averaging term, and applies the combined graph as a per-slice
//! convolution with residual + LayerNorm.

use std::rc::Rc;

use dstgtn_tensor::{contract_time_graph, Element, Parameter, Tensor};

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::nn::{linear, ParamInit, LAYER_NORM_EPS};

/// Spatial self-attention weights for graph generation; shared across all
/// time slices within a layer.
pub struct GraphGenParams<T: Element> {
    pub w_q: Rc<Parameter<T>>,
    pub w_k: Rc<Parameter<T>>,
    /// h mixing weights of the head-fusion 1×1 convolution.
    pub fuse_w: Rc<Parameter<T>>,
    /// Scalar fusion bias.
    pub fuse_b: Rc<Parameter<T>>,
    pub heads: usize,
}

impl<T: Element> GraphGenParams<T> {
    pub fn build(prefix: &str, cfg: &ModelConfig, init: &mut ParamInit<T>) -> Result<Self, ModelError> {
        Ok(GraphGenParams {
            w_q: init.uniform(format!("{prefix}.w_q"), &[cfg.d2, cfg.d2], cfg.d2)?,
            w_k: init.uniform(format!("{prefix}.w_k"), &[cfg.d2, cfg.d2], cfg.d2)?,
            fuse_w: init.uniform(format!("{prefix}.fuse_w"), &[cfg.heads], cfg.heads)?,
            fuse_b: init.zeros(format!("{prefix}.fuse_b"), &[1])?,
            heads: cfg.heads,
        })
    }
}

/// Unnormalized per-head spatial attention over the node axis:
/// `E_st [T,N,d2] → [h,T,N,N]` with `A[m,t] = Qᵐ_t (Kᵐ_t)ᵀ / √d2`.
pub fn ssa_heads<T: Element>(
    e_st: &Tensor<T>,
    params: &GraphGenParams<T>,
) -> Result<Tensor<T>, ModelError> {
    let &[t, n, d2] = e_st.shape() else {
        return Err(ModelError::Config(format!(
            "graph generator expects [T,N,d2], got {:?}",
            e_st.shape()
        )));
    };
    let h = params.heads;
    if d2 % h != 0 {
        return Err(ModelError::Config(format!("d2 = {d2} not divisible by {h} heads")));
    }
    let dh = d2 / h;
    let scale = T::of(1.0 / (d2 as f64).sqrt());

    let q = e_st
        .matmul(&params.w_q.leaf())?
        .reshape(&[t, n, h, dh])?
        .permute(&[2, 0, 1, 3])?; // [h,T,N,dh]
    let kt = e_st
        .matmul(&params.w_k.leaf())?
        .reshape(&[t, n, h, dh])?
        .permute(&[2, 0, 3, 1])?; // [h,T,dh,N]
    Ok(q.matmul(&kt)?.mul_scalar(scale)) // [h,T,N,N]
}

/// Mixes the h attention stacks with the learned 1×1 convolution and
/// row-softmaxes each time slice into a stochastic adjacency `[T,N,N]`.
pub fn fuse_and_normalize<T: Element>(
    heads: &Tensor<T>,
    fuse_w: &Tensor<T>,
    fuse_b: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    let &[h, t, n, n2] = heads.shape() else {
        return Err(ModelError::Config(format!(
            "head fusion expects [h,T,N,N], got {:?}",
            heads.shape()
        )));
    };
    if n != n2 {
        return Err(ModelError::Config(format!("attention stacks must be square, got {n}×{n2}")));
    }
    // [h,T,N,N] → [T,N,N,h] so the head axis contracts against the kernel.
    let stacked = heads.permute(&[1, 2, 3, 0])?;
    let mixed = stacked
        .matmul(&fuse_w.reshape(&[h, 1])?)?
        .reshape(&[t, n, n])?;
    let biased = mixed.add(&fuse_b.broadcast_to(&[t, n, n])?)?;
    Ok(biased.softmax_last()?)
}

/// Two-layer ReLU head mapping the dynamic embedding to filter weights.
pub struct NodeFrequencyParams<T: Element> {
    pub w1: Rc<Parameter<T>>,
    pub b1: Rc<Parameter<T>>,
    pub w2: Rc<Parameter<T>>,
    pub b2: Rc<Parameter<T>>,
}

impl<T: Element> NodeFrequencyParams<T> {
    pub fn build(prefix: &str, cfg: &ModelConfig, init: &mut ParamInit<T>) -> Result<Self, ModelError> {
        // Hidden width matches d2.
        Ok(NodeFrequencyParams {
            w1: init.uniform(format!("{prefix}.w1"), &[cfg.d2, cfg.d2], cfg.d2)?,
            b1: init.zeros(format!("{prefix}.b1"), &[cfg.d2])?,
            w2: init.uniform(format!("{prefix}.w2"), &[cfg.d2, 1], cfg.d2)?,
            b2: init.zeros(format!("{prefix}.b2"), &[1])?,
        })
    }
}

/// λ = 1 + ReLU(MLP(E_st)) per (time, node), split into the all-pass weight
/// λ_local = (2λ−2)/λ and low-pass weight λ_global = 2/λ; the two always sum
/// to 2, with λ_local ∈ [0,2) and λ_global ∈ (0,2].
pub fn node_frequency_learning<T: Element>(
    e_st: &Tensor<T>,
    params: &NodeFrequencyParams<T>,
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let &[t, n, _] = e_st.shape() else {
        return Err(ModelError::Config(format!(
            "frequency learning expects [T,N,d2], got {:?}",
            e_st.shape()
        )));
    };
    let hidden = linear(e_st, &params.w1.leaf(), Some(&params.b1.leaf()))?.relu();
    let raw = linear(&hidden, &params.w2.leaf(), Some(&params.b2.leaf()))?.reshape(&[t, n])?;
    let lambda = raw.relu().add_scalar(T::one());
    let two = T::of(2.0);
    let lambda_local = lambda.mul_scalar(two).add_scalar(-two).div(&lambda)?;
    let lambda_global = Tensor::full(&[t, n], two).div(&lambda)?;
    Ok((lambda_local, lambda_global))
}

/// Identity graph stack `[T,N,N]` (untracked constant).
pub fn identity_graph<T: Element>(t: usize, n: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); t * n * n];
    for ti in 0..t {
        for i in 0..n {
            data[ti * n * n + i * n + i] = T::one();
        }
    }
    Tensor::from_vec(data, &[t, n, n]).expect("identity graph shape")
}

/// Scales the identity stack by λ_local and the learned graph by λ_global;
/// the weights broadcast across the destination-node axis.
pub fn apply_filter_weights<T: Element>(
    a_st: &Tensor<T>,
    lambda_local: &Tensor<T>,
    lambda_global: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let &[t, n, _] = a_st.shape() else {
        return Err(ModelError::Config(format!(
            "filter weighting expects [T,N,N], got {:?}",
            a_st.shape()
        )));
    };
    let full = [t, n, n];
    let ll = lambda_local.reshape(&[t, n, 1])?.broadcast_to(&full)?;
    let lg = lambda_global.reshape(&[t, n, 1])?.broadcast_to(&full)?;
    let a_local = ll.mul(&identity_graph(t, n))?;
    let a_global = lg.mul(a_st)?;
    Ok((a_local, a_global))
}

/// Spatio-temporal graph convolution: contracts the combined graph with the
/// features slice-by-slice, then mixes feature channels with `W`.
pub fn st_graph_conv<T: Element>(
    z: &Tensor<T>,
    a_local: &Tensor<T>,
    a_global: &Tensor<T>,
    w: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    let combined = a_local.add(a_global)?;
    let mixed = contract_time_graph(&combined, z)?;
    Ok(linear(&mixed, w, None)?)
}

/// Where a layer's adjacency comes from: generated from the dynamic
/// embedding, or a fixed row-stochastic matrix tiled over time.
pub enum GraphSource<T: Element> {
    Learned(GraphGenParams<T>),
    Static(Tensor<T>),
}

/// Filter weighting mode: learned per-(t,n) weights, or unit weights on both
/// filters (the frequency-learning head is absent entirely).
pub enum FilterMode<T: Element> {
    Learned(NodeFrequencyParams<T>),
    Unit,
}

pub struct DstmLayer<T: Element> {
    pub graph: GraphSource<T>,
    pub filter: FilterMode<T>,
    pub w: Rc<Parameter<T>>,
    ln: (Rc<Parameter<T>>, Rc<Parameter<T>>),
    t_in: usize,
    nodes: usize,
}

impl<T: Element> DstmLayer<T> {
    pub fn build(
        prefix: &str,
        cfg: &ModelConfig,
        init: &mut ParamInit<T>,
        static_graph: Option<&Tensor<T>>,
        learned_filter: bool,
    ) -> Result<Self, ModelError> {
        let d = cfg.embed_dim();
        let graph = match static_graph {
            Some(g) => GraphSource::Static(g.clone()),
            None => GraphSource::Learned(GraphGenParams::build(&format!("{prefix}.graph"), cfg, init)?),
        };
        let filter = if learned_filter {
            FilterMode::Learned(NodeFrequencyParams::build(&format!("{prefix}.nfl"), cfg, init)?)
        } else {
            FilterMode::Unit
        };
        Ok(DstmLayer {
            graph,
            filter,
            w: init.uniform(format!("{prefix}.w"), &[d, d], d)?,
            ln: init.layer_norm_pair(&format!("{prefix}.ln"), d)?,
            t_in: cfg.t_in,
            nodes: cfg.nodes,
        })
    }

    /// The layer's adjacency stack `[T,N,N]`; depends only on the dynamic
    /// embedding and layer parameters, never on the traffic window.
    pub fn adjacency(&self, e_st: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        match &self.graph {
            GraphSource::Learned(p) => {
                let heads = ssa_heads(e_st, p)?;
                fuse_and_normalize(&heads, &p.fuse_w.leaf(), &p.fuse_b.leaf())
            }
            GraphSource::Static(m) => Ok(m
                .reshape(&[1, self.nodes, self.nodes])?
                .broadcast_to(&[self.t_in, self.nodes, self.nodes])?),
        }
    }

    pub fn filter_weights(&self, e_st: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
        match &self.filter {
            FilterMode::Learned(p) => node_frequency_learning(e_st, p),
            FilterMode::Unit => {
                let ones = Tensor::full(&[self.t_in, self.nodes], T::one());
                Ok((ones.clone(), ones))
            }
        }
    }

    pub fn forward(&self, z: &Tensor<T>, e_st: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let a_st = self.adjacency(e_st)?;
        let (ll, lg) = self.filter_weights(e_st)?;
        let (a_local, a_global) = apply_filter_weights(&a_st, &ll, &lg)?;
        let convolved = st_graph_conv(z, &a_local, &a_global, &self.w.leaf())?;
        let out = convolved
            .add(z)?
            .layer_norm(&self.ln.0.leaf(), &self.ln.1.leaf(), T::of(LAYER_NORM_EPS))?;
        Ok(out)
    }
}

/// Per-layer graph and filter fields, for diagnostics and dump files.
pub struct GraphSnapshot {
    pub layer: usize,
    pub t_in: usize,
    pub nodes: usize,
    pub a_st: Vec<f64>,
    pub lambda_local: Vec<f64>,
    pub lambda_global: Vec<f64>,
}

/// Stack of DSTM layers sharing one dynamic embedding; each layer owns its
/// graph-generation, filter, and mixing parameters.
pub struct DstmStack<T: Element> {
    pub layers: Vec<DstmLayer<T>>,
    pub dyn_st: Rc<Parameter<T>>,
}

impl<T: Element> DstmStack<T> {
    pub fn forward(&self, mut z: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let e_st = self.dyn_st.leaf();
        for layer in &self.layers {
            z = layer.forward(&z, &e_st)?;
        }
        Ok(z)
    }

    pub fn snapshots(&self) -> Result<Vec<GraphSnapshot>, ModelError> {
        dstgtn_tensor::no_grad(|| {
            let e_st = self.dyn_st.constant();
            self.layers
                .iter()
                .enumerate()
                .map(|(i, layer)| {
                    let a_st = layer.adjacency(&e_st)?;
                    let (ll, lg) = layer.filter_weights(&e_st)?;
                    Ok(GraphSnapshot {
                        layer: i,
                        t_in: layer.t_in,
                        nodes: layer.nodes,
                        a_st: a_st.data().iter().map(|v| v.as_f64()).collect(),
                        lambda_local: ll.data().iter().map(|v| v.as_f64()).collect(),
                        lambda_global: lg.data().iter().map(|v| v.as_f64()).collect(),
                    })
                })
                .collect()
        })
    }
}
