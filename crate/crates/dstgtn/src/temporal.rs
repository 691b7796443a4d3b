//! Temporal transformer: multi-head self-attention along the time axis,
//! applied to every node independently, followed by a position-wise FFN.
//! Both components use post-norm residuals.

use std::rc::Rc;

use dstgtn_tensor::{Element, Parameter, Tensor};

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::nn::{linear, ParamInit, LAYER_NORM_EPS};

pub struct TemporalBlock<T: Element> {
    w_q: Rc<Parameter<T>>,
    w_k: Rc<Parameter<T>>,
    w_v: Rc<Parameter<T>>,
    w_o: Rc<Parameter<T>>,
    ffn_w1: Rc<Parameter<T>>,
    ffn_b1: Rc<Parameter<T>>,
    ffn_w2: Rc<Parameter<T>>,
    ffn_b2: Rc<Parameter<T>>,
    ln1: (Rc<Parameter<T>>, Rc<Parameter<T>>),
    ln2: (Rc<Parameter<T>>, Rc<Parameter<T>>),
    heads: usize,
}

impl<T: Element> TemporalBlock<T> {
    pub fn build(prefix: &str, cfg: &ModelConfig, init: &mut ParamInit<T>) -> Result<Self, ModelError> {
        let d = cfg.embed_dim();
        let d_ff = 4 * d;
        Ok(TemporalBlock {
            w_q: init.uniform(format!("{prefix}.attn.w_q"), &[d, d], d)?,
            w_k: init.uniform(format!("{prefix}.attn.w_k"), &[d, d], d)?,
            w_v: init.uniform(format!("{prefix}.attn.w_v"), &[d, d], d)?,
            w_o: init.uniform(format!("{prefix}.attn.w_o"), &[d, d], d)?,
            ffn_w1: init.uniform(format!("{prefix}.ffn.w1"), &[d, d_ff], d)?,
            ffn_b1: init.zeros(format!("{prefix}.ffn.b1"), &[d_ff])?,
            ffn_w2: init.uniform(format!("{prefix}.ffn.w2"), &[d_ff, d], d_ff)?,
            ffn_b2: init.zeros(format!("{prefix}.ffn.b2"), &[d])?,
            ln1: init.layer_norm_pair(&format!("{prefix}.ln1"), d)?,
            ln2: init.layer_norm_pair(&format!("{prefix}.ln2"), d)?,
            heads: cfg.heads,
        })
    }

    /// Multi-head temporal self-attention on `[B,T,N,D]`. Each node attends
    /// over its own T positions only; heads are width-D/h slices scaled by
    /// 1/√(D/h); head outputs are concatenated and mixed by `w_o`.
    pub fn mtsa(&self, z: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let &[b, t, n, d] = z.shape() else {
            return Err(ModelError::Config(format!(
                "attention expects [B,T,N,D], got {:?}",
                z.shape()
            )));
        };
        let h = self.heads;
        if d % h != 0 {
            return Err(ModelError::Config(format!("width {d} not divisible by {h} heads")));
        }
        let dh = d / h;
        let scale = T::of(1.0 / (dh as f64).sqrt());

        // Per-node time-major layout.
        let zn = z.permute(&[0, 2, 1, 3])?; // [B,N,T,D]
        let split = |w: &Rc<Parameter<T>>| -> Result<Tensor<T>, ModelError> {
            Ok(linear(&zn, &w.leaf(), None)?
                .reshape(&[b, n, t, h, dh])?
                .permute(&[0, 1, 3, 2, 4])?) // [B,N,h,T,dh]
        };
        let q = split(&self.w_q)?;
        let k = split(&self.w_k)?;
        let v = split(&self.w_v)?;

        let kt = k.permute(&[0, 1, 2, 4, 3])?; // [B,N,h,dh,T]
        let attn = q.matmul(&kt)?.mul_scalar(scale).softmax_last()?; // [B,N,h,T,T]
        let mixed = attn
            .matmul(&v)? // [B,N,h,T,dh]
            .permute(&[0, 1, 3, 2, 4])?
            .reshape(&[b, n, t, d])?;
        let out = linear(&mixed, &self.w_o.leaf(), None)?;
        Ok(out.permute(&[0, 2, 1, 3])?) // back to [B,T,N,D]
    }

    /// One block: attention and FFN sublayers, each residual + LayerNorm.
    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let eps = T::of(LAYER_NORM_EPS);
        let attended = self.mtsa(z)?;
        let mid = attended
            .add(z)?
            .layer_norm(&self.ln1.0.leaf(), &self.ln1.1.leaf(), eps)?;
        let ff = linear(&mid, &self.ffn_w1.leaf(), Some(&self.ffn_b1.leaf()))?.relu();
        let ff = linear(&ff, &self.ffn_w2.leaf(), Some(&self.ffn_b2.leaf()))?;
        let out = ff
            .add(&mid)?
            .layer_norm(&self.ln2.0.leaf(), &self.ln2.1.leaf(), eps)?;
        Ok(out)
    }
}

/// Sequential stack of temporal blocks; zero blocks is the identity.
pub struct TemporalStack<T: Element> {
    pub blocks: Vec<TemporalBlock<T>>,
}

impl<T: Element> TemporalStack<T> {
    pub fn build(cfg: &ModelConfig, layers: usize, init: &mut ParamInit<T>) -> Result<Self, ModelError> {
        let blocks = (0..layers)
            .map(|i| TemporalBlock::build(&format!("temporal.{i}"), cfg, init))
            .collect::<Result<_, _>>()?;
        Ok(TemporalStack { blocks })
    }

    pub fn forward(&self, mut z: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        for block in &self.blocks {
            z = block.forward(&z)?;
        }
        Ok(z)
    }
}
