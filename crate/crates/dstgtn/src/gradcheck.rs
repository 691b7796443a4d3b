//! The finite-difference verification suite behind `dstgtn gradcheck`:
//! every differentiable building block plus the assembled forecaster on a
//! micro architecture, at f64 with central differences.

use dstgtn_tensor::{contract_time_graph, finite_diff_check, CheckOutcome, Parameter, Tensor, TensorError};

use crate::config::ModelConfig;
use crate::data::{generate_synthetic, SyntheticConfig};
use crate::error::{Error, ModelError};
use crate::model::Model;
use crate::rng::Lcg64;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Micro architecture small enough that per-coordinate differencing of every
/// parameter completes in seconds.
pub fn micro_model_config() -> ModelConfig {
    ModelConfig {
        nodes: 3,
        t_in: 4,
        t_out: 4,
        d: 2,
        d1: 2,
        d2: 4,
        heads: 2,
        temporal_layers: 1,
        dstm_layers: 1,
        samples_per_day: 12,
        ..ModelConfig::default()
    }
}

fn rand_vec(rng: &mut Lcg64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
}

fn run_check<F>(
    results: &mut Vec<CheckOutcome>,
    name: &str,
    tolerance: f64,
    step: f64,
    param: &std::rc::Rc<Parameter<f64>>,
    f: F,
) -> Result<(), Error>
where
    F: Fn() -> Result<Tensor<f64>, TensorError>,
{
    let max_rel_error = finite_diff_check(&f, param, step).map_err(ModelError::from)?;
    results.push(CheckOutcome {
        name: name.to_string(),
        max_rel_error,
        tolerance,
    });
    Ok(())
}

/// Runs the whole suite; one outcome per named check.
pub fn run_suite(step: f64, tolerance: f64) -> Result<Vec<CheckOutcome>, Error> {
    let mut results = Vec::new();
    let mut rng = Lcg64::new(0xC0FFEE);

    // Primitive operations under a weighted-abs loss.
    {
        let a = Parameter::new("a", &[3, 4], rand_vec(&mut rng, 12))?;
        let b = Parameter::new("b", &[4, 2], rand_vec(&mut rng, 8))?;
        let f = || Ok(a.leaf().matmul(&b.leaf())?.abs().sum_all());
        run_check(&mut results, "matmul/lhs", tolerance, step, &a, f)?;
        run_check(&mut results, "matmul/rhs", tolerance, step, &b, f)?;
    }
    {
        let x = Parameter::new("x", &[3, 5], rand_vec(&mut rng, 15))?;
        let w = Tensor::from_vec(rand_vec(&mut rng, 15), &[3, 5])?;
        run_check(&mut results, "softmax_last", tolerance, step, &x, || {
            Ok(x.leaf().softmax_last()?.mul(&w)?.sum_all())
        })?;
    }
    {
        let x = Parameter::new("x", &[4, 6], rand_vec(&mut rng, 24))?;
        let gain = Parameter::new("gain", &[6], rand_vec(&mut rng, 6))?;
        let bias = Parameter::new("bias", &[6], rand_vec(&mut rng, 6))?;
        let w = Tensor::from_vec(rand_vec(&mut rng, 24), &[4, 6])?;
        let f = || {
            Ok(x.leaf()
                .layer_norm(&gain.leaf(), &bias.leaf(), 1e-5)?
                .mul(&w)?
                .sum_all())
        };
        run_check(&mut results, "layer_norm/x", tolerance, step, &x, f)?;
        run_check(&mut results, "layer_norm/gain", tolerance, step, &gain, f)?;
        run_check(&mut results, "layer_norm/bias", tolerance, step, &bias, f)?;
    }
    {
        let vals: Vec<f64> = rand_vec(&mut rng, 12)
            .into_iter()
            .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
            .collect();
        let x = Parameter::new("x", &[3, 4], vals)?;
        let w = Tensor::from_vec(rand_vec(&mut rng, 12), &[3, 4])?;
        run_check(&mut results, "relu", tolerance, step, &x, || {
            Ok(x.leaf().relu().mul(&w)?.sum_all())
        })?;
    }
    {
        let g = Parameter::new("g", &[2, 3, 3], rand_vec(&mut rng, 18))?;
        let z = Parameter::new("z", &[2, 2, 3, 2], rand_vec(&mut rng, 24))?;
        let w = Tensor::from_vec(rand_vec(&mut rng, 24), &[2, 2, 3, 2])?;
        let f = || Ok(contract_time_graph(&g.leaf(), &z.leaf())?.mul(&w)?.sum_all());
        run_check(&mut results, "contract_time_graph/graph", tolerance, step, &g, f)?;
        run_check(&mut results, "contract_time_graph/features", tolerance, step, &z, f)?;
    }

    // Assembled model: MAE loss through embedding, both stacks, output head.
    {
        let cfg = micro_model_config();
        // Seeds chosen so nothing sits within a finite-difference step of a
        // ReLU/|·| kink and no MAE sign sum cancels exactly.
        let model = Model::<f64>::build(&cfg, 4)?;
        let synth = SyntheticConfig {
            nodes: 3,
            t_total: 40,
            seed: 5,
            interval_seconds: 7200,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(&synth)?.dataset;
        let mut ts = Vec::new();
        for &offset in &[0usize, 9] {
            for k in 0..cfg.t_in {
                ts.push(ds.timestamp(offset + k));
            }
        }
        let mut data_rng = Lcg64::new(57);
        let x = Tensor::from_vec(rand_vec(&mut data_rng, 24), &[2, 4, 3, 1])?;
        let target = Tensor::from_vec(rand_vec(&mut data_rng, 24), &[2, 4, 3, 1])?;
        let loss = || {
            let pred = model.forward(&x, &ts, ds.interval_seconds).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => TensorError::InvalidShape {
                    op: "model",
                    shape: vec![],
                    reason: other.to_string(),
                },
            })?;
            Ok(pred.sub(&target)?.abs().sum_all().mul_scalar(1.0 / 24.0))
        };
        let mut worst: f64 = 0.0;
        for param in model.registry.iter() {
            model.registry.zero_grads();
            let err = finite_diff_check(&loss, param, step).map_err(ModelError::from)?;
            if err > worst {
                worst = err;
            }
        }
        results.push(CheckOutcome {
            name: format!("model/end-to-end ({} parameters)", model.registry.len()),
            max_rel_error: worst,
            tolerance,
        });
    }

    Ok(results)
}
