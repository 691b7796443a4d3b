//! Bias-corrected Adam over the model's parameter registry.

use dstgtn_tensor::{Element, ParamRegistry};

use crate::config::TrainConfig;
use crate::error::TrainError;

/// First/second moment buffers, one pair per parameter in registry order.
pub struct AdamState<T: Element> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(registry: &ParamRegistry<T>) -> Self {
        let m = registry.iter().map(|p| vec![T::zero(); p.len()]).collect();
        let v = registry.iter().map(|p| vec![T::zero(); p.len()]).collect();
        AdamState { m, v, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One update from the gradients currently held by the registry; parameters
/// are visited in fixed registry order. NaN gradients abort, naming the
/// parameter.
pub fn adam_step<T: Element>(
    registry: &ParamRegistry<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step;
    let beta1 = T::of(cfg.beta1);
    let beta2 = T::of(cfg.beta2);
    let one = T::one();
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    let corr1 = one - T::of(cfg.beta1.powi(t as i32));
    let corr2 = one - T::of(cfg.beta2.powi(t as i32));

    for (i, param) in registry.iter().enumerate() {
        let grad = param.grad();
        if grad.iter().any(|g| g.is_nan()) {
            return Err(TrainError::NaNGradient {
                param: param.name().to_string(),
                epoch,
            });
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let mut values = param.value().to_vec();
        for (((val, g), mi), vi) in values.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (one - beta1) * *g;
            *vi = beta2 * *vi + (one - beta2) * *g * *g;
            let m_hat = *mi / corr1;
            let v_hat = *vi / corr2;
            *val = *val - lr * m_hat / (v_hat.sqrt() + eps);
        }
        param.set_value(values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dstgtn_tensor::Parameter;

    fn registry_with(values: Vec<f64>) -> ParamRegistry<f64> {
        let mut reg = ParamRegistry::new();
        let n = values.len();
        reg.register(Parameter::new("p", &[n], values).unwrap()).unwrap();
        reg
    }

    #[test]
    fn zero_gradient_is_identity() {
        let reg = registry_with(vec![1.0, -2.0, 3.0]);
        let mut state = AdamState::new(&reg);
        let cfg = TrainConfig::default();
        for _ in 0..3 {
            adam_step(&reg, &mut state, &cfg, 1).unwrap();
        }
        assert_eq!(reg.get("p").unwrap().value().as_ref(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let reg = registry_with(vec![0.5]);
        let p = reg.get("p").unwrap().clone();
        let mut state = AdamState::new(&reg);
        let cfg = TrainConfig::default();
        // Hand-run recurrence: m̂ = 1, v̂ = 1 → Δ = −lr/(1 + eps).
        let x = dstgtn_tensor::Tensor::from_vec(vec![1.0f64], &[1]).unwrap();
        let loss = p.leaf().mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        adam_step(&reg, &mut state, &cfg, 1).unwrap();
        let expected = 0.5 - cfg.lr / (1.0 + cfg.eps);
        assert!((p.value()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let reg = registry_with(vec![0.5]);
        let p = reg.get("p").unwrap().clone();
        let mut state = AdamState::new(&reg);
        let x = dstgtn_tensor::Tensor::from_vec(vec![f64::NAN], &[1]).unwrap();
        let loss = p.leaf().mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        match adam_step(&reg, &mut state, &TrainConfig::default(), 4) {
            Err(TrainError::NaNGradient { param, epoch }) => {
                assert_eq!(param, "p");
                assert_eq!(epoch, 4);
            }
            other => panic!("expected NaN gradient error, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let reg = registry_with(vec![0.3, -0.7]);
            let p = reg.get("p").unwrap().clone();
            let mut state = AdamState::new(&reg);
            let cfg = TrainConfig::default();
            for step in 0..5 {
                reg.zero_grads();
                let x = dstgtn_tensor::Tensor::from_vec(vec![0.1 * step as f64, -0.2], &[2]).unwrap();
                let loss = p.leaf().mul(&x).unwrap().sum_all();
                loss.backward().unwrap();
                adam_step(&reg, &mut state, &cfg, 1).unwrap();
            }
            p.value().to_vec()
        };
        assert_eq!(run(), run());
    }
}
