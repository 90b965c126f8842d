use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Parameter, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates keyed by parameter id.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One Adam update with decoupled weight decay (`θ ← θ − lr·wd·θ` before
/// the moment step). Parameters without a gradient are left untouched.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Parameter>,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for p in params {
        if !p.requires_grad {
            continue;
        }
        let Some(g) = grads.get(&p.id) else { continue };
        if g.shape() != p.tensor.shape() {
            return Err(Error::Dimension(format!(
                "gradient for {} has shape {:?}, parameter {:?}",
                p.id,
                g.shape(),
                p.tensor.shape()
            )));
        }
        let [r, c] = g.shape();
        let m = state.m.entry(p.id.clone()).or_insert_with(|| Tensor::zeros(r, c));
        let v = state.v.entry(p.id.clone()).or_insert_with(|| Tensor::zeros(r, c));
        if m.shape() != g.shape() {
            return Err(Error::Dimension(format!("optimizer state for {} has the wrong shape", p.id)));
        }
        let decay = 1.0 - cfg.lr * cfg.weight_decay;
        for (((th, &gi), mi), vi) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *th *= decay;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *th -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    fn grads_for(p: &Parameter, f: impl Fn(&mut Tape, crate::numerics::Var) -> crate::numerics::Var) -> Gradients {
        let mut tape = Tape::new();
        let v = tape.param(p);
        let loss = f(&mut tape, v);
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Parameter::new("p", Tensor::from_rows(&[[1.0, -2.0]]));
        let g = grads_for(&p, |t, v| {
            let z = t.scale(v, 0.0);
            t.sum(z)
        });
        let before = p.tensor.clone();
        let mut st = AdamState::new();
        adam_step([&mut p], &g, &mut st, &AdamConfig::new(0.1, 0.0)).unwrap();
        assert_eq!(p.tensor, before);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = Parameter::new("p", Tensor::scalar(2.0));
        let g = grads_for(&p, |t, v| t.scale(v, 3.0)); // grad = 3
        let mut st = AdamState::new();
        let cfg = AdamConfig::new(0.01, 0.0);
        adam_step([&mut p], &g, &mut st, &cfg).unwrap();
        let expect = 2.0 - 0.01 * 3.0 / (3.0 + 1e-8);
        assert!((p.tensor.item().unwrap() - expect).abs() < 1e-15);
        assert!((2.0 - p.tensor.item().unwrap()) <= 0.01);
    }

    #[test]
    fn decoupled_decay_precedes_moments() {
        let mut p = Parameter::new("p", Tensor::scalar(1.0));
        let g = grads_for(&p, |t, v| t.scale(v, 0.0));
        let mut st = AdamState::new();
        adam_step([&mut p], &g, &mut st, &AdamConfig::new(0.1, 0.5)).unwrap();
        assert!((p.tensor.item().unwrap() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut p = Parameter::new("p", Tensor::from_rows(&[[0.5, -1.5]]));
            let mut st = AdamState::new();
            for _ in 0..20 {
                let g = grads_for(&p, |t, v| t.sum_squares(v));
                adam_step([&mut p], &g, &mut st, &AdamConfig::new(0.05, 1e-3)).unwrap();
            }
            p.tensor
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.data().iter().all(|x| x.abs() < 1.5));
    }
}
