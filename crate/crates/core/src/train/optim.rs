//! First-order optimizers over a [`ParamStore`].

use std::collections::HashMap;

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    fn learning_rate(&self) -> f64;
    /// Updates every trainable parameter. Frozen parameters are left alone.
    fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()>;
}

fn check_lr(lr: f64) -> Result<f64> {
    if lr.is_finite() && lr >= 0.0 {
        Ok(lr)
    } else {
        Err(Error::InvalidArgument(format!("learning rate {lr} must be finite and non-negative")))
    }
}

/// Refuses to step if any trainable parameter has a non-finite gradient.
fn check_finite(params: &ParamStore, grads: &Gradients) -> Result<()> {
    for (id, g) in grads.params() {
        if !params.is_trainable(id) {
            continue;
        }
        let mut dense = vec![0.0; params.get(id).numel()];
        g.add_into(&mut dense);
        if dense.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain {
                op: "optimizer step",
                detail: format!("non-finite gradient for {}", params.name(id)),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Result<Self> {
        Ok(Self { lr: check_lr(lr)? })
    }
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        check_finite(params, grads)?;
        let ids: Vec<ParamId> = grads.params().map(|(id, _)| id).filter(|&id| params.is_trainable(id)).collect();
        for id in ids {
            let g = grads.dense(params, id);
            for (p, g) in params.get_mut(id).data_mut().iter_mut().zip(g) {
                *p -= self.lr * g;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(lr: f64) -> Result<Self> {
        Ok(Self { lr: check_lr(lr)?, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: HashMap::new() })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates for `id`, if it has been stepped.
    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        self.moments.get(&id).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        check_finite(params, grads)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<ParamId> = params.ids().filter(|&id| params.is_trainable(id)).collect();
        for id in ids {
            let n = params.get(id).numel();
            let g = grads.dense(params, id);
            let (m, v) = self.moments.entry(id).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let p = params.get_mut(id).data_mut();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

type OptimizerCtor = fn(Option<f64>) -> Result<Box<dyn Optimizer>>;

static OPTIMIZERS: &[(&str, OptimizerCtor)] = &[
    ("adam", |lr| Ok(Box::new(Adam::new(lr.unwrap_or(Adam::DEFAULT_LR))?))),
    ("sgd", |lr| Ok(Box::new(Sgd::new(lr.unwrap_or(0.1))?))),
];

pub fn optimizer_names() -> Vec<&'static str> {
    OPTIMIZERS.iter().map(|(n, _)| *n).collect()
}

/// Looks up an optimizer by name; `lr` overrides its default learning rate.
pub fn optimizer_by_name(name: &str, lr: Option<f64>) -> Result<Box<dyn Optimizer>> {
    match OPTIMIZERS.iter().find(|(n, _)| *n == name) {
        Some((_, ctor)) => ctor(lr),
        None => Err(Error::InvalidArgument(format!(
            "unknown optimizer {name:?} (expected one of {:?})",
            optimizer_names()
        ))),
    }
}
