use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(format!("unknown optimizer {other:?} (adam, sgd)")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

impl OptimizerKind {
    /// Adam uses its usual 1e-3. Plain SGD uses 1.0, the customary
    /// starting point for clipped LSTM training; treat it as a guess.
    pub fn default_lr(self) -> f64 {
        match self {
            Self::Adam => 1e-3,
            Self::Sgd => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First and second moments, one tensor per parameter (Adam only).
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore) -> Self {
        let zeros = || -> Vec<Tensor> {
            match kind {
                OptimizerKind::Adam => params
                    .iter()
                    .map(|(_, _, t)| Tensor::zeros(t.shape()))
                    .collect(),
                OptimizerKind::Sgd => Vec::new(),
            }
        };
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn adam(lr: f64, params: &ParamStore) -> Self {
        Self::new(OptimizerKind::Adam, lr, params)
    }

    pub fn sgd(lr: f64, params: &ParamStore) -> Self {
        Self::new(OptimizerKind::Sgd, lr, params)
    }

    /// Applies one update. Fails if `grads` does not cover every parameter
    /// with a correctly shaped buffer.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if !grads.matches(params) {
            let ids: Vec<_> = params.ids().collect();
            let missing = ids
                .iter()
                .enumerate()
                .find(|&(i, &id)| {
                    grads
                        .iter()
                        .nth(i)
                        .is_none_or(|g| g.shape() != params.value(id).shape())
                })
                .map_or_else(
                    || "<extra>".to_string(),
                    |(_, &id)| params.name(id).to_string(),
                );
            return Err(Error::UninitializedGradient(missing));
        }
        self.step += 1;
        let ids: Vec<_> = params.ids().collect();
        match self.kind {
            OptimizerKind::Sgd => {
                for id in ids {
                    let g = grads.get(id).data();
                    for (p, g) in params.value_mut(id).data_mut().iter_mut().zip(g) {
                        *p -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (i, id) in ids.into_iter().enumerate() {
                    let g = grads.get(id).data();
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    let p = params.value_mut(id).data_mut();
                    for k in 0..p.len() {
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                        let m_hat = m[k] / c1;
                        let v_hat = v[k] / c2;
                        p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
