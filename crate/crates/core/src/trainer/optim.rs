//! Adam and SGD with momentum over named parameter sets.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensornet::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// SGD momentum.
    pub momentum: f64,
    /// L2 penalty added to every gradient.
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Per-parameter moment buffers. SGD uses only `m` (the velocity).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimConfig,
    /// Number of steps taken.
    pub t: u64,
    /// Keyed by `(set tag, parameter name)`.
    pub state: IndexMap<(String, String), Moments>,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            t: 0,
            state: IndexMap::new(),
        }
    }

    /// Applies one update to every set from its accumulated gradients.
    /// Any non-finite gradient aborts before a single value is changed.
    pub fn step(&mut self, sets: &mut [&mut ParamSet]) -> Result<()> {
        for set in sets.iter() {
            for name in set.names() {
                if !set.grad(name)?.all_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient of {}.{name} at optimizer step {}",
                        set.tag(),
                        self.t + 1
                    )));
                }
            }
        }
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for set in sets.iter_mut() {
            let tag = set.tag().to_string();
            for (name, value, grad) in set.iter_mut_with_grads() {
                let st = self
                    .state
                    .entry((tag.clone(), name.to_string()))
                    .or_insert_with(|| Moments {
                        m: vec![0.0; value.len()],
                        v: match c.kind {
                            OptimKind::Adam => vec![0.0; value.len()],
                            OptimKind::Sgd => Vec::new(),
                        },
                    });
                let w = value.data_mut();
                for i in 0..w.len() {
                    let g = grad.data()[i] + c.weight_decay * w[i];
                    match c.kind {
                        OptimKind::Adam => {
                            st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * g;
                            st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * g * g;
                            let mh = st.m[i] / bc1;
                            let vh = st.v[i] / bc2;
                            w[i] -= c.lr * mh / (vh.sqrt() + c.eps);
                        }
                        OptimKind::Sgd => {
                            st.m[i] = c.momentum * st.m[i] + g;
                            w[i] -= c.lr * st.m[i];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::{Graph, Tensor};

    fn quad_set(w0: f64) -> ParamSet {
        let mut p = ParamSet::new("q");
        p.add("w", Tensor::vector(vec![w0])).unwrap();
        p
    }

    /// Gradient of ½w², computed through the graph.
    fn load_grad(p: &mut ParamSet) {
        let mut g = Graph::new();
        let w = g.param(p, "w").unwrap();
        let x = g.reshape(w, vec![1, 1]).unwrap();
        let sq = g.gram(x).unwrap();
        let half = g.scale(sq, 0.5);
        let loss = g.sum(half);
        p.zero_grad();
        p.accumulate(&g.backward(loss).unwrap()).unwrap();
    }

    #[test]
    fn adam_first_step_on_quadratic() {
        let mut p = quad_set(1.0);
        load_grad(&mut p);
        let mut opt = Optimizer::new(OptimConfig::default());
        opt.step(&mut [&mut p]).unwrap();
        let expected = 1.0 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_and_zero_lr_are_identity() {
        let mut p = quad_set(0.7);
        let mut opt = Optimizer::new(OptimConfig::default());
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.7);
        load_grad(&mut p);
        let mut still = Optimizer::new(OptimConfig { lr: 0.0, ..OptimConfig::default() });
        still.step(&mut [&mut p]).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.7);
        let mut decay = Optimizer::new(OptimConfig { weight_decay: 0.1, ..OptimConfig::default() });
        p.zero_grad();
        decay.step(&mut [&mut p]).unwrap();
        assert!(p.get("w").unwrap().data()[0] < 0.7);
    }

    #[test]
    fn sgd_momentum() {
        let mut p = quad_set(1.0);
        let mut opt = Optimizer::new(OptimConfig { kind: OptimKind::Sgd, lr: 0.1, ..OptimConfig::default() });
        load_grad(&mut p);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 0.9).abs() < 1e-15);
        load_grad(&mut p);
        opt.step(&mut [&mut p]).unwrap();
        // velocity 0.9·1 + 0.9 = 1.8
        assert!((p.get("w").unwrap().data()[0] - (0.9 - 0.18)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = quad_set(f64::NAN);
        load_grad(&mut p);
        let mut opt = Optimizer::new(OptimConfig::default());
        assert!(matches!(opt.step(&mut [&mut p]), Err(Error::NonFinite(_))));
        assert_eq!(opt.t, 0);
    }
}
