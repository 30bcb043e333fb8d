//! Contrastive NT-Xent loss, pretext cross-entropy and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensornet::{Graph, Tensor, Var};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;
/// Tolerance on the unit-norm precondition of contrastive embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// NT-Xent over `z: 2N×d` whose rows `2k` and `2k+1` are the two views of
/// sample `k`. Rows must already be unit-norm.
///
/// Each row's positive is its partner; the negatives are every other row except
/// itself. The loss is the mean over all `2N` rows.
pub fn nt_xent(g: &mut Graph, z: Var, temperature: f64) -> Result<Var> {
    ensure!(temperature > 0.0, "temperature must be positive, got {temperature}");
    let (rows, _) = g.value(z).dims2()?;
    ensure!(rows >= 2 && rows % 2 == 0, "NT-Xent needs an even number of rows, got {rows}");
    let zv = g.value(z);
    for r in 0..rows {
        let norm = zv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        ensure!(
            (norm - 1.0).abs() <= UNIT_NORM_TOL,
            "row {r} of the embedding has norm {norm}, expected 1"
        );
    }
    let mut targets = Tensor::zeros(&[rows, rows]);
    for r in 0..rows {
        targets.data_mut()[r * rows + (r ^ 1)] = 1.0;
    }
    let sim = g.gram(z)?;
    let logits = g.scale(sim, 1.0 / temperature);
    g.cross_entropy(logits, targets, true)
}

/// Scalar NT-Xent value without keeping a graph.
pub fn nt_xent_value(z: &Tensor, temperature: f64) -> Result<f64> {
    let mut g = Graph::new();
    let zv = g.input(z.clone());
    let loss = nt_xent(&mut g, zv, temperature)?;
    Ok(g.value(loss).item())
}

/// One-hot rows for integer labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        ensure!(l < classes, "label {l} outside {classes} classes");
        t.data_mut()[i * classes + l] = 1.0;
    }
    Ok(t)
}

/// Mean cross-entropy between pretext logits and one-hot labels.
pub fn pretext_loss(g: &mut Graph, logits: Var, labels: &Tensor) -> Result<Var> {
    let (rows, classes) = g.value(logits).dims2()?;
    ensure!(
        labels.shape() == [rows, classes],
        "labels {:?} do not match logits {:?}",
        labels.shape(),
        [rows, classes]
    );
    for r in 0..rows {
        let row = labels.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        ensure!(ones == 1 && zeros == classes - 1, "label row {r} is not one-hot");
    }
    g.cross_entropy(logits, labels.clone(), false)
}

/// `C + λ·P`. With no pretext term the contrastive loss is returned as is.
pub fn total_loss(g: &mut Graph, contrastive: Var, pretext: Option<Var>, lambda: f64) -> Result<Var> {
    match pretext {
        None => Ok(contrastive),
        Some(p) => {
            let weighted = g.scale(p, lambda);
            g.add(contrastive, weighted)
        }
    }
}

/// How the pretext weight `λ` evolves during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LambdaSchedule {
    /// `0` for the first `warmup_epochs` epochs, then `value`.
    Epochs { warmup_epochs: usize, value: f64 },
    /// Same, counted in optimizer steps.
    Steps { warmup_steps: usize, value: f64 },
    Constant { value: f64 },
    /// Experimental: after the warm-up, `λ` tracks a running `|C|/|P|` ratio so the
    /// two terms have comparable magnitude.
    AutoBalance { warmup_epochs: usize, momentum: f64 },
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::Epochs {
            warmup_epochs: 40,
            value: 0.3,
        }
    }
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaSchedule::Epochs { value, .. } | LambdaSchedule::Steps { value, .. } | LambdaSchedule::Constant { value } => {
                ensure!(value >= 0.0 && value.is_finite(), "lambda must be finite and non-negative, got {value}");
            }
            LambdaSchedule::AutoBalance { momentum, .. } => {
                ensure!((0.0..1.0).contains(&momentum), "auto-balance momentum {momentum} outside [0,1)");
                log::warn!("auto-balanced lambda is experimental");
            }
        }
        Ok(())
    }
}

/// Schedule plus the running ratio used by the auto-balance mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub schedule: LambdaSchedule,
    pub running_ratio: Option<f64>,
}

impl LossWeights {
    pub fn new(schedule: LambdaSchedule) -> Self {
        Self {
            schedule,
            running_ratio: None,
        }
    }

    pub fn lambda(&self, epoch: usize, step: usize) -> f64 {
        match self.schedule {
            LambdaSchedule::Epochs { warmup_epochs, value } => {
                if epoch < warmup_epochs { 0.0 } else { value }
            }
            LambdaSchedule::Steps { warmup_steps, value } => {
                if step < warmup_steps { 0.0 } else { value }
            }
            LambdaSchedule::Constant { value } => value,
            LambdaSchedule::AutoBalance { warmup_epochs, .. } => {
                if epoch < warmup_epochs { 0.0 } else { self.running_ratio.unwrap_or(0.0) }
            }
        }
    }

    /// Feeds one step's loss magnitudes to the auto-balance estimate.
    pub fn observe(&mut self, contrastive: f64, pretext: f64) {
        if let LambdaSchedule::AutoBalance { momentum, .. } = self.schedule {
            if pretext.abs() > 0.0 && contrastive.is_finite() && pretext.is_finite() {
                let r = contrastive.abs() / pretext.abs();
                self.running_ratio = Some(match self.running_ratio {
                    Some(prev) => momentum * prev + (1.0 - momentum) * r,
                    None => r,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(rows: &[[f64; 2]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_pair_is_zero() {
        for tau in [0.1, 0.5, 2.0] {
            let l = nt_xent_value(&z(&[[1.0, 0.0], [0.6, 0.8]]), tau).unwrap();
            assert_eq!(l, 0.0);
        }
    }

    #[test]
    fn identical_rows_give_ln3() {
        for tau in [0.1, 0.5, 3.0] {
            let l = nt_xent_value(&z(&[[1.0, 0.0]; 4]), tau).unwrap();
            assert!((l - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_pairs() {
        let l = nt_xent_value(&z(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]), 0.5).unwrap();
        assert!((l - (1.0 + 2.0 * (-2f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn contract_errors() {
        let ok = z(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(nt_xent_value(&ok, 0.0).is_err());
        assert!(nt_xent_value(&ok, -1.0).is_err());
        assert!(nt_xent_value(&z(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), 0.5).is_err());
        assert!(nt_xent_value(&z(&[[2.0, 0.0], [0.0, 1.0]]), 0.5).is_err());
    }

    #[test]
    fn pretext_loss_cases() {
        let mut g = Graph::new();
        let uniform = g.input(Tensor::zeros(&[3, 4]));
        let labels = one_hot(&[0, 3, 1], 4).unwrap();
        let l = pretext_loss(&mut g, uniform, &labels).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);

        let mut confident = Tensor::zeros(&[3, 4]);
        for (i, c) in [0usize, 3, 1].into_iter().enumerate() {
            confident.data_mut()[i * 4 + c] = 50.0;
        }
        let v = g.input(confident);
        let l = pretext_loss(&mut g, v, &labels).unwrap();
        assert!(g.value(l).item() < 1e-20);

        let soft = Tensor::filled(&[3, 4], 0.25);
        assert!(pretext_loss(&mut g, v, &soft).is_err());
        assert!(one_hot(&[4], 4).is_err());
    }

    #[test]
    fn default_schedule() {
        let w = LossWeights::new(LambdaSchedule::default());
        assert!((0..40).all(|e| w.lambda(e, 0) == 0.0));
        assert!((40..200).all(|e| w.lambda(e, 0) == 0.3));
        let s = LossWeights::new(LambdaSchedule::Steps { warmup_steps: 5, value: 0.1 });
        assert_eq!((s.lambda(9, 4), s.lambda(0, 5)), (0.0, 0.1));
    }

    #[test]
    fn auto_balance_tracks_ratio() {
        let mut w = LossWeights::new(LambdaSchedule::AutoBalance { warmup_epochs: 1, momentum: 0.5 });
        w.observe(4.0, 2.0);
        w.observe(6.0, 1.0);
        assert_eq!(w.lambda(0, 0), 0.0);
        assert_eq!(w.lambda(1, 0), 4.0);
    }

    #[test]
    fn total_loss_weights_pretext() {
        let mut g = Graph::new();
        let c = g.input(Tensor::scalar(2.0));
        let p = g.input(Tensor::scalar(5.0));
        let t = total_loss(&mut g, c, Some(p), 0.3).unwrap();
        assert_eq!(g.value(t).item(), 2.0 + 0.3 * 5.0);
        let zero = total_loss(&mut g, c, Some(p), 0.0).unwrap();
        let grads = g.backward(zero).unwrap();
        assert_eq!(grads.wrt(p).unwrap().item(), 0.0);
        assert_eq!(total_loss(&mut g, c, None, 0.3).unwrap(), c);
    }
}
