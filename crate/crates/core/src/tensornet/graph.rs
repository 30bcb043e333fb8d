use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{ensure, Error, Result};

/// Variance floor inside batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Norm floor inside `l2_normalize`.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Per-feature statistics of one training-mode batch-norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (`n − 1` denominator), as used for running estimates.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Input,
    Param { tag: String, name: String },
    Dense { x: usize, w: usize, b: usize },
    Add(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    Reshape(usize),
    SliceRows { x: usize, start: usize },
    Relu(usize),
    Softmax(usize),
    Dropout { x: usize, mask: Vec<f64> },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    AvgPool { x: usize, grid: usize },
    L2Normalize { x: usize, norms: Vec<f64> },
    Gram(usize),
    CrossEntropy { logits: usize, targets: Tensor, exclude_diag: bool, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` walks it from the end.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward pass: gradients of every parameter reached, keyed by
/// `(set tag, name)`, plus the gradient of every node.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    params: IndexMap<(String, String), Tensor>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn param(&self, tag: &str, name: &str) -> Option<&Tensor> {
        self.params.get(&(tag.to_string(), name.to_string()))
    }

    pub fn for_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.params
            .iter()
            .filter(move |((t, _), _)| t == tag)
            .map(|((_, n), g)| (n.as_str(), g))
    }

    /// Gradient with respect to any node; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// First non-finite parameter gradient, for diagnostics.
    pub fn first_non_finite(&self) -> Option<String> {
        self.params
            .iter()
            .find(|(_, g)| !g.all_finite())
            .map(|((t, n), _)| format!("{t}.{n}"))
    }
}

fn softmax_rows(data: &[f64], rows: usize, cols: usize, skip_diag: bool) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let allowed = |c: usize| !(skip_diag && c == r);
        let m = (0..cols)
            .filter(|&c| allowed(c))
            .map(|c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for c in (0..cols).filter(|&c| allowed(c)) {
            let e = (row[c] - m).exp();
            out[r * cols + c] = e;
            z += e;
        }
        for v in &mut out[r * cols..(r + 1) * cols] {
            *v /= z;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant leaf. Its gradient is still reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// A leaf holding a copy of a parameter; its gradient is keyed by the set's tag.
    pub fn param(&mut self, set: &ParamSet, name: &str) -> Result<Var> {
        let value = set.get(name)?.clone();
        Ok(self.push(
            value,
            Op::Param {
                tag: set.tag().to_string(),
                name: name.to_string(),
            },
        ))
    }

    /// `y = x·W + b` for `x: B×n`, `W: n×m`, `b: m`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bsz, n) = self.value(x).dims2()?;
        let (wn, m) = self.value(w).dims2()?;
        ensure!(wn == n, "dense: input width {n} vs weight rows {wn}");
        ensure!(self.shape(b) == [m], "dense: bias shape {:?} vs {m} outputs", self.shape(b));
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut y = vec![0.0; bsz * m];
        for i in 0..bsz {
            let yr = &mut y[i * m..(i + 1) * m];
            yr.copy_from_slice(bv);
            for k in 0..n {
                let a = xv[i * n + k];
                if a != 0.0 {
                    for (yj, wj) in yr.iter_mut().zip(&wv[k * m..(k + 1) * m]) {
                        *yj += a * wj;
                    }
                }
            }
        }
        Ok(self.push(Tensor::new(vec![bsz, m], y)?, Op::Dense { x: x.0, w: w.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure!(
            self.shape(a) == self.shape(b),
            "add: shapes {:?} and {:?} differ",
            self.shape(a),
            self.shape(b)
        );
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Add(a.0, b.0)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * s).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(x.0, s))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x.0)))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        ensure!(start < end && end <= rows, "slice_rows: {start}..{end} outside {rows} rows");
        let data = self.value(x).data()[start * cols..end * cols].to_vec();
        Ok(self.push(Tensor::new(vec![end - start, cols], data)?, Op::SliceRows { x: x.0, start }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(x.0))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let y = softmax_rows(self.value(x).data(), r, c, false);
        Ok(self.push(Tensor::new(vec![r, c], y)?, Op::Softmax(x.0)))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        ensure!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0,1)");
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { x: x.0, mask }))
    }

    fn bn_common(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let (b, f) = self.value(x).dims2()?;
        ensure!(self.shape(gamma) == [f], "batch_norm: gamma shape {:?} vs {f} features", self.shape(gamma));
        ensure!(self.shape(beta) == [f], "batch_norm: beta shape {:?} vs {f} features", self.shape(beta));
        ensure!(b >= 1, "batch_norm: empty batch");
        Ok((b, f))
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], train: bool) -> Result<Var> {
        let (b, f) = self.value(x).dims2()?;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xv = self.value(x).data();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; b * f];
        let mut y = vec![0.0; b * f];
        for i in 0..b {
            for j in 0..f {
                let h = (xv[i * f + j] - mean[j]) * inv_std[j];
                xhat[i * f + j] = h;
                y[i * f + j] = g[j] * h + be[j];
            }
        }
        let t = Tensor::new(vec![b, f], y)?;
        Ok(self.push(
            t,
            Op::BatchNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std, train },
        ))
    }

    /// Training-mode batch norm over the rows of `x: B×F`, normalizing with
    /// the biased batch variance. Returns the batch statistics so the caller
    /// can update running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let (b, f) = self.bn_common(x, gamma, beta)?;
        let xv = self.value(x).data();
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for i in 0..b {
            for j in 0..f {
                mean[j] += xv[i * f + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        for i in 0..b {
            for j in 0..f {
                let d = xv[i * f + j] - mean[j];
                var[j] += d * d;
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / b as f64).collect();
        let unbiased = var.iter().map(|v| v / (b.max(2) - 1) as f64).collect();
        let y = self.bn_apply(x, gamma, beta, &mean, &biased, true)?;
        Ok((y, BatchStats { mean, var: unbiased }))
    }

    /// Eval-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Result<Var> {
        let (_, f) = self.bn_common(x, gamma, beta)?;
        ensure!(mean.len() == f && var.len() == f, "batch_norm: running stats length mismatch");
        self.bn_apply(x, gamma, beta, mean, var, false)
    }

    /// Average pooling of `x: B×C×H×W` over a `grid×grid` partition of each
    /// map, giving `B × (C·grid²)` with cells channel-major. `grid = 1` is global
    /// average pooling.
    pub fn avg_pool(&mut self, x: Var, grid: usize) -> Result<Var> {
        let [b, c, h, w] = self.shape(x)[..] else {
            return Err(Error::Contract(format!("avg_pool: expected B×C×H×W, got {:?}", self.shape(x))));
        };
        ensure!(grid >= 1 && grid <= h && grid <= w, "avg_pool: grid {grid} does not fit {h}×{w}");
        let xv = self.value(x).data();
        let mut y = Vec::with_capacity(b * c * grid * grid);
        for map in xv.chunks(h * w) {
            for gy in 0..grid {
                let (y0, y1) = (gy * h / grid, (gy + 1) * h / grid);
                for gx in 0..grid {
                    let (x0, x1) = (gx * w / grid, (gx + 1) * w / grid);
                    let mut acc = 0.0;
                    for yy in y0..y1 {
                        acc += map[yy * w + x0..yy * w + x1].iter().sum::<f64>();
                    }
                    y.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        Ok(self.push(Tensor::new(vec![b, c * grid * grid], y)?, Op::AvgPool { x: x.0, grid }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.avg_pool(x, 1)
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let xv = self.value(x).data();
        let norms: Vec<f64> = xv
            .chunks(c)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS))
            .collect();
        let y = xv.iter().enumerate().map(|(i, v)| v / norms[i / c]).collect();
        Ok(self.push(Tensor::new(vec![r, c], y)?, Op::L2Normalize { x: x.0, norms }))
    }

    /// `x·xᵀ` for `x: B×d`.
    pub fn gram(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let xv = self.value(x).data();
        let mut y = vec![0.0; r * r];
        for i in 0..r {
            for j in i..r {
                let d: f64 = xv[i * c..(i + 1) * c].iter().zip(&xv[j * c..(j + 1) * c]).map(|(a, b)| a * b).sum();
                y[i * r + j] = d;
                y[j * r + i] = d;
            }
        }
        Ok(self.push(Tensor::new(vec![r, r], y)?, Op::Gram(x.0)))
    }

    /// Pairwise cosine similarities of the rows of `x`.
    pub fn cosine_similarity(&mut self, x: Var) -> Result<Var> {
        let z = self.l2_normalize(x)?;
        self.gram(z)
    }

    /// Mean over rows of `−Σ_j t_ij·log softmax(l_i)_j`, as a scalar.
    ///
    /// `targets` rows are distributions (one-hot for classification). With
    /// `exclude_diag`, entry `(i, i)` is left out of row `i`'s softmax; its target
    /// must then be zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: Tensor, exclude_diag: bool) -> Result<Var> {
        let (r, c) = self.value(logits).dims2()?;
        ensure!(
            targets.shape() == [r, c],
            "cross_entropy: targets {:?} vs logits {:?}",
            targets.shape(),
            [r, c]
        );
        ensure!(r >= 1, "cross_entropy: empty batch");
        if exclude_diag {
            ensure!(r == c, "cross_entropy: diagonal exclusion needs square logits");
            ensure!(
                (0..r).all(|i| targets.at2(i, i) == 0.0),
                "cross_entropy: target mass on an excluded diagonal entry"
            );
            ensure!(c >= 2, "cross_entropy: no entries left after excluding the diagonal");
        }
        let lv = self.value(logits).data();
        let probs = softmax_rows(lv, r, c, exclude_diag);
        let mut total = 0.0;
        for i in 0..r {
            let row = &lv[i * c..(i + 1) * c];
            let allowed = |j: usize| !(exclude_diag && j == i);
            let m = (0..c).filter(|&j| allowed(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..c).filter(|&j| allowed(j)).map(|j| (row[j] - m).exp()).sum::<f64>().ln();
            for j in (0..c).filter(|&j| allowed(j)) {
                let t = targets.at2(i, j);
                if t != 0.0 {
                    total += t * (lse - row[j]);
                }
            }
        }
        let loss = total / r as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits: logits.0, targets, exclude_diag, probs },
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure!(
            self.value(loss).is_scalar(),
            "backward needs a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
            grads[i].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let len_of = |k: usize| self.nodes[k].value.len();
            match &node.op {
                Op::Input | Op::Param { .. } => {}
                Op::Dense { x, w, b } => {
                    let (bsz, n) = self.nodes[*x].value.dims2()?;
                    let m = node.value.shape()[1];
                    let xv = self.nodes[*x].value.data();
                    let wv = self.nodes[*w].value.data();
                    {
                        let gx = acc(&mut grads, *x, len_of(*x));
                        for r in 0..bsz {
                            let gr = &g[r * m..(r + 1) * m];
                            for k in 0..n {
                                gx[r * n + k] += gr.iter().zip(&wv[k * m..(k + 1) * m]).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                    {
                        let gw = acc(&mut grads, *w, len_of(*w));
                        for r in 0..bsz {
                            let gr = &g[r * m..(r + 1) * m];
                            for k in 0..n {
                                let a = xv[r * n + k];
                                if a != 0.0 {
                                    for (d, gj) in gw[k * m..(k + 1) * m].iter_mut().zip(gr) {
                                        *d += a * gj;
                                    }
                                }
                            }
                        }
                    }
                    let gb = acc(&mut grads, *b, m);
                    for r in 0..bsz {
                        for j in 0..m {
                            gb[j] += g[r * m + j];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for k in [*a, *b] {
                        let d = acc(&mut grads, k, g.len());
                        d.iter_mut().zip(&g).for_each(|(p, q)| *p += q);
                    }
                }
                Op::Scale(x, s) => {
                    let d = acc(&mut grads, *x, g.len());
                    d.iter_mut().zip(&g).for_each(|(p, q)| *p += s * q);
                }
                Op::Sum(x) => {
                    let d = acc(&mut grads, *x, len_of(*x));
                    d.iter_mut().for_each(|p| *p += g[0]);
                }
                Op::Reshape(x) => {
                    let d = acc(&mut grads, *x, g.len());
                    d.iter_mut().zip(&g).for_each(|(p, q)| *p += q);
                }
                Op::SliceRows { x, start } => {
                    let c = node.value.shape()[1];
                    let off = start * c;
                    let d = acc(&mut grads, *x, len_of(*x));
                    d[off..off + g.len()].iter_mut().zip(&g).for_each(|(p, q)| *p += q);
                }
                Op::Relu(x) => {
                    let xv = self.nodes[*x].value.data();
                    let d = acc(&mut grads, *x, g.len());
                    for ((p, q), v) in d.iter_mut().zip(&g).zip(xv) {
                        if *v > 0.0 {
                            *p += q;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let (r, c) = node.value.dims2()?;
                    let y = node.value.data();
                    let d = acc(&mut grads, *x, g.len());
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let dot: f64 = g[row.clone()].iter().zip(&y[row.clone()]).map(|(a, b)| a * b).sum();
                        for j in row {
                            d[j] += y[j] * (g[j] - dot);
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let d = acc(&mut grads, *x, g.len());
                    for ((p, q), m) in d.iter_mut().zip(&g).zip(mask) {
                        *p += q * m;
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                    let (b, f) = node.value.dims2()?;
                    let gv = self.nodes[*gamma].value.data().to_vec();
                    let mut sum_g = vec![0.0; f];
                    let mut sum_gx = vec![0.0; f];
                    for i in 0..b {
                        for j in 0..f {
                            sum_g[j] += g[i * f + j];
                            sum_gx[j] += g[i * f + j] * xhat[i * f + j];
                        }
                    }
                    {
                        let d = acc(&mut grads, *x, b * f);
                        let bf = b as f64;
                        for i in 0..b {
                            for j in 0..f {
                                let k = i * f + j;
                                d[k] += if *train {
                                    gv[j] * inv_std[j] * (g[k] - sum_g[j] / bf - xhat[k] * sum_gx[j] / bf)
                                } else {
                                    gv[j] * inv_std[j] * g[k]
                                };
                            }
                        }
                    }
                    acc(&mut grads, *gamma, f).iter_mut().zip(&sum_gx).for_each(|(p, q)| *p += q);
                    acc(&mut grads, *beta, f).iter_mut().zip(&sum_g).for_each(|(p, q)| *p += q);
                }
                Op::AvgPool { x, grid } => {
                    let [_, _, h, w] = self.nodes[*x].value.shape()[..] else { unreachable!() };
                    let grid = *grid;
                    let d = acc(&mut grads, *x, len_of(*x));
                    for (m, map) in d.chunks_mut(h * w).enumerate() {
                        for gy in 0..grid {
                            let (y0, y1) = (gy * h / grid, (gy + 1) * h / grid);
                            for gx in 0..grid {
                                let (x0, x1) = (gx * w / grid, (gx + 1) * w / grid);
                                let share = g[(m * grid + gy) * grid + gx] / ((y1 - y0) * (x1 - x0)) as f64;
                                for yy in y0..y1 {
                                    map[yy * w + x0..yy * w + x1].iter_mut().for_each(|p| *p += share);
                                }
                            }
                        }
                    }
                }
                Op::L2Normalize { x, norms } => {
                    let c = node.value.shape()[1];
                    let y = node.value.data();
                    let d = acc(&mut grads, *x, g.len());
                    for (r, norm) in norms.iter().enumerate() {
                        let row = r * c..(r + 1) * c;
                        let dot: f64 = g[row.clone()].iter().zip(&y[row.clone()]).map(|(a, b)| a * b).sum();
                        for j in row {
                            d[j] += (g[j] - y[j] * dot) / norm;
                        }
                    }
                }
                Op::Gram(x) => {
                    let (r, c) = self.nodes[*x].value.dims2()?;
                    let xv = self.nodes[*x].value.data();
                    let d = acc(&mut grads, *x, r * c);
                    for i in 0..r {
                        for j in 0..r {
                            let s = g[i * r + j] + g[j * r + i];
                            if s != 0.0 {
                                for k in 0..c {
                                    d[i * c + k] += s * xv[j * c + k];
                                }
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, exclude_diag, probs } => {
                    let (r, c) = targets.dims2()?;
                    let scale = g[0] / r as f64;
                    let d = acc(&mut grads, *logits, r * c);
                    for i in 0..r {
                        let mass: f64 = targets.row(i).iter().sum();
                        for j in 0..c {
                            if *exclude_diag && i == j {
                                continue;
                            }
                            d[i * c + j] += scale * (probs[i * c + j] * mass - targets.at2(i, j));
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }

        let mut params: IndexMap<(String, String), Tensor> = IndexMap::new();
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let g = grads
                .get_mut(i)
                .and_then(Option::take)
                .map(|d| Tensor::new(node.value.shape().to_vec(), d))
                .transpose()?;
            if let (Op::Param { tag, name }, Some(gt)) = (&node.op, &g) {
                match params.get_mut(&(tag.clone(), name.clone())) {
                    Some(prev) => prev.data_mut().iter_mut().zip(gt.data()).for_each(|(p, q)| *p += q),
                    None => {
                        params.insert((tag.clone(), name.clone()), gt.clone());
                    }
                }
            }
            nodes.push(g);
        }
        Ok(Gradients { params, nodes })
    }
}
