//! A small reverse-mode differentiation engine covering exactly the layers
//! the trainable heads need: dense, residual add, ReLU, softmax, dropout,
//! batch norm, average pooling, row normalization, Gram matrices and
//! cross-entropy.

mod graph;
mod params;
mod tensor;

pub use graph::{BatchStats, Gradients, Graph, Mode, Var, BN_EPS, NORM_EPS};
pub use params::ParamSet;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = stream_rng(seed, Stream::Init, &[shape.iter().product::<usize>() as u64]);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences of `f` with respect to every entry of input `k`.
    fn numeric_grad(f: &dyn Fn(&[Tensor]) -> f64, inputs: &[Tensor], k: usize, h: f64) -> Vec<f64> {
        (0..inputs[k].len())
            .map(|i| {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    fn weights_for(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.45).collect()
    }

    /// `Σ out_i·w_i` with fixed weights, built from graph ops.
    fn weighted_loss(g: &mut Graph, out: Var) -> Var {
        let n = g.value(out).len();
        let flat = g.reshape(out, vec![1, n]).unwrap();
        let w = g.input(Tensor::new(vec![n, 1], weights_for(n)).unwrap());
        let b = g.input(Tensor::zeros(&[1]));
        let y = g.dense(flat, w, b).unwrap();
        g.sum(y)
    }

    /// Builds `build` on leaf inputs, reduces with fixed weights, and compares
    /// analytic against numeric gradients for every input.
    fn check(build: &dyn Fn(&mut Graph, &[Var]) -> Var, inputs: &[Tensor]) -> f64 {
        let eval = |ins: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
            let out = build(&mut g, &vars);
            let v = g.value(out).data();
            v.iter().zip(weights_for(v.len())).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        let loss = weighted_loss(&mut g, out);
        let grads = g.backward(loss).unwrap();
        let mut worst: f64 = 0.0;
        for (k, v) in vars.iter().enumerate() {
            let analytic = grads.wrt(*v).map(|t| t.data().to_vec()).unwrap_or(vec![0.0; inputs[k].len()]);
            let numeric = numeric_grad(&eval, inputs, k, 1e-3);
            worst = worst.max(max_rel_err(&analytic, &numeric));
        }
        worst
    }

    #[test]
    fn trivial_examples() {
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(1, 3, vec![-1.0, 0.0, 2.0]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let c = g.input(Tensor::matrix(1, 4, vec![3.0; 4]).unwrap());
        let s = g.softmax(c).unwrap();
        assert!(g.value(s).data().iter().all(|p| (p - 0.25).abs() < 1e-15));
        let v = g.input(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        let n = g.l2_normalize(v).unwrap();
        assert!((g.value(n).data()[0] - 0.6).abs() < 1e-15);
        assert!((g.value(n).data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut g = Graph::new();
        let x = g.input(random(&[3, 2], 1));
        let w = g.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.input(Tensor::zeros(&[2]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let z = g.input(Tensor::zeros(&[3, 2]));
        let b2 = g.input(Tensor::vector(vec![0.5, -1.0]));
        let y2 = g.dense(z, w, b2).unwrap();
        assert_eq!(g.value(y2).row(2), &[0.5, -1.0]);
        let bad = g.input(Tensor::zeros(&[3, 3]));
        assert!(g.dense(bad, w, b).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.input(random(&[2, 2], 0));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unreachable_params_stay_zero_and_grads_accumulate() {
        let mut set = ParamSet::new("p");
        set.add("w", random(&[2, 1], 3)).unwrap();
        set.add("b", Tensor::zeros(&[1])).unwrap();
        set.add("unused", Tensor::filled(&[4], 1.0)).unwrap();
        let mut g = Graph::new();
        let x = g.input(random(&[5, 2], 4));
        let w = g.param(&set, "w").unwrap();
        let b = g.param(&set, "b").unwrap();
        let y = g.dense(x, w, b).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        set.accumulate(&grads).unwrap();
        let once = set.grad("w").unwrap().clone();
        set.accumulate(&g.backward(loss).unwrap()).unwrap();
        for (a, b) in set.grad("w").unwrap().data().iter().zip(once.data()) {
            assert_eq!(*a, 2.0 * b);
        }
        assert!(set.grad("unused").unwrap().data().iter().all(|&v| v == 0.0));
        // d sum(xW + b)/dW_k = Σ_rows x_k
        let xs = g.value(x);
        for k in 0..2 {
            let col: f64 = (0..5).map(|r| xs.at2(r, k)).sum();
            assert!((once.data()[k] - col).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_seeded() {
        let mut g = Graph::new();
        let x = g.input(Tensor::filled(&[4, 8], 1.0));
        let e = g.dropout(x, 0.5, Mode::Eval, &mut stream_rng(0, Stream::Dropout, &[])).unwrap();
        assert_eq!(e, x);
        let a = g.dropout(x, 0.5, Mode::Train, &mut stream_rng(1, Stream::Dropout, &[])).unwrap();
        let b = g.dropout(x, 0.5, Mode::Train, &mut stream_rng(1, Stream::Dropout, &[])).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert!(g.value(a).data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(g.dropout(x, 1.0, Mode::Train, &mut stream_rng(1, Stream::Dropout, &[])).is_err());
    }

    #[test]
    fn primitive_gradients() {
        let x = random(&[4, 3], 10);
        let w = random(&[3, 5], 11);
        let b = random(&[5], 12);
        let worst = check(&|g, v| g.dense(v[0], v[1], v[2]).unwrap(), &[x.clone(), w, b]);
        assert!(worst <= 1e-4, "dense {worst}");
        let worst = check(&|g, v| g.softmax(v[0]).unwrap(), &[x.clone()]);
        assert!(worst <= 1e-4, "softmax {worst}");
        let worst = check(&|g, v| g.l2_normalize(v[0]).unwrap(), &[x.clone()]);
        assert!(worst <= 1e-4, "l2 {worst}");
        let worst = check(&|g, v| g.gram(v[0]).unwrap(), &[x.clone()]);
        assert!(worst <= 1e-4, "gram {worst}");
        let gamma = random(&[3], 13);
        let beta = random(&[3], 14);
        let worst = check(&|g, v| g.batch_norm_train(v[0], v[1], v[2]).unwrap().0, &[x.clone(), gamma.clone(), beta.clone()]);
        assert!(worst <= 1e-4, "bn {worst}");
        let worst = check(
            &|g, v| g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0]).unwrap(),
            &[x.clone(), gamma, beta],
        );
        assert!(worst <= 1e-4, "bn eval {worst}");
        let m = random(&[2, 3, 4, 4], 15);
        let worst = check(&|g, v| g.avg_pool(v[0], 2).unwrap(), &[m]);
        assert!(worst <= 1e-4, "pool {worst}");
        let mut t = vec![0.0; 12];
        for (i, j) in [(0, 1), (1, 0), (2, 2), (3, 0)] {
            t[i * 3 + j] = 1.0;
        }
        let targets = Tensor::matrix(4, 3, t).unwrap();
        let worst = check(&|g, v| g.cross_entropy(v[0], targets.clone(), false).unwrap(), &[x]);
        assert!(worst <= 1e-4, "ce {worst}");
    }
}
