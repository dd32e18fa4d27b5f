//! Multilayer perceptron: forward pass, manual backpropagation, SGD.
//!
//! Weights are stored row-major as (out x in) per layer; hidden layers use
//! the configured activation, the output layer is linear (logits).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative at x; subgradient 0 at the ReLU kink.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// ln(1 + e^x), stable for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
}

impl MlpModel {
    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize], hidden_activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Usage(format!("bad layer sizes {layer_sizes:?}")));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
        })
    }

    /// Glorot-uniform init: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
    pub fn init<R: Rng>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes, hidden_activation)?;
        for w in &mut model.weights {
            let bound = (6.0 / (w.cols() + w.rows()) as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn same_architecture(&self, other: &MlpModel) -> bool {
        self.layer_sizes == other.layer_sizes && self.hidden_activation == other.hidden_activation
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Forward pass; returns logits (batch rows x output width).
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(batch)?.output().clone())
    }

    /// Forward pass keeping the per-layer activations needed by backprop.
    pub fn forward_cached(&self, batch: &Matrix) -> Result<ForwardCache> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input width {} vs model input {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        let mut pre_activations = Vec::with_capacity(self.num_layers());
        activations.push(batch.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations[l].matmul_transpose(w)?;
            z.add_row_bias(b)?;
            if l < last {
                let mut a = z.clone();
                for v in a.as_mut_slice() {
                    *v = self.hidden_activation.apply(*v);
                }
                pre_activations.push(z);
                activations.push(a);
            } else {
                pre_activations.push(z.clone());
                activations.push(z);
            }
        }
        Ok(ForwardCache { activations, pre_activations })
    }

    /// Backpropagate a gradient w.r.t. the logits through the cached pass.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Matrix) -> Result<Gradients> {
        let layers = self.num_layers();
        let mut d_weights = vec![Matrix::zeros(0, 0); layers];
        let mut d_biases = vec![Vec::new(); layers];
        let mut d_pre = d_logits.clone();
        for l in (0..layers).rev() {
            d_weights[l] = d_pre.transpose_matmul(&cache.activations[l])?;
            let mut db = vec![0.0; d_pre.cols()];
            for r in 0..d_pre.rows() {
                for (acc, v) in db.iter_mut().zip(d_pre.row(r)) {
                    *acc += v;
                }
            }
            d_biases[l] = db;
            if l > 0 {
                let mut d_act = d_pre.matmul(&self.weights[l])?;
                let pre = &cache.pre_activations[l - 1];
                for (v, &z) in d_act.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    *v *= self.hidden_activation.derivative(z);
                }
                d_pre = d_act;
            }
        }
        Ok(Gradients { d_weights, d_biases })
    }

    /// In-place SGD step: w -= lr * grad, plus mu * (w - anchor) when given.
    pub fn apply_gradients(
        &mut self,
        grads: &Gradients,
        lr: f64,
        prox: Option<(f64, &MlpModel)>,
    ) -> Result<()> {
        for (l, (w, dw)) in self.weights.iter_mut().zip(&grads.d_weights).enumerate() {
            if let Some((mu, anchor)) = prox {
                if mu != 0.0 {
                    let aw = &anchor.weights[l];
                    for ((v, &g), &a) in
                        w.as_mut_slice().iter_mut().zip(dw.as_slice()).zip(aw.as_slice())
                    {
                        *v -= lr * (g + mu * (*v - a));
                    }
                    continue;
                }
            }
            w.add_scaled(dw, -lr)?;
        }
        for (l, (b, db)) in self.biases.iter_mut().zip(&grads.d_biases).enumerate() {
            if let Some((mu, anchor)) = prox {
                if mu != 0.0 {
                    let ab = &anchor.biases[l];
                    for ((v, &g), &a) in b.iter_mut().zip(db).zip(ab) {
                        *v -= lr * (g + mu * (*v - a));
                    }
                    continue;
                }
            }
            for (v, &g) in b.iter_mut().zip(db) {
                *v -= lr * g;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// activations[0] is the input batch; activations[L] the logits.
    pub activations: Vec<Matrix>,
    /// Pre-activation values per weight layer.
    pub pre_activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Matrix>,
    pub d_biases: Vec<Vec<f64>>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean NLL over the batch and its gradient w.r.t. the logits,
/// (softmax - one_hot) / batch_size.
pub fn nll_loss_and_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let k = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidValue(format!("label {bad} out of range 0..{k}")));
    }
    let n = logits.rows() as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss -= row[y] - max - log_sum;
        let grow = grad.row_mut(r);
        grow[y] -= 1.0;
        for v in grow.iter_mut() {
            *v /= n;
        }
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

/// Mini-batch SGD on mean NLL. Shuffles sample order once per epoch from
/// `rng`; the last partial batch is kept. `prox = (mu, anchor)` adds
/// mu * (w - anchor) to every gradient step.
pub fn sgd_train<R: Rng>(
    model: &MlpModel,
    features: &Matrix,
    labels: &[usize],
    cfg: &SgdConfig,
    prox: Option<(f64, &MlpModel)>,
    rng: &mut R,
) -> Result<MlpModel> {
    if features.rows() == 0 {
        return Err(Error::Usage("sgd_train on empty data".into()));
    }
    if features.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if cfg.lr < 0.0 {
        return Err(Error::Usage("negative learning rate".into()));
    }
    let batch_size = cfg.batch_size.max(1);
    let mut trained = model.clone();
    let mut order: Vec<usize> = (0..features.rows()).collect();
    for _ in 0..cfg.epochs {
        shuffle(&mut order, rng);
        for chunk in order.chunks(batch_size) {
            let batch = features.select_rows(chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let cache = trained.forward_cached(&batch)?;
            let (_, d_logits) = nll_loss_and_grad(cache.output(), &batch_labels)?;
            let grads = trained.backward(&cache, &d_logits)?;
            trained.apply_gradients(&grads, cfg.lr, prox)?;
        }
    }
    Ok(trained)
}

/// Fisher-Yates from the given stream.
fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn forward_zero_model_gives_zero_logits() {
        let model = MlpModel::zeros(&[3, 4, 2], Activation::Relu).unwrap();
        let x = Matrix::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        let out = model.forward(&x).unwrap();
        assert_eq!(out.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn forward_identity_single_layer() {
        let mut model = MlpModel::zeros(&[3, 3], Activation::Relu).unwrap();
        for i in 0..3 {
            model.weights_mut()[0].set(i, i, 1.0);
        }
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.0, 0.5, -0.5]]).unwrap();
        let out = model.forward(&x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn forward_matches_naive_loop_oracle() {
        let mut rng = derive_rng(11, &[0]);
        let model = MlpModel::init(&[2, 4, 3], Activation::Relu, &mut rng).unwrap();
        let x = Matrix::from_rows(&[
            vec![0.3, -0.7],
            vec![1.2, 0.1],
            vec![-0.4, 0.9],
        ])
        .unwrap();
        let out = model.forward(&x).unwrap();

        // Independent per-neuron loop.
        for r in 0..x.rows() {
            let mut layer_in: Vec<f64> = x.row(r).to_vec();
            for l in 0..model.num_layers() {
                let w = &model.weights()[l];
                let b = &model.biases()[l];
                let mut layer_out = vec![0.0; w.rows()];
                for (j, out_v) in layer_out.iter_mut().enumerate() {
                    let mut acc = b[j];
                    for (i, in_v) in layer_in.iter().enumerate() {
                        acc += w.get(j, i) * in_v;
                    }
                    *out_v = if l + 1 < model.num_layers() { acc.max(0.0) } else { acc };
                }
                layer_in = layer_out;
            }
            for (k, expect) in layer_in.iter().enumerate() {
                assert_eq!(out.get(r, k), *expect);
            }
        }
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let logits = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![1000.0, 0.0, 0.0]]).unwrap();
        let p = softmax(&logits);
        for v in p.row(0) {
            approx(*v, 1.0 / 3.0, 1e-15);
        }
        assert!(p.is_finite());
        approx(p.get(1, 0), 1.0, 1e-12);
        approx(p.get(1, 1), 0.0, 1e-12);
    }

    #[test]
    fn softmax_closed_form() {
        let logits = Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let p = softmax(&logits);
        let e2 = 2.0f64.exp();
        approx(p.get(0, 0), e2 / (e2 + 1.0), 1e-15);
        approx(p.get(0, 1), 1.0 / (e2 + 1.0), 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one_over_wide_range() {
        let mut rng = derive_rng(3, &[1]);
        for _ in 0..200 {
            let row: Vec<f64> = (0..7).map(|_| rng.random_range(-1e6..1e6)).collect();
            let p = softmax(&Matrix::from_rows(&[row]).unwrap());
            assert!(p.is_finite());
            let sum: f64 = p.row(0).iter().sum();
            approx(sum, 1.0, 1e-12);
        }
    }

    #[test]
    fn nll_perfect_and_uniform() {
        let logits = Matrix::from_rows(&[vec![100.0, 0.0, 0.0]]).unwrap();
        let (loss, _) = nll_loss_and_grad(&logits, &[0]).unwrap();
        assert!(loss < 1e-12, "loss {loss}");

        let logits = Matrix::from_rows(&[vec![0.5, 0.5, 0.5, 0.5]]).unwrap();
        let (loss, _) = nll_loss_and_grad(&logits, &[2]).unwrap();
        approx(loss, 4.0f64.ln(), 1e-12);
    }

    #[test]
    fn nll_rejects_bad_labels() {
        let logits = Matrix::zeros(2, 3);
        assert!(matches!(
            nll_loss_and_grad(&logits, &[0, 3]),
            Err(Error::InvalidValue(_))
        ));
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = derive_rng(5, &[2]);
        let rows = 4;
        let k = 5;
        let mut logits = Matrix::zeros(rows, k);
        for v in logits.as_mut_slice() {
            *v = rng.random_range(-2.0..2.0);
        }
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..k)).collect();
        let (_, grad) = nll_loss_and_grad(&logits, &labels).unwrap();
        let h = 1e-6;
        for r in 0..rows {
            for c in 0..k {
                let mut plus = logits.clone();
                plus.set(r, c, plus.get(r, c) + h);
                let mut minus = logits.clone();
                minus.set(r, c, minus.get(r, c) - h);
                let (lp, _) = nll_loss_and_grad(&plus, &labels).unwrap();
                let (lm, _) = nll_loss_and_grad(&minus, &labels).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let g = grad.get(r, c);
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "({r},{c}): analytic {g} vs fd {fd}");
            }
        }
    }

    // Central finite differences over every parameter of a K-8-8-K model.
    #[test]
    fn backprop_matches_finite_differences() {
        let k = 4;
        let mut rng = derive_rng(7, &[3]);
        let mut worst: f64 = 0.0;
        for probe in 0..20 {
            let model = MlpModel::init(&[k, 8, 8, k], Activation::Relu, &mut rng).unwrap();
            let mut x = Matrix::zeros(3, k);
            for v in x.as_mut_slice() {
                *v = rng.random_range(-1.0..1.0);
            }
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..k)).collect();

            let cache = model.forward_cached(&x).unwrap();
            let (_, d_logits) = nll_loss_and_grad(cache.output(), &labels).unwrap();
            let grads = model.backward(&cache, &d_logits).unwrap();

            let loss_of = |m: &MlpModel| {
                let logits = m.forward(&x).unwrap();
                nll_loss_and_grad(&logits, &labels).unwrap().0
            };
            let h = 1e-5;
            for l in 0..model.num_layers() {
                for idx in 0..model.weights()[l].as_slice().len() {
                    let mut plus = model.clone();
                    plus.weights_mut()[l].as_mut_slice()[idx] += h;
                    let mut minus = model.clone();
                    minus.weights_mut()[l].as_mut_slice()[idx] -= h;
                    let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let g = grads.d_weights[l].as_slice()[idx];
                    let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-4, "probe {probe} layer {l} w[{idx}]: {g} vs {fd}");
                    worst = worst.max(rel);
                }
                for idx in 0..model.biases()[l].len() {
                    let mut plus = model.clone();
                    plus.biases_mut()[l][idx] += h;
                    let mut minus = model.clone();
                    minus.biases_mut()[l][idx] -= h;
                    let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let g = grads.d_biases[l][idx];
                    let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-4, "probe {probe} layer {l} b[{idx}]: {g} vs {fd}");
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let mut rng = derive_rng(13, &[4]);
        let model = MlpModel::init(&[2, 3, 2], Activation::Relu, &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.2], vec![0.4, -0.3]]).unwrap();
        let cfg = SgdConfig { epochs: 3, lr: 0.0, batch_size: 1 };
        let out = sgd_train(&model, &x, &[0, 1], &cfg, None, &mut rng).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn sgd_single_step_matches_hand_derivation() {
        // One linear layer, one sample, one step: scalar math done by hand.
        let mut model = MlpModel::zeros(&[2, 2], Activation::Relu).unwrap();
        model.weights_mut()[0].set(0, 0, 0.5);
        model.weights_mut()[0].set(0, 1, -0.2);
        model.weights_mut()[0].set(1, 0, 0.1);
        model.weights_mut()[0].set(1, 1, 0.3);
        model.biases_mut()[0][0] = 0.05;
        model.biases_mut()[0][1] = -0.05;
        let x = (1.0f64, 2.0f64);
        let label = 0usize;
        let lr = 0.1;

        // logits
        let z0 = 0.5 * x.0 - 0.2 * x.1 + 0.05;
        let z1 = 0.1 * x.0 + 0.3 * x.1 - 0.05;
        let m = z0.max(z1);
        let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
        let (p0, p1) = (e0 / (e0 + e1), e1 / (e0 + e1));
        // grad logits = softmax - onehot (batch of 1)
        let (g0, g1) = (p0 - 1.0, p1);
        let expect_w = [
            0.5 - lr * g0 * x.0,
            -0.2 - lr * g0 * x.1,
            0.1 - lr * g1 * x.0,
            0.3 - lr * g1 * x.1,
        ];
        let expect_b = [0.05 - lr * g0, -0.05 - lr * g1];

        let features = Matrix::from_rows(&[vec![x.0, x.1]]).unwrap();
        let cfg = SgdConfig { epochs: 1, lr, batch_size: 1 };
        let mut rng = derive_rng(1, &[0]);
        let out = sgd_train(&model, &features, &[label], &cfg, None, &mut rng).unwrap();
        for (i, e) in expect_w.iter().enumerate() {
            approx(out.weights()[0].as_slice()[i], *e, 1e-15);
        }
        for (i, e) in expect_b.iter().enumerate() {
            approx(out.biases()[0][i], *e, 1e-15);
        }
    }

    #[test]
    fn prox_mu_zero_identical_to_no_prox() {
        let mut rng = derive_rng(17, &[5]);
        let model = MlpModel::init(&[3, 4, 2], Activation::Relu, &mut rng).unwrap();
        let anchor = MlpModel::init(&[3, 4, 2], Activation::Relu, &mut rng).unwrap();
        let mut x = Matrix::zeros(8, 3);
        for v in x.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let cfg = SgdConfig { epochs: 4, lr: 0.05, batch_size: 3 };
        let a = sgd_train(&model, &x, &labels, &cfg, None, &mut derive_rng(9, &[9])).unwrap();
        let b = sgd_train(
            &model,
            &x,
            &labels,
            &cfg,
            Some((0.0, &anchor)),
            &mut derive_rng(9, &[9]),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prox_pulls_toward_anchor() {
        let mut rng = derive_rng(23, &[6]);
        let model = MlpModel::init(&[2, 4, 2], Activation::Relu, &mut rng).unwrap();
        let mut x = Matrix::zeros(16, 2);
        for v in x.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        let labels: Vec<usize> = (0..16).map(|i| i % 2).collect();
        let cfg = SgdConfig { epochs: 20, lr: 0.1, batch_size: 4 };
        let free = sgd_train(&model, &x, &labels, &cfg, None, &mut derive_rng(2, &[2])).unwrap();
        let prox = sgd_train(
            &model,
            &x,
            &labels,
            &cfg,
            Some((10.0, &model)),
            &mut derive_rng(2, &[2]),
        )
        .unwrap();
        let dist = |a: &MlpModel, b: &MlpModel| {
            let mut d = 0.0;
            for (wa, wb) in a.weights().iter().zip(b.weights()) {
                for (x, y) in wa.as_slice().iter().zip(wb.as_slice()) {
                    d += (x - y) * (x - y);
                }
            }
            d
        };
        assert!(dist(&prox, &model) < dist(&free, &model));
    }

    #[test]
    fn sgd_empty_data_is_usage_error() {
        let model = MlpModel::zeros(&[2, 2], Activation::Relu).unwrap();
        let cfg = SgdConfig { epochs: 1, lr: 0.1, batch_size: 1 };
        let mut rng = derive_rng(1, &[1]);
        assert!(matches!(
            sgd_train(&model, &Matrix::zeros(0, 2), &[], &cfg, None, &mut rng),
            Err(Error::Usage(_))
        ));
    }
}
