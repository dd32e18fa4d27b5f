//! Post-hoc calibration scalers: temperature scaling and the
//! order-preserving MLP scaler.
//!
//! The order-preserving scaler maps logits x to S^-1 U w(x), where S sorts x
//! descending, U is upper-triangular ones, and w couples a backbone MLP's
//! outputs with the sorted gaps of x. Gap terms are nonnegative and vanish
//! exactly on ties, so the scaled logits always carry the same ranking (and
//! the same ties) as the input.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlp::{nll_loss_and_grad, sigmoid, softmax, softplus, Activation, MlpModel};

pub const TEMP_MIN: f64 = 0.05;
pub const TEMP_MAX: f64 = 20.0;

/// Anything that maps raw logits to calibrated probabilities.
pub trait Calibrator {
    fn calibrate(&self, logits: &Matrix) -> Result<Matrix>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureScaler {
    temperature: f64,
}

impl TemperatureScaler {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(TEMP_MIN..=TEMP_MAX).contains(&temperature) {
            return Err(Error::InvalidValue(format!(
                "temperature {temperature} outside [{TEMP_MIN}, {TEMP_MAX}]"
            )));
        }
        Ok(TemperatureScaler { temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// softmax(logits / T); never changes a row's argmax.
    pub fn apply(&self, logits: &Matrix) -> Matrix {
        let mut scaled = logits.clone();
        scaled.scale(1.0 / self.temperature);
        softmax(&scaled)
    }

    /// Mean NLL of softmax(logits / T) on the given labels.
    pub fn nll(&self, logits: &Matrix, labels: &[usize]) -> Result<f64> {
        let mut scaled = logits.clone();
        scaled.scale(1.0 / self.temperature);
        Ok(nll_loss_and_grad(&scaled, labels)?.0)
    }

    /// Fit T by minimizing validation NLL with a golden-section search over
    /// log T in [log TEMP_MIN, log TEMP_MAX], to 1e-4 absolute in log T.
    pub fn fit(logits: &Matrix, labels: &[usize]) -> Result<TemperatureScaler> {
        if logits.rows() == 0 {
            return Err(Error::Usage("temperature fit on empty batch".into()));
        }
        let objective = |log_t: f64| -> Result<f64> {
            let mut scaled = logits.clone();
            scaled.scale((-log_t).exp());
            Ok(nll_loss_and_grad(&scaled, labels)?.0)
        };
        let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut lo = TEMP_MIN.ln();
        let mut hi = TEMP_MAX.ln();
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        let mut fc = objective(c)?;
        let mut fd = objective(d)?;
        while hi - lo > 1e-4 {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - inv_phi * (hi - lo);
                fc = objective(c)?;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + inv_phi * (hi - lo);
                fd = objective(d)?;
            }
        }
        TemperatureScaler::new(((lo + hi) / 2.0).exp().clamp(TEMP_MIN, TEMP_MAX))
    }
}

impl Calibrator for TemperatureScaler {
    fn calibrate(&self, logits: &Matrix) -> Result<Matrix> {
        Ok(self.apply(logits))
    }
}

/// Order-preserving MLP scaler: a K-h-h-K backbone whose outputs weight the
/// sorted logit gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpScaler {
    backbone: MlpModel,
    num_classes: usize,
}

pub const DEFAULT_SCALER_HIDDEN: usize = 64;
pub const DEFAULT_SCALER_EPOCHS: usize = 50;
pub const DEFAULT_SCALER_LR: f64 = 0.01;
/// Scaler fits are full-batch below this size.
pub const SCALER_MAX_BATCH: usize = 256;

impl OpScaler {
    /// Glorot-initialized hidden layers with a zeroed output layer whose
    /// gap-head biases are ln(e - 1), so softplus of every head is exactly 1
    /// and the fresh scaler is the identity map: scaled logits reproduce the
    /// input up to a per-row shift that softmax ignores.
    pub fn init<R: Rng>(num_classes: usize, hidden_width: usize, rng: &mut R) -> Result<Self> {
        if num_classes < 2 || hidden_width == 0 {
            return Err(Error::Usage(format!(
                "bad scaler shape: {num_classes} classes, hidden {hidden_width}"
            )));
        }
        let mut backbone = MlpModel::init(
            &[num_classes, hidden_width, hidden_width, num_classes],
            Activation::Relu,
            rng,
        )?;
        let last = backbone.num_layers() - 1;
        for v in backbone.weights_mut()[last].as_mut_slice() {
            *v = 0.0;
        }
        let unit_gain = (std::f64::consts::E - 1.0).ln();
        let bias = &mut backbone.biases_mut()[last];
        for v in bias.iter_mut() {
            *v = unit_gain;
        }
        bias[num_classes - 1] = 0.0;
        Ok(OpScaler { backbone, num_classes })
    }

    pub fn from_backbone(backbone: MlpModel) -> Result<Self> {
        let sizes = backbone.layer_sizes();
        let k = sizes[0];
        if *sizes.last().unwrap() != k {
            return Err(Error::Usage(format!(
                "scaler backbone must map K to K, got {sizes:?}"
            )));
        }
        Ok(OpScaler { backbone, num_classes: k })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn backbone(&self) -> &MlpModel {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut MlpModel {
        &mut self.backbone
    }

    /// Scaled logits z = S^-1 U w(x), one row at a time. Ranking and ties of
    /// every output row match its input row exactly.
    pub fn scaled_logits(&self, logits: &Matrix) -> Result<Matrix> {
        if logits.cols() != self.num_classes {
            return Err(Error::Dimension(format!(
                "{} logit cols vs {} classes",
                logits.cols(),
                self.num_classes
            )));
        }
        let activations = self.backbone.forward(logits)?;
        let k = self.num_classes;
        let mut out = Matrix::zeros(logits.rows(), k);
        let mut weights = vec![0.0; k];
        for r in 0..logits.rows() {
            let x = logits.row(r);
            let a = activations.row(r);
            let order = descending_order(x);
            for i in 0..k - 1 {
                let gap = x[order[i]] - x[order[i + 1]];
                weights[i] = softplus(a[i]) * gap;
            }
            weights[k - 1] = a[k - 1];
            // z_sorted = U w: suffix sums.
            let mut suffix = 0.0;
            let out_row = out.row_mut(r);
            for i in (0..k).rev() {
                suffix += weights[i];
                out_row[order[i]] = suffix;
            }
        }
        Ok(out)
    }

    /// Calibrated probabilities softmax(scaled_logits).
    pub fn apply(&self, logits: &Matrix) -> Result<Matrix> {
        Ok(softmax(&self.scaled_logits(logits)?))
    }

    /// Mean NLL of the scaled predictions.
    pub fn nll(&self, logits: &Matrix, labels: &[usize]) -> Result<f64> {
        Ok(nll_loss_and_grad(&self.scaled_logits(logits)?, labels)?.0)
    }

    /// Gradient of the mean NLL w.r.t. backbone parameters. The sort
    /// permutation and the gap values are constants of the forward pass.
    pub(crate) fn nll_gradients(
        &self,
        logits: &Matrix,
        labels: &[usize],
    ) -> Result<(f64, crate::mlp::Gradients)> {
        let cache = self.backbone.forward_cached(logits)?;
        let activations = cache.output().clone();
        let k = self.num_classes;
        let n = logits.rows();

        let mut scaled = Matrix::zeros(n, k);
        let mut orders = Vec::with_capacity(n);
        for r in 0..n {
            let x = logits.row(r);
            let a = activations.row(r);
            let order = descending_order(x);
            let mut suffix = 0.0;
            for i in (0..k).rev() {
                let w = if i == k - 1 {
                    a[k - 1]
                } else {
                    softplus(a[i]) * (x[order[i]] - x[order[i + 1]])
                };
                suffix += w;
                scaled.set(r, order[i], suffix);
            }
            orders.push(order);
        }

        let (loss, d_scaled) = nll_loss_and_grad(&scaled, labels)?;

        // Chain through unsort, U, and the gap weighting to d(activations).
        let mut d_act = Matrix::zeros(n, k);
        for r in 0..n {
            let x = logits.row(r);
            let a = activations.row(r);
            let order = &orders[r];
            // dL/dw[j] = sum_{i<=j} dL/dz_sorted[i], prefix sums over sorted index.
            let mut prefix = 0.0;
            for j in 0..k {
                prefix += d_scaled.get(r, order[j]);
                let dv = if j == k - 1 {
                    prefix
                } else {
                    prefix * sigmoid(a[j]) * (x[order[j]] - x[order[j + 1]])
                };
                d_act.set(r, j, dv);
            }
        }
        let grads = self.backbone.backward(&cache, &d_act)?;
        Ok((loss, grads))
    }

    /// SGD on the scaled-prediction NLL. Batches of up to
    /// [`SCALER_MAX_BATCH`] samples, shuffled per epoch from `rng`.
    pub fn fit<R: Rng>(
        &self,
        logits: &Matrix,
        labels: &[usize],
        epochs: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<OpScaler> {
        if logits.rows() == 0 {
            return Err(Error::Usage("scaler fit on empty data".into()));
        }
        if logits.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} logit rows vs {} labels",
                logits.rows(),
                labels.len()
            )));
        }
        let mut fitted = self.clone();
        let mut order: Vec<usize> = (0..logits.rows()).collect();
        for _ in 0..epochs {
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(SCALER_MAX_BATCH) {
                let batch = logits.select_rows(chunk);
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let (_, grads) = fitted.nll_gradients(&batch, &batch_labels)?;
                fitted.backbone.apply_gradients(&grads, lr, None)?;
            }
        }
        Ok(fitted)
    }
}

impl Calibrator for OpScaler {
    fn calibrate(&self, logits: &Matrix) -> Result<Matrix> {
        self.apply(logits)
    }
}

/// Indices of `row` sorted by descending value; equal values keep the lower
/// original index first.
pub fn descending_order(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}
