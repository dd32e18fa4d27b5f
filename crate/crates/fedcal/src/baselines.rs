//! Comparison calibrators operating on the final global model's logits:
//! probability ensembling, temperature averaging, global-validation
//! temperature scaling, and per-sample temperature regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlp::softmax;
use crate::scalers::{Calibrator, TemperatureScaler, TEMP_MAX, TEMP_MIN};

/// Mean of the scalers' calibrated probabilities; rows stay on the simplex.
pub fn ens_apply(scalers: &[&dyn Calibrator], logits: &Matrix) -> Result<Matrix> {
    if scalers.is_empty() {
        return Err(Error::Usage("ensemble of zero scalers".into()));
    }
    let mut acc = Matrix::zeros(logits.rows(), logits.cols());
    let w = 1.0 / scalers.len() as f64;
    for scaler in scalers {
        let probs = scaler.calibrate(logits)?;
        acc.add_scaled(&probs, w)?;
    }
    Ok(acc)
}

/// A fitted collection of client scalers ensembled by probability averaging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemperatureEnsemble {
    pub members: Vec<TemperatureScaler>,
}

impl Calibrator for TemperatureEnsemble {
    fn calibrate(&self, logits: &Matrix) -> Result<Matrix> {
        let refs: Vec<&dyn Calibrator> =
            self.members.iter().map(|m| m as &dyn Calibrator).collect();
        ens_apply(&refs, logits)
    }
}

/// How client temperatures combine into the shared divisor. The reference
/// formulation's text says average while its equation sums; mean is the
/// default, sum is kept for fidelity experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TempCombine {
    Mean,
    Sum,
}

/// softmax(logits / mean(T_c)).
pub fn avgt_apply(temperatures: &[f64], logits: &Matrix) -> Result<Matrix> {
    avgt_apply_mode(temperatures, logits, TempCombine::Mean)
}

pub fn avgt_apply_mode(
    temperatures: &[f64],
    logits: &Matrix,
    mode: TempCombine,
) -> Result<Matrix> {
    if temperatures.is_empty() {
        return Err(Error::Usage("averaging zero temperatures".into()));
    }
    if temperatures.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidValue("non-positive temperature".into()));
    }
    let total: f64 = temperatures.iter().sum();
    let divisor = match mode {
        TempCombine::Mean => total / temperatures.len() as f64,
        TempCombine::Sum => total,
    };
    let mut scaled = logits.clone();
    scaled.scale(1.0 / divisor);
    Ok(softmax(&scaled))
}

/// Temperature scaling on a pooled global validation set. A simulation-only
/// privilege used as the reference point in reports.
pub fn val_ts_fit(logits: &Matrix, labels: &[usize]) -> Result<TemperatureScaler> {
    TemperatureScaler::fit(logits, labels)
}

/// Per-sample temperature regression: T(x) = clamp(W . logits(x) + b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTempModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearTempModel {
    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    /// Per-row temperature, clamped to [TEMP_MIN, TEMP_MAX].
    pub fn temperature_for(&self, logit_row: &[f64]) -> f64 {
        let raw: f64 = self
            .weights
            .iter()
            .zip(logit_row)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias;
        raw.clamp(TEMP_MIN, TEMP_MAX)
    }
}

/// FedAvg of client linear-temperature models: elementwise mean.
pub fn lrts_aggregate(models: &[LinearTempModel]) -> Result<LinearTempModel> {
    let first = models.first().ok_or_else(|| Error::Usage("no models to aggregate".into()))?;
    let k = first.num_classes();
    if models.iter().any(|m| m.num_classes() != k) {
        return Err(Error::Usage("mixed widths in linear temperature models".into()));
    }
    let n = models.len() as f64;
    let mut weights = vec![0.0; k];
    let mut bias = 0.0;
    for m in models {
        for (acc, w) in weights.iter_mut().zip(&m.weights) {
            *acc += w / n;
        }
        bias += m.bias / n;
    }
    Ok(LinearTempModel { weights, bias })
}

/// Fit one client's model: scalar temperature by NLL, then least squares of
/// (W . logits + b) onto that constant target.
pub fn lrts_fit_client(logits: &Matrix, labels: &[usize]) -> Result<LinearTempModel> {
    let t = TemperatureScaler::fit(logits, labels)?.temperature();
    lrts_regress(logits, t)
}

/// Ridge-damped normal equations for the constant target; the damping
/// (1e-6, on W only) keeps the system nonsingular, and the minimizer is
/// W = 0, b = target exactly.
pub fn lrts_regress(logits: &Matrix, target: f64) -> Result<LinearTempModel> {
    if logits.rows() == 0 {
        return Err(Error::Usage("regression on empty validation data".into()));
    }
    let k = logits.cols();
    let dim = k + 1;
    let mut a = vec![vec![0.0f64; dim]; dim];
    let mut rhs = vec![0.0f64; dim];
    for r in 0..logits.rows() {
        let row = logits.row(r);
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
            a[i][k] += row[i];
            a[k][i] += row[i];
            rhs[i] += row[i] * target;
        }
        a[k][k] += 1.0;
        rhs[k] += target;
    }
    for i in 0..k {
        a[i][i] += 1e-6;
    }
    let solution = solve_linear_system(a, rhs)?;
    Ok(LinearTempModel {
        weights: solution[..k].to_vec(),
        bias: solution[k],
    })
}

/// softmax(logits_i / T(logits_i)) per row.
pub fn lrts_apply(model: &LinearTempModel, logits: &Matrix) -> Result<Matrix> {
    if logits.cols() != model.num_classes() {
        return Err(Error::Dimension(format!(
            "{} logit cols vs {} regression weights",
            logits.cols(),
            model.num_classes()
        )));
    }
    let mut scaled = logits.clone();
    for r in 0..scaled.rows() {
        let t = model.temperature_for(logits.row(r));
        for v in scaled.row_mut(r) {
            *v /= t;
        }
    }
    Ok(softmax(&scaled))
}

impl Calibrator for LinearTempModel {
    fn calibrate(&self, logits: &Matrix) -> Result<Matrix> {
        lrts_apply(self, logits)
    }
}

/// Gaussian elimination with partial pivoting.
fn solve_linear_system(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::InvalidValue("singular regression system".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row][j] -= factor * a[col][j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row][j] * x[j];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::scalers::descending_order;
    use rand::Rng;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn ens_single_scaler_is_direct_application() {
        let logits = Matrix::from_rows(&[vec![1.0, -1.0, 0.5]]).unwrap();
        let t = TemperatureScaler::new(2.0).unwrap();
        let direct = t.apply(&logits);
        let ens = ens_apply(&[&t], &logits).unwrap();
        for (x, y) in ens.as_slice().iter().zip(direct.as_slice()) {
            approx(*x, *y, 1e-15);
        }
    }

    #[test]
    fn ens_of_identical_scalers_is_one_application() {
        let logits = Matrix::from_rows(&[vec![2.0, 0.0], vec![-1.0, 1.0]]).unwrap();
        let t = TemperatureScaler::new(3.0).unwrap();
        let direct = t.apply(&logits);
        let ens = ens_apply(&[&t, &t, &t], &logits).unwrap();
        for (x, y) in ens.as_slice().iter().zip(direct.as_slice()) {
            approx(*x, *y, 1e-12);
        }
    }

    #[test]
    fn ens_two_temperatures_hand_computed() {
        let logits = Matrix::from_rows(&[vec![4.0, 0.0]]).unwrap();
        let t1 = TemperatureScaler::new(1.0).unwrap();
        let t20 = TemperatureScaler::new(20.0).unwrap();
        let ens = ens_apply(&[&t1, &t20], &logits).unwrap();
        let p1 = 4.0f64.exp() / (4.0f64.exp() + 1.0);
        let p2 = 0.2f64.exp() / (0.2f64.exp() + 1.0);
        approx(ens.get(0, 0), (p1 + p2) / 2.0, 1e-15);
        approx(ens.get(0, 1), 1.0 - (p1 + p2) / 2.0, 1e-12);
    }

    #[test]
    fn ens_rows_stay_on_simplex() {
        let mut rng = derive_rng(81, &[0]);
        let mut logits = Matrix::zeros(32, 5);
        for v in logits.as_mut_slice() {
            *v = rng.random_range(-4.0..4.0);
        }
        let a = TemperatureScaler::new(0.7).unwrap();
        let b = TemperatureScaler::new(5.0).unwrap();
        let ens = ens_apply(&[&a, &b], &logits).unwrap();
        for r in 0..ens.rows() {
            let sum: f64 = ens.row(r).iter().sum();
            approx(sum, 1.0, 1e-9);
        }
    }

    /// A probability map that rotates class mass; valid output, no order
    /// guarantee. Ensembling such scalers can move the argmax, which is why
    /// Ens, unlike the temperature family, carries no ranking contract.
    struct RotatingScaler {
        shift: usize,
    }

    impl Calibrator for RotatingScaler {
        fn calibrate(&self, logits: &Matrix) -> Result<Matrix> {
            let p = softmax(logits);
            let k = p.cols();
            let mut out = Matrix::zeros(p.rows(), k);
            for r in 0..p.rows() {
                for c in 0..k {
                    out.set(r, (c + self.shift) % k, p.get(r, c));
                }
            }
            Ok(out)
        }
    }

    #[test]
    fn ens_may_change_argmax_without_order_preserving_members() {
        let logits = Matrix::from_rows(&[vec![1.0, 0.5, -2.0]]).unwrap();
        let raw_argmax = descending_order(softmax(&logits).row(0))[0];
        assert_eq!(raw_argmax, 0);
        let a = RotatingScaler { shift: 1 };
        let b = RotatingScaler { shift: 2 };
        let ens = ens_apply(&[&a, &b], &logits).unwrap();
        let ens_argmax = descending_order(ens.row(0))[0];
        assert_ne!(ens_argmax, raw_argmax);
        let sum: f64 = ens.row(0).iter().sum();
        approx(sum, 1.0, 1e-12);
    }

    #[test]
    fn avgt_unit_temperatures_is_plain_softmax() {
        let logits = Matrix::from_rows(&[vec![1.5, -0.5, 0.0]]).unwrap();
        let out = avgt_apply(&[1.0, 1.0, 1.0], &logits).unwrap();
        assert_eq!(out, softmax(&logits));
    }

    #[test]
    fn avgt_mean_identity() {
        let logits = Matrix::from_rows(&[vec![3.0, 1.0], vec![-2.0, 2.0]]).unwrap();
        let avg = avgt_apply(&[1.0, 3.0], &logits).unwrap();
        let single = TemperatureScaler::new(2.0).unwrap().apply(&logits);
        for (x, y) in avg.as_slice().iter().zip(single.as_slice()) {
            approx(*x, *y, 1e-15);
        }
    }

    #[test]
    fn avgt_sum_mode_divides_by_total() {
        let logits = Matrix::from_rows(&[vec![3.0, 1.0], vec![-2.0, 2.0]]).unwrap();
        let summed = avgt_apply_mode(&[1.0, 3.0], &logits, TempCombine::Sum).unwrap();
        let single = TemperatureScaler::new(4.0).unwrap().apply(&logits);
        for (x, y) in summed.as_slice().iter().zip(single.as_slice()) {
            approx(*x, *y, 1e-15);
        }
    }

    #[test]
    fn avgt_preserves_argmax() {
        let mut rng = derive_rng(82, &[1]);
        for _ in 0..50 {
            let row: Vec<f64> = (0..7).map(|_| rng.random_range(-5.0..5.0)).collect();
            let logits = Matrix::from_rows(&[row.clone()]).unwrap();
            let temps: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..10.0)).collect();
            let out = avgt_apply(&temps, &logits).unwrap();
            assert_eq!(descending_order(&row)[0], descending_order(out.row(0))[0]);
        }
    }

    #[test]
    fn equal_client_temperatures_collapse_to_one_scaler() {
        let mut rng = derive_rng(83, &[2]);
        let mut logits = Matrix::zeros(16, 4);
        for v in logits.as_mut_slice() {
            *v = rng.random_range(-3.0..3.0);
        }
        let t = 1.7;
        let single = TemperatureScaler::new(t).unwrap();
        let direct = single.apply(&logits);
        let avgt = avgt_apply(&[t; 5], &logits).unwrap();
        let scalers: Vec<TemperatureScaler> =
            (0..5).map(|_| TemperatureScaler::new(t).unwrap()).collect();
        let refs: Vec<&dyn Calibrator> = scalers.iter().map(|s| s as &dyn Calibrator).collect();
        let ens = ens_apply(&refs, &logits).unwrap();
        for i in 0..direct.as_slice().len() {
            approx(avgt.as_slice()[i], direct.as_slice()[i], 1e-12);
            approx(ens.as_slice()[i], direct.as_slice()[i], 1e-12);
        }
    }

    #[test]
    fn val_ts_delegates_to_temperature_fit() {
        let mut rng = derive_rng(84, &[3]);
        let mut logits = Matrix::zeros(64, 4);
        for v in logits.as_mut_slice() {
            *v = rng.random_range(-4.0..4.0);
        }
        let labels: Vec<usize> = (0..64).map(|_| rng.random_range(0..4)).collect();
        let a = val_ts_fit(&logits, &labels).unwrap();
        let b = TemperatureScaler::fit(&logits, &labels).unwrap();
        assert_eq!(a.temperature(), b.temperature());
    }

    #[test]
    fn lrts_damped_closed_form_predicts_the_constant() {
        let mut rng = derive_rng(85, &[4]);
        let mut logits = Matrix::zeros(40, 5);
        for v in logits.as_mut_slice() {
            *v = rng.random_range(-6.0..6.0);
        }
        let target = 2.75;
        let model = lrts_regress(&logits, target).unwrap();
        for r in 0..logits.rows() {
            let t = model.temperature_for(logits.row(r));
            approx(t, target, 1e-6);
        }
    }

    #[test]
    fn lrts_equal_targets_give_equal_models() {
        let mut rng = derive_rng(86, &[5]);
        let mut a = Matrix::zeros(30, 3);
        let mut b = Matrix::zeros(50, 3);
        for v in a.as_mut_slice() {
            *v = rng.random_range(-2.0..2.0);
        }
        for v in b.as_mut_slice() {
            *v = rng.random_range(-2.0..2.0);
        }
        let ma = lrts_regress(&a, 1.9).unwrap();
        let mb = lrts_regress(&b, 1.9).unwrap();
        for (x, y) in ma.weights.iter().zip(&mb.weights) {
            approx(*x, *y, 1e-9);
        }
        approx(ma.bias, mb.bias, 1e-9);
    }

    #[test]
    fn lrts_aggregate_is_elementwise_mean() {
        let a = LinearTempModel { weights: vec![1.0, 0.0], bias: 2.0 };
        let b = LinearTempModel { weights: vec![0.0, 2.0], bias: 4.0 };
        let mean = lrts_aggregate(&[a, b]).unwrap();
        assert_eq!(mean.weights, vec![0.5, 1.0]);
        assert_eq!(mean.bias, 3.0);
    }

    #[test]
    fn lrts_identity_settings_reduce_to_softmax() {
        let logits = Matrix::from_rows(&[vec![1.0, 0.0, -1.0]]).unwrap();
        let model = LinearTempModel { weights: vec![0.0; 3], bias: 1.0 };
        assert_eq!(lrts_apply(&model, &logits).unwrap(), softmax(&logits));
    }

    #[test]
    fn lrts_clamps_low_predicted_temperature() {
        let logits = Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let model = LinearTempModel { weights: vec![0.0; 2], bias: 0.001 };
        assert_eq!(model.temperature_for(logits.row(0)), TEMP_MIN);
        let out = lrts_apply(&model, &logits).unwrap();
        assert!(out.is_finite());
        let expected = TemperatureScaler::new(TEMP_MIN).unwrap().apply(&logits);
        for (x, y) in out.as_slice().iter().zip(expected.as_slice()) {
            approx(*x, *y, 1e-15);
        }
    }

    #[test]
    fn lrts_preserves_argmax() {
        let mut rng = derive_rng(87, &[6]);
        let model = LinearTempModel {
            weights: vec![0.01, -0.02, 0.03, 0.0],
            bias: 1.5,
        };
        for _ in 0..50 {
            let row: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let logits = Matrix::from_rows(&[row.clone()]).unwrap();
            let out = lrts_apply(&model, &logits).unwrap();
            assert_eq!(descending_order(&row)[0], descending_order(out.row(0))[0]);
        }
    }
}
