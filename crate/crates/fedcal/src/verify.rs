//! Self-check suites: naive reference implementations run against the
//! library's fast paths. Each check is a brute-force or finite-difference
//! re-derivation that shares no code with the implementation it validates.

use rand::Rng;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::matching::{alignment_dot, apply_permutation, solve_lap, weight_matching, PermutationSet};
use crate::metrics::{ece, topk_accuracy, PredictionSet};
use crate::mlp::{nll_loss_and_grad, softmax, Activation, MlpModel};
use crate::rng::derive_rng;
use crate::scalers::{descending_order, OpScaler, TemperatureScaler};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &'static str, detail: String) -> Self {
        CheckResult { name, passed: true, detail }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        CheckResult { name, passed: false, detail }
    }
}

/// Run every check. `quick` trims the sample counts for interactive use;
/// the full scale matches the acceptance suite.
pub fn run_all(quick: bool) -> Result<Vec<CheckResult>> {
    let scale = if quick { 1 } else { 5 };
    Ok(vec![
        check_ece_oracle(200 * scale, 1)?,
        check_order_preservation(2_000 * scale, 2)?,
        check_lap_brute_force(40 * scale, 3)?,
        check_permutation_symmetry(4 * scale, 100, 4)?,
        check_planted_permutation(2 * scale, 64, 5)?,
        check_classifier_gradients(4 * scale, 6)?,
        check_scaler_gradients(4 * scale, 7)?,
        check_temp_fit_grid(10 * scale, 8)?,
    ])
}

/// Random prediction set: softmax of scaled random logits, labels biased
/// toward the argmax so accuracies vary.
fn random_prediction_set<R: Rng>(rng: &mut R, max_n: usize, max_k: usize) -> PredictionSet {
    let n = rng.random_range(1..=max_n);
    let k = rng.random_range(2..=max_k);
    let sharp = rng.random_range(0.3..8.0);
    let mut logits = Matrix::zeros(n, k);
    for v in logits.as_mut_slice() {
        *v = rng.random_range(-1.0..1.0) * sharp;
    }
    let probs = softmax(&logits);
    let labels: Vec<usize> = (0..n)
        .map(|r| {
            if rng.random_range(0.0..1.0) < 0.5 {
                descending_order(probs.row(r))[0]
            } else {
                rng.random_range(0..k)
            }
        })
        .collect();
    PredictionSet::new(probs, labels).unwrap()
}

/// ECE against an independent per-sample re-binning with naive loops.
pub fn check_ece_oracle(num_sets: usize, seed: u64) -> Result<CheckResult> {
    let name = "ece-brute-force-oracle";
    let mut rng = derive_rng(seed, &[101]);
    let bin_choices = [1usize, 10, 15];
    let mut worst = 0.0f64;
    for set_idx in 0..num_sets {
        let preds = random_prediction_set(&mut rng, 500, 20);
        let m = bin_choices[set_idx % bin_choices.len()];
        let report = ece(&preds, m)?;

        // Oracle: naive loops, nothing shared with the implementation.
        let n = preds.len();
        let k = preds.num_classes();
        let mut counts = vec![0usize; m];
        let mut conf_sum = vec![0.0f64; m];
        let mut correct = vec![0usize; m];
        for r in 0..n {
            let row = preds.probs().row(r);
            let mut best = 0usize;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            let conf = row[best];
            let mut bin = 0usize;
            for b in 1..=m {
                let lower = (b - 1) as f64 / m as f64;
                let upper = b as f64 / m as f64;
                if conf > lower && conf <= upper {
                    bin = b - 1;
                    break;
                }
            }
            counts[bin] += 1;
            conf_sum[bin] += conf;
            if best == preds.labels()[r] {
                correct[bin] += 1;
            }
        }
        let mut oracle_ece = 0.0;
        for b in 0..m {
            if counts[b] == 0 {
                continue;
            }
            let conf = conf_sum[b] / counts[b] as f64;
            let acc = correct[b] as f64 / counts[b] as f64;
            oracle_ece += counts[b] as f64 / n as f64 * (conf - acc).abs();
        }

        if report.bin_counts != counts {
            return Ok(CheckResult::fail(
                name,
                format!("set {set_idx}: bin counts differ: {:?} vs {:?}", report.bin_counts, counts),
            ));
        }
        let diff = (report.ece - oracle_ece).abs();
        worst = worst.max(diff);
        if diff > 1e-12 {
            return Ok(CheckResult::fail(
                name,
                format!("set {set_idx}: |{} - {}| = {diff}", report.ece, oracle_ece),
            ));
        }
    }
    Ok(CheckResult::pass(
        name,
        format!("{num_sets} prediction sets, max |diff| = {worst:.3e}"),
    ))
}

/// Argsort preservation of the order-preserving scaler over random rows,
/// the reference ordering fixture, and exact top-k equality.
pub fn check_order_preservation(rows_per_width: usize, seed: u64) -> Result<CheckResult> {
    let name = "order-preservation";
    let mut rng = derive_rng(seed, &[102]);

    // Reference fixture: input [3,4,2,2] keeps ordering 2nd > 1st > 3rd = 4th.
    let scaler = OpScaler::init(4, 8, &mut rng)?;
    let fixture = Matrix::from_rows(&[vec![3.0, 4.0, 2.0, 2.0]]).unwrap();
    let out = scaler.apply(&fixture)?;
    let row = out.row(0);
    if !(row[1] > row[0] && row[0] > row[2] && row[2] == row[3]) {
        return Ok(CheckResult::fail(name, format!("fixture ordering violated: {row:?}")));
    }

    let mut checked = 0usize;
    for &k in &[3usize, 10, 100] {
        let scaler = OpScaler::init(k, 16, &mut rng)?;
        let mut logits = Matrix::zeros(rows_per_width, k);
        for v in logits.as_mut_slice() {
            *v = rng.random_range(-8.0..8.0);
        }
        let probs = scaler.apply(&logits)?;
        for r in 0..rows_per_width {
            if descending_order(logits.row(r)) != descending_order(probs.row(r)) {
                return Ok(CheckResult::fail(
                    name,
                    format!("k={k} row {r}: ranking changed"),
                ));
            }
            checked += 1;
        }
    }

    // Exact top-k equality on an evaluation set.
    let k = 10;
    let n = 500;
    let scaler = OpScaler::init(k, 16, &mut rng)?;
    let mut logits = Matrix::zeros(n, k);
    for v in logits.as_mut_slice() {
        *v = rng.random_range(-5.0..5.0);
    }
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let raw = PredictionSet::new(softmax(&logits), labels.clone())?;
    let scaled = PredictionSet::new(scaler.apply(&logits)?, labels)?;
    for kk in 1..=k {
        let a = topk_accuracy(&raw, kk)?;
        let b = topk_accuracy(&scaled, kk)?;
        if a != b {
            return Ok(CheckResult::fail(
                name,
                format!("top-{kk} accuracy changed: {a} vs {b}"),
            ));
        }
    }

    Ok(CheckResult::pass(name, format!("{checked} rows, zero violations")))
}

/// solve_lap against factorial enumeration for n <= 6.
pub fn check_lap_brute_force(num_matrices: usize, seed: u64) -> Result<CheckResult> {
    let name = "lap-exactness";
    let mut rng = derive_rng(seed, &[103]);
    for trial in 0..num_matrices {
        let n = rng.random_range(1..=6);
        let mut score = Matrix::zeros(n, n);
        for v in score.as_mut_slice() {
            *v = rng.random_range(-10.0..10.0);
        }
        let p = solve_lap(&score)?;
        let ours: f64 = p.iter().enumerate().map(|(i, &j)| score.get(i, j)).sum();

        let mut best = f64::NEG_INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        loop {
            let val: f64 = perm.iter().enumerate().map(|(i, &j)| score.get(i, j)).sum();
            if val > best {
                best = val;
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        if (ours - best).abs() > 1e-9 {
            return Ok(CheckResult::fail(
                name,
                format!("matrix {trial} (n={n}): {ours} vs brute force {best}"),
            ));
        }
    }
    Ok(CheckResult::pass(name, format!("{num_matrices} matrices, zero mismatches")))
}

fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// apply_permutation leaves the computed function unchanged.
pub fn check_permutation_symmetry(
    num_pairs: usize,
    num_inputs: usize,
    seed: u64,
) -> Result<CheckResult> {
    let name = "permutation-symmetry";
    let mut rng = derive_rng(seed, &[104]);
    let mut worst = 0.0f64;
    for pair in 0..num_pairs {
        let model = MlpModel::init(&[6, 12, 10, 4], Activation::Relu, &mut rng)?;
        let perms: Vec<Vec<usize>> = [12usize, 10]
            .iter()
            .map(|&w| {
                let mut p: Vec<usize> = (0..w).collect();
                for i in (1..w).rev() {
                    let j = rng.random_range(0..=i);
                    p.swap(i, j);
                }
                p
            })
            .collect();
        let permuted = apply_permutation(&model, &PermutationSet::new(perms)?)?;
        let mut x = Matrix::zeros(num_inputs, 6);
        for v in x.as_mut_slice() {
            *v = rng.random_range(-3.0..3.0);
        }
        let a = model.forward(&x)?;
        let b = permuted.forward(&x)?;
        let max_diff = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(max_diff);
        if max_diff >= 1e-9 {
            return Ok(CheckResult::fail(name, format!("pair {pair}: max diff {max_diff}")));
        }
    }
    Ok(CheckResult::pass(
        name,
        format!("{num_pairs} model/permutation pairs, max |diff| = {worst:.3e}"),
    ))
}

/// weight_matching recovers a hidden permutation planted in a copy.
pub fn check_planted_permutation(
    instances: usize,
    hidden: usize,
    seed: u64,
) -> Result<CheckResult> {
    let name = "planted-permutation-recovery";
    let mut rng = derive_rng(seed, &[105]);
    for inst in 0..instances {
        let k = 10;
        let reference = OpScaler::init(k, hidden, &mut rng)?;
        let perms: Vec<Vec<usize>> = vec![hidden; 2]
            .iter()
            .map(|&w| {
                let mut p: Vec<usize> = (0..w).collect();
                for i in (1..w).rev() {
                    let j = rng.random_range(0..=i);
                    p.swap(i, j);
                }
                p
            })
            .collect();
        let planted = apply_permutation(reference.backbone(), &PermutationSet::new(perms)?)?;
        let recovered = weight_matching(reference.backbone(), &planted)?;
        let aligned = apply_permutation(&planted, &recovered)?;
        let self_dot = alignment_dot(reference.backbone(), reference.backbone())?;
        let dot = alignment_dot(reference.backbone(), &aligned)?;
        if (dot - self_dot).abs() >= 1e-9 {
            return Ok(CheckResult::fail(
                name,
                format!("instance {inst}: dot {dot} vs self {self_dot}"),
            ));
        }
    }
    Ok(CheckResult::pass(name, format!("{instances} instances recovered exactly")))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Classifier backprop against central finite differences (h = 1e-5).
pub fn check_classifier_gradients(probes: usize, seed: u64) -> Result<CheckResult> {
    let name = "classifier-gradient-check";
    let k = 5;
    let mut rng = derive_rng(seed, &[106]);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for probe in 0..probes {
        let model = MlpModel::init(&[k, 8, 8, k], Activation::Relu, &mut rng)?;
        let mut x = Matrix::zeros(4, k);
        for v in x.as_mut_slice() {
            *v = rng.random_range(-1.5..1.5);
        }
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..k)).collect();
        let cache = model.forward_cached(&x)?;
        let (_, d_logits) = nll_loss_and_grad(cache.output(), &labels)?;
        let grads = model.backward(&cache, &d_logits)?;
        let loss_of = |m: &MlpModel| -> Result<f64> {
            Ok(nll_loss_and_grad(&m.forward(&x)?, &labels)?.0)
        };
        for l in 0..model.num_layers() {
            for idx in 0..model.weights()[l].as_slice().len() {
                let mut plus = model.clone();
                plus.weights_mut()[l].as_mut_slice()[idx] += h;
                let mut minus = model.clone();
                minus.weights_mut()[l].as_mut_slice()[idx] -= h;
                let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
                let rel = relative_error(grads.d_weights[l].as_slice()[idx], fd);
                worst = worst.max(rel);
                if rel >= 1e-4 {
                    return Ok(CheckResult::fail(
                        name,
                        format!("probe {probe} layer {l} w[{idx}]: rel error {rel:.3e}"),
                    ));
                }
            }
        }
    }
    Ok(CheckResult::pass(
        name,
        format!("{probes} probes, worst rel error {worst:.3e}"),
    ))
}

/// Order-preserving-scaler backprop against finite differences at tie-free
/// points (h = 1e-5, rel < 1e-3).
pub fn check_scaler_gradients(probes: usize, seed: u64) -> Result<CheckResult> {
    let name = "scaler-gradient-check";
    let mut rng = derive_rng(seed, &[107]);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for probe in 0..probes {
        let k = 4;
        let scaler = OpScaler::init(k, 6, &mut rng)?;
        let mut logits = Matrix::zeros(3, k);
        for v in logits.as_mut_slice() {
            *v = rng.random_range(-2.0..2.0);
        }
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..k)).collect();
        let (_, grads) = scaler.nll_gradients(&logits, &labels)?;
        for l in 0..scaler.backbone().num_layers() {
            for idx in 0..scaler.backbone().weights()[l].as_slice().len() {
                let mut plus = scaler.clone();
                plus.backbone_mut().weights_mut()[l].as_mut_slice()[idx] += h;
                let mut minus = scaler.clone();
                minus.backbone_mut().weights_mut()[l].as_mut_slice()[idx] -= h;
                let fd = (plus.nll(&logits, &labels)? - minus.nll(&logits, &labels)?) / (2.0 * h);
                let rel = relative_error(grads.d_weights[l].as_slice()[idx], fd);
                worst = worst.max(rel);
                if rel >= 1e-3 {
                    return Ok(CheckResult::fail(
                        name,
                        format!("probe {probe} layer {l} w[{idx}]: rel error {rel:.3e}"),
                    ));
                }
            }
        }
    }
    Ok(CheckResult::pass(
        name,
        format!("{probes} probes, worst rel error {worst:.3e}"),
    ))
}

/// Golden-section temperature fit against a 0.001-step grid search.
pub fn check_temp_fit_grid(num_sets: usize, seed: u64) -> Result<CheckResult> {
    let name = "temperature-fit-vs-grid";
    let mut rng = derive_rng(seed, &[108]);
    let mut worst = 0.0f64;
    for set_idx in 0..num_sets {
        let n = 60;
        let k = 5;
        let inflation = rng.random_range(0.3..5.0);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0f64..2.0)).collect();
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let p: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
            let u: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut label = k - 1;
            for (idx, &pi) in p.iter().enumerate() {
                acc += pi;
                if u <= acc {
                    label = idx;
                    break;
                }
            }
            rows.push(p.iter().map(|&v| inflation * v.ln()).collect::<Vec<f64>>());
            labels.push(label);
        }
        let logits = Matrix::from_rows(&rows).unwrap();
        let fitted = TemperatureScaler::fit(&logits, &labels)?.temperature();

        // Independent grid: mean NLL with a naive log-sum-exp loop.
        let nll_at = |t: f64| -> f64 {
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                let row = logits.row(r);
                let max = row.iter().map(|v| v / t).fold(f64::NEG_INFINITY, f64::max);
                let lse: f64 = row.iter().map(|v| (v / t - max).exp()).sum::<f64>().ln() + max;
                total += lse - row[y] / t;
            }
            total / labels.len() as f64
        };
        let mut best_t = 0.05;
        let mut best_val = f64::INFINITY;
        let mut i = 0usize;
        loop {
            let t = 0.05 + 0.001 * i as f64;
            if t > 20.0 {
                break;
            }
            let val = nll_at(t);
            if val < best_val {
                best_val = val;
                best_t = t;
            }
            i += 1;
        }
        let diff = (fitted - best_t).abs();
        worst = worst.max(diff);
        if diff > 0.01 {
            return Ok(CheckResult::fail(
                name,
                format!("set {set_idx}: fit {fitted} vs grid {best_t}"),
            ));
        }
    }
    Ok(CheckResult::pass(
        name,
        format!("{num_sets} logit sets, worst |diff| = {worst:.4}"),
    ))
}
