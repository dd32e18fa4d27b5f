//! Experiment orchestration: dataset preparation, per-method federated runs,
//! post-hoc baseline evaluation, metric persistence, and sweeps.

pub mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::baselines::{lrts_aggregate, lrts_fit_client, LinearTempModel, TemperatureEnsemble};
use crate::data::{
    dirichlet_partition, generate_synthetic, parse_idx, stratified_split, ClientShard, Dataset,
    PartitionSpec,
};
use crate::error::{Error, Result};
use crate::fedsim::{
    evaluate_round, run_federation, EvalPlan, FederationRun, RoundState, ScalerKind, ScalerState,
};
use crate::linalg::Matrix;
use crate::matching::{apply_permutation, interpolate, weight_matching};
use crate::metrics::{ece, PredictionSet, ReliabilityReport};
use crate::mlp::MlpModel;
use crate::rng::derive_rng;
use crate::scalers::{Calibrator, OpScaler, TemperatureScaler};

pub use config::{
    DatasetConfig, ExperimentConfig, FedParams, Method, PartitionConfig, RunManifest,
    ALL_METHODS, SMALL_SCALER_WIDTH,
};

/// One metrics.csv line.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub round: usize,
    pub method: &'static str,
    pub beta: f64,
    pub global_ece: f64,
    pub mean_local_ece: f64,
    pub max_local_ece: f64,
    pub var_local_ece: f64,
    pub top1: f64,
    pub top3: f64,
}

pub const METRICS_HEADER: &str =
    "round,method,beta,global_ece,mean_local_ece,max_local_ece,var_local_ece,top1,top3";

impl MetricsRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.round,
            self.method,
            self.beta,
            self.global_ece,
            self.mean_local_ece,
            self.max_local_ece,
            self.var_local_ece,
            self.top1,
            self.top3
        )
    }
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub manifest: RunManifest,
    pub rows: Vec<MetricsRow>,
    pub out_dir: PathBuf,
}

/// Client shards plus the held-out pooled test set.
pub struct PreparedWorld {
    pub shards: Vec<ClientShard>,
    pub test_set: Dataset,
}

pub fn prepare_world(cfg: &ExperimentConfig) -> Result<PreparedWorld> {
    let data = match &cfg.dataset {
        DatasetConfig::Synthetic { num_classes, dim, per_class, spread } => {
            generate_synthetic(*num_classes, *dim, *per_class, *spread, cfg.seed)?
        }
        DatasetConfig::Idx { images, labels } => parse_idx(images, labels)?,
    };
    let (pool, test_set) = stratified_split(&data, cfg.test_fraction, cfg.seed)?;
    let spec = PartitionSpec {
        num_clients: cfg.partition.num_clients,
        beta: cfg.partition.beta,
        seed: cfg.seed,
        val_fraction: cfg.partition.val_fraction,
    };
    let shards = dirichlet_partition(&pool, &spec)?;
    Ok(PreparedWorld { shards, test_set })
}

/// Post-hoc calibrators fitted on a given model's validation logits.
enum PostHoc {
    Uncal,
    Temp(TemperatureScaler),
    Ens(TemperatureEnsemble),
    Lrts(LinearTempModel),
}

impl Calibrator for PostHoc {
    fn calibrate(&self, logits: &Matrix) -> Result<Matrix> {
        match self {
            PostHoc::Uncal => ScalerState::None.calibrate(logits),
            PostHoc::Temp(t) => t.calibrate(logits),
            PostHoc::Ens(e) => e.calibrate(logits),
            PostHoc::Lrts(m) => m.calibrate(logits),
        }
    }
}

/// Fit the calibrator a post-hoc method would deploy for this model.
/// Every method sees the same logits: the clients' validation sets under
/// the given (final or snapshot) global model.
fn fit_post_hoc(method: Method, model: &MlpModel, shards: &[ClientShard]) -> Result<PostHoc> {
    match method {
        Method::Uncal => Ok(PostHoc::Uncal),
        Method::ValTs => {
            let (logits, labels) = pooled_validation_logits(model, shards)?;
            Ok(PostHoc::Temp(TemperatureScaler::fit(&logits, &labels)?))
        }
        Method::Ens => {
            let members = client_temperatures(model, shards)?;
            Ok(PostHoc::Ens(TemperatureEnsemble { members }))
        }
        Method::Avgt => {
            let members = client_temperatures(model, shards)?;
            let mean = members.iter().map(|t| t.temperature()).sum::<f64>() / members.len() as f64;
            Ok(PostHoc::Temp(TemperatureScaler::new(mean)?))
        }
        Method::Lrts => {
            let mut models = Vec::new();
            for shard in shards {
                if shard.validation.is_empty() {
                    continue;
                }
                let logits = model.forward(&shard.validation.features)?;
                models.push(lrts_fit_client(&logits, &shard.validation.labels)?);
            }
            if models.is_empty() {
                return Err(Error::Usage("no client validation data for LR-TS".into()));
            }
            Ok(PostHoc::Lrts(lrts_aggregate(&models)?))
        }
        _ => Err(Error::Usage(format!("{} is not a post-hoc method", method.name()))),
    }
}

fn client_temperatures(
    model: &MlpModel,
    shards: &[ClientShard],
) -> Result<Vec<TemperatureScaler>> {
    let mut members = Vec::new();
    for shard in shards {
        if shard.validation.is_empty() {
            continue;
        }
        let logits = model.forward(&shard.validation.features)?;
        members.push(TemperatureScaler::fit(&logits, &shard.validation.labels)?);
    }
    if members.is_empty() {
        return Err(Error::Usage("no client validation data to fit scalers".into()));
    }
    Ok(members)
}

fn pooled_validation_logits(
    model: &MlpModel,
    shards: &[ClientShard],
) -> Result<(Matrix, Vec<usize>)> {
    let total: usize = shards.iter().map(|s| s.validation.len()).sum();
    if total == 0 {
        return Err(Error::Usage("no client validation data to pool".into()));
    }
    let dim = model.output_dim();
    let mut logits = Matrix::zeros(total, dim);
    let mut labels = Vec::with_capacity(total);
    let mut cursor = 0;
    for shard in shards {
        if shard.validation.is_empty() {
            continue;
        }
        let part = model.forward(&shard.validation.features)?;
        for r in 0..part.rows() {
            logits.row_mut(cursor + r).copy_from_slice(part.row(r));
        }
        labels.extend_from_slice(&shard.validation.labels);
        cursor += part.rows();
    }
    Ok((logits, labels))
}

/// Which federated runs an experiment needs.
struct RunSet {
    base: Option<FederationRun>,
    fedcal: Option<FederationRun>,
    fedcal_no_wm: Option<FederationRun>,
    fedcal_small: Option<FederationRun>,
}

fn execute_runs(
    cfg: &ExperimentConfig,
    world: &PreparedWorld,
    eval: &EvalPlan,
) -> Result<RunSet> {
    let width = cfg.fed.scaler_hidden_width;
    let mut runs = RunSet { base: None, fedcal: None, fedcal_no_wm: None, fedcal_small: None };
    if cfg.methods.iter().any(|m| m.is_post_hoc()) {
        let fed = cfg.fed_config(ScalerKind::None, width, true);
        runs.base = Some(run_federation(&world.shards, &fed, eval)?);
    }
    if cfg.methods.contains(&Method::Fedcal) {
        let fed = cfg.fed_config(ScalerKind::OpMlp, width, true);
        runs.fedcal = Some(run_federation(&world.shards, &fed, eval)?);
    }
    if cfg.methods.contains(&Method::FedcalNoWm) {
        let fed = cfg.fed_config(ScalerKind::OpMlp, width, false);
        runs.fedcal_no_wm = Some(run_federation(&world.shards, &fed, eval)?);
    }
    if cfg.methods.contains(&Method::FedcalSmall) {
        let fed = cfg.fed_config(ScalerKind::OpMlp, SMALL_SCALER_WIDTH, true);
        runs.fedcal_small = Some(run_federation(&world.shards, &fed, eval)?);
    }
    Ok(runs)
}

/// Run the full experiment: partition, federate, calibrate with every
/// configured method, and persist metrics.csv, reliability.json,
/// checkpoint.json, and manifest.json to the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let world = prepare_world(cfg)?;
    let eval = EvalPlan {
        test_set: &world.test_set,
        bins: cfg.bins,
        eval_every: cfg.eval_every,
        capture_models: true,
    };
    let runs = execute_runs(cfg, &world, &eval)?;

    let beta = cfg.partition.beta;
    let mut rows = Vec::new();
    let mut reliability: BTreeMap<String, ReliabilityReport> = BTreeMap::new();
    let mut warnings = Vec::new();

    for &method in &cfg.methods {
        if method.is_post_hoc() {
            let base = runs.base.as_ref().expect("base run exists for post-hoc methods");
            for (round, model) in &base.model_snapshots {
                let calibrator = fit_post_hoc(method, model, &world.shards)?;
                let metrics = evaluate_round(*round, model, &calibrator, &world.shards, &eval)?;
                rows.push(MetricsRow {
                    round: *round,
                    method: method.name(),
                    beta,
                    global_ece: metrics.summary.global_ece,
                    mean_local_ece: metrics.summary.mean_local_ece,
                    max_local_ece: metrics.summary.max_local_ece,
                    var_local_ece: metrics.summary.var_local_ece,
                    top1: metrics.summary.global_top1,
                    top3: metrics.top3,
                });
            }
            let final_model = &base.final_state.global_model;
            let calibrator = fit_post_hoc(method, final_model, &world.shards)?;
            reliability.insert(
                method.name().to_string(),
                global_report(final_model, &calibrator, &world.test_set, cfg.bins)?,
            );
        } else {
            let run = match method {
                Method::Fedcal => runs.fedcal.as_ref(),
                Method::FedcalNoWm => runs.fedcal_no_wm.as_ref(),
                Method::FedcalSmall => runs.fedcal_small.as_ref(),
                _ => unreachable!(),
            }
            .expect("scaler run exists for its method");
            for m in &run.history {
                rows.push(MetricsRow {
                    round: m.round,
                    method: method.name(),
                    beta,
                    global_ece: m.summary.global_ece,
                    mean_local_ece: m.summary.mean_local_ece,
                    max_local_ece: m.summary.max_local_ece,
                    var_local_ece: m.summary.var_local_ece,
                    top1: m.summary.global_top1,
                    top3: m.top3,
                });
            }
            warnings.extend(run.warnings.iter().cloned());
            reliability.insert(
                method.name().to_string(),
                global_report(
                    &run.final_state.global_model,
                    &run.final_state.global_scaler,
                    &world.test_set,
                    cfg.bins,
                )?,
            );
        }
    }

    // Persist everything; metrics.csv must be byte-stable across reruns.
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    let metrics_path = cfg.out_dir.join("metrics.csv");
    write_atomic(&metrics_path, csv.as_bytes())?;

    write_atomic(
        &cfg.out_dir.join("reliability.json"),
        serde_json::to_string_pretty(&reliability)
            .map_err(|e| Error::Usage(e.to_string()))?
            .as_bytes(),
    )?;

    let mut checkpoint: BTreeMap<String, &RoundState> = BTreeMap::new();
    if let Some(run) = &runs.base {
        checkpoint.insert("base".into(), &run.final_state);
    }
    if let Some(run) = &runs.fedcal {
        checkpoint.insert("fedcal".into(), &run.final_state);
    }
    if let Some(run) = &runs.fedcal_no_wm {
        checkpoint.insert("fedcal_no_wm".into(), &run.final_state);
    }
    if let Some(run) = &runs.fedcal_small {
        checkpoint.insert("fedcal_small".into(), &run.final_state);
    }
    write_atomic(
        &cfg.out_dir.join("checkpoint.json"),
        serde_json::to_string(&checkpoint)
            .map_err(|e| Error::Usage(e.to_string()))?
            .as_bytes(),
    )?;

    let manifest = RunManifest {
        config_hash: cfg.hash(),
        master_seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        metrics_path: metrics_path.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        warnings,
    };
    write_atomic(
        &cfg.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Usage(e.to_string()))?
            .as_bytes(),
    )?;

    Ok(ExperimentOutput { manifest, rows, out_dir: cfg.out_dir.clone() })
}

fn global_report(
    model: &MlpModel,
    calibrator: &dyn Calibrator,
    test_set: &Dataset,
    bins: usize,
) -> Result<ReliabilityReport> {
    let logits = model.forward(&test_set.features)?;
    let probs = calibrator.calibrate(&logits)?;
    let preds = PredictionSet::new(probs, test_set.labels.clone())?;
    ece(&preds, bins)
}

/// Final-round row for each method.
pub fn final_rows(rows: &[MetricsRow]) -> Vec<&MetricsRow> {
    let mut best: BTreeMap<&'static str, &MetricsRow> = BTreeMap::new();
    for row in rows {
        let entry = best.entry(row.method).or_insert(row);
        if row.round >= entry.round {
            *entry = row;
        }
    }
    let mut ordered: Vec<&MetricsRow> = Vec::new();
    for row in rows {
        if let Some(&r) = best.get(row.method) {
            if std::ptr::eq(r, row) {
                ordered.push(row);
            }
        }
    }
    ordered
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummaryRow {
    pub beta: f64,
    pub method: &'static str,
    pub mean_global_ece: f64,
    pub std_global_ece: f64,
    pub mean_top1: f64,
    pub n_seeds: usize,
    /// (best baseline - fedcal) / best baseline, on fedcal rows when the
    /// non-privileged baselines (ens/avgt/lrts) are present.
    pub rel_reduction_vs_best_baseline: Option<f64>,
}

/// Cross product of (beta, seed) runs; cells execute in parallel up to the
/// FEDCAL_THREADS cap and the summary is assembled in deterministic order.
pub fn sweep(
    base: &ExperimentConfig,
    betas: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepSummaryRow>> {
    if betas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one beta and one seed".into()));
    }
    base.validate()?;
    let jobs: Vec<(f64, u64)> = betas
        .iter()
        .flat_map(|&b| seeds.iter().map(move |&s| (b, s)))
        .collect();
    let outputs = run_parallel(jobs.len(), thread_cap(), &|i| {
        let (beta, seed) = jobs[i];
        let mut cfg = base.clone();
        cfg.partition.beta = beta;
        cfg.seed = seed;
        cfg.out_dir = base.out_dir.join(format!("beta{beta}_seed{seed}"));
        run_experiment(&cfg)
    });
    let mut cells = Vec::with_capacity(outputs.len());
    for out in outputs {
        cells.push(out?);
    }

    let mut summary = Vec::new();
    for &beta in betas {
        // Final global ECE per method per seed at this beta.
        let mut per_method: BTreeMap<&'static str, Vec<(f64, f64)>> = BTreeMap::new();
        for (job, cell) in jobs.iter().zip(&cells) {
            if job.0 != beta {
                continue;
            }
            for row in final_rows(&cell.rows) {
                per_method
                    .entry(row.method)
                    .or_default()
                    .push((row.global_ece, row.top1));
            }
        }
        let mean_ece = |m: &str| {
            per_method.get(m).map(|v| {
                v.iter().map(|(e, _)| e).sum::<f64>() / v.len() as f64
            })
        };
        let best_baseline = ["ens", "avgt", "lrts"]
            .iter()
            .filter_map(|m| mean_ece(m))
            .fold(f64::INFINITY, f64::min);

        for &method in &base.methods {
            let Some(values) = per_method.get(method.name()) else { continue };
            let n = values.len();
            let mean = values.iter().map(|(e, _)| e).sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|(e, _)| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            let top1 = values.iter().map(|(_, t)| t).sum::<f64>() / n as f64;
            let rel = if method == Method::Fedcal && best_baseline.is_finite() && best_baseline > 0.0
            {
                Some((best_baseline - mean) / best_baseline)
            } else {
                None
            };
            summary.push(SweepSummaryRow {
                beta,
                method: method.name(),
                mean_global_ece: mean,
                std_global_ece: std,
                mean_top1: top1,
                n_seeds: n,
                rel_reduction_vs_best_baseline: rel,
            });
        }
    }

    let mut csv = String::from(
        "beta,method,mean_global_ece,std_global_ece,mean_top1,n_seeds,rel_reduction_vs_best_baseline\n",
    );
    for row in &summary {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.beta,
            row.method,
            row.mean_global_ece,
            row.std_global_ece,
            row.mean_top1,
            row.n_seeds,
            row.rel_reduction_vs_best_baseline
                .map(|r| r.to_string())
                .unwrap_or_default()
        ));
    }
    write_atomic(&base.out_dir.join("sweep_summary.csv"), csv.as_bytes())?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum AblateMode {
    /// FedCal with and without weight matching.
    WeightMatching,
    /// FedCal across scaler hidden widths.
    Width(Vec<usize>),
    /// Two-client interpolation sweep over the aggregation weight.
    Lambda { grid_points: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct AblateRow {
    pub seed: u64,
    pub variant: String,
    pub lambda: Option<f64>,
    pub global_ece: f64,
    pub mean_local_ece: f64,
    pub max_local_ece: f64,
}

pub fn ablate(base: &ExperimentConfig, mode: &AblateMode, seeds: &[u64]) -> Result<Vec<AblateRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablate needs at least one seed".into()));
    }
    base.validate()?;
    let rows = match mode {
        AblateMode::WeightMatching => ablate_weight_matching(base, seeds)?,
        AblateMode::Width(widths) => ablate_width(base, widths, seeds)?,
        AblateMode::Lambda { grid_points } => ablate_lambda(base, *grid_points, seeds)?,
    };
    let name = match mode {
        AblateMode::WeightMatching => "ablate_wm.csv",
        AblateMode::Width(_) => "ablate_width.csv",
        AblateMode::Lambda { .. } => "lambda_sweep.csv",
    };
    let mut csv = String::from("seed,variant,lambda,global_ece,mean_local_ece,max_local_ece\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.seed,
            row.variant,
            row.lambda.map(|l| l.to_string()).unwrap_or_default(),
            row.global_ece,
            row.mean_local_ece,
            row.max_local_ece
        ));
    }
    write_atomic(&base.out_dir.join(name), csv.as_bytes())?;
    Ok(rows)
}

fn scaler_run_final(
    base: &ExperimentConfig,
    seed: u64,
    width: usize,
    weight_matching: bool,
) -> Result<(f64, f64, f64)> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let world = prepare_world(&cfg)?;
    let eval = EvalPlan {
        test_set: &world.test_set,
        bins: cfg.bins,
        // Final-round metrics only.
        eval_every: cfg.fed.rounds + 1,
        capture_models: false,
    };
    let fed = cfg.fed_config(ScalerKind::OpMlp, width, weight_matching);
    let run = run_federation(&world.shards, &fed, &eval)?;
    let last = run.history.last().expect("final round is always recorded");
    Ok((
        last.summary.global_ece,
        last.summary.mean_local_ece,
        last.summary.max_local_ece,
    ))
}

fn ablate_weight_matching(base: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<AblateRow>> {
    let jobs: Vec<(u64, bool)> = seeds
        .iter()
        .flat_map(|&s| [(s, true), (s, false)])
        .collect();
    let outputs = run_parallel(jobs.len(), thread_cap(), &|i| {
        let (seed, wm) = jobs[i];
        scaler_run_final(base, seed, base.fed.scaler_hidden_width, wm)
    });
    let mut rows = Vec::new();
    for ((seed, wm), out) in jobs.iter().zip(outputs) {
        let (global, mean_local, max_local) = out?;
        rows.push(AblateRow {
            seed: *seed,
            variant: if *wm { "fedcal".into() } else { "fedcal_no_wm".into() },
            lambda: None,
            global_ece: global,
            mean_local_ece: mean_local,
            max_local_ece: max_local,
        });
    }
    Ok(rows)
}

fn ablate_width(
    base: &ExperimentConfig,
    widths: &[usize],
    seeds: &[u64],
) -> Result<Vec<AblateRow>> {
    if widths.is_empty() {
        return Err(Error::Config("width ablation needs at least one width".into()));
    }
    let jobs: Vec<(u64, usize)> = seeds
        .iter()
        .flat_map(|&s| widths.iter().map(move |&w| (s, w)))
        .collect();
    let outputs = run_parallel(jobs.len(), thread_cap(), &|i| {
        let (seed, width) = jobs[i];
        scaler_run_final(base, seed, width, true)
    });
    let mut rows = Vec::new();
    for ((seed, width), out) in jobs.iter().zip(outputs) {
        let (global, mean_local, max_local) = out?;
        rows.push(AblateRow {
            seed: *seed,
            variant: format!("width{width}"),
            lambda: None,
            global_ece: global,
            mean_local_ece: mean_local,
            max_local_ece: max_local,
        });
    }
    Ok(rows)
}

/// Two-client interpolation sweep: train one scaler per client against the
/// final scaler-free model, then blend them across the lambda grid with and
/// without weight matching.
fn ablate_lambda(
    base: &ExperimentConfig,
    grid_points: usize,
    seeds: &[u64],
) -> Result<Vec<AblateRow>> {
    if grid_points < 2 {
        return Err(Error::Config("lambda grid needs at least 2 points".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.partition.num_clients = 2;
        cfg.fed.clients_per_round = 2;
        let world = prepare_world(&cfg)?;
        let eval = EvalPlan {
            test_set: &world.test_set,
            bins: cfg.bins,
            eval_every: cfg.fed.rounds + 1,
            capture_models: false,
        };
        let fed = cfg.fed_config(ScalerKind::None, cfg.fed.scaler_hidden_width, true);
        let run = run_federation(&world.shards, &fed, &eval)?;
        let model = &run.final_state.global_model;
        let k = world.test_set.num_classes;

        // Independent local scalers, one per client.
        let mut local = Vec::new();
        for shard in &world.shards {
            if shard.validation.is_empty() {
                return Err(Error::Usage(format!(
                    "client {} has no validation data for the lambda sweep",
                    shard.client_id
                )));
            }
            let mut rng = derive_rng(seed, &[0xab1a, shard.client_id as u64]);
            let init = OpScaler::init(k, cfg.fed.scaler_hidden_width, &mut rng)?;
            let logits = model.forward(&shard.validation.features)?;
            local.push(init.fit(
                &logits,
                &shard.validation.labels,
                cfg.fed.scaler_epochs * 3,
                cfg.fed.scaler_lr,
                &mut rng,
            )?);
        }

        let aligned = OpScaler::from_backbone(apply_permutation(
            local[1].backbone(),
            &weight_matching(local[0].backbone(), local[1].backbone())?,
        )?)?;

        for (variant, second) in [("unmatched", &local[1]), ("matched", &aligned)] {
            for i in 0..grid_points {
                let lambda = i as f64 / (grid_points - 1) as f64;
                let blended = OpScaler::from_backbone(interpolate(
                    local[0].backbone(),
                    second.backbone(),
                    lambda,
                )?)?;
                let state = ScalerState::OpMlp(blended);
                let metrics = evaluate_round(0, model, &state, &world.shards, &eval)?;
                rows.push(AblateRow {
                    seed,
                    variant: variant.into(),
                    lambda: Some(lambda),
                    global_ece: metrics.summary.global_ece,
                    mean_local_ece: metrics.summary.mean_local_ece,
                    max_local_ece: metrics.summary.max_local_ece,
                });
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Partition stats
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ShardStat {
    pub client_id: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub class_histogram: Vec<usize>,
}

pub fn partition_stats(cfg: &ExperimentConfig) -> Result<Vec<ShardStat>> {
    cfg.validate()?;
    let world = prepare_world(cfg)?;
    Ok(world
        .shards
        .iter()
        .map(|s| {
            let mut hist = s.train.class_counts();
            for (h, v) in hist.iter_mut().zip(s.validation.class_counts()) {
                *h += v;
            }
            ShardStat {
                client_id: s.client_id,
                train_samples: s.train.len(),
                validation_samples: s.validation.len(),
                class_histogram: hist,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Infrastructure
// ---------------------------------------------------------------------------

/// FEDCAL_THREADS, defaulting to the available cores.
pub fn thread_cap() -> usize {
    std::env::var("FEDCAL_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

/// Run `jobs` independent closures over a bounded pool; results keep job
/// order, so output never depends on scheduling.
pub fn run_parallel<T: Send>(
    jobs: usize,
    threads: usize,
    job: &(impl Fn(usize) -> T + Sync),
) -> Vec<T> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(jobs).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let out = job(i);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect()
}

/// Write via a temp file and rename, so failures never leave partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
