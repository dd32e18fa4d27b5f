//! The federated simulation engine: client sampling, local updates with
//! scaler alignment and training, and server-side aggregation.
//!
//! Determinism contract: every random draw comes from a stream derived from
//! (master_seed, round, client_id, purpose), and aggregation consumes client
//! results in ascending client-id order, so a run is a pure function of its
//! inputs regardless of scheduling.

use serde::{Deserialize, Serialize};

use crate::data::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::matching::{apply_permutation, weight_matching};
use crate::metrics::{ece, local_global_summary, topk_accuracy, LocalGlobalSummary, PredictionSet};
use crate::mlp::{sgd_train, softmax, Activation, MlpModel, SgdConfig};
use crate::rng::{derive_rng, derive_seed, stream};
use crate::scalers::{OpScaler, TemperatureScaler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    None,
    Temperature,
    OpMlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FedConfig {
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub scaler_kind: ScalerKind,
    pub scaler_hidden_width: usize,
    pub fedprox_mu: Option<f64>,
    pub master_seed: u64,
    /// Hidden widths of the classifier MLP.
    pub classifier_hidden: Vec<usize>,
    /// Align local scalers to the global one before training (FedCal);
    /// disabling this is the no-weight-matching ablation.
    pub weight_matching: bool,
    /// Replace the local scaler with a copy of the global one each round
    /// instead of continuing from the aligned local parameters.
    pub reset_scaler_to_global: bool,
    pub scaler_epochs: usize,
    pub scaler_lr: f64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            num_clients: 20,
            clients_per_round: 5,
            rounds: 100,
            local_epochs: 3,
            lr: 0.01,
            batch_size: 256,
            scaler_kind: ScalerKind::OpMlp,
            scaler_hidden_width: crate::scalers::DEFAULT_SCALER_HIDDEN,
            fedprox_mu: None,
            master_seed: 0,
            classifier_hidden: vec![32],
            weight_matching: true,
            reset_scaler_to_global: false,
            scaler_epochs: crate::scalers::DEFAULT_SCALER_EPOCHS,
            scaler_lr: crate::scalers::DEFAULT_SCALER_LR,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return Err(Error::Usage(format!(
                "clients_per_round {} outside 1..={}",
                self.clients_per_round, self.num_clients
            )));
        }
        if self.rounds == 0 || self.local_epochs == 0 {
            return Err(Error::Usage("rounds and local_epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Usage("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be >= 1".into()));
        }
        if self.scaler_kind == ScalerKind::OpMlp && self.scaler_hidden_width == 0 {
            return Err(Error::Usage("scaler_hidden_width must be >= 1".into()));
        }
        Ok(())
    }
}

/// The server-side scaler state for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalerState {
    None,
    Temperature(TemperatureScaler),
    OpMlp(OpScaler),
}

impl crate::scalers::Calibrator for ScalerState {
    fn calibrate(&self, logits: &Matrix) -> Result<Matrix> {
        match self {
            ScalerState::None => Ok(softmax(logits)),
            ScalerState::Temperature(t) => Ok(t.apply(logits)),
            ScalerState::OpMlp(s) => s.apply(logits),
        }
    }
}

/// Global state after a round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundState {
    pub round: usize,
    pub global_model: MlpModel,
    pub global_scaler: ScalerState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub summary: LocalGlobalSummary,
    pub top3: f64,
}

#[derive(Debug, Clone)]
pub struct FederationRun {
    pub final_state: RoundState,
    pub history: Vec<RoundMetrics>,
    pub warnings: Vec<String>,
    /// Global model at each recorded round, when capture was requested.
    pub model_snapshots: Vec<(usize, MlpModel)>,
}

/// What to evaluate during a run.
#[derive(Debug, Clone, Copy)]
pub struct EvalPlan<'a> {
    pub test_set: &'a Dataset,
    pub bins: usize,
    /// Record metrics every this many rounds; the final round always records.
    pub eval_every: usize,
    /// Keep a copy of the global model at every recorded round, so post-hoc
    /// calibrators can be evaluated against the same trajectory.
    pub capture_models: bool,
}

/// Noise scale added to the global scaler when seeding a client's first
/// local scaler, so weight matching starts from distinct parameters.
const SCALER_INIT_NOISE: f64 = 1e-3;

pub struct ClientUpdate {
    pub model: MlpModel,
    pub scaler: OpScaler,
    pub train_samples: usize,
    /// Set when the validation split was empty and scaler fitting skipped.
    pub warning: Option<String>,
}

/// One client's round: align the persistent local scaler to the global one,
/// train the classifier from the global weights, then fit the scaler on the
/// fresh validation logits.
pub fn client_update(
    shard: &ClientShard,
    global_model: &MlpModel,
    global_scaler: &OpScaler,
    local_scaler: Option<&OpScaler>,
    cfg: &FedConfig,
    update_seed: u64,
) -> Result<ClientUpdate> {
    if shard.train.is_empty() {
        return Err(Error::Usage(format!("client {} has no training data", shard.client_id)));
    }

    // Independent sub-streams keep the classifier trajectory identical
    // across scaler kinds and first/later participations.
    let mut noise_rng = derive_rng(update_seed, &[stream::SCALER_NOISE]);
    let mut train_rng = derive_rng(update_seed, &[stream::CLIENT_UPDATE, 1]);
    let mut scaler_rng = derive_rng(update_seed, &[stream::CLIENT_UPDATE, 2]);

    let mut scaler = match local_scaler {
        Some(s) => s.clone(),
        None => {
            let mut fresh = global_scaler.clone();
            perturb(fresh.backbone_mut(), SCALER_INIT_NOISE, &mut noise_rng);
            fresh
        }
    };

    if cfg.reset_scaler_to_global {
        scaler = global_scaler.clone();
    } else if cfg.weight_matching {
        let perms = weight_matching(global_scaler.backbone(), scaler.backbone())?;
        scaler = OpScaler::from_backbone(apply_permutation(scaler.backbone(), &perms)?)?;
    }

    let model = train_local_classifier(shard, global_model, cfg, &mut train_rng)?;

    let mut warning = None;
    if shard.validation.is_empty() {
        warning = Some(format!(
            "client {}: empty validation split, scaler update skipped",
            shard.client_id
        ));
    } else {
        let val_logits = model.forward(&shard.validation.features)?;
        scaler = scaler.fit(
            &val_logits,
            &shard.validation.labels,
            cfg.scaler_epochs,
            cfg.scaler_lr,
            &mut scaler_rng,
        )?;
    }

    Ok(ClientUpdate {
        model,
        scaler,
        train_samples: shard.train.len(),
        warning,
    })
}

/// Train the classifier from the global weights for the configured local
/// epochs, with the FedProx prox term when enabled.
pub fn train_local_classifier<R: rand::Rng>(
    shard: &ClientShard,
    global_model: &MlpModel,
    cfg: &FedConfig,
    rng: &mut R,
) -> Result<MlpModel> {
    let sgd = SgdConfig {
        epochs: cfg.local_epochs,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
    };
    sgd_train(
        global_model,
        &shard.train.features,
        &shard.train.labels,
        &sgd,
        cfg.fedprox_mu.map(|mu| (mu, global_model)),
        rng,
    )
}

fn perturb<R: rand::Rng>(model: &mut MlpModel, scale: f64, rng: &mut R) {
    for w in model.weights_mut() {
        for v in w.as_mut_slice() {
            *v += rng.random_range(-scale..scale);
        }
    }
    for b in model.biases_mut() {
        for v in b.iter_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

/// Sample-count-weighted parameter average, accumulated in list order.
pub fn aggregate_models(clients: &[(MlpModel, usize)]) -> Result<MlpModel> {
    let (first, _) = clients.first().ok_or_else(|| Error::Usage("no models to aggregate".into()))?;
    if clients.iter().any(|(m, _)| !m.same_architecture(first)) {
        return Err(Error::Usage("aggregating models of different architectures".into()));
    }
    let total: usize = clients.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Usage("aggregate weights sum to zero".into()));
    }
    let mut out = MlpModel::zeros(first.layer_sizes(), first.hidden_activation())?;
    for (model, n) in clients {
        let w = *n as f64 / total as f64;
        for (acc, m) in out.weights_mut().iter_mut().zip(model.weights()) {
            acc.add_scaled(m, w)?;
        }
        for (acc, b) in out.biases_mut().iter_mut().zip(model.biases()) {
            for (a, &v) in acc.iter_mut().zip(b) {
                *a += w * v;
            }
        }
    }
    Ok(out)
}

/// Unweighted parameter mean of the client-aligned scalers.
pub fn aggregate_scalers(scalers: &[OpScaler]) -> Result<OpScaler> {
    let first = scalers.first().ok_or_else(|| Error::Usage("no scalers to aggregate".into()))?;
    if scalers
        .iter()
        .any(|s| !s.backbone().same_architecture(first.backbone()))
    {
        return Err(Error::Usage("aggregating scalers of different architectures".into()));
    }
    let w = 1.0 / scalers.len() as f64;
    let mut backbone = MlpModel::zeros(
        first.backbone().layer_sizes(),
        first.backbone().hidden_activation(),
    )?;
    for s in scalers {
        for (acc, m) in backbone.weights_mut().iter_mut().zip(s.backbone().weights()) {
            acc.add_scaled(m, w)?;
        }
        for (acc, b) in backbone.biases_mut().iter_mut().zip(s.backbone().biases()) {
            for (a, &v) in acc.iter_mut().zip(b) {
                *a += w * v;
            }
        }
    }
    OpScaler::from_backbone(backbone)
}

/// Uniformly sample m of c clients without replacement; ascending order.
fn sample_clients<R: rand::Rng>(c: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..c).collect();
    for i in 0..m {
        let j = rng.random_range(i..c);
        idx.swap(i, j);
    }
    let mut selected = idx[..m].to_vec();
    selected.sort_unstable();
    selected
}

/// Run the full federation: R rounds of sampled client updates, FedAvg model
/// aggregation, scaler aggregation, and metric recording.
pub fn run_federation(
    shards: &[ClientShard],
    cfg: &FedConfig,
    eval: &EvalPlan,
) -> Result<FederationRun> {
    cfg.validate()?;
    if shards.len() != cfg.num_clients {
        return Err(Error::Usage(format!(
            "{} shards vs {} configured clients",
            shards.len(),
            cfg.num_clients
        )));
    }
    let input_dim = shards[0].train.dim();
    let num_classes = shards[0].train.num_classes;

    let mut layer_sizes = vec![input_dim];
    layer_sizes.extend_from_slice(&cfg.classifier_hidden);
    layer_sizes.push(num_classes);
    let mut global_model = MlpModel::init(
        &layer_sizes,
        Activation::Relu,
        &mut derive_rng(cfg.master_seed, &[stream::MODEL_INIT]),
    )?;

    let mut global_op_scaler = if cfg.scaler_kind == ScalerKind::OpMlp {
        Some(OpScaler::init(
            num_classes,
            cfg.scaler_hidden_width,
            &mut derive_rng(cfg.master_seed, &[stream::SCALER_INIT]),
        )?)
    } else {
        None
    };
    let mut global_temperature = TemperatureScaler::new(1.0)?;
    let mut local_scalers: Vec<Option<OpScaler>> = vec![None; cfg.num_clients];

    let mut history = Vec::new();
    let mut warnings = Vec::new();
    let mut model_snapshots = Vec::new();

    for round in 1..=cfg.rounds {
        let mut select_rng = derive_rng(cfg.master_seed, &[stream::CLIENT_SELECT, round as u64]);
        let selected = sample_clients(cfg.num_clients, cfg.clients_per_round, &mut select_rng);

        let mut models = Vec::with_capacity(selected.len());
        let mut round_scalers = Vec::new();
        let mut temperatures = Vec::new();

        for &c in &selected {
            let shard = &shards[c];
            let update_seed = derive_seed(
                cfg.master_seed,
                &[stream::CLIENT_UPDATE, round as u64, c as u64],
            );
            match cfg.scaler_kind {
                ScalerKind::OpMlp => {
                    let update = client_update(
                        shard,
                        &global_model,
                        global_op_scaler.as_ref().unwrap(),
                        local_scalers[c].as_ref(),
                        cfg,
                        update_seed,
                    )?;
                    if let Some(w) = update.warning {
                        warnings.push(format!("round {round}: {w}"));
                    }
                    local_scalers[c] = Some(update.scaler.clone());
                    round_scalers.push(update.scaler);
                    models.push((update.model, update.train_samples));
                }
                ScalerKind::Temperature | ScalerKind::None => {
                    let mut train_rng =
                        derive_rng(update_seed, &[stream::CLIENT_UPDATE, 1]);
                    let model = train_local_classifier(shard, &global_model, cfg, &mut train_rng)?;
                    if cfg.scaler_kind == ScalerKind::Temperature {
                        if shard.validation.is_empty() {
                            warnings.push(format!(
                                "round {round}: client {c}: empty validation split, \
                                 temperature fit skipped"
                            ));
                        } else {
                            let logits = model.forward(&shard.validation.features)?;
                            temperatures
                                .push(TemperatureScaler::fit(&logits, &shard.validation.labels)?);
                        }
                    }
                    models.push((model, shard.train.len()));
                }
            }
        }

        global_model = aggregate_models(&models)?;
        match cfg.scaler_kind {
            ScalerKind::OpMlp => {
                global_op_scaler = Some(aggregate_scalers(&round_scalers)?);
            }
            ScalerKind::Temperature => {
                if !temperatures.is_empty() {
                    let mean =
                        temperatures.iter().map(|t| t.temperature()).sum::<f64>()
                            / temperatures.len() as f64;
                    global_temperature = TemperatureScaler::new(mean)?;
                }
            }
            ScalerKind::None => {}
        }

        if round % eval.eval_every == 0 || round == cfg.rounds {
            let scaler_state = scaler_state(cfg, &global_op_scaler, global_temperature);
            history.push(evaluate_round(
                round,
                &global_model,
                &scaler_state,
                shards,
                eval,
            )?);
            if eval.capture_models {
                model_snapshots.push((round, global_model.clone()));
            }
        }
    }

    let final_state = RoundState {
        round: cfg.rounds,
        global_model,
        global_scaler: scaler_state(cfg, &global_op_scaler, global_temperature),
    };
    Ok(FederationRun { final_state, history, warnings, model_snapshots })
}

fn scaler_state(
    cfg: &FedConfig,
    op: &Option<OpScaler>,
    temperature: TemperatureScaler,
) -> ScalerState {
    match cfg.scaler_kind {
        ScalerKind::None => ScalerState::None,
        ScalerKind::Temperature => ScalerState::Temperature(temperature),
        ScalerKind::OpMlp => ScalerState::OpMlp(op.clone().unwrap()),
    }
}

/// Global report on the held-out test set plus per-client local reports on
/// every client's validation split.
pub fn evaluate_round(
    round: usize,
    model: &MlpModel,
    scaler: &dyn crate::scalers::Calibrator,
    shards: &[ClientShard],
    eval: &EvalPlan,
) -> Result<RoundMetrics> {
    let test_logits = model.forward(&eval.test_set.features)?;
    let test_probs = scaler.calibrate(&test_logits)?;
    let preds = PredictionSet::new(test_probs, eval.test_set.labels.clone())?;
    let global_report = ece(&preds, eval.bins)?;
    let k = eval.test_set.num_classes;
    let top3 = topk_accuracy(&preds, 3.min(k))?;

    let mut local_reports = Vec::new();
    for shard in shards {
        if shard.validation.is_empty() {
            continue;
        }
        let logits = model.forward(&shard.validation.features)?;
        let probs = scaler.calibrate(&logits)?;
        let local = PredictionSet::new(probs, shard.validation.labels.clone())?;
        local_reports.push(ece(&local, eval.bins)?);
    }
    if local_reports.is_empty() {
        return Err(Error::Usage("no client has validation data to evaluate".into()));
    }
    let summary = local_global_summary(&local_reports, &global_report)?;
    Ok(RoundMetrics { round, summary, top3 })
}
