//! Two-stage optimization: fixed-rate SGD pre-training, then minimax
//! adversarial training with Adagrad.

use std::fmt::Write as _;

use crate::data::SplitSpec;
use crate::error::{AcaeError, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::gradients::{loss_and_grads, minimax_grads, ParamGrads};
use crate::model::{corrupt_input, ActivationKind, Example, ModelParams, NoiseSite};
use crate::numerics::{adagrad_step, gaussian_fill, sgd_step, Matrix, RngStream, ADAGRAD_DAMPING};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub gamma: f64,
    pub init_std: f64,
    pub eval_every: usize,
    pub patience: usize,
    /// Mask-out probability for the input vector; 0 trains a plain CAE.
    pub input_drop: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 0.01,
            batch_size: 128,
            max_epochs: 500,
            gamma: 1e-4,
            init_std: 0.01,
            eval_every: 1,
            patience: 10,
            input_drop: 0.0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.patience == 0 || self.eval_every == 0 {
            return Err(AcaeError::InvalidInput(
                "pretrain needs learning_rate > 0, batch_size >= 1, patience >= 1, eval_every >= 1".into(),
            ));
        }
        if !(self.gamma >= 0.0) || !(self.init_std >= 0.0) || !(0.0..1.0).contains(&self.input_drop) {
            return Err(AcaeError::InvalidInput(
                "pretrain needs gamma >= 0, init_std >= 0 and input_drop in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvConfig {
    pub epsilon: f64,
    pub lambdas: Vec<(NoiseSite, f64)>,
    pub adagrad_base_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            epsilon: 0.5,
            lambdas: vec![(NoiseSite::EncoderWeights, 1.0), (NoiseSite::DecoderWeights, 1.0)],
            adagrad_base_rate: 0.01,
            batch_size: 128,
            max_epochs: 1000,
            eval_every: 1,
            patience: 10,
            seed: 0,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || self.lambdas.iter().any(|(_, l)| !(*l >= 0.0)) {
            return Err(AcaeError::InvalidInput("adversarial needs epsilon >= 0 and every lambda >= 0".into()));
        }
        if !(self.adagrad_base_rate > 0.0) || self.batch_size == 0 || self.patience == 0 || self.eval_every == 0 {
            return Err(AcaeError::InvalidInput(
                "adversarial needs adagrad_base_rate > 0, batch_size >= 1, patience >= 1, eval_every >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Adversarial,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Adversarial => "adversarial",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub stage: Stage,
    /// Mean per-user training loss over the epoch.
    pub loss: f64,
    pub hr5: f64,
    pub ndcg5: f64,
    pub hr10: f64,
    pub ndcg10: f64,
}

impl TraceRow {
    fn new(epoch: usize, stage: Stage, loss: f64, report: &EvalReport) -> Self {
        TraceRow {
            epoch,
            stage,
            loss,
            hr5: report.hr(5),
            ndcg5: report.ndcg(5),
            hr10: report.hr(10),
            ndcg10: report.ndcg(10),
        }
    }
}

pub const TRACE_HEADER: &str = "epoch,stage,loss,hr5,ndcg5,hr10,ndcg10";

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.stage.name(),
            r.loss,
            r.hr5,
            r.ndcg5,
            r.hr10,
            r.ndcg10
        );
    }
    out
}

/// Mean `(hr5, ndcg5)` over the last `n` rows.
pub fn trailing_mean(rows: &[TraceRow], n: usize) -> Option<(f64, f64)> {
    let tail = &rows[rows.len().saturating_sub(n)..];
    if tail.is_empty() {
        return None;
    }
    let len = tail.len() as f64;
    Some((
        tail.iter().map(|r| r.hr5).sum::<f64>() / len,
        tail.iter().map(|r| r.ndcg5).sum::<f64>() / len,
    ))
}

/// What a training stage reads: per-user training profiles, the validation
/// split used for early stopping, and an optional held-out split that is
/// only recorded.
pub struct TrainingData<'a> {
    pub profiles: Vec<&'a [usize]>,
    pub validation: &'a SplitSpec,
    pub monitor: Option<&'a SplitSpec>,
    pub progress: Option<&'a dyn Fn(&TraceRow)>,
}

impl<'a> TrainingData<'a> {
    /// Trains on the validation split's training profiles.
    pub fn new(validation: &'a SplitSpec) -> Self {
        TrainingData {
            profiles: validation.train_profiles(),
            validation,
            monitor: None,
            progress: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation snapshot, or the starting point if nothing was evaluated.
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
    /// Rows evaluated on the monitor split, aligned with `trace`.
    pub monitor: Vec<TraceRow>,
    pub best_epoch: Option<usize>,
}

impl TrainOutcome {
    pub fn best_row(&self) -> Option<&TraceRow> {
        let e = self.best_epoch?;
        self.trace.iter().find(|r| r.epoch == e)
    }
}

/// Mutable optimizer state shared by both stages.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub params: ModelParams,
    /// One per parameter tensor, in [`ModelParams::tensors`] order; empty for SGD.
    pub accumulators: Vec<Matrix>,
    pub epoch: usize,
    pub rng: RngStream,
    best: Option<(f64, usize, ModelParams)>,
}

impl TrainerState {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        TrainerState {
            params,
            accumulators: Vec::new(),
            epoch: 0,
            rng: RngStream::new(seed),
            best: None,
        }
    }

    pub fn with_adagrad(params: ModelParams, seed: u64) -> Self {
        let accumulators = params
            .tensors()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        TrainerState {
            accumulators,
            ..TrainerState::new(params, seed)
        }
    }

    pub fn sgd_update(&mut self, grads: &ParamGrads, rate: f64) {
        for (p, g) in self.params.tensors_mut().into_iter().zip(grads.tensors()) {
            sgd_step(p, g, rate).expect("gradient shaped like params");
        }
    }

    pub fn adagrad_update(&mut self, grads: &ParamGrads, rate: f64) {
        let params = self.params.tensors_mut();
        for ((p, g), acc) in params.into_iter().zip(grads.tensors()).zip(self.accumulators.iter_mut()) {
            adagrad_step(p, g, acc, rate, ADAGRAD_DAMPING).expect("gradient shaped like params");
        }
    }
}

/// Every tensor filled i.i.d. from `N(0, init_std^2)`.
pub fn init_params(
    users: usize,
    items: usize,
    hidden: usize,
    encoder: ActivationKind,
    decoder: ActivationKind,
    init_std: f64,
    rng: &mut RngStream,
) -> Result<ModelParams> {
    if users == 0 || items == 0 || hidden == 0 {
        return Err(AcaeError::InvalidInput(format!(
            "model dimensions must be positive, got U={users} I={items} K={hidden}"
        )));
    }
    Ok(ModelParams {
        w1: gaussian_fill(hidden, items, init_std, rng),
        w2: gaussian_fill(items, hidden, init_std, rng),
        b1: gaussian_fill(hidden, 1, init_std, rng),
        b2: gaussian_fill(items, 1, init_std, rng),
        p: gaussian_fill(hidden, users, init_std, rng),
        encoder,
        decoder,
    })
}

struct Schedule {
    stage: Stage,
    batch_size: usize,
    max_epochs: usize,
    eval_every: usize,
    patience: usize,
    rate: f64,
    input_drop: f64,
}

fn check_data(params: &ModelParams, data: &TrainingData<'_>) -> Result<()> {
    let users = params.users();
    let shapes_ok = data.profiles.len() == users
        && data.validation.user_count() == users
        && data.validation.item_count == params.items()
        && data.monitor.is_none_or(|m| m.user_count() == users && m.item_count == params.items());
    if !shapes_ok {
        return Err(AcaeError::shape(
            "train",
            format!("{} users x {} items", users, params.items()),
            format!(
                "{} profiles, validation split of {} users x {} items",
                data.profiles.len(),
                data.validation.user_count(),
                data.validation.item_count
            ),
        ));
    }
    Ok(())
}

fn run_stage<F>(state: &mut TrainerState, data: &TrainingData<'_>, sched: &Schedule, mut step: F) -> Result<TrainOutcome>
where
    F: FnMut(&mut TrainerState, &[Example<'_>]) -> Result<f64>,
{
    check_data(&state.params, data)?;
    let users = state.params.users();
    let mut trace = Vec::new();
    let mut monitor = Vec::new();
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..users).collect();
    let mut corrupted: Vec<Vec<(usize, f64)>> = Vec::new();

    for epoch in 1..=sched.max_epochs {
        state.epoch = epoch;
        order.sort_unstable();
        state.rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(sched.batch_size) {
            if sched.input_drop > 0.0 {
                corrupted.clear();
                for &u in chunk {
                    corrupted.push(corrupt_input(data.profiles[u], sched.input_drop, &mut state.rng));
                }
            }
            let batch: Vec<Example<'_>> = chunk
                .iter()
                .enumerate()
                .map(|(k, &u)| Example {
                    user: u,
                    target: data.profiles[u],
                    input: if sched.input_drop > 0.0 { Some(&corrupted[k]) } else { None },
                })
                .collect();
            let loss = step(state, &batch)?;
            if !loss.is_finite() {
                return Err(AcaeError::Divergence {
                    stage: sched.stage.name(),
                    epoch,
                    loss,
                    learning_rate: sched.rate,
                });
            }
            epoch_loss += loss;
        }
        let mean_loss = epoch_loss / users as f64;

        if epoch % sched.eval_every == 0 || epoch == sched.max_epochs {
            let report = evaluate(&state.params, data.validation, &[5, 10])?;
            let row = TraceRow::new(epoch, sched.stage, mean_loss, &report);
            if let Some(m) = data.monitor {
                let r = evaluate(&state.params, m, &[5, 10])?;
                monitor.push(TraceRow::new(epoch, sched.stage, mean_loss, &r));
            }
            if let Some(cb) = data.progress {
                cb(monitor.last().unwrap_or(&row));
            }
            trace.push(row);
            if state.best.as_ref().is_none_or(|(hr, _, _)| row.hr5 > *hr) {
                state.best = Some((row.hr5, epoch, state.params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= sched.patience {
                    break;
                }
            }
        }
    }

    let (params, best_epoch) = match state.best.take() {
        Some((_, e, p)) => (p, Some(e)),
        None => (state.params.clone(), None),
    };
    Ok(TrainOutcome {
        params,
        trace,
        monitor,
        best_epoch,
    })
}

/// One fixed-rate SGD step on the plain regularized loss.
pub fn pretrain_step(state: &mut TrainerState, batch: &[Example<'_>], cfg: &PretrainConfig) -> Result<f64> {
    let (loss, grads) = loss_and_grads(&state.params, batch, &[], cfg.gamma)?;
    if loss.is_finite() {
        state.sgd_update(&grads, cfg.learning_rate);
    }
    Ok(loss)
}

/// One maximization step (fast-gradient noise at every active site) and one
/// Adagrad minimization step on the full adversarial loss.
pub fn adversarial_step(
    state: &mut TrainerState,
    batch: &[Example<'_>],
    cfg: &AdvConfig,
    gamma: f64,
) -> Result<f64> {
    let (loss, grads) = minimax_grads(&state.params, batch, &cfg.lambdas, cfg.epsilon, gamma)?;
    if loss.is_finite() {
        state.adagrad_update(&grads, cfg.adagrad_base_rate);
    }
    Ok(loss)
}

pub fn pretrain(params: ModelParams, data: &TrainingData<'_>, cfg: &PretrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = TrainerState::new(params, cfg.seed);
    let sched = Schedule {
        stage: Stage::Pretrain,
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        eval_every: cfg.eval_every,
        patience: cfg.patience,
        rate: cfg.learning_rate,
        input_drop: cfg.input_drop,
    };
    run_stage(&mut state, data, &sched, |s, b| pretrain_step(s, b, cfg))
}

pub fn adversarial_train(
    params: ModelParams,
    data: &TrainingData<'_>,
    cfg: &AdvConfig,
    gamma: f64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = TrainerState::with_adagrad(params, cfg.seed);
    let sched = Schedule {
        stage: Stage::Adversarial,
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        eval_every: cfg.eval_every,
        patience: cfg.patience,
        rate: cfg.adagrad_base_rate,
        input_drop: 0.0,
    };
    run_stage(&mut state, data, &sched, |s, b| adversarial_step(s, b, cfg, gamma))
}
