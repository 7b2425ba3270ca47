//! Joint training of the multimodal task and the unimodal subtasks.
//!
//! Per mini-batch: forward, weighted multi-task L1 loss, backward, Adam step,
//! then (from epoch 2 on) fresh u-labels for the batch members, and finally
//! the batch representations are written to the global store.

use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, AutodiffError, Graph, Var};
use crate::dataio::{batches, DataError, Dataset, Sample, Split};
use crate::encoders::EncoderConfig;
use crate::fusion::HeadConfig;
use crate::metrics::{self, MetricsBundle, MetricsError};
use crate::model::{Model, ModelConfig, ModelError};
use crate::trajectory::TrajectoryRecord;
use crate::ulgm::{BatchOutcome, BatchReps, Ulgm, UlgmConfig, UlgmError};
use crate::{Modality, Task};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Ulgm(#[from] UlgmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
}

/// Unimodal subtasks trained next to the multimodal task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMask {
    pub text: bool,
    pub audio: bool,
    pub vision: bool,
}

impl TaskMask {
    pub const ALL: TaskMask = TaskMask { text: true, audio: true, vision: true };
    pub const NONE: TaskMask = TaskMask { text: false, audio: false, vision: false };

    pub fn enabled(&self, m: Modality) -> bool {
        self.as_array()[m.index()]
    }

    pub fn as_array(&self) -> [bool; 3] {
        [self.text, self.audio, self.vision]
    }

    /// Comma-separated task codes; `m` is always implied.
    pub fn parse(spec: &str) -> Result<Self, String> {
        let mut mask = TaskMask::NONE;
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.parse::<Task>()? {
                Task::Multimodal => {}
                Task::Text => mask.text = true,
                Task::Audio => mask.audio = true,
                Task::Vision => mask.vision = true,
            }
        }
        Ok(mask)
    }

    /// Canonical label, e.g. `m,t,a,v` or `m`.
    pub fn label(&self) -> String {
        let mut parts = vec!["m"];
        for (on, code) in [(self.text, "t"), (self.audio, "a"), (self.vision, "v")] {
            if on {
                parts.push(code);
            }
        }
        parts.join(",")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub epsilon: f64,
    /// Label clamp; `None` uses the dataset's declared range.
    pub label_range: Option<f64>,
    pub tasks: TaskMask,
    pub hidden_dims: [usize; 3],
    pub fusion_dim: usize,
    pub unimodal_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 1e-3,
            seed: 42,
            epsilon: 1e-4,
            label_range: None,
            tasks: TaskMask::ALL,
            hidden_dims: [16, 16, 16],
            fusion_dim: 64,
            unimodal_dim: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config("lr must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, input_dims: [usize; 3]) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig { input_dims, hidden_dims: self.hidden_dims },
            heads: HeadConfig { fusion_dim: self.fusion_dim, unimodal_dim: self.unimodal_dim },
            dropout: 0.0,
        }
    }
}

/// Per-task loss contributions, averaged over the training samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskLosses {
    pub m: f64,
    pub t: f64,
    pub a: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub task_losses: TaskLosses,
    /// `max_{s,j} |y_s⁽ⁱ⁾ − y_s⁽ⁱ⁻¹⁾|` over this epoch.
    pub max_label_drift: f64,
    /// Batches whose label generation was skipped for lack of one polarity.
    pub skipped_batches: usize,
    pub valid: MetricsBundle,
}

/// `W = tanh(|y_s − y_m|)`.
pub fn loss_weight(y_s: f64, y_m: f64) -> f64 {
    (y_s - y_m).abs().tanh()
}

/// Loss node and the value of each term.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub total: Var,
    /// Weighted contributions of m, t, a, v (0 for disabled subtasks).
    pub terms: [f64; 4],
    /// Constant nodes holding the batch targets and subtask weights.
    pub constants: Vec<Var>,
}

/// `(1/N) Σ (|ŷ_m − y_m| + Σ_{s∈mask} W_s·|ŷ_s − y_s|)` over a batch.
///
/// `y_m` and `u_labels` are the batch targets; labels and weights enter the
/// graph as constants.
pub fn compute_loss(g: &mut Graph, preds: [Var; 4], y_m: &[f64], u_labels: [&[f64]; 3], mask: TaskMask) -> Result<BatchLoss, TrainError> {
    let n = y_m.len();
    for (k, labels) in u_labels.iter().enumerate() {
        if labels.len() != n {
            return Err(TrainError::Config(format!("u-label batch {k} has {} entries, expected {n}", labels.len())));
        }
    }
    if n == 0 {
        return Err(TrainError::Config("empty batch".into()));
    }
    let target_m = g.constant(n, 1, y_m.to_vec())?;
    let mut total = g.l1_loss(preds[Task::Multimodal.index()], target_m, None)?;
    let mut terms = [g.value(total)[0], 0.0, 0.0, 0.0];
    let mut constants = vec![target_m];
    for m in Modality::ALL {
        if !mask.enabled(m) {
            continue;
        }
        let labels = u_labels[m.index()];
        let weights: Vec<f64> = labels.iter().zip(y_m).map(|(&ys, &ym)| loss_weight(ys, ym)).collect();
        let target = g.constant(n, 1, labels.to_vec())?;
        let w = g.constant(n, 1, weights)?;
        let term = g.l1_loss(preds[m.task().index()], target, Some(w))?;
        terms[m.task().index()] = g.value(term)[0];
        constants.extend([target, w]);
        total = g.add(total, term)?;
    }
    Ok(BatchLoss { total, terms, constants })
}

/// Metrics of `ŷ_m` against `y_m` on one split.
pub fn evaluate(model: &Model, dataset: &Dataset, split: Split) -> Result<MetricsBundle, TrainError> {
    let idx = dataset.indices(split);
    if idx.is_empty() {
        return Err(DataError::EmptySplit(split).into());
    }
    let preds = predict_indices(model, dataset, &idx)?;
    let targets: Vec<f64> = idx.iter().map(|&i| dataset.sample(i).label).collect();
    Ok(metrics::evaluate(&preds, &targets)?)
}

pub fn predict_indices(model: &Model, dataset: &Dataset, idx: &[usize]) -> Result<Vec<f64>, TrainError> {
    const EVAL_BATCH: usize = 256;
    let mut preds = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let samples: Vec<&Sample> = chunk.iter().map(|&i| dataset.sample(i)).collect();
        preds.extend(model.predict(&samples)?);
    }
    Ok(preds)
}

/// Mutable state of one training run.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    /// Dataset indices of the training split; ULGM state is indexed by
    /// position in this list.
    train_idx: Vec<usize>,
    model: Model,
    optimizer: AdamState,
    adam: AdamConfig,
    ulgm: Ulgm,
    epoch: usize,
    best: Option<(usize, f64, Model)>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Model::init(config.model_config(dataset.dims()), config.seed)?;
        Self::with_model(dataset, config, model)
    }

    /// Starts from an existing model (its dimensions must fit the dataset).
    pub fn with_model(dataset: &'a Dataset, config: TrainConfig, model: Model) -> Result<Self, TrainError> {
        config.validate()?;
        if model.config().encoder.input_dims != dataset.dims() {
            return Err(TrainError::Config("model input widths do not match the dataset".into()));
        }
        let train_idx = dataset.indices(Split::Train);
        if train_idx.is_empty() {
            return Err(DataError::EmptySplit(Split::Train).into());
        }
        let ulgm_config = UlgmConfig { epsilon: config.epsilon, label_range: config.label_range.unwrap_or(dataset.label_range()) };
        let m_labels: Vec<f64> = train_idx.iter().map(|&i| dataset.sample(i).label).collect();
        let mc = model.config();
        let h = mc.heads;
        let ulgm = Ulgm::new(ulgm_config, m_labels, [h.fusion_dim, h.unimodal_dim, h.unimodal_dim, h.unimodal_dim])?;
        let adam = AdamConfig { lr: config.lr, ..AdamConfig::default() };
        Ok(Self { dataset, config, train_idx, model, optimizer: AdamState::new(), adam, ulgm, epoch: 0, best: None })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn ulgm(&self) -> &Ulgm {
        &self.ulgm
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_idx
    }

    /// Validation-best model so far with its epoch.
    pub fn best(&self) -> Option<(usize, &Model)> {
        self.best.as_ref().map(|(e, _, m)| (*e, m))
    }

    /// Runs the next epoch.
    pub fn train_epoch(&mut self) -> Result<EpochReport, TrainError> {
        let epoch = self.epoch + 1;
        self.ulgm.begin_epoch(epoch);
        let positions: Vec<usize> = (0..self.train_idx.len()).collect();
        let order = batches(&positions, self.config.batch_size, epoch, self.config.seed)?;

        let mut loss_sum = 0.0;
        let mut term_sums = [0.0; 4];
        let mut skipped = 0;
        for (b, batch) in order.iter().enumerate() {
            let samples: Vec<&Sample> = batch.iter().map(|&p| self.dataset.sample(self.train_idx[p])).collect();
            let y_m: Vec<f64> = batch.iter().map(|&p| self.ulgm.labels().m_labels()[p]).collect();
            let u: Vec<Vec<f64>> = Modality::ALL.iter().map(|&m| batch.iter().map(|&p| self.ulgm.labels().get(m, p)).collect()).collect();

            let mut g = Graph::new();
            let bound = self.model.bind(&mut g)?;
            let out = bound.forward(&mut g, &samples)?;
            let loss = compute_loss(&mut g, out.preds, &y_m, [&u[0], &u[1], &u[2]], self.config.tasks)?;
            let value = g.value(loss.total)[0];
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b, value });
            }
            let n = batch.len() as f64;
            loss_sum += value * n;
            term_sums.iter_mut().zip(loss.terms).for_each(|(s, t)| *s += t * n);

            let mut grads = g.backward(loss.total)?;
            self.model.store_grads(&bound, &mut grads)?;
            adam_step(&mut self.model.params_mut(), &self.adam, &mut self.optimizer)?;

            let h = self.model.config().heads;
            let reps = BatchReps {
                dims: [h.fusion_dim, h.unimodal_dim, h.unimodal_dim, h.unimodal_dim],
                rows: out.reps.map(|v| g.value(v).to_vec()),
            };
            if epoch > 1 {
                if let BatchOutcome::Skipped(_) = self.ulgm.generate(batch, &reps, self.config.tasks.as_array())? {
                    skipped += 1;
                }
            }
            self.ulgm.update_reps(batch, &reps)?;
        }

        let total = self.train_idx.len() as f64;
        let valid = evaluate(&self.model, self.dataset, Split::Valid)?;
        if self.best.as_ref().is_none_or(|(_, mae, _)| valid.mae < *mae) {
            self.best = Some((epoch, valid.mae, self.model.clone()));
        }
        self.epoch = epoch;
        Ok(EpochReport {
            epoch,
            train_loss: loss_sum / total,
            task_losses: TaskLosses { m: term_sums[0] / total, t: term_sums[1] / total, a: term_sums[2] / total, v: term_sums[3] / total },
            max_label_drift: self.ulgm.labels().max_drift(),
            skipped_batches: skipped,
            valid,
        })
    }

    /// Current u-labels of every training sample as trajectory rows.
    pub fn trajectory(&self) -> Vec<TrajectoryRecord> {
        let labels = self.ulgm.labels();
        let mut out = Vec::with_capacity(self.train_idx.len() * 3);
        for (p, &i) in self.train_idx.iter().enumerate() {
            for m in Modality::ALL {
                out.push(TrajectoryRecord {
                    epoch: self.epoch,
                    id: self.dataset.sample(i).id.clone(),
                    modality: m,
                    y: labels.get(m, p),
                    delta: labels.delta(m, p),
                });
            }
        }
        out
    }

    pub fn into_parts(self) -> (Model, Option<(usize, Model)>, Ulgm) {
        (self.model, self.best.map(|(e, _, m)| (e, m)), self.ulgm)
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub final_model: Model,
    pub best_model: Model,
    pub best_epoch: usize,
    pub reports: Vec<EpochReport>,
    pub ulgm: Ulgm,
    pub train_indices: Vec<usize>,
}

/// Runs `config.epochs` epochs, calling `on_epoch` after each one.
pub fn train(
    dataset: &Dataset,
    config: TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport, &Trainer<'_>) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    let epochs = config.epochs;
    let mut trainer = Trainer::new(dataset, config)?;
    let mut reports = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let report = trainer.train_epoch()?;
        on_epoch(&report, &trainer)?;
        reports.push(report);
    }
    let train_indices = trainer.train_indices().to_vec();
    let (final_model, best, ulgm) = trainer.into_parts();
    let (best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { final_model, best_model, best_epoch, reports, ulgm, train_indices })
}
