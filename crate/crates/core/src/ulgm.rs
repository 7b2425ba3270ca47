//! Unimodal label generation.
//!
//! A non-parametric module that turns the multimodal label `y_m` and the
//! current representations `F_m*`, `F_s*` into unimodal targets `y_s`:
//!
//! 1. Class centers per representation kind: the mean stored representation
//!    over samples with `y_m > 0` (positive) and `y_m < 0` (negative).
//! 2. Distances `D = ‖F − C‖² / √d` to both centers and the relative
//!    distance value `α = (Dⁿ − Dᵖ) / (Dᵖ + ε)`.
//! 3. The shifted label `y_s = y_m + (α_s − α_m)/2 · (y_m + α_m)/α_m`.
//! 4. A momentum merge across epochs,
//!    `y⁽ⁱ⁾ = (i−1)/(i+1)·y⁽ⁱ⁻¹⁾ + 2/(i+1)·yⁱ`, with `y⁽¹⁾ = y_m`.
//!
//! Nothing here touches the differentiation graph: representations enter as
//! plain value slices.

use crate::{Modality, Task};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UlgmError {
    #[error("degenerate centers for `{task}`: {positives} positive and {negatives} negative samples")]
    DegenerateCenters { task: Task, positives: usize, negatives: usize },
    #[error("representation width {got} for `{task}`, store holds width {expected}")]
    DimMismatch { task: Task, expected: usize, got: usize },
    #[error("momentum update needs epoch >= 2, got {0}")]
    EpochTooEarly(usize),
    #[error("sample index {index} out of range for {len} samples")]
    UnknownSample { index: usize, len: usize },
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("invalid ULGM configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UlgmConfig {
    /// Guards the relative distance denominator and the `α_m` division.
    pub epsilon: f64,
    /// Generated labels are clamped to `[-label_range, label_range]`.
    pub label_range: f64,
}

impl Default for UlgmConfig {
    fn default() -> Self {
        Self { epsilon: 1e-4, label_range: 1.0 }
    }
}

impl UlgmConfig {
    pub fn validate(&self) -> Result<(), UlgmError> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(UlgmError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.label_range.is_finite() && self.label_range > 0.0) {
            return Err(UlgmError::Config(format!("label range must be positive, got {}", self.label_range)));
        }
        Ok(())
    }
}

/// Latest `F*` per sample for each of m, t, a, v. Starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalRepStore {
    len: usize,
    dims: [usize; 4],
    reps: [Vec<f64>; 4],
}

impl GlobalRepStore {
    pub fn new(len: usize, dims: [usize; 4]) -> Self {
        Self { len, dims, reps: dims.map(|d| vec![0.0; len * d]) }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self, task: Task) -> usize {
        self.dims[task.index()]
    }

    pub fn get(&self, task: Task, sample: usize) -> &[f64] {
        let d = self.dims[task.index()];
        &self.reps[task.index()][sample * d..(sample + 1) * d]
    }

    /// Overwrites the stored representation of `sample`.
    pub fn update(&mut self, task: Task, sample: usize, rep: &[f64]) -> Result<(), UlgmError> {
        let d = self.dims[task.index()];
        if rep.len() != d {
            return Err(UlgmError::DimMismatch { task, expected: d, got: rep.len() });
        }
        if sample >= self.len {
            return Err(UlgmError::UnknownSample { index: sample, len: self.len });
        }
        self.reps[task.index()][sample * d..(sample + 1) * d].copy_from_slice(rep);
        Ok(())
    }

    /// Writes a batch: `reps[task]` holds `samples.len()` rows, row-major.
    pub fn update_batch(&mut self, samples: &[usize], reps: &BatchReps) -> Result<(), UlgmError> {
        reps.check(samples.len(), &self.dims)?;
        for task in Task::ALL {
            for (row, &sample) in samples.iter().enumerate() {
                self.update(task, sample, reps.row(task, row))?;
            }
        }
        Ok(())
    }
}

/// Batch representations `F_m*, F_t*, F_a*, F_v*` as row-major value buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchReps {
    pub dims: [usize; 4],
    pub rows: [Vec<f64>; 4],
}

impl BatchReps {
    pub fn row(&self, task: Task, row: usize) -> &[f64] {
        let d = self.dims[task.index()];
        &self.rows[task.index()][row * d..(row + 1) * d]
    }

    fn check(&self, batch: usize, dims: &[usize; 4]) -> Result<(), UlgmError> {
        for task in Task::ALL {
            let (d, expected) = (self.dims[task.index()], dims[task.index()]);
            if d != expected {
                return Err(UlgmError::DimMismatch { task, expected, got: d });
            }
            if self.rows[task.index()].len() != batch * d {
                return Err(UlgmError::LabelCount { expected: batch * d, got: self.rows[task.index()].len() });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Centers {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub n_positive: usize,
    pub n_negative: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterState {
    centers: [Centers; 4],
}

impl CenterState {
    pub fn get(&self, task: Task) -> &Centers {
        &self.centers[task.index()]
    }
}

/// Positive/negative class means of the stored representations, split by
/// the sign of `m_labels`. Zero labels join neither class.
pub fn compute_centers(store: &GlobalRepStore, m_labels: &[f64]) -> Result<CenterState, UlgmError> {
    if m_labels.len() != store.len() {
        return Err(UlgmError::LabelCount { expected: store.len(), got: m_labels.len() });
    }
    let n_positive = m_labels.iter().filter(|&&y| y > 0.0).count();
    let n_negative = m_labels.iter().filter(|&&y| y < 0.0).count();
    let mut out = Vec::with_capacity(4);
    for task in Task::ALL {
        if n_positive == 0 || n_negative == 0 {
            return Err(UlgmError::DegenerateCenters { task, positives: n_positive, negatives: n_negative });
        }
        let d = store.dim(task);
        let mut positive = vec![0.0; d];
        let mut negative = vec![0.0; d];
        for (j, &y) in m_labels.iter().enumerate() {
            let target = if y > 0.0 {
                &mut positive
            } else if y < 0.0 {
                &mut negative
            } else {
                continue;
            };
            target.iter_mut().zip(store.get(task, j)).for_each(|(c, f)| *c += f);
        }
        positive.iter_mut().for_each(|c| *c /= n_positive as f64);
        negative.iter_mut().for_each(|c| *c /= n_negative as f64);
        out.push(Centers { positive, negative, n_positive, n_negative });
    }
    Ok(CenterState { centers: out.try_into().expect("four tasks") })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeDistance {
    pub d_pos: f64,
    pub d_neg: f64,
    pub alpha: f64,
}

/// `Dᵖ`, `Dⁿ` and `α` of one representation against its centers.
pub fn relative_distance(rep: &[f64], centers: &Centers, epsilon: f64) -> Result<RelativeDistance, UlgmError> {
    let d = centers.positive.len();
    if rep.len() != d {
        return Err(UlgmError::DimMismatch { task: Task::Multimodal, expected: d, got: rep.len() });
    }
    let scale = (d as f64).sqrt();
    let sq = |c: &[f64]| rep.iter().zip(c).map(|(f, c)| (f - c) * (f - c)).sum::<f64>();
    let d_pos = sq(&centers.positive) / scale;
    let d_neg = sq(&centers.negative) / scale;
    Ok(RelativeDistance { d_pos, d_neg, alpha: (d_neg - d_pos) / (d_pos + epsilon) })
}

/// `α_m` pushed away from zero: `sign(α_m)·max(|α_m|, ε)` with `sign(0) = +1`.
pub fn guard_alpha(alpha_m: f64, epsilon: f64) -> f64 {
    let mag = alpha_m.abs().max(epsilon);
    if alpha_m < 0.0 {
        -mag
    } else {
        mag
    }
}

/// Shifting value `δ_sm = (α_s − α_m)/2 · (y_m + α_m)/α_m` (guarded `α_m`).
pub fn shifting_value(y_m: f64, alpha_s: f64, alpha_m: f64, epsilon: f64) -> f64 {
    let alpha_m = guard_alpha(alpha_m, epsilon);
    (alpha_s - alpha_m) / 2.0 * (y_m + alpha_m) / alpha_m
}

/// Fresh unimodal label `y_m + δ_sm`, clamped to the label range.
pub fn generate_label(y_m: f64, alpha_s: f64, alpha_m: f64, config: &UlgmConfig) -> f64 {
    let l = config.label_range;
    (y_m + shifting_value(y_m, alpha_s, alpha_m, config.epsilon)).clamp(-l, l)
}

/// Momentum merge of a fresh label into the running one at `epoch >= 2`.
pub fn momentum_update(prev: f64, fresh: f64, epoch: usize) -> Result<f64, UlgmError> {
    if epoch < 2 {
        return Err(UlgmError::EpochTooEarly(epoch));
    }
    // (i−1)/(i+1)·prev + 2/(i+1)·fresh, written so that fresh == prev is a fixed point.
    Ok(prev + 2.0 / (epoch as f64 + 1.0) * (fresh - prev))
}

/// Running unimodal labels `y_s⁽ⁱ⁾` for every sample and modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ULabelStore {
    m_labels: Vec<f64>,
    labels: [Vec<f64>; 3],
    epoch_start: [Vec<f64>; 3],
    epoch: usize,
}

impl ULabelStore {
    /// Every u-label starts at `y_m` (epoch 1).
    pub fn new(m_labels: Vec<f64>) -> Self {
        let labels = [m_labels.clone(), m_labels.clone(), m_labels.clone()];
        Self { epoch_start: labels.clone(), labels, m_labels, epoch: 1 }
    }

    pub fn len(&self) -> usize {
        self.m_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_labels.is_empty()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn m_labels(&self) -> &[f64] {
        &self.m_labels
    }

    pub fn labels(&self, modality: Modality) -> &[f64] {
        &self.labels[modality.index()]
    }

    pub fn get(&self, modality: Modality, sample: usize) -> f64 {
        self.labels[modality.index()][sample]
    }

    /// Current offset of a u-label from its m-label.
    pub fn delta(&self, modality: Modality, sample: usize) -> f64 {
        self.labels[modality.index()][sample] - self.m_labels[sample]
    }

    /// Marks the start of `epoch` and snapshots labels for drift tracking.
    pub fn begin_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.epoch_start = self.labels.clone();
    }

    /// Momentum-merges a fresh label at the current epoch.
    pub fn merge(&mut self, modality: Modality, sample: usize, fresh: f64) -> Result<f64, UlgmError> {
        if sample >= self.len() {
            return Err(UlgmError::UnknownSample { index: sample, len: self.len() });
        }
        let slot = &mut self.labels[modality.index()][sample];
        *slot = momentum_update(*slot, fresh, self.epoch)?;
        Ok(*slot)
    }

    /// `max_{s,j} |y_s⁽ⁱ⁾ − y_s⁽ⁱ⁻¹⁾|` since the last [`ULabelStore::begin_epoch`].
    pub fn max_drift(&self) -> f64 {
        self.labels
            .iter()
            .zip(&self.epoch_start)
            .flat_map(|(now, then)| now.iter().zip(then).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

/// Per-sample diagnostics of one label generation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedLabel {
    pub sample: usize,
    /// `α_m, α_t, α_a, α_v`
    pub alpha: [f64; 4],
    /// Fresh labels `y_t, y_a, y_v` before the momentum merge.
    pub fresh: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub enum BatchOutcome {
    Updated(Vec<GeneratedLabel>),
    /// Centers could not be formed; labels carried over unchanged.
    Skipped(UlgmError),
}

/// Representation store, label store and configuration for one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Ulgm {
    config: UlgmConfig,
    reps: GlobalRepStore,
    labels: ULabelStore,
}

impl Ulgm {
    pub fn new(config: UlgmConfig, m_labels: Vec<f64>, rep_dims: [usize; 4]) -> Result<Self, UlgmError> {
        config.validate()?;
        if let Some(y) = m_labels.iter().find(|y| y.is_nan() || y.abs() > config.label_range) {
            return Err(UlgmError::Config(format!("m-label {y} outside the label range")));
        }
        let reps = GlobalRepStore::new(m_labels.len(), rep_dims);
        Ok(Self { config, reps, labels: ULabelStore::new(m_labels) })
    }

    pub fn config(&self) -> &UlgmConfig {
        &self.config
    }

    pub fn reps(&self) -> &GlobalRepStore {
        &self.reps
    }

    pub fn labels(&self) -> &ULabelStore {
        &self.labels
    }

    pub fn begin_epoch(&mut self, epoch: usize) {
        self.labels.begin_epoch(epoch);
    }

    pub fn centers(&self) -> Result<CenterState, UlgmError> {
        compute_centers(&self.reps, self.labels.m_labels())
    }

    /// Generates fresh labels for the batch members of the enabled
    /// modalities from the current centers and merges them with momentum.
    pub fn generate(&mut self, samples: &[usize], reps: &BatchReps, enabled: [bool; 3]) -> Result<BatchOutcome, UlgmError> {
        reps.check(samples.len(), &self.reps.dims)?;
        let centers = match self.centers() {
            Ok(c) => c,
            Err(e @ UlgmError::DegenerateCenters { .. }) => return Ok(BatchOutcome::Skipped(e)),
            Err(e) => return Err(e),
        };
        let eps = self.config.epsilon;
        let mut out = Vec::with_capacity(samples.len());
        for (row, &sample) in samples.iter().enumerate() {
            let mut alpha = [0.0; 4];
            for task in Task::ALL {
                alpha[task.index()] = relative_distance(reps.row(task, row), centers.get(task), eps)?.alpha;
            }
            let y_m = self.labels.m_labels()[sample];
            let mut fresh = [y_m; 3];
            for m in Modality::ALL {
                if !enabled[m.index()] {
                    continue;
                }
                fresh[m.index()] = generate_label(y_m, alpha[m.task().index()], alpha[Task::Multimodal.index()], &self.config);
                self.labels.merge(m, sample, fresh[m.index()])?;
            }
            out.push(GeneratedLabel { sample, alpha, fresh });
        }
        Ok(BatchOutcome::Updated(out))
    }

    pub fn update_reps(&mut self, samples: &[usize], reps: &BatchReps) -> Result<(), UlgmError> {
        self.reps.update_batch(samples, reps)
    }
}
