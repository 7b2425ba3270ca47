//! Datasets: the sample model, the line-delimited file format, seeded
//! batching and a synthetic generator with known per-modality truths.
//!
//! # File format
//!
//! UTF-8, one JSON object per line. The first line is a header:
//!
//! ```text
//! {"format":"selfmm-dataset","version":1,"label_range":1.0e0,"dims":[8,8,8],"count":2000}
//! ```
//!
//! followed by `count` sample records:
//!
//! ```text
//! {"id":"s00000","split":"train","label":…,"text":[[…],…],"audio":[[…],…],"vision":[[…],…],
//!  "hidden":{"z_m":…,"z_t":…,"z_a":…,"z_v":…}}
//! ```
//!
//! `split` is one of `train`, `valid`, `test`. Each modality is a nonempty
//! array of time steps, each a numeric array of the declared width.
//! `hidden` is optional and only written by the synthetic generator. Every
//! number is written with 17 significant digits, so files round-trip
//! bit-exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde_json::{Map, Value};

use crate::Modality;

pub const FORMAT_TAG: &str = "selfmm-dataset";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: field `{field}`: {message}")]
    Parse { line: usize, field: String, message: String },
    #[error("sample `{id}`: {message}")]
    Validation { id: String, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("split `{0}` is empty")]
    EmptySplit(Split),
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// A `len × dim` feature sequence, row-major by time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Sequence {
    pub fn new(len: usize, dim: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if len == 0 || dim == 0 {
            return Err(DataError::Invalid("sequences must be nonempty".into()));
        }
        if len * dim != data.len() {
            return Err(DataError::Invalid(format!("sequence {len}x{dim} with {} values", data.len())));
        }
        Ok(Self { len, dim, data })
    }

    pub fn from_steps(steps: &[Vec<f64>]) -> Result<Self, DataError> {
        let dim = steps.first().map_or(0, Vec::len);
        if steps.iter().any(|s| s.len() != dim) {
            return Err(DataError::Invalid("ragged sequence".into()));
        }
        Self::new(steps.len(), dim, steps.concat())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// One data point as the model sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub text: Sequence,
    pub audio: Sequence,
    pub vision: Sequence,
    pub label: f64,
}

impl Sample {
    pub fn sequence(&self, modality: Modality) -> &Sequence {
        match modality {
            Modality::Text => &self.text,
            Modality::Audio => &self.audio,
            Modality::Vision => &self.vision,
        }
    }
}

/// Latent truths behind a synthetic sample. Kept outside [`Sample`] so the
/// model path cannot read them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HiddenTruth {
    pub z_m: f64,
    pub z_t: f64,
    pub z_a: f64,
    pub z_v: f64,
}

impl HiddenTruth {
    pub fn modality(&self, m: Modality) -> f64 {
        match m {
            Modality::Text => self.z_t,
            Modality::Audio => self.z_a,
            Modality::Vision => self.z_v,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    splits: Vec<Split>,
    hidden: Vec<Option<HiddenTruth>>,
    label_range: f64,
    dims: [usize; 3],
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        splits: Vec<Split>,
        hidden: Vec<Option<HiddenTruth>>,
        label_range: f64,
        dims: [usize; 3],
    ) -> Result<Self, DataError> {
        if !(label_range.is_finite() && label_range > 0.0) {
            return Err(DataError::Invalid(format!("label range must be positive, got {label_range}")));
        }
        if splits.len() != samples.len() || hidden.len() != samples.len() {
            return Err(DataError::Invalid("split/hidden tables do not cover every sample".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            let fail = |message: String| DataError::Validation { id: s.id.clone(), message };
            if s.id.is_empty() || s.id.contains(|c: char| c == ',' || c.is_control()) {
                return Err(fail("ids must be nonempty without commas or control characters".into()));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(fail("duplicate id".into()));
            }
            if !s.label.is_finite() || s.label.abs() > label_range {
                return Err(fail(format!("label {} outside [-{label_range}, {label_range}]", s.label)));
            }
            for m in Modality::ALL {
                let seq = s.sequence(m);
                if seq.dim() != dims[m.index()] {
                    return Err(fail(format!("{} width {} != declared {}", m.name(), seq.dim(), dims[m.index()])));
                }
                if seq.data().iter().any(|v| !v.is_finite()) {
                    return Err(fail(format!("{} has non-finite values", m.name())));
                }
            }
        }
        Ok(Self { samples, splits, hidden, label_range, dims })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> &Sample {
        &self.samples[index]
    }

    pub fn split_of(&self, index: usize) -> Split {
        self.splits[index]
    }

    pub fn label_range(&self) -> f64 {
        self.label_range
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Dataset indices belonging to `split`, in file order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Evaluation-only access to synthetic latent truths.
    pub fn hidden_truth(&self, index: usize) -> Option<HiddenTruth> {
        self.hidden[index]
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

fn write_sequence(out: &mut String, seq: &Sequence) {
    out.push('[');
    for t in 0..seq.len() {
        if t > 0 {
            out.push(',');
        }
        out.push('[');
        for (k, &v) in seq.step(t).iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            num(out, v);
        }
        out.push(']');
    }
    out.push(']');
}

pub fn write_dataset<W: Write>(mut w: W, dataset: &Dataset) -> Result<(), DataError> {
    let mut line = String::new();
    write!(line, "{{\"format\":\"{FORMAT_TAG}\",\"version\":{FORMAT_VERSION},\"label_range\":").unwrap();
    num(&mut line, dataset.label_range);
    let [dt, da, dv] = dataset.dims;
    writeln!(line, ",\"dims\":[{dt},{da},{dv}],\"count\":{}}}", dataset.len()).unwrap();
    w.write_all(line.as_bytes())?;

    for (i, s) in dataset.samples.iter().enumerate() {
        line.clear();
        line.push_str("{\"id\":");
        line.push_str(&serde_json::to_string(&s.id).expect("string serialization"));
        write!(line, ",\"split\":\"{}\",\"label\":", dataset.splits[i]).unwrap();
        num(&mut line, s.label);
        for m in Modality::ALL {
            write!(line, ",\"{}\":", m.name()).unwrap();
            write_sequence(&mut line, s.sequence(m));
        }
        if let Some(h) = dataset.hidden[i] {
            line.push_str(",\"hidden\":{");
            for (k, (name, v)) in [("z_m", h.z_m), ("z_t", h.z_t), ("z_a", h.z_a), ("z_v", h.z_v)].into_iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                write!(line, "\"{name}\":").unwrap();
                num(&mut line, v);
            }
            line.push('}');
        }
        line.push_str("}\n");
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    write_dataset(BufWriter::new(File::create(path)?), dataset)
}

struct Fields<'a> {
    line: usize,
    map: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn err(&self, field: &str, message: impl Into<String>) -> DataError {
        DataError::Parse { line: self.line, field: field.to_string(), message: message.into() }
    }

    fn get(&self, field: &str) -> Result<&'a Value, DataError> {
        self.map.get(field).ok_or_else(|| self.err(field, "missing"))
    }

    fn f64(&self, field: &str) -> Result<f64, DataError> {
        self.get(field)?.as_f64().ok_or_else(|| self.err(field, "expected a number"))
    }

    fn u64(&self, field: &str) -> Result<u64, DataError> {
        self.get(field)?.as_u64().ok_or_else(|| self.err(field, "expected a non-negative integer"))
    }

    fn str(&self, field: &str) -> Result<&'a str, DataError> {
        self.get(field)?.as_str().ok_or_else(|| self.err(field, "expected a string"))
    }

    fn sequence(&self, field: &str, dim: usize) -> Result<Sequence, DataError> {
        let steps = self.get(field)?.as_array().ok_or_else(|| self.err(field, "expected an array of steps"))?;
        if steps.is_empty() {
            return Err(self.err(field, "empty sequence"));
        }
        let mut data = Vec::with_capacity(steps.len() * dim);
        for (t, step) in steps.iter().enumerate() {
            let row = step.as_array().ok_or_else(|| self.err(field, format!("step {t} is not an array")))?;
            if row.len() != dim {
                return Err(self.err(field, format!("step {t} has width {}, declared {dim}", row.len())));
            }
            for v in row {
                data.push(v.as_f64().ok_or_else(|| self.err(field, format!("step {t} has a non-numeric value")))?);
            }
        }
        Sequence::new(steps.len(), dim, data).map_err(|e| self.err(field, e.to_string()))
    }
}

fn parse_object(line_no: usize, text: &str) -> Result<Map<String, Value>, DataError> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(DataError::Parse { line: line_no, field: "<record>".into(), message: "expected an object".into() }),
        Err(e) => Err(DataError::Parse { line: line_no, field: "<record>".into(), message: e.to_string() }),
    }
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset, DataError> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| DataError::Parse { line: 1, field: "format".into(), message: "empty file".into() })?;
    let header = header?;
    let map = parse_object(1, &header)?;
    let h = Fields { line: 1, map: &map };
    if h.str("format")? != FORMAT_TAG {
        return Err(h.err("format", format!("expected `{FORMAT_TAG}`")));
    }
    if h.u64("version")? != FORMAT_VERSION {
        return Err(h.err("version", format!("expected {FORMAT_VERSION}")));
    }
    let label_range = h.f64("label_range")?;
    let dims_v = h.get("dims")?.as_array().ok_or_else(|| h.err("dims", "expected an array"))?;
    let dims: Vec<usize> = dims_v.iter().filter_map(Value::as_u64).map(|d| d as usize).collect();
    if dims.len() != 3 || dims_v.len() != 3 || dims.contains(&0) {
        return Err(h.err("dims", "expected three positive widths"));
    }
    let dims = [dims[0], dims[1], dims[2]];
    let count = h.u64("count")? as usize;

    let mut samples = Vec::with_capacity(count);
    let mut splits = Vec::with_capacity(count);
    let mut hidden = Vec::with_capacity(count);
    let mut last_line = 1;
    for (line_no, text) in lines {
        let text = text?;
        last_line = line_no;
        if text.trim().is_empty() {
            continue;
        }
        let map = parse_object(line_no, &text)?;
        let f = Fields { line: line_no, map: &map };
        let id = f.str("id")?.to_string();
        let split: Split = f.str("split")?.parse().map_err(|e: String| f.err("split", e))?;
        let label = f.f64("label")?;
        let text_seq = f.sequence("text", dims[0])?;
        let audio = f.sequence("audio", dims[1])?;
        let vision = f.sequence("vision", dims[2])?;
        let truth = match map.get("hidden") {
            None | Some(Value::Null) => None,
            Some(Value::Object(hm)) => {
                let hf = Fields { line: line_no, map: hm };
                Some(HiddenTruth { z_m: hf.f64("z_m")?, z_t: hf.f64("z_t")?, z_a: hf.f64("z_a")?, z_v: hf.f64("z_v")? })
            }
            Some(_) => return Err(f.err("hidden", "expected an object")),
        };
        samples.push(Sample { id, text: text_seq, audio, vision, label });
        splits.push(split);
        hidden.push(truth);
    }
    if samples.len() != count {
        return Err(DataError::Parse {
            line: last_line + 1,
            field: "count".into(),
            message: format!("header declares {count} samples, file holds {} (truncated?)", samples.len()),
        });
    }
    Dataset::new(samples, splits, hidden, label_range, dims)
}

pub fn load(path: &Path) -> Result<Dataset, DataError> {
    read_dataset(BufReader::new(File::open(path)?))
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Shuffles `indices` with a generator keyed on `(seed, epoch)` and chunks
/// the result. The final partial batch is kept.
pub fn batches(indices: &[usize], batch_size: usize, epoch: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::ZeroBatchSize);
    }
    if indices.is_empty() {
        return Err(DataError::EmptySplit(Split::Train));
    }
    let mut order = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Knobs for [`synth_generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Labels and latents live in `[-label_range, label_range]`.
    pub label_range: f64,
    /// Per-modality latent noise `σ_t, σ_a, σ_v` around the multimodal truth.
    pub modality_noise: [f64; 3],
    /// Standard deviation of the annotation noise on `y_m`.
    pub label_noise: f64,
    /// Per-step feature noise inside each sequence.
    pub step_noise: f64,
    pub dims: [usize; 3],
    /// Inclusive sequence-length range.
    pub seq_len: (usize, usize),
    /// Fractions assigned to train and valid; the rest is test.
    pub train_fraction: f64,
    pub valid_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            label_range: 1.0,
            modality_noise: [0.3, 0.6, 0.8],
            label_noise: 0.1,
            step_noise: 0.5,
            dims: [8, 8, 8],
            seq_len: (10, 20),
            train_fraction: 0.7,
            valid_fraction: 0.15,
        }
    }
}

/// Draws a synthetic multimodal dataset.
///
/// `z_m ~ U(-L, L)`; each modality latent is `clamp(z_m + N(0, σ_s))`; each
/// modality sequence embeds its latent along a fixed random direction with
/// a fixed random offset, plus per-step noise; `y_m = clamp(z_m + N(0, σ_y))`.
pub fn synth_generate(n: usize, seed: u64, spec: &SynthSpec) -> Result<Dataset, DataError> {
    if n < 10 {
        return Err(DataError::Invalid(format!("synthetic datasets need at least 10 samples, got {n}")));
    }
    let l = spec.label_range;
    if !(l.is_finite() && l > 0.0) {
        return Err(DataError::Invalid(format!("label range must be positive, got {l}")));
    }
    let (lo, hi) = spec.seq_len;
    if lo == 0 || hi < lo {
        return Err(DataError::Invalid(format!("bad sequence length range {lo}..={hi}")));
    }
    if spec.dims.contains(&0) {
        return Err(DataError::Invalid("feature widths must be positive".into()));
    }
    let bad_sigma = |s: f64| !(s.is_finite() && s >= 0.0);
    if spec.modality_noise.iter().copied().any(bad_sigma) || bad_sigma(spec.label_noise) || bad_sigma(spec.step_noise) {
        return Err(DataError::Invalid("noise levels must be finite and non-negative".into()));
    }
    let frac_ok = |f: f64| (0.0..=1.0).contains(&f);
    if !frac_ok(spec.train_fraction) || !frac_ok(spec.valid_fraction) || spec.train_fraction + spec.valid_fraction > 1.0 {
        return Err(DataError::Invalid("split fractions must lie in [0, 1] and sum to at most 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let clamp = |v: f64| v.clamp(-l, l);

    // Per-modality embedding direction (unit norm, scaled to the feature
    // width) and offset.
    let mut directions = Vec::with_capacity(3);
    let mut offsets = Vec::with_capacity(3);
    for &d in &spec.dims {
        let mut dir: Vec<f64> = (0..d).map(|_| std_normal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let scale = (d as f64).sqrt() / norm / l;
        dir.iter_mut().for_each(|v| *v *= scale);
        directions.push(dir);
        offsets.push((0..d).map(|_| 0.5 * std_normal.sample(&mut rng)).collect::<Vec<f64>>());
    }

    let latent = Uniform::new_inclusive(-l, l).expect("valid range");
    let mut samples = Vec::with_capacity(n);
    let mut hidden = Vec::with_capacity(n);
    for i in 0..n {
        let z_m = latent.sample(&mut rng);
        let mut z = [0.0; 3];
        for (s, zs) in z.iter_mut().enumerate() {
            *zs = clamp(z_m + spec.modality_noise[s] * std_normal.sample(&mut rng));
        }
        let label = clamp(z_m + spec.label_noise * std_normal.sample(&mut rng));
        let mut seqs = Vec::with_capacity(3);
        for s in 0..3 {
            let len = rng.random_range(lo..=hi);
            let d = spec.dims[s];
            let mut data = Vec::with_capacity(len * d);
            for _ in 0..len {
                for k in 0..d {
                    data.push(z[s] * directions[s][k] + offsets[s][k] + spec.step_noise * std_normal.sample(&mut rng));
                }
            }
            seqs.push(Sequence::new(len, d, data)?);
        }
        let vision = seqs.pop().expect("three sequences");
        let audio = seqs.pop().expect("three sequences");
        let text = seqs.pop().expect("three sequences");
        samples.push(Sample { id: format!("s{i:05}"), text, audio, vision, label });
        hidden.push(Some(HiddenTruth { z_m, z_t: z[0], z_a: z[1], z_v: z[2] }));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * spec.train_fraction).round() as usize;
    let n_valid = ((n as f64) * spec.valid_fraction).round() as usize;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Dataset::new(samples, splits, hidden, l, spec.dims)
}
