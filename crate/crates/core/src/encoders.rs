//! Single-direction LSTM sequence encoders producing `F_t`, `F_a`, `F_v`.
//!
//! The representation of a sequence is the hidden state after its last step,
//! starting from zero hidden and cell states. Batches of sequences with
//! different lengths are unrolled together; a sample whose sequence has
//! ended keeps its state unchanged for the remaining steps, so its output is
//! the state after its own last step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Graph, Tensor, Var};
use crate::dataio::Sequence;
use crate::model::ModelError;
use crate::Modality;

/// Gate weights `(hidden × (input + hidden))` applied to `[x; h]`, and gate
/// biases `[1, hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    input_dim: usize,
    hidden_dim: usize,
    pub w_input: Tensor,
    pub w_forget: Tensor,
    pub w_output: Tensor,
    pub w_cell: Tensor,
    pub b_input: Tensor,
    pub b_forget: Tensor,
    pub b_output: Tensor,
    pub b_cell: Tensor,
}

const PARAM_NAMES: [&str; 8] = ["w_input", "w_forget", "w_output", "w_cell", "b_input", "b_forget", "b_output", "b_cell"];

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Result<Self, ModelError> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(ModelError::Config("LSTM dimensions must be at least 1".into()));
        }
        let w = || Tensor::zeros(vec![hidden_dim, input_dim + hidden_dim]).map(Tensor::with_grad);
        let b = || Tensor::zeros(vec![1, hidden_dim]).map(Tensor::with_grad);
        Ok(Self {
            input_dim,
            hidden_dim,
            w_input: w()?,
            w_forget: w()?,
            w_output: w()?,
            w_cell: w()?,
            b_input: b()?,
            b_forget: b()?,
            b_output: b()?,
            b_cell: b()?,
        })
    }

    /// Uniform draws in `±1/√hidden`, forget-gate bias fixed at `+1`.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let mut p = Self::zeros(input_dim, hidden_dim)?;
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for t in [&mut p.w_input, &mut p.w_forget, &mut p.w_output, &mut p.w_cell, &mut p.b_input, &mut p.b_output, &mut p.b_cell] {
            t.data_mut().iter_mut().for_each(|v| *v = dist.sample(rng));
        }
        p.b_forget.data_mut().fill(1.0);
        Ok(p)
    }

    /// Rebuilds parameters from eight tensors in [`LstmParams::tensors`] order.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        let [w_input, w_forget, w_output, w_cell, b_input, b_forget, b_output, b_cell]: [Tensor; 8] =
            tensors.try_into().map_err(|_| ModelError::Config("an LSTM needs eight tensors".into()))?;
        let (hidden_dim, total) = w_input.dims2().ok_or_else(|| ModelError::Config("LSTM weight must be a matrix".into()))?;
        if total <= hidden_dim {
            return Err(ModelError::Config("LSTM weight narrower than its hidden size".into()));
        }
        let mut p = Self::zeros(total - hidden_dim, hidden_dim)?;
        for (dst, src) in p.tensors_mut().into_iter().zip([w_input, w_forget, w_output, w_cell, b_input, b_forget, b_output, b_cell]) {
            if dst.shape() != src.shape() {
                return Err(ModelError::Config(format!("LSTM tensor shape {:?}, expected {:?}", src.shape(), dst.shape())));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [&self.w_input, &self.w_forget, &self.w_output, &self.w_cell, &self.b_input, &self.b_forget, &self.b_output, &self.b_cell]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w_input,
            &mut self.w_forget,
            &mut self.w_output,
            &mut self.w_cell,
            &mut self.b_input,
            &mut self.b_forget,
            &mut self.b_output,
            &mut self.b_cell,
        ]
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        PARAM_NAMES.iter().zip(self.tensors()).map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
    }

    pub fn param_names() -> [&'static str; 8] {
        PARAM_NAMES
    }

    /// Records the parameters on `g`. Gradients flow to the eight leaves
    /// when the tensors have `requires_grad` set.
    pub fn bind(&self, g: &mut Graph) -> Result<BoundLstm, ModelError> {
        let leaves = self.tensors().map(|t| g.leaf(t)).into_iter().collect::<Result<Vec<_>, _>>()?;
        // [W_i; W_f; W_o; W_g]ᵀ : (input + hidden) × 4·hidden
        let stacked = g.concat(&leaves[0..4], 0)?;
        let weight = g.transpose(stacked);
        let bias = g.concat(&leaves[4..8], 1)?;
        Ok(BoundLstm { input_dim: self.input_dim, hidden_dim: self.hidden_dim, leaves, weight, bias })
    }
}

/// LSTM parameters recorded on a graph.
#[derive(Clone, Debug)]
pub struct BoundLstm {
    input_dim: usize,
    hidden_dim: usize,
    leaves: Vec<Var>,
    weight: Var,
    bias: Var,
}

impl BoundLstm {
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    /// One recurrence step on a batch: `x: B×input`, `h, c: B×hidden`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var), ModelError> {
        let hd = self.hidden_dim;
        let z = g.concat(&[x, h], 1)?;
        let pre = g.matmul(z, self.weight)?;
        let pre = g.add_bias(pre, self.bias)?;
        let i = g.slice_cols(pre, 0, hd)?;
        let f = g.slice_cols(pre, hd, hd)?;
        let o = g.slice_cols(pre, 2 * hd, hd)?;
        let cand = g.slice_cols(pre, 3 * hd, hd)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let o = g.sigmoid(o);
        let cand = g.tanh(cand);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    fn check(&self, seq: &Sequence) -> Result<(), ModelError> {
        if seq.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if seq.dim() != self.input_dim {
            return Err(ModelError::InputDim { expected: self.input_dim, got: seq.dim() });
        }
        Ok(())
    }

    /// End-state hidden vectors for a batch of sequences, `B × hidden`.
    pub fn encode(&self, g: &mut Graph, seqs: &[&Sequence]) -> Result<Var, ModelError> {
        if seqs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for s in seqs {
            self.check(s)?;
        }
        let b = seqs.len();
        let (d, hd) = (self.input_dim, self.hidden_dim);
        let max_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut h = g.constant(b, hd, vec![0.0; b * hd])?;
        let mut c = g.constant(b, hd, vec![0.0; b * hd])?;
        for t in 0..max_len {
            let mut x = vec![0.0; b * d];
            for (row, s) in seqs.iter().enumerate() {
                if t < s.len() {
                    x[row * d..(row + 1) * d].copy_from_slice(s.step(t));
                }
            }
            let x = g.constant(b, d, x)?;
            let (h_next, c_next) = self.step(g, x, h, c)?;
            if seqs.iter().all(|s| t < s.len()) {
                h = h_next;
                c = c_next;
                continue;
            }
            // Finished rows carry their state: state = m·next + (1 - m)·prev.
            let mut keep_new = vec![0.0; b * hd];
            for (row, s) in seqs.iter().enumerate() {
                if t < s.len() {
                    keep_new[row * hd..(row + 1) * hd].fill(1.0);
                }
            }
            let keep_old: Vec<f64> = keep_new.iter().map(|m| 1.0 - m).collect();
            let m_new = g.constant(b, hd, keep_new)?;
            let m_old = g.constant(b, hd, keep_old)?;
            h = blend(g, m_new, m_old, h_next, h)?;
            c = blend(g, m_new, m_old, c_next, c)?;
        }
        Ok(h)
    }

    /// Per-step `(h, c)` for a single sequence.
    pub fn trace(&self, g: &mut Graph, seq: &Sequence) -> Result<Vec<(Var, Var)>, ModelError> {
        self.check(seq)?;
        let hd = self.hidden_dim;
        let mut h = g.constant(1, hd, vec![0.0; hd])?;
        let mut c = g.constant(1, hd, vec![0.0; hd])?;
        let mut states = Vec::with_capacity(seq.len());
        for t in 0..seq.len() {
            let x = g.constant(1, self.input_dim, seq.step(t).to_vec())?;
            (h, c) = self.step(g, x, h, c)?;
            states.push((h, c));
        }
        Ok(states)
    }
}

fn blend(g: &mut Graph, m_new: Var, m_old: Var, next: Var, prev: Var) -> Result<Var, ModelError> {
    let a = g.mul(m_new, next)?;
    let b = g.mul(m_old, prev)?;
    Ok(g.add(a, b)?)
}

/// One cell step on plain vectors.
pub fn lstm_cell_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], params: &LstmParams) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let hd = params.hidden_dim();
    if x.len() != params.input_dim() {
        return Err(ModelError::InputDim { expected: params.input_dim(), got: x.len() });
    }
    if h_prev.len() != hd || c_prev.len() != hd {
        return Err(ModelError::InputDim { expected: hd, got: h_prev.len().max(c_prev.len()) });
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g)?;
    let x = g.constant(1, x.len(), x.to_vec())?;
    let h = g.constant(1, hd, h_prev.to_vec())?;
    let c = g.constant(1, hd, c_prev.to_vec())?;
    let (h, c) = bound.step(&mut g, x, h, c)?;
    Ok((g.value(h).to_vec(), g.value(c).to_vec()))
}

/// End-state hidden vector of one sequence.
pub fn encode_sequence(seq: &Sequence, params: &LstmParams) -> Result<Vec<f64>, ModelError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g)?;
    let h = bound.encode(&mut g, &[seq])?;
    Ok(g.value(h).to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Feature widths `d'_t, d'_a, d'_v`.
    pub input_dims: [usize; 3],
    /// Representation widths `d_t, d_a, d_v`.
    pub hidden_dims: [usize; 3],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { input_dims: [8, 8, 8], hidden_dims: [16, 16, 16] }
    }
}

/// Deterministic per-modality parameters (text, audio, vision order).
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<[LstmParams; 3], ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params_with(config, &mut rng)
}

pub(crate) fn init_params_with(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<[LstmParams; 3], ModelError> {
    let mut out = Vec::with_capacity(3);
    for m in Modality::ALL {
        out.push(LstmParams::init(config.input_dims[m.index()], config.hidden_dims[m.index()], rng)?);
    }
    Ok(out.try_into().expect("three modalities"))
}
