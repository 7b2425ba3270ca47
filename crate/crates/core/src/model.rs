//! The full network: three sequence encoders shared (hard sharing) by the
//! multimodal head and the three unimodal heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, CheckpointError, Graph, Tensor, Var};
use crate::dataio::Sample;
use crate::encoders::{self, EncoderConfig, LstmParams};
use crate::fusion::{BoundHeads, HeadConfig, HeadParams, Projection};
use crate::{Modality, Task};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("input width {got}, expected {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub heads: HeadConfig,
    /// Dropout hook; only 0 is supported.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), heads: HeadConfig::default(), dropout: 0.0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let e = &self.encoder;
        if e.input_dims.contains(&0) || e.hidden_dims.contains(&0) || self.heads.fusion_dim == 0 || self.heads.unimodal_dim == 0 {
            return Err(ModelError::Config("all dimensions must be at least 1".into()));
        }
        if self.dropout != 0.0 {
            return Err(ModelError::Config("dropout is not supported".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub encoders: [LstmParams; 3],
    pub heads: HeadParams,
}

impl Model {
    /// Seeded initialization; encoders draw first, then heads.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoders = encoders::init_params_with(&config.encoder, &mut rng)?;
        let heads = HeadParams::init(config.encoder.hidden_dims, &config.heads, &mut rng)?;
        Ok(Self { config, encoders, heads })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self, m: Modality) -> &LstmParams {
        &self.encoders[m.index()]
    }

    /// Parameters with stable names, in canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for m in Modality::ALL {
            out.extend(self.encoders[m.index()].named(&format!("encoder.{}", m.code())));
        }
        for t in Task::ALL {
            let names = ["w1", "b1", "w2", "b2"];
            out.extend(names.iter().zip(self.heads.head(t).tensors()).map(|(n, p)| (format!("head.{}.{n}", t.code()), p)));
        }
        out
    }

    /// Mutable parameters in the same order as [`Model::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for enc in &mut self.encoders {
            out.extend(enc.tensors_mut());
        }
        for h in &mut self.heads.heads {
            out.extend(h.tensors_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Rebuilds a model from checkpoint records; dimensions are inferred
    /// from the tensor shapes.
    pub fn from_records(records: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let mut records = records.into_iter();
        let mut expect = |name: String| -> Result<Tensor, ModelError> {
            match records.next() {
                Some((n, t)) if n == name => Ok(t),
                Some((n, _)) => Err(ModelError::Config(format!("checkpoint record `{n}`, expected `{name}`"))),
                None => Err(ModelError::Config(format!("checkpoint is missing `{name}`"))),
            }
        };
        let mut encs = Vec::with_capacity(3);
        for m in Modality::ALL {
            let tensors =
                LstmParams::param_names().iter().map(|n| expect(format!("encoder.{}.{n}", m.code()))).collect::<Result<Vec<_>, _>>()?;
            encs.push(LstmParams::from_tensors(tensors)?);
        }
        let mut heads = Vec::with_capacity(4);
        for t in Task::ALL {
            let tensors =
                ["w1", "b1", "w2", "b2"].iter().map(|n| expect(format!("head.{}.{n}", t.code()))).collect::<Result<Vec<_>, _>>()?;
            heads.push(Projection::from_tensors(tensors)?);
        }
        if records.next().is_some() {
            return Err(ModelError::Config("checkpoint holds extra records".into()));
        }
        let encoders: [LstmParams; 3] = encs.try_into().expect("three encoders");
        let heads = HeadParams { heads: heads.try_into().expect("four heads") };
        let hidden_dims = encoders.each_ref().map(LstmParams::hidden_dim);
        let config = ModelConfig {
            encoder: EncoderConfig { input_dims: encoders.each_ref().map(LstmParams::input_dim), hidden_dims },
            heads: HeadConfig { fusion_dim: heads.head(Task::Multimodal).output_dim(), unimodal_dim: heads.head(Task::Text).output_dim() },
            dropout: 0.0,
        };
        let shapes_ok = heads.head(Task::Multimodal).input_dim() == hidden_dims.iter().sum::<usize>()
            && Modality::ALL.iter().all(|m| {
                let h = heads.head(m.task());
                h.input_dim() == hidden_dims[m.index()] && h.output_dim() == config.heads.unimodal_dim
            });
        if !shapes_ok {
            return Err(ModelError::Config("head shapes do not match encoder widths".into()));
        }
        Ok(Self { config, encoders, heads })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        Ok(crate::autodiff::save_checkpoint(path, &self.named_params())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let records = crate::autodiff::load_checkpoint(path)?;
        Self::from_records(records)
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundModel, ModelError> {
        let mut encoders = Vec::with_capacity(3);
        for e in &self.encoders {
            encoders.push(e.bind(g)?);
        }
        let heads = self.heads.bind(g)?;
        let mut leaves: Vec<Var> = encoders.iter().flat_map(|e: &encoders::BoundLstm| e.leaves().to_vec()).collect();
        leaves.extend(heads.leaves());
        Ok(BoundModel { encoders: encoders.try_into().expect("three encoders"), heads, leaves })
    }

    /// Multimodal predictions `ŷ_m` only. Unimodal heads are not evaluated.
    pub fn predict(&self, samples: &[&Sample]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g)?;
        let y = bound.predict_multimodal(&mut g, samples)?;
        Ok(g.value(y).to_vec())
    }

    /// Moves gradients from a backward pass into the parameter grad slots.
    pub fn store_grads(&mut self, bound: &BoundModel, grads: &mut crate::autodiff::Gradients) -> Result<(), ModelError> {
        for (t, &v) in self.params_mut().into_iter().zip(&bound.leaves) {
            grads.write_into(v, t)?;
        }
        Ok(())
    }
}

/// Model parameters recorded on a graph.
pub struct BoundModel {
    encoders: [encoders::BoundLstm; 3],
    heads: BoundHeads,
    leaves: Vec<Var>,
}

/// Nodes produced by one forward pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    /// `F_t, F_a, F_v`, each `B × d_s`.
    pub features: [Var; 3],
    /// `F_m*, F_t*, F_a*, F_v*` indexed by [`Task::index`].
    pub reps: [Var; 4],
    /// `ŷ_m, ŷ_t, ŷ_a, ŷ_v`, each `B × 1`, indexed by [`Task::index`].
    pub preds: [Var; 4],
}

impl BoundModel {
    /// Parameter leaves in [`Model::params_mut`] order.
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    pub fn heads(&self) -> &BoundHeads {
        &self.heads
    }

    pub fn encode(&self, g: &mut Graph, samples: &[&Sample]) -> Result<[Var; 3], ModelError> {
        let mut out = Vec::with_capacity(3);
        for m in Modality::ALL {
            let seqs: Vec<_> = samples.iter().map(|s| s.sequence(m)).collect();
            out.push(self.encoders[m.index()].encode(g, &seqs)?);
        }
        Ok(out.try_into().expect("three modalities"))
    }

    /// Full four-head forward. The unimodal heads read the same feature
    /// nodes that feed the fusion layer.
    pub fn forward(&self, g: &mut Graph, samples: &[&Sample]) -> Result<ForwardOutputs, ModelError> {
        let features = self.encode(g, samples)?;
        let [f_t, f_a, f_v] = features;
        let f_m = self.heads.fuse(g, f_t, f_a, f_v)?;
        let mut reps = [f_m; 4];
        for m in Modality::ALL {
            reps[m.task().index()] = self.heads.head(m.task()).project(g, features[m.index()])?;
        }
        let mut preds = [f_m; 4];
        for t in Task::ALL {
            preds[t.index()] = self.heads.head(t).predict(g, reps[t.index()])?;
        }
        Ok(ForwardOutputs { features, reps, preds })
    }

    pub fn predict_multimodal(&self, g: &mut Graph, samples: &[&Sample]) -> Result<Var, ModelError> {
        let [f_t, f_a, f_v] = self.encode(g, samples)?;
        let f_m = self.heads.fuse(g, f_t, f_a, f_v)?;
        self.heads.head(Task::Multimodal).predict(g, f_m)
    }
}
