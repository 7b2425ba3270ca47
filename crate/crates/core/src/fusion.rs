//! Late fusion and the four regression heads.
//!
//! Every task has a projection `F* = relu(Fᵀ·W1 + b1)` followed by an affine
//! regressor `ŷ = F*ᵀ·W2 + b2`. The multimodal projection reads the
//! concatenation `[F_t; F_a; F_v]`; each unimodal projection reads its own
//! modality representation.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Graph, Tensor, Var};
use crate::model::ModelError;
use crate::{Modality, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `in × out`
    pub w1: Tensor,
    /// `1 × out`
    pub b1: Tensor,
    /// `out × 1`
    pub w2: Tensor,
    /// `1 × 1`
    pub b2: Tensor,
}

impl Projection {
    pub fn zeros(input: usize, output: usize) -> Result<Self, ModelError> {
        if input == 0 || output == 0 {
            return Err(ModelError::Config("projection dimensions must be at least 1".into()));
        }
        let z = |shape: Vec<usize>| Tensor::zeros(shape).map(Tensor::with_grad);
        Ok(Self { w1: z(vec![input, output])?, b1: z(vec![1, output])?, w2: z(vec![output, 1])?, b2: z(vec![1, 1])? })
    }

    /// Uniform in `±1/√fan_in` for both layers.
    pub fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let mut p = Self::zeros(input, output)?;
        let first = Uniform::new_inclusive(-1.0 / (input as f64).sqrt(), 1.0 / (input as f64).sqrt()).expect("finite");
        let second = Uniform::new_inclusive(-1.0 / (output as f64).sqrt(), 1.0 / (output as f64).sqrt()).expect("finite");
        p.w1.data_mut().iter_mut().for_each(|v| *v = first.sample(rng));
        p.b1.data_mut().iter_mut().for_each(|v| *v = first.sample(rng));
        p.w2.data_mut().iter_mut().for_each(|v| *v = second.sample(rng));
        p.b2.data_mut().iter_mut().for_each(|v| *v = second.sample(rng));
        Ok(p)
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        let [w1, b1, w2, b2]: [Tensor; 4] = tensors.try_into().map_err(|_| ModelError::Config("a projection needs four tensors".into()))?;
        let (input, output) = w1.dims2().ok_or_else(|| ModelError::Config("projection weight must be a matrix".into()))?;
        let mut p = Self::zeros(input, output)?;
        for (dst, src) in p.tensors_mut().into_iter().zip([w1, b1, w2, b2]) {
            if dst.shape() != src.shape() {
                return Err(ModelError::Config(format!("projection tensor shape {:?}, expected {:?}", src.shape(), dst.shape())));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundProjection, ModelError> {
        Ok(BoundProjection {
            input: self.input_dim(),
            w1: g.leaf(&self.w1)?,
            b1: g.leaf(&self.b1)?,
            w2: g.leaf(&self.w2)?,
            b2: g.leaf(&self.b2)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundProjection {
    input: usize,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BoundProjection {
    pub fn leaves(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// `relu(x·W1 + b1)` for `x: B×in`.
    pub fn project(&self, g: &mut Graph, x: Var) -> Result<Var, ModelError> {
        let (_, cols) = g.dims(x);
        if cols != self.input {
            return Err(ModelError::InputDim { expected: self.input, got: cols });
        }
        let z = g.matmul(x, self.w1)?;
        let z = g.add_bias(z, self.b1)?;
        Ok(g.relu(z))
    }

    /// `F*·W2 + b2`, one scalar per row.
    pub fn predict(&self, g: &mut Graph, f_star: Var) -> Result<Var, ModelError> {
        let y = g.matmul(f_star, self.w2)?;
        Ok(g.add_bias(y, self.b2)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadConfig {
    /// `d_m`
    pub fusion_dim: usize,
    /// Width of each unimodal `F_s*`.
    pub unimodal_dim: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { fusion_dim: 64, unimodal_dim: 32 }
    }
}

/// Projection and regression weights for tasks m, t, a, v.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub heads: [Projection; 4],
}

impl HeadParams {
    pub fn zeros(hidden_dims: [usize; 3], config: &HeadConfig) -> Result<Self, ModelError> {
        let total = hidden_dims.iter().sum();
        Ok(Self {
            heads: [
                Projection::zeros(total, config.fusion_dim)?,
                Projection::zeros(hidden_dims[0], config.unimodal_dim)?,
                Projection::zeros(hidden_dims[1], config.unimodal_dim)?,
                Projection::zeros(hidden_dims[2], config.unimodal_dim)?,
            ],
        })
    }

    pub fn init(hidden_dims: [usize; 3], config: &HeadConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let total = hidden_dims.iter().sum();
        Ok(Self {
            heads: [
                Projection::init(total, config.fusion_dim, rng)?,
                Projection::init(hidden_dims[0], config.unimodal_dim, rng)?,
                Projection::init(hidden_dims[1], config.unimodal_dim, rng)?,
                Projection::init(hidden_dims[2], config.unimodal_dim, rng)?,
            ],
        })
    }

    pub fn head(&self, task: Task) -> &Projection {
        &self.heads[task.index()]
    }

    pub fn head_mut(&mut self, task: Task) -> &mut Projection {
        &mut self.heads[task.index()]
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundHeads, ModelError> {
        let mut bound = Vec::with_capacity(4);
        for h in &self.heads {
            bound.push(h.bind(g)?);
        }
        Ok(BoundHeads { heads: bound.try_into().expect("four heads") })
    }

    /// `F_m*` for one sample.
    pub fn fuse(&self, f_t: &[f64], f_a: &[f64], f_v: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let heads = self.bind(&mut g)?;
        let parts = [f_t, f_a, f_v].map(|f| g.constant(1, f.len().max(1), f.to_vec()));
        let [t, a, v] = parts;
        let out = heads.fuse(&mut g, t?, a?, v?)?;
        Ok(g.value(out).to_vec())
    }

    /// `F_s*` for one sample.
    pub fn project_unimodal(&self, f_s: &[f64], modality: Modality) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let heads = self.bind(&mut g)?;
        let x = g.constant(1, f_s.len().max(1), f_s.to_vec())?;
        let out = heads.head(modality.task()).project(&mut g, x)?;
        Ok(g.value(out).to_vec())
    }

    /// `ŷ` for one sample from its projected representation.
    pub fn predict(&self, f_star: &[f64], task: Task) -> Result<f64, ModelError> {
        let head = self.head(task);
        if f_star.len() != head.output_dim() {
            return Err(ModelError::InputDim { expected: head.output_dim(), got: f_star.len() });
        }
        let mut g = Graph::new();
        let heads = self.bind(&mut g)?;
        let x = g.constant(1, f_star.len(), f_star.to_vec())?;
        let out = heads.head(task).predict(&mut g, x)?;
        Ok(g.value(out)[0])
    }
}

#[derive(Clone, Debug)]
pub struct BoundHeads {
    heads: [BoundProjection; 4],
}

impl BoundHeads {
    pub fn head(&self, task: Task) -> &BoundProjection {
        &self.heads[task.index()]
    }

    pub fn leaves(&self) -> Vec<Var> {
        self.heads.iter().flat_map(|h| h.leaves()).collect()
    }

    /// `F_m* = relu([F_t; F_a; F_v]ᵀ·W1 + b1)` on a batch.
    pub fn fuse(&self, g: &mut Graph, f_t: Var, f_a: Var, f_v: Var) -> Result<Var, ModelError> {
        let joint = g.concat(&[f_t, f_a, f_v], 1)?;
        self.heads[Task::Multimodal.index()].project(g, joint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cfg(fusion: usize, uni: usize) -> HeadConfig {
        HeadConfig { fusion_dim: fusion, unimodal_dim: uni }
    }

    #[test]
    fn zero_params_give_zero_vectors() {
        let p = HeadParams::zeros([2, 1, 3], &cfg(4, 3)).unwrap();
        assert_eq!(p.fuse(&[1.0, -2.0], &[0.5], &[3.0, 1.0, -1.0]).unwrap(), vec![0.0; 4]);
        assert_eq!(p.project_unimodal(&[1.0, 2.0], Modality::Text).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_weights_pass_nonnegative_inputs() {
        let mut p = HeadParams::zeros([2, 1, 2], &cfg(5, 2)).unwrap();
        let w = p.head_mut(Task::Multimodal).w1.data_mut();
        for i in 0..5 {
            w[i * 5 + i] = 1.0;
        }
        let fused = p.fuse(&[0.5, 0.0], &[2.0], &[1.5, 0.25]).unwrap();
        assert_eq!(fused, vec![0.5, 0.0, 2.0, 1.5, 0.25]);

        let w = p.head_mut(Task::Vision).w1.data_mut();
        w.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.project_unimodal(&[0.3, 4.0], Modality::Vision).unwrap(), vec![0.3, 4.0]);
    }

    #[test]
    fn random_projection_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = HeadParams::init([3, 2, 4], &cfg(5, 3), &mut rng).unwrap();
        let f_t: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f_a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f_v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

        let oracle = |x: &[f64], proj: &Projection| -> Vec<f64> {
            let n_out = proj.output_dim();
            (0..n_out)
                .map(|j| {
                    let mut s = proj.b1.data()[j];
                    for (i, xi) in x.iter().enumerate() {
                        s += proj.w1.data()[i * n_out + j] * xi;
                    }
                    s.max(0.0)
                })
                .collect()
        };
        let joint: Vec<f64> = [f_t.clone(), f_a.clone(), f_v.clone()].concat();
        let fused = p.fuse(&f_t, &f_a, &f_v).unwrap();
        for (a, b) in fused.iter().zip(oracle(&joint, p.head(Task::Multimodal))) {
            assert!((a - b).abs() < 1e-14);
        }
        let proj = p.project_unimodal(&f_a, Modality::Audio).unwrap();
        for (a, b) in proj.iter().zip(oracle(&f_a, p.head(Task::Audio))) {
            assert!((a - b).abs() < 1e-14);
        }
        let y = p.predict(&fused, Task::Multimodal).unwrap();
        let head = p.head(Task::Multimodal);
        let expect: f64 = head.b2.data()[0] + fused.iter().zip(head.w2.data()).map(|(f, w)| f * w).sum::<f64>();
        assert!((y - expect).abs() < 1e-14);
    }

    #[test]
    fn predict_is_affine() {
        let mut p = HeadParams::zeros([1, 1, 1], &cfg(2, 2)).unwrap();
        p.head_mut(Task::Text).b2.data_mut()[0] = 0.7;
        assert_eq!(p.predict(&[0.4, -3.0], Task::Text).unwrap(), 0.7);
        let h = p.head_mut(Task::Multimodal);
        h.w2.data_mut().copy_from_slice(&[1.0, 1.0]);
        assert_eq!(p.predict(&[0.2, 0.3], Task::Multimodal).unwrap(), 0.5);
        assert!(matches!(p.predict(&[0.2], Task::Multimodal), Err(ModelError::InputDim { .. })));
    }

    #[test]
    fn predict_gradient_is_f_star() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Projection::init(3, 4, &mut rng).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g).unwrap();
        let f = vec![0.2, 1.3, 0.0, 0.7];
        let x = g.constant(1, 4, f.clone()).unwrap();
        let y = b.predict(&mut g, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b.w2).unwrap(), f.as_slice());
        assert_eq!(grads.get(b.b2).unwrap(), &[1.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = HeadParams::zeros([2, 2, 2], &cfg(3, 3)).unwrap();
        assert!(matches!(p.fuse(&[1.0], &[1.0, 1.0], &[1.0, 1.0]), Err(ModelError::InputDim { .. })));
        assert!(p.project_unimodal(&[1.0; 3], Modality::Text).is_err());
    }
}
