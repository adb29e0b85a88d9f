use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::cbf::StateGain;

/// Fully connected network: ReLU on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// `weights[l]` is `sizes[l + 1] x sizes[l]`.
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Gradients laid out exactly like the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MlpGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }
}

/// Layer inputs recorded by [`Mlp::forward_cached`]; one column per sample.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.inputs[0].ncols()
    }
}

fn check_sizes(sizes: &[usize]) -> Result<(), NnError> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(NnError::Shape(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new_uniform(sizes: &[usize], rng: &mut impl Rng) -> Result<Self, NnError> {
        check_sizes(sizes)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound)));
            biases.push(DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..bound)));
        }
        Ok(Self { sizes: sizes.to_vec(), weights, biases })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, NnError> {
        check_sizes(sizes)?;
        let weights = sizes.windows(2).map(|p| DMatrix::zeros(p[1], p[0])).collect();
        let biases = sizes[1..].iter().map(|&s| DVector::zeros(s)).collect();
        Ok(Self { sizes: sizes.to_vec(), weights, biases })
    }

    pub fn from_parts(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self, NnError> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(NnError::Shape("need one bias per weight matrix".into()));
        }
        let mut sizes = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != sizes[l] || w.nrows() != b.len() {
                return Err(NnError::Shape(format!("layer {l}: weight {:?}, bias {}", w.shape(), b.len())));
            }
            sizes.push(w.nrows());
        }
        check_sizes(&sizes)?;
        if weights.iter().flat_map(|w| w.iter()).chain(biases.iter().flat_map(|b| b.iter())).any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("parameters".into()));
        }
        Ok(Self { sizes, weights, biases })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Overwrites the output-layer bias.
    pub fn set_output_bias(&mut self, value: f64) {
        self.biases.last_mut().expect("at least one layer").fill(value);
    }

    /// Parameter tensors in the same order as [`MlpGrads::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::Shape(format!("input has length {}, expected {}", x.len(), self.input_dim())));
        }
        let last = self.weights.len() - 1;
        let mut a = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = b.clone();
            z.gemv(1.0, w, &a, 1.0);
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    /// Batched forward pass; `x` holds one sample per column.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NnError> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache), NnError> {
        if x.nrows() != self.input_dim() {
            return Err(NnError::Shape(format!("input has {} rows, expected {}", x.nrows(), self.input_dim())));
        }
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut a = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &a;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut a, z));
        }
        Ok((a, ForwardCache { inputs }))
    }

    /// Reverse pass for a loss whose gradient w.r.t. the outputs is `upstream`.
    ///
    /// Returns parameter gradients summed over the batch and the gradient
    /// w.r.t. the inputs. The ReLU derivative at zero is taken as zero.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &DMatrix<f64>,
    ) -> Result<(MlpGrads, DMatrix<f64>), NnError> {
        if upstream.shape() != (self.output_dim(), cache.batch()) || cache.inputs.len() != self.weights.len() {
            return Err(NnError::Shape(format!(
                "upstream {:?} does not match output {} x batch {}",
                upstream.shape(),
                self.output_dim(),
                cache.batch()
            )));
        }
        let n_layers = self.weights.len();
        let mut gw = Vec::with_capacity(n_layers);
        let mut gb = Vec::with_capacity(n_layers);
        let mut delta = upstream.clone();
        for l in (0..n_layers).rev() {
            let input = &cache.inputs[l];
            gw.push(&delta * input.transpose());
            gb.push(DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum())));
            let mut prev = self.weights[l].tr_mul(&delta);
            if l > 0 {
                prev.zip_apply(input, |g, a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            delta = prev;
        }
        gw.reverse();
        gb.reverse();
        Ok((MlpGrads { weights: gw, biases: gb }, delta))
    }
}

impl StateGain for Mlp {
    /// First output of the network.
    fn gain(&self, x: &DVector<f64>) -> f64 {
        self.forward(x).map(|y| y[0]).unwrap_or(f64::NAN)
    }
}

/// Row-major dump of an [`Mlp`] for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<&Mlp> for MlpParams {
    fn from(net: &Mlp) -> Self {
        Self {
            sizes: net.sizes.clone(),
            weights: net.weights.iter().map(|w| w.transpose().as_slice().to_vec()).collect(),
            biases: net.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
        }
    }
}

impl TryFrom<MlpParams> for Mlp {
    type Error = NnError;

    fn try_from(p: MlpParams) -> Result<Self, NnError> {
        check_sizes(&p.sizes)?;
        if p.weights.len() != p.sizes.len() - 1 || p.biases.len() != p.sizes.len() - 1 {
            return Err(NnError::Shape("layer count does not match sizes".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in p.sizes.windows(2).enumerate() {
            if p.weights[l].len() != pair[0] * pair[1] || p.biases[l].len() != pair[1] {
                return Err(NnError::Shape(format!("layer {l} has the wrong number of parameters")));
            }
            weights.push(DMatrix::from_row_slice(pair[1], pair[0], &p.weights[l]));
            biases.push(DVector::from_column_slice(&p.biases[l]));
        }
        Mlp::from_parts(weights, biases)
    }
}
