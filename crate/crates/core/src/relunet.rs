//! Bias-free ReLU networks `h(x) = W_t ∘ σ ∘ W_{t-1} ∘ … ∘ σ ∘ W_1 (x)`.
//!
//! The output layer is linear. A neuron whose pre-activation is exactly zero
//! counts as off, matching `σ(0) = 0` and a zero subgradient.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, gaussian_matrix, norm, spectral_norm, Matrix, RngState};

/// Layer matrices of a scalar-output network; `layers[j]` is `d_{j+1} × d_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    layers: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// Layer outputs before the ReLU, one entry per layer (the last is the
    /// length-1 output layer).
    pub pre_activations: Vec<Vec<f64>>,
    /// `max(0, ·)` of each pre-activation vector.
    pub post_activations: Vec<Vec<f64>>,
    pub output: f64,
}

/// On/off state of every hidden neuron.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActivationPattern {
    pub masks: Vec<Vec<bool>>,
}

impl NetworkWeights {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidDimension("network has no layers".into()));
        }
        for (j, pair) in layers.windows(2).enumerate() {
            if pair[0].rows() != pair[1].cols() {
                return Err(Error::InvalidDimension(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    j + 1,
                    pair[0].rows(),
                    j + 2,
                    pair[1].cols()
                )));
            }
        }
        let last = layers.last().unwrap();
        if last.rows() != 1 {
            return Err(Error::InvalidDimension(format!(
                "output layer has {} rows, expected 1",
                last.rows()
            )));
        }
        Ok(Self { layers })
    }

    /// Normalized random weights: entries of layer `j` are `N(0, 1/d_j)`.
    /// Layer `j` (0-based) draws from `rng.derive(j)`.
    pub fn random_normalized(dims: &[usize], rng: RngState) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(j, w)| gaussian_matrix(w[1], w[0], 1.0 / w[0] as f64, rng.derive(j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    /// `[d_1, …, d_{t+1}]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Matrix::rows))
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut pre_activations = Vec::with_capacity(self.depth());
        let mut post_activations = Vec::with_capacity(self.depth());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let pre = layer.mul_vec(&current);
            let post: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
            pre_activations.push(pre);
            current = post.clone();
            post_activations.push(post);
        }
        let output = pre_activations.last().unwrap()[0];
        Ok(ForwardTrace {
            pre_activations,
            post_activations,
            output,
        })
    }

    /// `h(x)` without keeping the trace.
    pub fn output(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let (last, hidden) = self.layers.split_last().unwrap();
        let mut current = x.to_vec();
        for layer in hidden {
            current = layer.mul_vec(&current);
            relu_in_place(&mut current);
        }
        last.mul_vec(&current)[0]
    }

    /// Row vector `W^x_t ⋯ W^x_1`, accumulated backwards one vector-matrix
    /// product per layer.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.value_and_gradient_unchecked(x).1)
    }

    /// `(h(x), ∇h(x))` from a single forward pass and a backward sweep.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        Ok(self.value_and_gradient_unchecked(x))
    }

    pub(crate) fn value_and_gradient_unchecked(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (last, hidden) = self.layers.split_last().unwrap();
        let mut masks = Vec::with_capacity(hidden.len());
        let mut current = x.to_vec();
        for layer in hidden {
            current = layer.mul_vec(&current);
            masks.push(current.iter().map(|&v| v > 0.0).collect::<Vec<bool>>());
            relu_in_place(&mut current);
        }
        let value = last.mul_vec(&current)[0];

        let mut grad = last.row(0).to_vec();
        for (layer, mask) in hidden.iter().zip(&masks).rev() {
            for (g, &on) in grad.iter_mut().zip(mask) {
                if !on {
                    *g = 0.0;
                }
            }
            grad = layer.vec_mul(&grad);
        }
        (value, grad)
    }

    /// Upper bound on the Lipschitz constant of `x ↦ h(x)`: the product of the
    /// layer spectral norms.
    pub fn lipschitz_bound(&self) -> Result<f64> {
        self.layers
            .iter()
            .try_fold(1.0, |acc, w| Ok(acc * spectral_norm(w)?))
    }

    /// Max coordinatewise deviation between [`Self::input_gradient`] and a
    /// central-difference gradient with step `fd_step`, scaled by the largest
    /// analytic gradient magnitude (floored at `1e-12`).
    ///
    /// Every hidden pre-activation at `x` must stay at least
    /// `10 · fd_step · L_i` away from zero, `L_i` being the product of the
    /// spectral norms of layers `1..=i`.
    pub fn gradient_check(&self, x: &[f64], fd_step: f64) -> Result<f64> {
        if !(fd_step > 0.0) {
            return Err(Error::InvalidInput(format!("fd_step {fd_step}")));
        }
        let trace = self.forward(x)?;
        let mut lip = 1.0;
        for (i, (layer, pre)) in self
            .layers
            .iter()
            .zip(&trace.pre_activations)
            .take(self.depth() - 1)
            .enumerate()
        {
            lip *= spectral_norm(layer)?;
            let required = 10.0 * fd_step * lip;
            if let Some((neuron, &value)) = pre.iter().enumerate().find(|(_, v)| v.abs() < required) {
                return Err(Error::KinkProximity {
                    layer: i + 1,
                    neuron,
                    value,
                    required,
                });
            }
        }

        let grad = self.input_gradient(x)?;
        let mut probe = x.to_vec();
        let mut max_err: f64 = 0.0;
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-12);
        for j in 0..x.len() {
            probe[j] = x[j] + fd_step;
            let up = self.eval_unchecked(&probe);
            probe[j] = x[j] - fd_step;
            let down = self.eval_unchecked(&probe);
            probe[j] = x[j];
            let fd = (up - down) / (2.0 * fd_step);
            max_err = max_err.max((grad[j] - fd).abs() / scale);
        }
        Ok(max_err)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&NetworkFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<NetworkFile>(s)?.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn activation_pattern(trace: &ForwardTrace) -> ActivationPattern {
    let hidden = trace.pre_activations.len().saturating_sub(1);
    ActivationPattern {
        masks: trace.pre_activations[..hidden]
            .iter()
            .map(|pre| pre.iter().map(|&v| v > 0.0).collect())
            .collect(),
    }
}

/// Checks that `dims` describes a chain `d_1 → … → 1` of positive widths.
pub fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidDimension(format!(
            "architecture {dims:?} needs at least an input and an output width"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidDimension(format!("zero width in {dims:?}")));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::InvalidDimension(format!(
            "architecture {dims:?} must end in a single output"
        )));
    }
    Ok(())
}

/// `"512-64-8-1"`.
pub fn format_dims(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// On-disk form: `{"dims": [d_1, …, d_{t+1}], "layers": [[row-major entries], …]}`.
/// Floats are written in shortest round-trip form.
#[derive(Serialize, Deserialize)]
struct NetworkFile {
    dims: Vec<usize>,
    layers: Vec<Vec<f64>>,
}

impl From<&NetworkWeights> for NetworkFile {
    fn from(net: &NetworkWeights) -> Self {
        NetworkFile {
            dims: net.dims(),
            layers: net.layers.iter().map(|m| m.as_slice().to_vec()).collect(),
        }
    }
}

impl TryFrom<NetworkFile> for NetworkWeights {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        validate_dims(&file.dims)?;
        if file.layers.len() + 1 != file.dims.len() {
            return Err(Error::InvalidDimension(format!(
                "{} layers for {} widths",
                file.layers.len(),
                file.dims.len()
            )));
        }
        let layers = file
            .layers
            .into_iter()
            .zip(file.dims.windows(2))
            .map(|(data, w)| Matrix::from_vec(w[1], w[0], data))
            .collect::<Result<Vec<_>>>()?;
        NetworkWeights::new(layers)
    }
}

/// Euclidean distance helper shared by the attack code.
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff)
}

/// `out = x + s·dir`.
pub(crate) fn offset_point(x: &[f64], s: f64, dir: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    axpy(s, dir, &mut out);
    out
}
