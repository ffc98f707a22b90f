//! Typicality predicates for weights and examples.
//!
//! An example `x` is `(c1, c2)`-typical for a network when
//!
//! 1. in every hidden layer at least a `2·c1` fraction of the pre-activations
//!    is `≥ c2·‖x‖/√d`, and
//! 2. `|h(x)| ≤ ‖x‖·sqrt(ln d / d)`,
//!
//! with `d` the input dimension and `ln` the natural logarithm. Weights are
//! `(c1, c2)`-typical when each layer is `(c1, c2)`-surjective and has
//! spectral norm at most `1/c2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, spectral_norm, RngState};
use crate::relunet::NetworkWeights;
use crate::surjectivity::{estimate_c1c2, SubsetMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypicalityReport {
    /// For hidden layers `1..t-1`: fraction of pre-activations at or above
    /// `c2·‖x‖/√d`.
    pub per_layer_active_fraction: Vec<f64>,
    pub output_magnitude: f64,
    pub output_bound: f64,
    pub example_typical: bool,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightTypicalityReport {
    pub per_layer_min_sigma_k: Vec<f64>,
    pub per_layer_spectral_norm: Vec<f64>,
    pub per_layer_mode: Vec<SubsetMode>,
    /// Largest `c2` with `min_sigma_k ≥ c2` and `‖W_i‖ ≤ 1/c2` on every layer.
    pub weights_typical_at: f64,
}

pub fn example_typicality(net: &NetworkWeights, x: &[f64], c1: f64, c2: f64) -> Result<TypicalityReport> {
    let trace = net.forward(x)?;
    let x_norm = norm(x);
    if x_norm == 0.0 {
        return Err(Error::InvalidInput("typicality of the zero example".into()));
    }
    let d = net.input_dim() as f64;
    let threshold = c2 * x_norm / d.sqrt();
    let hidden = &trace.pre_activations[..net.depth() - 1];
    let per_layer_active_fraction: Vec<f64> = hidden
        .iter()
        .map(|pre| pre.iter().filter(|&&v| v >= threshold).count() as f64 / pre.len() as f64)
        .collect();
    let output_magnitude = trace.output.abs();
    let output_bound = x_norm * (d.ln() / d).sqrt();
    let example_typical = per_layer_active_fraction.iter().all(|&f| f >= 2.0 * c1)
        && output_magnitude <= output_bound;
    Ok(TypicalityReport {
        per_layer_active_fraction,
        output_magnitude,
        output_bound,
        example_typical,
        c1,
        c2,
    })
}

/// Layer `i` samples its subsets from `rng.derive(i)`.
pub fn weight_typicality(
    net: &NetworkWeights,
    c1: f64,
    budget: usize,
    rng: RngState,
) -> Result<WeightTypicalityReport> {
    let mut report = WeightTypicalityReport {
        per_layer_min_sigma_k: Vec::new(),
        per_layer_spectral_norm: Vec::new(),
        per_layer_mode: Vec::new(),
        weights_typical_at: f64::INFINITY,
    };
    for (i, w) in net.layers().iter().enumerate() {
        let surj = estimate_c1c2(w, c1, budget, rng.derive(i as u64))?;
        let spec = spectral_norm(w)?;
        let layer_bound = surj.min_sigma_k.min(if spec > 0.0 { 1.0 / spec } else { f64::INFINITY });
        report.weights_typical_at = report.weights_typical_at.min(layer_bound);
        report.per_layer_min_sigma_k.push(surj.min_sigma_k);
        report.per_layer_spectral_norm.push(spec);
        report.per_layer_mode.push(surj.mode);
    }
    if !report.weights_typical_at.is_finite() {
        report.weights_typical_at = 0.0;
    }
    Ok(report)
}
