//! Gradient-flow sign-flip attacks.
//!
//! Starting from `x0` with `y = sign(h(x0))`, the attack descends
//! `x ↦ y·h(x)`. The canonical variant takes normalized steps of fixed arc
//! length (`x ← x − step·y·g/‖g‖`), so arc length is exactly
//! `steps_taken · step` before the final segment is refined. The plain
//! gradient-descent variant takes `x ← x − η·y·g` and accounts arc length as
//! `Σ η‖g‖`.
//!
//! Once `y·h` drops to the crossing tolerance, the crossing is located on the
//! last segment by bisection; `h` is piecewise linear along a segment, so this
//! always converges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, RngState};
use crate::relunet::{distance, format_dims, offset_point, NetworkWeights};
use crate::table::Row;

/// Maximum bisection iterations on the crossing segment.
pub const MAX_BISECTIONS: usize = 60;
/// Default arc-length budget multiplier.
pub const DEFAULT_LENGTH_MULTIPLIER: f64 = 20.0;
/// Default number of steps that fit in the arc-length budget.
pub const DEFAULT_STEPS_PER_BUDGET: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Arc length per step; defaults to `max_arc_length / 10^4`.
    pub step: Option<f64>,
    /// Arc-length budget `L_max`; defaults to
    /// `length_multiplier · ‖x0‖ · sqrt(ln d) / sqrt(d)` (with `ln d` floored
    /// at 1 so tiny inputs still get a budget).
    pub max_arc_length: Option<f64>,
    pub length_multiplier: f64,
    pub gradient_floor: f64,
    pub crossing_tolerance: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            step: None,
            max_arc_length: None,
            length_multiplier: DEFAULT_LENGTH_MULTIPLIER,
            gradient_floor: 1e-12,
            crossing_tolerance: 1e-9,
        }
    }
}

/// An [`AttackConfig`] with every default filled in for a specific start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedAttack {
    pub step: f64,
    pub max_arc_length: f64,
    pub gradient_floor: f64,
    pub crossing_tolerance: f64,
}

impl AttackConfig {
    pub fn resolve(&self, x0: &[f64]) -> Result<ResolvedAttack> {
        let d = x0.len() as f64;
        let max_arc_length = match self.max_arc_length {
            Some(l) => l,
            None => self.length_multiplier * norm(x0) * d.ln().max(1.0).sqrt() / d.sqrt(),
        };
        let step = self.step.unwrap_or(max_arc_length / DEFAULT_STEPS_PER_BUDGET);
        if !(step > 0.0 && step < max_arc_length && max_arc_length.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "attack step {step} must be positive and below the budget {max_arc_length}"
            )));
        }
        if !(self.crossing_tolerance > 0.0) || !(self.gradient_floor >= 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        Ok(ResolvedAttack {
            step,
            max_arc_length,
            gradient_floor: self.gradient_floor,
            crossing_tolerance: self.crossing_tolerance,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackOutcome {
    /// The output changed sign along the trajectory.
    Flipped,
    /// `|h(x0)|` was already within the crossing tolerance.
    StartedAtBoundary,
    VanishingGradient,
    BudgetExhausted,
}

impl AttackOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackOutcome::Flipped => "flipped",
            AttackOutcome::StartedAtBoundary => "started-at-boundary",
            AttackOutcome::VanishingGradient => "vanishing-gradient",
            AttackOutcome::BudgetExhausted => "budget-exhausted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub success: bool,
    pub outcome: AttackOutcome,
    /// Arc length at the refined crossing; `None` on failure.
    pub arc_length_to_flip: Option<f64>,
    /// Arc length of all full steps taken (before refinement).
    pub arc_length_traversed: f64,
    pub euclidean_displacement: f64,
    pub steps_taken: usize,
    pub initial_output: f64,
    pub final_output: f64,
    pub min_gradient_norm: f64,
    pub max_gradient_norm: f64,
    pub x_adv: Vec<f64>,
}

impl AttackResult {
    /// CSV record: `d, dims, seed, trial, success, arc_len, l2_disp, steps,
    /// h0, hT, min_grad, max_grad`.
    pub fn to_row(&self, dims: &[usize], seed: u64, trial: u64) -> Row {
        Row::new()
            .with("d", dims[0])
            .with("dims", format_dims(dims))
            .with("seed", seed)
            .with("trial", trial)
            .with("success", self.success)
            .with("arc_len", self.arc_length_to_flip)
            .with("l2_disp", self.euclidean_displacement)
            .with("steps", self.steps_taken)
            .with("h0", self.initial_output)
            .with("hT", self.final_output)
            .with("min_grad", self.min_gradient_norm)
            .with("max_grad", self.max_gradient_norm)
    }
}

/// State after each full step, passed to trajectory observers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub arc_length: f64,
    pub output: f64,
    pub gradient_norm: f64,
}

enum StepRule {
    Normalized { step: f64, max_steps: usize },
    Plain { eta: f64, max_steps: usize },
}

/// Normalized-gradient (arc-length) attack.
pub fn gradient_flow_attack(net: &NetworkWeights, x0: &[f64], cfg: &AttackConfig) -> Result<AttackResult> {
    gradient_flow_attack_observed(net, x0, cfg, |_| {})
}

/// [`gradient_flow_attack`] reporting every accepted step to `observer`.
pub fn gradient_flow_attack_observed(
    net: &NetworkWeights,
    x0: &[f64],
    cfg: &AttackConfig,
    observer: impl FnMut(&TrajectoryPoint),
) -> Result<AttackResult> {
    let r = cfg.resolve(x0)?;
    let max_steps = ((r.max_arc_length / r.step) * (1.0 + 1e-12)).floor() as usize;
    run(
        net,
        x0,
        StepRule::Normalized { step: r.step, max_steps },
        r.gradient_floor,
        r.crossing_tolerance,
        observer,
    )
}

/// Plain gradient descent with step size `eta`.
pub fn gd_attack(
    net: &NetworkWeights,
    x0: &[f64],
    eta: f64,
    max_steps: usize,
    crossing_tolerance: f64,
) -> Result<AttackResult> {
    if !(eta > 0.0) || !(crossing_tolerance > 0.0) {
        return Err(Error::InvalidInput(format!(
            "eta {eta} and crossing tolerance {crossing_tolerance} must be positive"
        )));
    }
    run(
        net,
        x0,
        StepRule::Plain { eta, max_steps },
        AttackConfig::default().gradient_floor,
        crossing_tolerance,
        |_| {},
    )
}

/// Smallest gradient norm met along the normalized-gradient trajectory.
pub fn trajectory_gradient_floor(net: &NetworkWeights, x0: &[f64], cfg: &AttackConfig) -> Result<f64> {
    Ok(gradient_flow_attack(net, x0, cfg)?.min_gradient_norm)
}

fn run(
    net: &NetworkWeights,
    x0: &[f64],
    rule: StepRule,
    gradient_floor: f64,
    tol: f64,
    mut observer: impl FnMut(&TrajectoryPoint),
) -> Result<AttackResult> {
    let (h0, mut grad) = net.value_and_gradient(x0)?;
    if x0.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("attack from the zero example".into()));
    }
    let y = if h0 >= 0.0 { 1.0 } else { -1.0 };
    let mut grad_norm = norm(&grad);
    let mut min_g = grad_norm;
    let mut max_g = grad_norm;

    let finish = |outcome: AttackOutcome, x: Vec<f64>, h: f64, steps: usize, traversed: f64, flip: Option<f64>, min_g: f64, max_g: f64| {
        AttackResult {
            success: matches!(outcome, AttackOutcome::Flipped | AttackOutcome::StartedAtBoundary),
            outcome,
            arc_length_to_flip: flip,
            arc_length_traversed: traversed,
            euclidean_displacement: distance(&x, x0),
            steps_taken: steps,
            initial_output: h0,
            final_output: h,
            min_gradient_norm: min_g,
            max_gradient_norm: max_g,
            x_adv: x,
        }
    };

    if h0.abs() <= tol {
        return Ok(finish(
            AttackOutcome::StartedAtBoundary,
            x0.to_vec(),
            h0,
            0,
            0.0,
            Some(0.0),
            min_g,
            max_g,
        ));
    }

    let max_steps = match rule {
        StepRule::Normalized { max_steps, .. } | StepRule::Plain { max_steps, .. } => max_steps,
    };
    let mut x = x0.to_vec();
    let mut h = h0;
    let mut traversed_sum = 0.0;
    for k in 1..=max_steps {
        if grad_norm < gradient_floor {
            let traversed = arc_after(&rule, k - 1, traversed_sum);
            return Ok(finish(AttackOutcome::VanishingGradient, x, h, k - 1, traversed, None, min_g, max_g));
        }
        let (coef, seg_len) = match rule {
            StepRule::Normalized { step, .. } => (-y * step / grad_norm, step),
            StepRule::Plain { eta, .. } => (-y * eta, eta * grad_norm),
        };
        let seg: Vec<f64> = grad.iter().map(|g| coef * g).collect();
        let x_next = offset_point(&x, 1.0, &seg);
        let (h_next, grad_next) = net.value_and_gradient_unchecked(&x_next);
        let arc_before = arc_after(&rule, k - 1, traversed_sum);
        traversed_sum += seg_len;
        let traversed = arc_after(&rule, k, traversed_sum);

        if y * h_next <= tol {
            let (frac, x_adv, h_adv) = if h_next.abs() <= tol {
                (1.0, x_next, h_next)
            } else {
                refine_crossing(net, &x, &seg, y, tol)
            };
            let flip = arc_before + frac * seg_len;
            return Ok(finish(AttackOutcome::Flipped, x_adv, h_adv, k, traversed, Some(flip), min_g, max_g));
        }

        x = x_next;
        h = h_next;
        grad = grad_next;
        grad_norm = norm(&grad);
        min_g = min_g.min(grad_norm);
        max_g = max_g.max(grad_norm);
        observer(&TrajectoryPoint {
            step: k,
            arc_length: traversed,
            output: h,
            gradient_norm: grad_norm,
        });
    }
    let traversed = arc_after(&rule, max_steps, traversed_sum);
    Ok(finish(AttackOutcome::BudgetExhausted, x, h, max_steps, traversed, None, min_g, max_g))
}

fn arc_after(rule: &StepRule, steps: usize, sum: f64) -> f64 {
    match rule {
        StepRule::Normalized { step, .. } => steps as f64 * step,
        StepRule::Plain { .. } => sum,
    }
}

/// Bisection for the crossing on `x + τ·seg`, `τ ∈ [0, 1]`, where `y·h > tol`
/// at `τ = 0` and `y·h ≤ tol` at `τ = 1`. Returns `(τ, point, h(point))`; if
/// the tolerance is not met the flipped endpoint of the final bracket is used.
fn refine_crossing(net: &NetworkWeights, x: &[f64], seg: &[f64], y: f64, tol: f64) -> (f64, Vec<f64>, f64) {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut hi_point = offset_point(x, hi, seg);
    let mut hi_value = net.eval_unchecked(&hi_point);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let p = offset_point(x, mid, seg);
        let v = net.eval_unchecked(&p);
        if v.abs() <= tol {
            return (mid, p, v);
        }
        if y * v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            hi_point = p;
            hi_value = v;
        }
    }
    (hi, hi_point, hi_value)
}

/// `x0` uniform on the sphere of radius `√d`, drawn from `rng`.
pub fn sphere_start(d: usize, rng: RngState) -> Vec<f64> {
    rng.generator().sphere_point(d, (d as f64).sqrt())
}
