//! Seeded experiment runners.
//!
//! Every runner is a pure function of its [`ExperimentSpec`]: trials run in
//! parallel, but each trial draws from its own stream
//! `RngState::new(seed, trial)` and rows are collected in trial order, so
//! output tables are identical at any thread count. Within a trial, network
//! layer `j` draws from `derive(j)` and the start point from
//! `derive(START_POINT_STREAM)`. Subset sampling for weight typicality uses
//! the bitwise complement of the master seed, `RngState::new(!seed, trial)`.
//!
//! When a schedule has several cells (architectures or dimensions), the
//! trial index is global: cell `c`, local trial `i` uses
//! `trial = c · trials + i`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{gd_attack, gradient_flow_attack, sphere_start, AttackConfig, AttackResult};
use crate::datatrain::{
    load_idx, normalize_examples, synthetic_dataset, train_sgd, Dataset, Provenance, TrainConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, RngState};
use crate::relunet::{format_dims, validate_dims, NetworkWeights};
use crate::surjectivity::{estimate_c1c2, tail_sum_mc, vershynin_trials};
use crate::table::{column_csv, Row, Table};
use crate::typicality::{example_typicality, weight_typicality};

/// Child-stream index reserved for attack start points; also the root stream
/// for choosing attacked test examples.
pub const START_POINT_STREAM: u64 = 0xFFFF_FFFF;
/// Root stream of the interval check in the surjectivity suite.
pub const INTERVAL_STREAM: u64 = 0xFFFF_FF00;
/// Root stream of the tail-sum check in the surjectivity suite.
pub const TAIL_STREAM: u64 = 0xFFFF_FF01;
/// Global trial indices stay below the reserved root streams.
pub const MAX_TOTAL_TRIALS: u64 = 0xFFFF_FF00;
/// Bins per displacement histogram.
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Scaling,
    Surjectivity,
    Tailsum,
    Typicality,
    Mnist,
    AttackSingle,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Surjectivity => "surjectivity",
            ExperimentKind::Tailsum => "tailsum",
            ExperimentKind::Typicality => "typicality",
            ExperimentKind::Mnist => "mnist",
            ExperimentKind::AttackSingle => "attack-single",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurjectivitySettings {
    /// Column counts `d` of the tested `k × d` matrices.
    pub dims: Vec<usize>,
    /// `k = round(row_fraction · d)`.
    pub row_fraction: f64,
    pub interval: Option<IntervalSettings>,
    pub tail: Option<TailSettings>,
}

impl Default for SurjectivitySettings {
    fn default() -> Self {
        Self {
            dims: vec![200, 400, 800],
            row_fraction: 0.05,
            interval: Some(IntervalSettings::default()),
            tail: Some(TailSettings::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntervalSettings {
    pub n: usize,
    pub m: usize,
    pub variance_dim: usize,
    pub t: f64,
    pub trials: usize,
}

impl Default for IntervalSettings {
    fn default() -> Self {
        Self {
            n: 100,
            m: 1000,
            variance_dim: 1000,
            t: 0.1,
            trials: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailSettings {
    pub d: usize,
    pub c1: f64,
    pub trials: usize,
    /// Also emit `tailsum_samples.csv` with the raw `Z/d` values.
    pub dump_samples: bool,
}

impl Default for TailSettings {
    fn default() -> Self {
        Self {
            d: 1000,
            c1: 0.5,
            trials: 1000,
            dump_samples: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypicalitySettings {
    pub c2_values: Vec<f64>,
    /// When set, also estimate weight typicality with this subset budget.
    pub weight_budget: Option<usize>,
}

impl Default for TypicalitySettings {
    fn default() -> Self {
        Self {
            c2_values: vec![0.02, 0.04],
            weight_budget: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSettings {
    pub d: usize,
    pub train_examples: usize,
    pub test_examples: usize,
    pub margin: f64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self {
            d: 784,
            train_examples: 4000,
            test_examples: 1000,
            margin: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistSettings {
    /// Directory holding `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
    /// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`.
    pub data_dir: Option<PathBuf>,
    /// Use a synthetic separable dataset when the IDX files are absent.
    pub synthetic_fallback: bool,
    pub synthetic: SyntheticSettings,
    /// Network depths (number of weight matrices).
    pub depths: Vec<usize>,
    pub hidden_width: usize,
    /// Cap on training examples (`None` = all).
    pub train_limit: Option<usize>,
    /// Test examples attacked per depth.
    pub attacked_examples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub eta: f64,
    pub max_steps: usize,
    pub crossing_tolerance: f64,
}

impl Default for MnistSettings {
    fn default() -> Self {
        Self {
            data_dir: None,
            synthetic_fallback: false,
            synthetic: SyntheticSettings::default(),
            depths: vec![2, 3, 4],
            hidden_width: 100,
            train_limit: None,
            attacked_examples: 1000,
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 32,
            eta: 0.01,
            max_steps: 100_000,
            crossing_tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleAttackSettings {
    /// Network JSON to attack; a normalized random network with the first
    /// architecture is generated when absent.
    pub network: Option<PathBuf>,
    /// JSON array with the start point; sphere sample of radius √d when absent.
    pub start: Option<PathBuf>,
    /// Also run plain gradient descent with this step size.
    pub gd_eta: Option<f64>,
    pub gd_max_steps: usize,
}

impl Default for SingleAttackSettings {
    fn default() -> Self {
        Self {
            network: None,
            start: None,
            gd_eta: None,
            gd_max_steps: 1_000_000,
        }
    }
}

/// A complete, serializable experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: usize,
    /// Explicit architectures `[d_1, …, 1]`.
    pub architectures: Vec<Vec<usize>>,
    /// Alternative to `architectures`: input widths expanded as
    /// `d → ⌈d^e_1⌉ → ⌈d^e_2⌉ → … → 1`.
    pub input_dims: Vec<usize>,
    pub width_exponents: Vec<f64>,
    pub attack: AttackConfig,
    pub c1: f64,
    pub budget: usize,
    pub surjectivity: SurjectivitySettings,
    pub tailsum: TailSettings,
    pub typicality: TypicalitySettings,
    pub mnist: MnistSettings,
    pub single: SingleAttackSettings,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::default_for(ExperimentKind::Scaling)
    }
}

impl ExperimentSpec {
    /// The reference configuration for each experiment kind.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let mut spec = ExperimentSpec {
            kind,
            seed: 0,
            trials: 100,
            architectures: Vec::new(),
            input_dims: Vec::new(),
            width_exponents: Vec::new(),
            attack: AttackConfig::default(),
            c1: 0.25,
            budget: 200,
            surjectivity: SurjectivitySettings::default(),
            tailsum: TailSettings::default(),
            typicality: TypicalitySettings::default(),
            mnist: MnistSettings::default(),
            single: SingleAttackSettings::default(),
            output: None,
        };
        match kind {
            ExperimentKind::Scaling => {
                spec.input_dims = vec![512, 2048, 8192];
                spec.width_exponents = vec![0.7, 0.4];
            }
            ExperimentKind::Surjectivity => spec.trials = 20,
            ExperimentKind::Tailsum => spec.trials = 1000,
            ExperimentKind::Typicality => {
                spec.architectures = vec![vec![1024, 128, 16, 1]];
                spec.c1 = 0.2;
            }
            ExperimentKind::Mnist => spec.trials = 1,
            ExperimentKind::AttackSingle => {
                spec.trials = 1;
                spec.architectures = vec![vec![4096, 256, 16, 1]];
            }
        }
        spec
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Spec(e.to_string()))
    }

    /// Explicit architectures followed by the exponent-derived ones.
    pub fn resolved_architectures(&self) -> Result<Vec<Vec<usize>>> {
        let mut out = self.architectures.clone();
        if !self.input_dims.is_empty() {
            if self.width_exponents.is_empty() {
                return Err(Error::Spec("input_dims given without width_exponents".into()));
            }
            for &d in &self.input_dims {
                out.push(shrinking_architecture(d, &self.width_exponents));
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Spec("trials must be at least 1".into()));
        }
        let cells = self.resolved_architectures()?.len().max(self.surjectivity.dims.len()).max(1);
        if (self.trials as u64).saturating_mul(cells as u64) >= MAX_TOTAL_TRIALS {
            return Err(Error::Spec("too many trials".into()));
        }
        for arch in self.resolved_architectures()? {
            validate_dims(&arch).map_err(|e| Error::Spec(e.to_string()))?;
        }
        let needs_arch = matches!(
            self.kind,
            ExperimentKind::Scaling | ExperimentKind::Typicality
        ) || (self.kind == ExperimentKind::AttackSingle && self.single.network.is_none());
        if needs_arch && self.resolved_architectures()?.is_empty() {
            return Err(Error::Spec(format!("{} needs at least one architecture", self.kind.as_str())));
        }
        if self.kind == ExperimentKind::Scaling {
            for arch in self.resolved_architectures()? {
                if arch.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::Spec(format!(
                        "scaling architecture {} must strictly decrease",
                        format_dims(&arch)
                    )));
                }
            }
        }
        if !(self.c1 > 0.0 && self.c1 <= 1.0) {
            return Err(Error::Spec(format!("c1 = {} outside (0, 1]", self.c1)));
        }
        Ok(())
    }
}

/// `[d, ⌈d^e_1⌉, …, ⌈d^e_m⌉, 1]`.
pub fn shrinking_architecture(d: usize, exponents: &[f64]) -> Vec<usize> {
    let mut dims = vec![d];
    dims.extend(exponents.iter().map(|&e| (d as f64).powf(e).ceil() as usize));
    dims.push(1);
    dims
}

/// Tables produced by one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOutput {
    pub results: Table,
    pub aggregates: Table,
    /// `(depth, histogram)` pairs, written as `histogram_<depth>.csv`.
    pub histograms: Vec<(usize, Table)>,
    /// Additional named CSV files.
    pub extra_files: Vec<(String, String)>,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    match spec.kind {
        ExperimentKind::Scaling => run_scaling_study(spec),
        ExperimentKind::Surjectivity => run_surjectivity_suite(spec),
        ExperimentKind::Tailsum => run_tailsum(spec),
        ExperimentKind::Typicality => run_typicality_suite(spec),
        ExperimentKind::Mnist => run_mnist_experiment(spec),
        ExperimentKind::AttackSingle => run_single_attack(spec),
    }
}

/// Type-7 (linear interpolation) quantile of ascending `sorted`.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Normalized random network plus sphere start point for one trial.
pub fn random_instance(dims: &[usize], seed: u64, trial: u64) -> Result<(NetworkWeights, Vec<f64>)> {
    let rng = RngState::new(seed, trial);
    let net = NetworkWeights::random_normalized(dims, rng)?;
    let x0 = sphere_start(dims[0], rng.derive(START_POINT_STREAM));
    Ok((net, x0))
}

/// Per-architecture aggregate over attack rows: success rate, median and
/// 90th-percentile arc length, median Euclidean displacement (the last
/// three over successful trials).
pub fn attack_aggregate(kind: &str, dims: &[usize], results: &[AttackResult]) -> Row {
    let ok: Vec<&AttackResult> = results.iter().filter(|r| r.success).collect();
    let arcs = sorted(ok.iter().filter_map(|r| r.arc_length_to_flip).collect());
    let disp = sorted(ok.iter().map(|r| r.euclidean_displacement).collect());
    Row::new()
        .with("kind", kind)
        .with("d", dims[0])
        .with("dims", format_dims(dims))
        .with("trials", results.len())
        .with("successes", ok.len())
        .with("success_rate", ok.len() as f64 / results.len() as f64)
        .with("median_arc_len", quantile(&arcs, 0.5))
        .with("p90_arc_len", quantile(&arcs, 0.9))
        .with("median_l2_disp", quantile(&disp, 0.5))
        .with("mean_l2_disp", (!disp.is_empty()).then(|| disp.iter().sum::<f64>() / disp.len() as f64))
}

pub fn run_scaling_study(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let archs = spec.resolved_architectures()?;
    let trials = spec.trials as u64;
    let jobs: Vec<(usize, u64)> = (0..archs.len())
        .flat_map(|c| (0..trials).map(move |i| (c, c as u64 * trials + i)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(c, trial)| {
            let (net, x0) = random_instance(&archs[c], spec.seed, trial)?;
            gradient_flow_attack(&net, &x0, &spec.attack)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = ExperimentOutput::default();
    for (&(c, trial), r) in jobs.iter().zip(&outcomes) {
        let mut row = Row::new().with("kind", "scaling");
        for (k, v) in r.to_row(&archs[c], spec.seed, trial).fields() {
            row.push(k, v.clone());
        }
        row.push("outcome", r.outcome.as_str());
        out.results.rows.push(row);
    }
    for (c, arch) in archs.iter().enumerate() {
        let chunk = &outcomes[c * spec.trials..(c + 1) * spec.trials];
        out.aggregates.rows.push(attack_aggregate("scaling", arch, chunk));
    }
    Ok(out)
}

pub fn run_surjectivity_suite(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let s = &spec.surjectivity;
    let trials = spec.trials as u64;
    let mut out = ExperimentOutput::default();

    let jobs: Vec<(usize, u64)> = (0..s.dims.len())
        .flat_map(|c| (0..trials).map(move |i| (c, c as u64 * trials + i)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(c, trial)| {
            let d = s.dims[c];
            let k = ((d as f64 * s.row_fraction).round() as usize).max(1);
            let rng = RngState::new(spec.seed, trial);
            let w = gaussian_matrix(k, d, 1.0 / d as f64, rng.derive(0))?;
            Ok((k, estimate_c1c2(&w, spec.c1, spec.budget, rng.derive(1))?))
        })
        .collect::<Result<Vec<_>>>()?;
    for (&(c, trial), (k, r)) in jobs.iter().zip(&reports) {
        out.results.rows.push(
            Row::new()
                .with("kind", "surjectivity")
                .with("d", s.dims[c])
                .with("k", *k)
                .with("c1", spec.c1)
                .with("budget", spec.budget)
                .with("seed", spec.seed)
                .with("trial", trial)
                .with("mode", r.mode.as_str())
                .with("subset_size", r.subset_size)
                .with("subsets_tested", r.subsets_tested)
                .with("min_sigma_k", r.min_sigma_k)
                .with("mean_sigma_k", r.mean_sigma_k),
        );
    }
    for (c, &d) in s.dims.iter().enumerate() {
        let chunk = &reports[c * spec.trials..(c + 1) * spec.trials];
        let mins = sorted(chunk.iter().map(|(_, r)| r.min_sigma_k).collect());
        out.aggregates.rows.push(
            Row::new()
                .with("kind", "surjectivity")
                .with("d", d)
                .with("k", chunk[0].0)
                .with("trials", chunk.len())
                .with("min_min_sigma_k", mins[0])
                .with("median_min_sigma_k", quantile(&mins, 0.5))
                .with("max_min_sigma_k", mins[mins.len() - 1]),
        );
    }

    if let Some(iv) = &s.interval {
        let rng = RngState::new(spec.seed, INTERVAL_STREAM);
        let runs = vershynin_trials(iv.n, iv.m, iv.variance_dim, iv.t, iv.trials, rng)?;
        for (i, r) in runs.iter().enumerate() {
            out.results.rows.push(
                Row::new()
                    .with("kind", "interval")
                    .with("seed", spec.seed)
                    .with("trial", i)
                    .with("n", iv.n)
                    .with("m", iv.m)
                    .with("variance_dim", iv.variance_dim)
                    .with("t", iv.t)
                    .with("sigma_min", r.sigma_min)
                    .with("sigma_max", r.sigma_max)
                    .with("lower", r.lower)
                    .with("upper", r.upper)
                    .with("pass", r.pass),
            );
        }
        let passed = runs.iter().filter(|r| r.pass).count();
        out.aggregates.rows.push(
            Row::new()
                .with("kind", "interval")
                .with("n", iv.n)
                .with("m", iv.m)
                .with("variance_dim", iv.variance_dim)
                .with("t", iv.t)
                .with("trials", runs.len())
                .with("pass_fraction", passed as f64 / runs.len() as f64),
        );
    }

    if let Some(tail) = &s.tail {
        let rng = RngState::new(spec.seed, TAIL_STREAM);
        let (rows, agg, dump) = tail_tables(tail, spec.seed, rng)?;
        out.results.rows.extend(rows);
        out.aggregates.rows.push(agg);
        out.extra_files.extend(dump);
    }
    Ok(out)
}

type TailTables = (Vec<Row>, Row, Option<(String, String)>);

fn tail_tables(t: &TailSettings, seed: u64, rng: RngState) -> Result<TailTables> {
    let stats = tail_sum_mc(t.d, t.c1, t.trials, rng)?;
    let rows = stats
        .samples
        .iter()
        .enumerate()
        .map(|(i, z)| {
            Row::new()
                .with("kind", "tailsum")
                .with("seed", seed)
                .with("trial", i)
                .with("d", t.d)
                .with("c1", t.c1)
                .with("z_over_d", *z)
        })
        .collect();
    let agg = Row::new()
        .with("kind", "tailsum")
        .with("d", t.d)
        .with("c1", t.c1)
        .with("trials", t.trials)
        .with("min", stats.min)
        .with("max", stats.max)
        .with("mean", stats.mean)
        .with("std", stats.std)
        .with("p01", stats.p01);
    let dump = t
        .dump_samples
        .then(|| ("tailsum_samples.csv".to_string(), column_csv("z_over_d", &stats.samples)));
    Ok((rows, agg, dump))
}

pub fn run_tailsum(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let settings = TailSettings {
        trials: spec.trials,
        ..spec.tailsum.clone()
    };
    let (rows, agg, dump) = tail_tables(&settings, spec.seed, RngState::new(spec.seed, 0))?;
    Ok(ExperimentOutput {
        results: Table::new(rows),
        aggregates: Table::new(vec![agg]),
        histograms: Vec::new(),
        extra_files: dump.into_iter().collect(),
    })
}

pub fn run_typicality_suite(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let t = &spec.typicality;
    if t.c2_values.is_empty() || t.c2_values.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::Spec("typicality needs positive c2 values".into()));
    }
    let archs = spec.resolved_architectures()?;
    let trials = spec.trials as u64;
    let jobs: Vec<(usize, u64)> = (0..archs.len())
        .flat_map(|c| (0..trials).map(move |i| (c, c as u64 * trials + i)))
        .collect();
    let per_trial = jobs
        .par_iter()
        .map(|&(c, trial)| {
            let (net, x0) = random_instance(&archs[c], spec.seed, trial)?;
            let reports = t
                .c2_values
                .iter()
                .map(|&c2| example_typicality(&net, &x0, spec.c1, c2))
                .collect::<Result<Vec<_>>>()?;
            let weights = match t.weight_budget {
                Some(budget) => Some(weight_typicality(
                    &net,
                    spec.c1,
                    budget,
                    RngState::new(!spec.seed, trial),
                )?),
                None => None,
            };
            Ok((reports, weights))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = ExperimentOutput::default();
    for (&(c, trial), (reports, weights)) in jobs.iter().zip(&per_trial) {
        for r in reports {
            let fractions = r
                .per_layer_active_fraction
                .iter()
                .map(|f| format!("{f:?}"))
                .collect::<Vec<_>>()
                .join(" ");
            out.results.rows.push(
                Row::new()
                    .with("kind", "typicality")
                    .with("dims", format_dims(&archs[c]))
                    .with("seed", spec.seed)
                    .with("trial", trial)
                    .with("c1", r.c1)
                    .with("c2", r.c2)
                    .with("active_fractions", fractions)
                    .with("output_magnitude", r.output_magnitude)
                    .with("output_bound", r.output_bound)
                    .with("example_typical", r.example_typical)
                    .with("weights_typical_at", weights.as_ref().map(|w| w.weights_typical_at)),
            );
        }
    }
    for (c, arch) in archs.iter().enumerate() {
        let chunk = &per_trial[c * spec.trials..(c + 1) * spec.trials];
        for (j, &c2) in t.c2_values.iter().enumerate() {
            let passed = chunk.iter().filter(|(r, _)| r[j].example_typical).count();
            out.aggregates.rows.push(
                Row::new()
                    .with("kind", "typicality")
                    .with("dims", format_dims(arch))
                    .with("c1", spec.c1)
                    .with("c2", c2)
                    .with("trials", chunk.len())
                    .with("pass_rate", passed as f64 / chunk.len() as f64),
            );
        }
    }
    Ok(out)
}

/// Train/test data for the digit-parity experiment, normalized to norm √d.
pub fn mnist_data(settings: &MnistSettings, seed: u64) -> Result<(Dataset, Dataset)> {
    let files = settings.data_dir.as_ref().map(|dir| {
        [
            "train-images-idx3-ubyte",
            "train-labels-idx1-ubyte",
            "t10k-images-idx3-ubyte",
            "t10k-labels-idx1-ubyte",
        ]
        .map(|f| dir.join(f))
    });
    let (train, test) = match files {
        Some(f) if f.iter().all(|p| p.exists()) => (
            load_idx(&f[0], &f[1])?.into_dataset(Provenance::MnistTrain)?,
            load_idx(&f[2], &f[3])?.into_dataset(Provenance::MnistTest)?,
        ),
        _ if settings.synthetic_fallback => {
            let s = &settings.synthetic;
            let all = synthetic_dataset(s.d, s.train_examples + s.test_examples, s.margin, RngState::new(seed, 0))?;
            let d = all.dim();
            let split = s.train_examples * d;
            let data = all.examples.as_slice();
            let train = Dataset::new(
                crate::linalg::Matrix::from_vec(s.train_examples, d, data[..split].to_vec())?,
                all.labels[..s.train_examples].to_vec(),
                all.provenance.clone(),
            )?;
            let test = Dataset::new(
                crate::linalg::Matrix::from_vec(s.test_examples, d, data[split..].to_vec())?,
                all.labels[s.train_examples..].to_vec(),
                all.provenance.clone(),
            )?;
            (train, test)
        }
        _ => {
            return Err(Error::DataMissing(match &settings.data_dir {
                Some(d) => format!("MNIST IDX files not found in {}", d.display()),
                None => "no MNIST data directory given and synthetic fallback disabled".into(),
            }))
        }
    };
    let train = match settings.train_limit {
        Some(n) => train.head(n)?,
        None => train,
    };
    let target = (train.dim() as f64).sqrt();
    Ok((normalize_examples(&train, target)?, normalize_examples(&test, target)?))
}

/// 50 equal-width bins over `[0, max]`; the top bin is closed.
pub fn histogram(values: &[f64]) -> Table {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let width = max / HISTOGRAM_BINS as f64;
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &v in values {
        let bin = if width > 0.0 {
            ((v / width) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Table::new(
        counts
            .iter()
            .enumerate()
            .map(|(i, &count)| {
                let right = if i + 1 == HISTOGRAM_BINS { max } else { width * (i + 1) as f64 };
                Row::new()
                    .with("bin_left", width * i as f64)
                    .with("bin_right", right)
                    .with("count", count)
            })
            .collect(),
    )
}

pub fn run_mnist_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let m = &spec.mnist;
    if m.depths.iter().any(|&t| t < 1) {
        return Err(Error::Spec("depths must be at least 1".into()));
    }
    let (train, test) = mnist_data(m, spec.seed)?;
    let picks = {
        let k = m.attacked_examples.min(test.len());
        let mut p = RngState::new(spec.seed, START_POINT_STREAM).generator().sample_indices(test.len(), k);
        p.sort_unstable();
        p
    };

    let mut out = ExperimentOutput::default();
    for &depth in &m.depths {
        let cfg = TrainConfig {
            hidden_dims: vec![m.hidden_width; depth - 1],
            epochs: m.epochs,
            learning_rate: m.learning_rate,
            batch_size: m.batch_size.min(train.len()),
            seed: spec.seed,
        };
        let trained = train_sgd(&cfg, &train)?;
        let net = &trained.weights;
        let dims = net.dims();
        let results = picks
            .par_iter()
            .map(|&i| gd_attack(net, test.example(i), m.eta, m.max_steps, m.crossing_tolerance))
            .collect::<Result<Vec<_>>>()?;
        let mut test_correct = 0;
        for (&i, r) in picks.iter().zip(&results) {
            let y = test.labels[i];
            if (r.initial_output > 0.0) == (y > 0.0) {
                test_correct += 1;
            }
            let mut row = Row::new().with("kind", "mnist").with("depth", depth);
            for (k, v) in r.to_row(&dims, spec.seed, i as u64).fields() {
                row.push(k, v.clone());
            }
            row.push("label", y);
            row.push("outcome", r.outcome.as_str());
            out.results.rows.push(row);
        }
        let mut agg = attack_aggregate("mnist", &dims, &results);
        agg.push("depth", depth);
        agg.push("provenance", train.provenance.to_string());
        agg.push("train_accuracy", trained.train_accuracy);
        agg.push("initial_loss", trained.initial_loss);
        agg.push("final_loss", trained.final_loss);
        agg.push("attacked_accuracy", test_correct as f64 / picks.len().max(1) as f64);
        out.aggregates.rows.push(agg);
        let disp: Vec<f64> = results
            .iter()
            .filter(|r| r.success)
            .map(|r| r.euclidean_displacement)
            .collect();
        out.histograms.push((depth, histogram(&disp)));
    }
    Ok(out)
}

pub fn run_single_attack(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let s = &spec.single;
    let (net, mut x0) = match &s.network {
        Some(path) => {
            let net = NetworkWeights::load(path)?;
            let d = net.input_dim();
            (net, sphere_start(d, RngState::new(spec.seed, 0).derive(START_POINT_STREAM)))
        }
        None => random_instance(&spec.resolved_architectures()?[0], spec.seed, 0)?,
    };
    if let Some(path) = &s.start {
        x0 = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidInput(format!("start point: {e}")))?;
    }
    let dims = net.dims();
    let mut out = ExperimentOutput::default();
    let flow = gradient_flow_attack(&net, &x0, &spec.attack)?;
    let mut row = Row::new().with("kind", "attack-flow");
    for (k, v) in flow.to_row(&dims, spec.seed, 0).fields() {
        row.push(k, v.clone());
    }
    row.push("outcome", flow.outcome.as_str());
    out.results.rows.push(row);
    if let Some(eta) = s.gd_eta {
        let gd = gd_attack(&net, &x0, eta, s.gd_max_steps, spec.attack.crossing_tolerance)?;
        let mut row = Row::new().with("kind", "attack-gd");
        for (k, v) in gd.to_row(&dims, spec.seed, 0).fields() {
            row.push(k, v.clone());
        }
        row.push("outcome", gd.outcome.as_str());
        out.results.rows.push(row);
    }
    out.aggregates
        .rows
        .push(attack_aggregate("attack-single", &dims, std::slice::from_ref(&flow)));
    Ok(out)
}

/// Metadata written next to the tables.
#[derive(Serialize)]
struct RunRecord<'a> {
    toolkit_version: &'a str,
    spec: &'a ExperimentSpec,
    architectures: Vec<Vec<usize>>,
    wall_clock_seconds: f64,
}

/// Writes `results.csv`, `aggregates.csv`, `histogram_<depth>.csv`, any
/// extra files, and `run.json` into `dir`. Refuses to overwrite a previous
/// run.
pub fn write_outputs(
    dir: &Path,
    spec: &ExperimentSpec,
    output: &ExperimentOutput,
    wall_clock_seconds: f64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for name in ["results.csv", "aggregates.csv", "run.json"] {
        if dir.join(name).exists() {
            return Err(Error::Spec(format!(
                "{} already holds a run ({name} exists)",
                dir.display()
            )));
        }
    }
    output.results.write_csv(dir.join("results.csv"))?;
    output.aggregates.write_csv(dir.join("aggregates.csv"))?;
    for (depth, table) in &output.histograms {
        table.write_csv(dir.join(format!("histogram_{depth}.csv")))?;
    }
    for (name, content) in &output.extra_files {
        std::fs::write(dir.join(name), content)?;
    }
    let record = RunRecord {
        toolkit_version: env!("CARGO_PKG_VERSION"),
        spec,
        architectures: spec.resolved_architectures()?,
        wall_clock_seconds,
    };
    std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}
