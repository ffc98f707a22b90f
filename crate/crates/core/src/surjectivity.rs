//! Surjectivity of column submatrices.
//!
//! A `k × d` matrix `W` is `c`-surjective when the image of the unit ball
//! contains the radius-`c` ball, i.e. when `σ_k(W) ≥ c`. It is
//! `(c1, c2)`-surjective when every submatrix built from at least `c1·d`
//! columns is `c2`-surjective. Adding columns can only grow the image, so
//! only subsets of size exactly `⌈c1·d⌉` are binding and only those are
//! tested here.
//!
//! Column indices are 0-based throughout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{extremal_singular_values, gaussian_matrix, Matrix, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetMode {
    /// Every subset of the binding size was evaluated; the minimum is exact.
    Exhaustive,
    /// A sample of subsets was evaluated; the minimum is an upper estimate.
    MonteCarlo,
}

impl SubsetMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SubsetMode::Exhaustive => "exhaustive",
            SubsetMode::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurjectivityReport {
    pub c1: f64,
    pub subset_size: usize,
    pub mode: SubsetMode,
    pub subsets_tested: usize,
    /// Empirical `c2`: the smallest `σ_k` over the tested subsets.
    pub min_sigma_k: f64,
    pub mean_sigma_k: f64,
    pub argmin_subset: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSumStats {
    pub d: usize,
    pub c1: f64,
    pub trials: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    /// Nearest-rank 1st percentile of `Z/d`.
    pub p01: f64,
    /// Raw `Z/d` per trial, in trial order.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// `⌈c1·d⌉`, tolerant to the representation error of `c1`.
pub fn subset_size(c1: f64, d: usize) -> usize {
    let raw = c1 * d as f64;
    let size = (raw - 1e-9 * raw.max(1.0)).ceil();
    (size.max(1.0) as usize).min(d)
}

/// `σ_k` of the `k × |columns|` matrix made of the selected columns of `w`.
pub fn submatrix_sigma_k(w: &Matrix, columns: &[usize]) -> Result<f64> {
    if columns.len() < w.rows() {
        return Err(Error::RankDeficient {
            subset: columns.len(),
            rows: w.rows(),
        });
    }
    let mut seen = vec![false; w.cols()];
    for &c in columns {
        if c >= w.cols() {
            return Err(Error::InvalidInput(format!(
                "column {c} out of range for {} columns",
                w.cols()
            )));
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::InvalidInput(format!("column {c} listed twice")));
        }
    }
    Ok(extremal_singular_values(&w.select_columns(columns)?)?.0)
}

/// `C(n, k)`, or `None` once it exceeds `cap`.
pub fn binomial_capped(n: usize, k: usize, cap: u128) -> Option<u128> {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc.checked_mul((n - i) as u128)? / (i + 1) as u128;
        if acc > cap {
            return None;
        }
    }
    Some(acc)
}

/// Lexicographic `k`-subsets of `0..n`.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // rightmost position that can still advance
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Estimates the `(c1, ·)`-surjectivity constant of `w`.
///
/// Enumerates all `⌈c1·d⌉`-subsets when there are at most `budget` of them,
/// otherwise evaluates `budget` subsets drawn by partial Fisher–Yates from
/// `rng`. Subsets are evaluated in parallel; the report does not depend on
/// the thread count.
pub fn estimate_c1c2(w: &Matrix, c1: f64, budget: usize, rng: RngState) -> Result<SurjectivityReport> {
    let d = w.cols();
    let size = subset_size(c1, d);
    if !(c1 > 0.0 && c1 <= 1.0) || size < w.rows() {
        return Err(Error::InvalidFraction {
            c1,
            subset_size: size,
            rows: w.rows(),
        });
    }
    if budget == 0 {
        return Err(Error::InvalidInput("subset budget must be positive".into()));
    }

    let (mode, subsets) = match binomial_capped(d, size, budget as u128) {
        Some(_) => (SubsetMode::Exhaustive, combinations(d, size)),
        None => {
            let mut g = rng.generator();
            let subsets = (0..budget)
                .map(|_| {
                    let mut s = g.sample_indices(d, size);
                    s.sort_unstable();
                    s
                })
                .collect();
            (SubsetMode::MonteCarlo, subsets)
        }
    };

    let sigmas = subsets
        .par_iter()
        .map(|s| submatrix_sigma_k(w, s))
        .collect::<Result<Vec<f64>>>()?;

    let (argmin, min) = sigmas
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    let mean = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
    Ok(SurjectivityReport {
        c1,
        subset_size: size,
        mode,
        subsets_tested: sigmas.len(),
        min_sigma_k: min,
        // min ≤ mean can fail by one ulp in floating point
        mean_sigma_k: mean.max(min),
        argmin_subset: subsets[argmin].clone(),
    })
}

/// Monte-Carlo distribution of `Z/d`, `Z` being the sum of the `⌈c1·d⌉`
/// smallest squares of `d` standard Gaussians. Trial `i` draws from
/// `rng.derive(i)`.
pub fn tail_sum_mc(d: usize, c1: f64, trials: usize, rng: RngState) -> Result<TailSumStats> {
    if d == 0 || trials == 0 {
        return Err(Error::InvalidInput("d and trials must be positive".into()));
    }
    if !(c1 > 0.0 && c1 <= 1.0) {
        return Err(Error::InvalidFraction {
            c1,
            subset_size: 0,
            rows: 0,
        });
    }
    let keep = subset_size(c1, d);
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut g = rng.derive(i as u64).generator();
            let mut sq: Vec<f64> = (0..d).map(|_| g.standard_normal().powi(2)).collect();
            sq.sort_unstable_by(f64::total_cmp);
            sq[..keep].iter().sum::<f64>() / d as f64
        })
        .collect();

    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = (samples.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = samples.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let rank = ((0.01 * n).ceil() as usize).max(1) - 1;
    Ok(TailSumStats {
        d,
        c1,
        trials,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        mean: mean.clamp(sorted[0], sorted[sorted.len() - 1]),
        std,
        p01: sorted[rank],
        samples,
    })
}

/// One draw of the Gaussian extremal-singular-value interval check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalTrial {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

/// Per-trial outcomes of checking
/// `(√m − √n)/√d − t ≤ σ_min ≤ σ_max ≤ (√m + √n)/√d + t`
/// for fresh `n × m` Gaussian matrices with entry variance `1/d`.
pub fn vershynin_trials(
    n: usize,
    m: usize,
    variance_dim: usize,
    t: f64,
    trials: usize,
    rng: RngState,
) -> Result<Vec<IntervalTrial>> {
    if n == 0 || m == 0 || variance_dim == 0 || n > m {
        return Err(Error::InvalidDimension(format!(
            "need 0 < n <= m and d > 0, got n={n} m={m} d={variance_dim}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("t = {t}")));
    }
    let d = variance_dim as f64;
    let lower = ((m as f64).sqrt() - (n as f64).sqrt()) / d.sqrt() - t;
    let upper = ((m as f64).sqrt() + (n as f64).sqrt()) / d.sqrt() + t;
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let w = gaussian_matrix(n, m, 1.0 / d, rng.derive(i as u64))?;
            let (sigma_min, sigma_max) = extremal_singular_values(&w)?;
            Ok(IntervalTrial {
                sigma_min,
                sigma_max,
                lower,
                upper,
                pass: lower <= sigma_min && sigma_max <= upper,
            })
        })
        .collect()
}

/// Fraction of trials in which the interval holds.
pub fn vershynin_check(
    n: usize,
    m: usize,
    variance_dim: usize,
    t: f64,
    trials: usize,
    rng: RngState,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be positive".into()));
    }
    let outcomes = vershynin_trials(n, m, variance_dim, t, trials, rng)?;
    Ok(outcomes.iter().filter(|o| o.pass).count() as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye_then_zero() -> Matrix {
        Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap()
    }

    #[test]
    fn subset_examples() {
        let w = eye_then_zero();
        assert!((submatrix_sigma_k(&w, &[0, 1]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(submatrix_sigma_k(&w, &[0, 2]).unwrap(), 0.0);
        assert!(matches!(
            submatrix_sigma_k(&w, &[0]),
            Err(Error::RankDeficient { subset: 1, rows: 2 })
        ));
        assert!(submatrix_sigma_k(&w, &[0, 0]).is_err());
        assert!(submatrix_sigma_k(&w, &[0, 4]).is_err());
    }

    #[test]
    fn all_columns_equal_sigma_k() {
        let w = gaussian_matrix(4, 9, 1.0 / 9.0, RngState::new(1, 0)).unwrap();
        let all: Vec<usize> = (0..9).collect();
        let (lo, _) = extremal_singular_values(&w).unwrap();
        assert_eq!(submatrix_sigma_k(&w, &all).unwrap(), lo);
    }

    #[test]
    fn identity_full_fraction() {
        let r = estimate_c1c2(&Matrix::identity(3).unwrap(), 1.0, 10, RngState::new(0, 0)).unwrap();
        assert_eq!(r.mode, SubsetMode::Exhaustive);
        assert_eq!(r.subsets_tested, 1);
        assert!((r.min_sigma_k - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_block_has_zero_constant() {
        let r = estimate_c1c2(&eye_then_zero(), 0.5, 100, RngState::new(0, 0)).unwrap();
        assert_eq!(r.mode, SubsetMode::Exhaustive);
        assert_eq!(r.subsets_tested, 6);
        assert_eq!(r.min_sigma_k, 0.0);
        // {0,2} is the first zero in lexicographic order; {2,3} also attains 0
        assert_eq!(r.argmin_subset, vec![0, 2]);
        assert!(r.min_sigma_k <= r.mean_sigma_k);
    }

    #[test]
    fn invalid_fraction() {
        let w = gaussian_matrix(5, 10, 0.1, RngState::new(0, 0)).unwrap();
        assert!(matches!(
            estimate_c1c2(&w, 0.3, 10, RngState::new(0, 0)),
            Err(Error::InvalidFraction { subset_size: 3, rows: 5, .. })
        ));
        assert!(estimate_c1c2(&w, 1.5, 10, RngState::new(0, 0)).is_err());
    }

    #[test]
    fn monte_carlo_when_over_budget() {
        let w = gaussian_matrix(3, 20, 0.05, RngState::new(4, 0)).unwrap();
        let r = estimate_c1c2(&w, 0.5, 50, RngState::new(4, 1)).unwrap();
        assert_eq!(r.mode, SubsetMode::MonteCarlo);
        assert_eq!(r.subsets_tested, 50);
        assert_eq!(r.argmin_subset.len(), 10);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial_capped(4, 2, 100), Some(6));
        assert_eq!(binomial_capped(10, 0, 100), Some(1));
        assert_eq!(binomial_capped(10, 10, 100), Some(1));
        assert_eq!(binomial_capped(200, 50, 200), None);
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(5, 5), vec![vec![0, 1, 2, 3, 4]]);
        assert_eq!(combinations(3, 1), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn subset_size_rounding() {
        assert_eq!(subset_size(0.2, 100), 20);
        assert_eq!(subset_size(0.25, 200), 50);
        assert_eq!(subset_size(0.5, 1000), 500);
        assert_eq!(subset_size(0.5, 3), 2);
        assert_eq!(subset_size(0.2, 10), 2);
    }

    #[test]
    fn tail_sum_full_fraction_mean_is_one() {
        let s = tail_sum_mc(10_000, 1.0, 100, RngState::new(8, 0)).unwrap();
        assert!((0.95..=1.05).contains(&s.mean), "{}", s.mean);
        assert!(s.min <= s.mean && s.mean <= s.max);
        assert_eq!(s.samples.len(), 100);
    }

    #[test]
    fn interval_trivially_wide() {
        let f = vershynin_check(1, 1, 1, 10.0, 50, RngState::new(0, 0)).unwrap();
        assert_eq!(f, 1.0);
        assert!(vershynin_check(3, 2, 2, 0.1, 5, RngState::new(0, 0)).is_err());
    }
}
