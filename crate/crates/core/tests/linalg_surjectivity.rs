use flipflow::linalg::symmetric_eigenvalues;
use flipflow::surjectivity::{combinations, subset_size, vershynin_check};
use flipflow::{
    estimate_c1c2, extremal_singular_values, gaussian_matrix, submatrix_sigma_k, tail_sum_mc,
    Matrix, RngState, SubsetMode,
};
use statrs::distribution::{ContinuousCDF, Normal};

/// Calibrated lower bound on the sampled surjectivity constant for
/// `k = d/20`, `c1 = 0.25`, budget 200 (independent-generator pre-run:
/// minimum 0.194 over 100 matrices at `d = 200`, rounded down).
const SURJECTIVITY_TAU: f64 = 0.18;

/// Closed-form smaller singular value of a 2×2 matrix.
fn sigma_min_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let t = a * a + b * b + c * c + d * d;
    let det = (a * d - b * c).abs();
    let smax = ((t + ((t - 2.0 * det) * (t + 2.0 * det)).max(0.0).sqrt()) / 2.0).sqrt();
    if smax == 0.0 {
        0.0
    } else {
        det / smax
    }
}

#[test]
fn two_by_two_subsets_match_closed_form() {
    let w = gaussian_matrix(2, 4, 1.0, RngState::new(20, 0)).unwrap();
    let subsets = combinations(4, 2);
    assert_eq!(subsets.len(), 6);
    for s in subsets {
        let (i, j) = (s[0], s[1]);
        let expected = sigma_min_2x2(w.get(0, i), w.get(0, j), w.get(1, i), w.get(1, j));
        let got = submatrix_sigma_k(&w, &s).unwrap();
        assert!((got - expected).abs() <= 1e-10, "{s:?}: {got} vs {expected}");
    }
}

#[test]
fn all_columns_equal_full_sigma_k() {
    let w = gaussian_matrix(4, 9, 1.0, RngState::new(21, 0)).unwrap();
    let all: Vec<usize> = (0..9).collect();
    assert_eq!(
        submatrix_sigma_k(&w, &all).unwrap(),
        extremal_singular_values(&w).unwrap().0
    );
}

#[test]
fn tiny_exhaustive_matches_enumeration() {
    let w = gaussian_matrix(2, 4, 1.0, RngState::new(22, 0)).unwrap();
    let r = estimate_c1c2(&w, 0.5, 100, RngState::new(22, 1)).unwrap();
    assert_eq!(r.mode, SubsetMode::Exhaustive);
    assert_eq!(r.subsets_tested, 6);
    let direct = combinations(4, 2)
        .iter()
        .map(|s| submatrix_sigma_k(&w, s).unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(r.min_sigma_k, direct);
}

#[test]
fn identity_is_exactly_surjective() {
    let r = estimate_c1c2(&Matrix::identity(3).unwrap(), 1.0, 10, RngState::new(0, 0)).unwrap();
    assert_eq!(r.mode, SubsetMode::Exhaustive);
    assert!((r.min_sigma_k - 1.0).abs() < 1e-12);
}

#[test]
fn normalized_gaussian_stays_surjective() {
    let above = (0..20u64)
        .filter(|&s| {
            let w = gaussian_matrix(10, 200, 1.0 / 200.0, RngState::new(23, s)).unwrap();
            let r = estimate_c1c2(&w, 0.25, 200, RngState::new(23, s).derive(1)).unwrap();
            assert_eq!(r.mode, SubsetMode::MonteCarlo);
            r.min_sigma_k >= SURJECTIVITY_TAU
        })
        .count();
    assert!(above >= 19, "{above}/20 above {SURJECTIVITY_TAU}");
}

#[test]
fn gram_eigenvalues_of_known_matrix() {
    let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
    let e = symmetric_eigenvalues(&m).unwrap();
    assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
}

#[test]
fn hundred_by_thousand_interval() {
    let w = gaussian_matrix(100, 1000, 1e-3, RngState::new(24, 0)).unwrap();
    let (lo, hi) = extremal_singular_values(&w).unwrap();
    assert!(lo >= 0.5838 && hi <= 1.4162, "({lo}, {hi})");
}

#[test]
fn wide_interval_always_holds() {
    assert_eq!(vershynin_check(1, 1, 1, 10.0, 50, RngState::new(25, 0)).unwrap(), 1.0);
    assert_eq!(vershynin_check(100, 1000, 1000, 0.5, 100, RngState::new(26, 0)).unwrap(), 1.0);
}

#[test]
fn full_fraction_tail_mean_is_one() {
    let s = tail_sum_mc(10_000, 1.0, 100, RngState::new(27, 0)).unwrap();
    assert!((0.95..=1.05).contains(&s.mean), "{}", s.mean);
}

#[test]
fn two_dimensional_tail_matches_closed_form_cdf() {
    let trials = 100_000;
    let s = tail_sum_mc(2, 0.5, trials, RngState::new(28, 0)).unwrap();
    assert_eq!(subset_size(0.5, 2), 1);
    let phi = Normal::new(0.0, 1.0).unwrap();
    // samples hold Z/d with d = 2
    let mut z: Vec<f64> = s.samples.iter().map(|v| 2.0 * v).collect();
    z.sort_by(f64::total_cmp);
    let cdf = |x: f64| 1.0 - (2.0 * (1.0 - phi.cdf(x.sqrt()))).powi(2);
    let n = trials as f64;
    let ks = z
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0f64, f64::max);
    assert!(ks <= 0.02, "Kolmogorov distance {ks}");
}
