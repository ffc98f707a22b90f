//! Calibration pre-runs for the frozen constants used in `acceptance.rs` and
//! the integration tests. They draw from `rand`'s `StdRng` and `rand_distr`,
//! independent of the crate's own generator, and print the values to freeze.
//!
//! Run with `cargo test --release --test calibration -- --ignored --nocapture`.

use flipflow::surjectivity::{estimate_c1c2, subset_size, submatrix_sigma_k};
use flipflow::{
    example_typicality, gradient_flow_attack, weight_typicality, AttackConfig, Matrix,
    NetworkWeights, RngState,
};
use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

fn oracle_matrix(rows: usize, cols: usize, variance: f64, rng: &mut StdRng) -> Matrix {
    let dist = Normal::new(0.0, variance.sqrt()).unwrap();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect()).unwrap()
}

fn oracle_net(dims: &[usize], rng: &mut StdRng) -> NetworkWeights {
    NetworkWeights::new(
        dims.windows(2)
            .map(|w| oracle_matrix(w[1], w[0], 1.0 / w[0] as f64, rng))
            .collect(),
    )
    .unwrap()
}

fn oracle_sphere(d: usize, rng: &mut StdRng) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    g.iter().map(|v| v * (d as f64).sqrt() / n).collect()
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((q * v.len() as f64).ceil() as usize).max(1) - 1]
}

#[test]
#[ignore]
fn tail_sum_mean() {
    let (d, keep, trials) = (1000usize, 500usize, 100_000usize);
    let mut rng = StdRng::seed_from_u64(0xCA11);
    let mut total = 0.0;
    let mut zs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut sq: Vec<f64> = (0..d)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * g
            })
            .collect();
        sq.select_nth_unstable_by(keep - 1, f64::total_cmp);
        let z = sq[..keep].iter().sum::<f64>() / d as f64;
        total += z;
        zs.push(z);
    }
    let q = StatNormal::new(0.0, 1.0).unwrap().inverse_cdf(0.75);
    let phi = (-q * q / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    println!(
        "tail-sum d=1000 c1=0.5: oracle mean {:.6}, oracle p01 {:.6}, asymptotic mean {:.6}",
        total / trials as f64,
        percentile(zs, 0.01),
        0.5 - 2.0 * q * phi
    );
}

#[test]
#[ignore]
fn surjectivity_threshold() {
    let mut rng = StdRng::seed_from_u64(0xCA12);
    for d in [200usize, 400, 800] {
        let k = d / 20;
        let s = subset_size(0.25, d);
        let mins: Vec<f64> = (0..100)
            .map(|_| {
                let w = oracle_matrix(k, d, 1.0 / d as f64, &mut rng);
                (0..200)
                    .map(|_| {
                        let cols = sample(&mut rng, d, s).into_vec();
                        submatrix_sigma_k(&w, &cols).unwrap()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        println!(
            "surjectivity d={d}: min {:.4} p05 {:.4} median {:.4}",
            percentile(mins.clone(), 0.0),
            percentile(mins.clone(), 0.05),
            percentile(mins, 0.5)
        );
    }
}

#[test]
#[ignore]
fn gradient_floor() {
    let mut rng = StdRng::seed_from_u64(0xCA13);
    let cfg = AttackConfig::default();
    let floors: Vec<f64> = (0..400)
        .filter_map(|_| {
            let net = oracle_net(&[2048, 208, 22, 1], &mut rng);
            let x0 = oracle_sphere(2048, &mut rng);
            let r = gradient_flow_attack(&net, &x0, &cfg).unwrap();
            r.success.then_some(r.min_gradient_norm)
        })
        .collect();
    println!(
        "gradient floor d=2048 (400 trials): {} successes, min {:.4} p01 {:.4} p05 {:.4} median {:.4}",
        floors.len(),
        percentile(floors.clone(), 0.0),
        percentile(floors.clone(), 0.01),
        percentile(floors.clone(), 0.05),
        percentile(floors.clone(), 0.5)
    );
    for rho in [0.03, 0.05, 0.08, 0.1] {
        let below = floors.iter().filter(|&&f| f < rho).count();
        println!("  below {rho}: {below}/{}", floors.len());
    }
}

/// Largest `c2` at which `x` satisfies the activation condition: per hidden
/// layer, the `⌈2·c1·n⌉`-th largest pre-activation, scaled by `√d/‖x‖`.
fn critical_c2(net: &NetworkWeights, x: &[f64], c1: f64) -> f64 {
    let trace = net.forward(x).unwrap();
    let d = x.len() as f64;
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    trace.pre_activations[..net.depth() - 1]
        .iter()
        .map(|pre| {
            let mut v = pre.clone();
            v.sort_by(|a, b| b.total_cmp(a));
            let need = ((2.0 * c1 * v.len() as f64) - 1e-9).ceil() as usize;
            v[need.max(1) - 1] * d.sqrt() / xn
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
#[ignore]
fn typicality_c2() {
    let mut rng = StdRng::seed_from_u64(0xCA14);
    let dims = [1024usize, 128, 16, 1];
    for c1 in [0.15, 0.2] {
        let mut crit = Vec::new();
        let mut output_ok = 0;
        for _ in 0..2000 {
            let net = oracle_net(&dims, &mut rng);
            let x = oracle_sphere(1024, &mut rng);
            let r = example_typicality(&net, &x, c1, 1e-300).unwrap();
            if r.output_magnitude <= r.output_bound {
                output_ok += 1;
            }
            crit.push(critical_c2(&net, &x, c1));
        }
        let positive = crit.iter().filter(|&&c| c > 0.0).count();
        let pos: Vec<f64> = crit.iter().copied().filter(|&c| c > 0.0).collect();
        println!(
            "typicality c1={c1}: output bound ok {output_ok}/2000, activation ok at c2->0 {positive}/2000, \
             positive critical c2 p05 {:.4} p10 {:.4} median {:.4}",
            percentile(pos.clone(), 0.05),
            percentile(pos.clone(), 0.10),
            percentile(pos, 0.5)
        );
    }
}

#[test]
#[ignore]
fn weight_typicality_threshold() {
    let mut rng = StdRng::seed_from_u64(0xCA15);
    let vals: Vec<f64> = (0..100)
        .map(|i| {
            let net = oracle_net(&[1000, 100, 10, 1], &mut rng);
            let seed: u64 = rng.random();
            weight_typicality(&net, 0.2, 200, RngState::new(seed, i)).unwrap().weights_typical_at
        })
        .collect();
    println!(
        "weight typicality 1000-100-10-1: min {:.4} p05 {:.4} p10 {:.4} median {:.4}",
        percentile(vals.clone(), 0.0),
        percentile(vals.clone(), 0.05),
        percentile(vals.clone(), 0.10),
        percentile(vals, 0.5)
    );
}

#[test]
#[ignore]
fn surjectivity_small_example() {
    let mut rng = StdRng::seed_from_u64(0xCA16);
    let mins: Vec<f64> = (0..100)
        .map(|i| {
            let w = oracle_matrix(10, 200, 1.0 / 200.0, &mut rng);
            estimate_c1c2(&w, 0.25, 200, RngState::new(0xCA16, i)).unwrap().min_sigma_k
        })
        .collect();
    println!(
        "surjectivity 10x200: min {:.4} p05 {:.4} median {:.4}",
        percentile(mins.clone(), 0.0),
        percentile(mins.clone(), 0.05),
        percentile(mins, 0.5)
    );
}

#[test]
#[ignore]
fn attack_success_4096() {
    let mut rng = StdRng::seed_from_u64(0xCA17);
    let cfg = AttackConfig::default();
    let ok = (0..100)
        .filter(|_| {
            let net = oracle_net(&[4096, 256, 16, 1], &mut rng);
            let x0 = oracle_sphere(4096, &mut rng);
            gradient_flow_attack(&net, &x0, &cfg).unwrap().success
        })
        .count();
    println!("attack 4096-256-16-1: {ok}/100 flipped");
}
