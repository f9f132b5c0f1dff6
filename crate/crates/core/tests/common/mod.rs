//! Independent dense-linear-algebra oracles shared by the integration tests.
//!
//! Nothing here calls into the solvers under test: operators are rebuilt
//! from the raw kernel and reward, spectral radii come from a Schur
//! decomposition and linear systems from an LU factorization.

#![allow(dead_code)]

use impulse_core::cost_model::CostTable;
use impulse_core::state_models::StepKernel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn kernel_matrix(k: &StepKernel) -> DMatrix<f64> {
    let n = k.len();
    DMatrix::from_fn(n, n, |x, y| k.get(x, y))
}

/// `diag(e^{fδ}) P` raised to `2^{levels_up}`.
pub fn tilted_matrix(k: &StepKernel, f: &[f64], levels_up: u32) -> DMatrix<f64> {
    let n = k.len();
    let d = k.delta();
    let a = DMatrix::from_fn(n, n, |x, y| (f[x] * d).exp() * k.get(x, y));
    a.pow(1 << levels_up)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Smallest `ln ρ(K_σ) / δ` over every stationary policy, where a policy is
/// an impulse region and, for each region state, a target outside it.
pub fn policy_minimum(a: &DMatrix<f64>, cost: &CostTable, delta: f64) -> f64 {
    let n = a.nrows();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let region: Vec<usize> = (0..n).filter(|x| mask >> x & 1 == 1).collect();
        let allowed: Vec<usize> = cost.targets().iter().copied().filter(|t| mask >> t & 1 == 0).collect();
        if !region.is_empty() && allowed.is_empty() {
            continue;
        }
        let choices = allowed.len().max(1).pow(region.len() as u32);
        for code in 0..choices {
            let mut k = a.clone();
            let mut c = code;
            for &x in &region {
                let t = allowed[c % allowed.len()];
                c /= allowed.len();
                let price = cost.cost_to(x, t).unwrap().exp();
                for y in 0..n {
                    k[(x, y)] = price * a[(t, y)];
                }
            }
            best = best.min(spectral_radius(&k).ln() / delta);
        }
    }
    best
}

/// Stationary stopping value `u = min(e^{gδ} P u, e^G)` as the pointwise
/// minimum over every stopping region of the value of that region.
pub fn stopping_oracle(k: &StepKernel, g: &[f64], terminal: &[f64]) -> Vec<f64> {
    let n = k.len();
    let d = k.delta();
    let b = DMatrix::from_fn(n, n, |x, y| (g[x] * d).exp() * k.get(x, y));
    let mut best = vec![f64::INFINITY; n];
    for mask in 1u32..(1 << n) {
        let stop: Vec<bool> = (0..n).map(|x| mask >> x & 1 == 1).collect();
        let cont: Vec<usize> = (0..n).filter(|&x| !stop[x]).collect();
        let mut u: Vec<f64> = terminal.iter().map(|v| v.exp()).collect();
        if !cont.is_empty() {
            let m = cont.len();
            let bcc = DMatrix::from_fn(m, m, |i, j| b[(cont[i], cont[j])]);
            if spectral_radius(&bcc) >= 1.0 {
                continue;
            }
            let rhs = DVector::from_fn(m, |i, _| {
                (0..n).filter(|&y| stop[y]).map(|y| b[(cont[i], y)] * u[y]).sum::<f64>()
            });
            let lhs = DMatrix::identity(m, m) - bcc;
            let sol = lhs.lu().solve(&rhs).expect("nonsingular");
            for (i, &x) in cont.iter().enumerate() {
                u[x] = sol[i];
            }
        }
        for x in 0..n {
            best[x] = best[x].min(u[x]);
        }
    }
    best
}

/// `w^b(0, x)` by expanding the full strategy tree: at every node either
/// move on with the chain or pay for a shift and stay at the same time.
pub fn strategy_tree(k: &StepKernel, cost: &CostTable, steps: usize, budget: usize, x: usize) -> f64 {
    fn node(k: &StepKernel, cost: &CostTable, left: usize, b: usize, x: usize) -> f64 {
        let f = cost.reward();
        let mut best = if left == 0 {
            1.0
        } else {
            let grow = (f[x] * k.delta()).exp();
            (0..k.len())
                .filter(|&y| k.get(x, y) > 0.0)
                .map(|y| k.get(x, y) * node(k, cost, left - 1, b, y))
                .sum::<f64>()
                * grow
        };
        if b > 0 {
            for &t in cost.targets() {
                let c = cost.cost_to(x, t).unwrap();
                best = best.min(c.exp() * node(k, cost, left, b - 1, t));
            }
        }
        best
    }
    node(k, cost, steps, budget, x).ln()
}

/// Random row-stochastic matrix with every entry positive.
pub fn random_rows(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn random_vector(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
