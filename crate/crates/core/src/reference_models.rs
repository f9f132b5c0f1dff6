//! Small fixed models used by the test suites and the command-line `verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost_model::{build_cost, CostSpec, CostTable};
use crate::error::Result;
use crate::state_models::{StateGrid, StepKernel};

/// Finest dyadic level used by the reference suite.
pub const FINEST_LEVEL: u32 = 6;

#[derive(Debug, Clone)]
pub struct ReferenceModel {
    pub name: String,
    pub grid: StateGrid,
    /// Kernel at the finest level.
    pub kernel: StepKernel,
    pub cost: CostTable,
}

impl ReferenceModel {
    fn from_generator(name: &str, grid: StateGrid, generator: &[Vec<f64>], spec: &CostSpec, f: &[f64], level: u32) -> Result<Self> {
        let kernel = StepKernel::from_generator(generator, level)?;
        let cost = build_cost(spec, &grid, f)?;
        Ok(Self { name: name.to_string(), grid, kernel, cost })
    }
}

/// One state that is also the only impulse target.
pub fn single_state(f0: f64, c0: f64, level: u32) -> Result<ReferenceModel> {
    let grid = StateGrid::uniform_line(0.0, 0.0, 1, vec![0], 0)?;
    let kernel = StepKernel::identity(1, crate::state_models::dyadic_delta(level))?;
    let cost = build_cost(&CostSpec::metric_capped(c0, 1.0), &grid, &[f0])?;
    Ok(ReferenceModel { name: "single_state".into(), grid, kernel, cost })
}

fn three_state_generator() -> Vec<Vec<f64>> {
    vec![
        vec![-1.5, 1.0, 0.5],
        vec![0.7, -1.0, 0.3],
        vec![1.2, 0.8, -2.0],
    ]
}

/// Three-state chain with the same reward `κ` everywhere.
pub fn constant_reward(kappa: f64, level: u32) -> Result<ReferenceModel> {
    let grid = StateGrid::uniform_line(0.0, 2.0, 3, vec![0, 1], 0)?;
    ReferenceModel::from_generator("constant_reward", grid, &three_state_generator(), &CostSpec::rational(0.3), &[kappa; 3], level)
}

/// Four states with rewards `(0, 1, 2, 5)` and cheap shifts into `{0, 1}`.
///
/// States 0 and 1 mix fast and leak slowly to state 2, which mixes back at a
/// moderate rate; state 3 is a rare, short excursion. Shifts cost
/// `0.2 + 0.1ρ` with grid spacing `0.01`.
pub fn cheap_shift(level: u32) -> Result<ReferenceModel> {
    let grid = StateGrid::uniform_line(0.0, 0.03, 4, vec![0, 1], 0)?;
    let q = vec![
        vec![-(128.0 + 0.08 + 0.01), 128.0, 0.08, 0.01],
        vec![128.0, -(128.0 + 0.08 + 0.01), 0.08, 0.01],
        vec![2.75, 2.75, -(5.5 + 0.01), 0.01],
        vec![100.0 / 3.0, 100.0 / 3.0, 100.0 / 3.0, -100.0],
    ];
    let spec = CostSpec::metric_capped(0.2, f64::INFINITY).with_scale(0.1);
    ReferenceModel::from_generator("cheap_shift", grid, &q, &spec, &[0.0, 1.0, 2.0, 5.0], level)
}

/// Four states whose shift floor dwarfs any attainable reward gain.
pub fn prohibitive_cost(level: u32) -> Result<ReferenceModel> {
    let grid = StateGrid::uniform_line(0.0, 3.0, 4, vec![0, 1], 0)?;
    let q = vec![
        vec![-2.0, 1.0, 0.5, 0.5],
        vec![0.4, -1.2, 0.4, 0.4],
        vec![1.0, 1.0, -3.0, 1.0],
        vec![0.3, 0.3, 0.9, -1.5],
    ];
    ReferenceModel::from_generator("prohibitive_cost", grid, &q, &CostSpec::metric_capped(50.0, 1.0), &[-1.0, 0.5, 1.0, 0.2], level)
}

/// Six-state instance drawn from `seed`: generator rates in `[0.1, 2]`,
/// rewards in `[-1, 3]`, one to three impulse targets, capped-metric costs
/// on random points of the unit square.
pub fn random_instance(seed: u64, level: u32) -> Result<ReferenceModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let mut q = vec![vec![0.0; n]; n];
    for (i, row) in q.iter_mut().enumerate() {
        let mut out = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if i != j {
                *v = rng.gen_range(0.1..2.0);
                out += *v;
            }
        }
        row[i] = -out;
    }
    let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..3.0)).collect();
    let points: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let u_count = rng.gen_range(1..=3);
    let mut impulse = Vec::new();
    while impulse.len() < u_count {
        let t = rng.gen_range(0..n);
        if !impulse.contains(&t) {
            impulse.push(t);
        }
    }
    let c0 = rng.gen_range(0.05..0.3);
    let cap = rng.gen_range(0.1..0.5);
    let grid = StateGrid::euclidean(points, impulse, 0)?;
    let name = format!("random_{seed}");
    ReferenceModel::from_generator(&name, grid, &q, &CostSpec::metric_capped(c0, cap), &f, level)
}

/// Seeds of the ten random instances in the reference suite.
pub const RANDOM_SEEDS: [u64; 10] = [11, 12, 13, 14, 15, 16, 17, 18, 19, 20];

/// Every reference model at `level`.
pub fn reference_suite(level: u32) -> Result<Vec<ReferenceModel>> {
    let mut out = vec![
        single_state(0.8, 0.5, level)?,
        constant_reward(0.7, level)?,
        cheap_shift(level)?,
        prohibitive_cost(level)?,
    ];
    for seed in RANDOM_SEEDS {
        out.push(random_instance(seed, level)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_builds_and_is_reproducible() {
        let a = reference_suite(FINEST_LEVEL).unwrap();
        let b = reference_suite(FINEST_LEVEL).unwrap();
        assert_eq!(a.len(), 14);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.kernel, y.kernel);
            assert_eq!(x.cost, y.cost);
            assert!(x.kernel.stochasticity_defect() < 1e-12);
        }
    }

    #[test]
    fn cheap_shift_costs() {
        let m = cheap_shift(FINEST_LEVEL).unwrap();
        assert!((m.cost.cost_to(3, 0).unwrap() - 0.203).abs() < 1e-12);
        assert_eq!(m.cost.cost_to(1, 1), Some(0.2));
    }
}
