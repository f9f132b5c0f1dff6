//! Builds the finest-level kernel and cost table described by a config.

use impulse_core::cost_model::{build_cost, CostSpec, CostTable};
use impulse_core::semigroup_mpe::TiltedOperator;
use impulse_core::state_models::{
    build_finite_chain, discretize_pdp, discretize_reflected_diffusion, dyadic_delta, PdpModel,
    ReflectedDiffusion, StateGrid, StepKernel,
};
use impulse_core::Result;

use crate::config::{CostKindConfig, ExperimentConfig, ModelConfig, Reward};

pub struct Model {
    pub kernel: StepKernel,
    pub cost: CostTable,
    pub op: TiltedOperator,
    /// States whose deterministic motion left the grid hull.
    pub outside_hull: Vec<usize>,
}

fn reward_values(reward: &Reward, xs: &[f64]) -> Vec<f64> {
    match reward {
        Reward::Values(v) => v.clone(),
        Reward::Polynomial { polynomial } => xs
            .iter()
            .map(|x| polynomial.iter().rev().fold(0.0, |acc, c| acc * x + c))
            .collect(),
    }
}

pub fn build(cfg: &ExperimentConfig) -> Result<Model> {
    let level = cfg.dyadic.m_max;
    let delta = dyadic_delta(level);
    let impulse = cfg.cost.impulse_indices.clone();
    let reference = cfg.solver.reference_index;
    let (grid, kernel, f, outside_hull) = match &cfg.model {
        ModelConfig::Finite { generator, rows, points, reward } => {
            let n = cfg.state_count();
            let xs: Vec<Vec<f64>> = match points {
                Some(p) => p.iter().map(|x| vec![*x]).collect(),
                None => (0..n).map(|i| vec![i as f64]).collect(),
            };
            let grid = StateGrid::euclidean(xs, impulse, reference)?;
            let kernel = match (generator, rows) {
                (Some(q), _) => StepKernel::from_generator(q, level)?,
                (_, Some(r)) => build_finite_chain(r, &grid, delta)?,
                _ => unreachable!("validated"),
            };
            (grid, kernel, reward.clone(), Vec::new())
        }
        ModelConfig::Pdp { flow_rate, jump_rate, shift_scale, noise_std, lower, upper, grid_size, reward } => {
            let grid = StateGrid::uniform_line(*lower, *upper, *grid_size, impulse, reference)?;
            let (alpha, a) = (*flow_rate, *shift_scale);
            let model = PdpModel {
                flow: move |x: f64, t: f64| x * (-alpha * t).exp(),
                jump_rate: *jump_rate,
                shift: move |x: f64| a * x,
                noise_std: *noise_std,
            };
            let d = discretize_pdp(&model, &grid, delta)?;
            let f = reward_values(reward, &grid.coordinates_1d());
            (grid, d.kernel, f, d.outside_hull)
        }
        ModelConfig::ReflectedDiffusion { diffusion, lower, upper, grid_size, floor, reward } => {
            let grid = StateGrid::uniform_line(*lower, *upper, *grid_size, impulse, reference)?;
            let a = *diffusion;
            let model = ReflectedDiffusion { diffusion: move |_x: f64| a, lower: *lower, upper: *upper, floor: *floor };
            let kernel = discretize_reflected_diffusion(&model, &grid, delta)?;
            let f = reward_values(reward, &grid.coordinates_1d());
            (grid, kernel, f, Vec::new())
        }
    };
    let c = &cfg.cost;
    let spec = match c.kind {
        CostKindConfig::MetricCapped => CostSpec::metric_capped(c.c0, c.cap),
        CostKindConfig::Rational => CostSpec::rational(c.c0),
        CostKindConfig::Logistic => CostSpec::logistic(c.c0),
        CostKindConfig::ExplicitTable => CostSpec::explicit(c.c0, c.table.clone().unwrap_or_default()),
    }
    .with_scale(c.scale);
    let cost = build_cost(&spec, &grid, &f)?;
    let op = TiltedOperator::left_endpoint(&kernel, cost.reward())?;
    Ok(Model { kernel, cost, op, outside_hull })
}
