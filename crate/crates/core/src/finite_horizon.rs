//! Finite-horizon impulse control with a budget on the number of impulses.

use crate::cost_model::CostTable;
use crate::error::{Error, Result};
use crate::numeric::steps_in;
use crate::semigroup_mpe::TiltedOperator;
use crate::state_models::StepKernel;

/// `values[b][i][x]` is `w^b(iδ, x)` for budgets `b = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizonValue {
    pub n: usize,
    pub m: u32,
    pub delta: f64,
    pub horizon: f64,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl FiniteHorizonValue {
    pub fn steps(&self) -> usize {
        self.values[0].len() - 1
    }

    /// Surface for budget `b`.
    pub fn surface(&self, b: usize) -> &[Vec<f64>] {
        &self.values[b]
    }

    /// `w^n(0, x)` for the full budget.
    pub fn initial(&self) -> &[f64] {
        &self.values[self.n][0]
    }

    /// CSV with columns `n,m,t,state_index,value`, one block per budget.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,m,t,state_index,value\n");
        for (b, surf) in self.values.iter().enumerate() {
            for (i, row) in surf.iter().enumerate() {
                for (x, v) in row.iter().enumerate() {
                    out.push_str(&format!("{},{},{},{},{}\n", b, self.m, i as f64 * self.delta, x, v));
                }
            }
        }
        out
    }
}

/// `M̃h(x) = min(min_ξ c(x, ξ) + h(ξ), h(x))` on one time slice.
pub fn m_tilde(h: &[f64], cost: &CostTable) -> Vec<f64> {
    let targets = cost.targets();
    (0..h.len())
        .map(|x| {
            let jump = targets
                .iter()
                .enumerate()
                .map(|(k, &t)| cost.cost(x, k) + h[t])
                .fold(f64::INFINITY, f64::min);
            jump.min(h[x])
        })
        .collect()
}

pub fn solve_finite_horizon(k: &StepKernel, cost: &CostTable, horizon: f64, n: usize) -> Result<FiniteHorizonValue> {
    solve_finite_horizon_with(&TiltedOperator::left_endpoint(k, cost.reward())?, cost, horizon, n)
}

/// Nested backward induction: pure accumulation for budget 0, then for each
/// further budget `w^b(t) = min(M̃w^{b−1}(t), ln A e^{w^b(t + δ)})`.
pub fn solve_finite_horizon_with(
    op: &TiltedOperator,
    cost: &CostTable,
    horizon: f64,
    n: usize,
) -> Result<FiniteHorizonValue> {
    if cost.len() != op.len() {
        return Err(Error::DimensionMismatch { what: "cost vs kernel", expected: op.len(), found: cost.len() });
    }
    let delta = op.delta();
    let steps = steps_in(horizon, delta).ok_or(Error::GridMisaligned { horizon, delta })?;
    let states = op.len();
    let mut values = Vec::with_capacity(n + 1);
    let mut base = vec![vec![0.0; states]; steps + 1];
    for i in (0..steps).rev() {
        base[i] = op.log_apply(&base[i + 1]);
    }
    values.push(base);
    for b in 1..=n {
        let prev = &values[b - 1];
        let mut surf = vec![vec![0.0; states]; steps + 1];
        surf[steps] = m_tilde(&prev[steps], cost);
        for i in (0..steps).rev() {
            let cont = op.log_apply(&surf[i + 1]);
            let now = m_tilde(&prev[i], cost);
            surf[i] = now.iter().zip(&cont).map(|(a, c)| a.min(*c)).collect();
        }
        values.push(surf);
    }
    Ok(FiniteHorizonValue { n, m: op.level(), delta, horizon, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    /// `w^b(0, x̄)` for `b = 0..=n_max`.
    pub values: Vec<f64>,
    /// Smallest budget after which successive values move by at most 1e-10.
    pub stabilization: usize,
    /// `ceil(2T‖f‖/c0) + 1`.
    pub bound: usize,
}

pub fn budget_convergence(
    k: &StepKernel,
    cost: &CostTable,
    horizon: f64,
    n_max: usize,
    reference: usize,
) -> Result<BudgetReport> {
    let fh = solve_finite_horizon(k, cost, horizon, n_max)?;
    budget_report(&fh, cost, reference)
}

pub fn budget_report(fh: &FiniteHorizonValue, cost: &CostTable, reference: usize) -> Result<BudgetReport> {
    if reference >= cost.len() {
        return Err(Error::OutOfRange { index: reference, len: cost.len() });
    }
    let values: Vec<f64> = fh.values.iter().map(|s| s[0][reference]).collect();
    for (i, w) in values.windows(2).enumerate() {
        if w[1] > w[0] + 1e-12 {
            return Err(Error::Monotonicity { what: "budget sequence", index: i + 1, excess: w[1] - w[0] });
        }
    }
    let mut stabilization = values.len() - 1;
    while stabilization > 0 && values[stabilization - 1] - values[stabilization] <= 1e-10 {
        stabilization -= 1;
    }
    let bound = (2.0 * fh.horizon * cost.f_norm() / cost.c0()).ceil() as usize + 1;
    Ok(BudgetReport { values, stabilization, bound })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    /// `(m, w^n_m(0, x̄))`, coarsest level first.
    pub levels: Vec<(u32, f64)>,
    /// `w^n_{max−1} − w^n_{max}` at the reference state.
    pub cauchy_gap: f64,
    /// Ratios of successive level gaps.
    pub gap_ratios: Vec<f64>,
}

/// Values across levels `m_min..=finest`, coarser levels from powers of the
/// finest tilted operator.
pub fn grid_convergence(
    finest: &TiltedOperator,
    cost: &CostTable,
    horizon: f64,
    n: usize,
    m_min: u32,
    reference: usize,
) -> Result<GridReport> {
    if reference >= cost.len() {
        return Err(Error::OutOfRange { index: reference, len: cost.len() });
    }
    let mut ops = finest.ladder(m_min);
    ops.reverse();
    let mut levels = Vec::with_capacity(ops.len());
    for op in &ops {
        let fh = solve_finite_horizon_with(op, cost, horizon, n)?;
        levels.push((op.level(), fh.initial()[reference]));
    }
    for (i, w) in levels.windows(2).enumerate() {
        if w[1].1 > w[0].1 + 1e-9 {
            return Err(Error::Monotonicity { what: "grid sequence", index: i + 1, excess: w[1].1 - w[0].1 });
        }
    }
    let gaps: Vec<f64> = levels.windows(2).map(|w| w[0].1 - w[1].1).collect();
    let cauchy_gap = gaps.last().copied().unwrap_or(0.0);
    let gap_ratios = gaps.windows(2).map(|g| g[0] / g[1]).collect();
    Ok(GridReport { levels, cauchy_gap, gap_ratios })
}
