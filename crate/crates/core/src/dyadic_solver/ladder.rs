use crate::cost_model::CostTable;
use crate::error::{Error, Result};
use crate::semigroup_mpe::{semigroup_type_of, TiltedOperator};
use crate::state_models::StepKernel;

use super::bellman::{solve_dyadic_bellman_with, DyadicSolution, SolverOptions};

/// Slack for the nonincreasing-in-level check.
pub const LADDER_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    Impulsive,
    NoImpulse,
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Case::Impulsive => "impulsive",
            Case::NoImpulse => "no_impulse",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderLevel {
    pub m: u32,
    pub delta: f64,
    pub lambda: f64,
    pub residual: f64,
    pub iterations: usize,
    /// `λ_m ≥ r(f) − case_gap_tol` at this level.
    pub no_impulse: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaLadder {
    /// Coarsest level first.
    pub levels: Vec<LadderLevel>,
    pub lambda_limit: f64,
    /// `2λ_{max} − λ_{max−1}`; reported only.
    pub richardson: Option<f64>,
    pub r_f: f64,
    pub case: Case,
    pub solutions: Vec<DyadicSolution>,
}

impl LambdaLadder {
    /// CSV with columns `m,delta,lambda_m,r_f,case`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,delta,lambda_m,r_f,case\n");
        for l in &self.levels {
            let case = if l.no_impulse { Case::NoImpulse } else { Case::Impulsive };
            out.push_str(&format!("{},{},{},{},{}\n", l.m, l.delta, l.lambda, self.r_f, case));
        }
        out
    }
}

/// Ladder from the finest kernel, tilted once at its own step; coarser
/// levels use powers of that operator.
pub fn lambda_ladder(finest: &StepKernel, cost: &CostTable, m_min: u32, opts: &SolverOptions) -> Result<LambdaLadder> {
    let op = TiltedOperator::left_endpoint(finest, cost.reward())?;
    lambda_ladder_with(&op, cost, m_min, opts)
}

pub fn lambda_ladder_with(
    finest: &TiltedOperator,
    cost: &CostTable,
    m_min: u32,
    opts: &SolverOptions,
) -> Result<LambdaLadder> {
    if m_min > finest.level() {
        return Err(Error::InvalidParameter(format!(
            "coarsest level {m_min} is finer than the kernel level {}",
            finest.level()
        )));
    }
    let r_f = semigroup_type_of(finest)?.r_f;
    let mut ops = finest.ladder(m_min);
    ops.reverse();
    let mut levels = Vec::with_capacity(ops.len());
    let mut solutions = Vec::with_capacity(ops.len());
    for op in &ops {
        let sol = solve_dyadic_bellman_with(op, cost, opts)?;
        levels.push(LadderLevel {
            m: op.level(),
            delta: op.delta(),
            lambda: sol.lambda,
            residual: sol.residual,
            iterations: sol.iterations,
            no_impulse: sol.lambda >= r_f - opts.case_gap_tol,
        });
        solutions.push(sol);
    }
    for (i, pair) in levels.windows(2).enumerate() {
        let excess = pair[1].lambda - pair[0].lambda;
        if excess > LADDER_TOLERANCE {
            return Err(Error::Monotonicity { what: "lambda ladder", index: i + 1, excess });
        }
    }
    let last = levels.last().expect("at least one level");
    let lambda_limit = last.lambda;
    let case = if last.no_impulse { Case::NoImpulse } else { Case::Impulsive };
    let richardson = (levels.len() >= 2).then(|| 2.0 * lambda_limit - levels[levels.len() - 2].lambda);
    Ok(LambdaLadder { levels, lambda_limit, richardson, r_f, case, solutions })
}
