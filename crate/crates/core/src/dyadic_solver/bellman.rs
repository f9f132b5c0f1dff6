use crate::cost_model::{apply_m_unchecked, CostTable};
use crate::error::{Error, Result};
use crate::numeric::{min_max, span};
use crate::semigroup_mpe::{perron, TiltedOperator};
use crate::state_models::StepKernel;

/// Tolerances for [`solve_dyadic_bellman`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol_span: f64,
    pub max_iterations: usize,
    pub reference_index: usize,
    pub residual_tol: f64,
    /// Tolerance on `w − Mw` for impulse-region membership.
    pub region_tol: f64,
    pub case_gap_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_span: 1e-12,
            max_iterations: 100_000,
            reference_index: 0,
            residual_tol: 1e-10,
            region_tol: 1e-9,
            case_gap_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    RelativeValueIteration,
    Bisection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadicSolution {
    pub level: u32,
    pub delta: f64,
    /// Optimal cost rate per unit time.
    pub lambda: f64,
    /// Bias, shifted so that its minimum over the impulse set is zero.
    pub w: Vec<f64>,
    pub mw: Vec<f64>,
    pub impulse_region: Vec<bool>,
    /// Minimizing target for every state, whether or not it is in the region.
    pub argmin_shift: Vec<usize>,
    pub residual: f64,
    /// Gap between the two impulse-branch forms of the equation.
    pub equivalence_defect: f64,
    pub iterations: usize,
    pub method: SolveMethod,
    /// Column-minimum minorization constant of the row-normalized operator.
    pub minorization: f64,
}

impl DyadicSolution {
    /// Targets of the impulse states, `None` elsewhere.
    pub fn shift_map(&self) -> Vec<Option<usize>> {
        self.impulse_region
            .iter()
            .zip(&self.argmin_shift)
            .map(|(&r, &t)| r.then_some(t))
            .collect()
    }

    /// Key-value dump followed by the bias, region bitmap and shift map.
    pub fn to_text(&self) -> String {
        let w: Vec<String> = self.w.iter().map(|v| format!("{v}")).collect();
        let region: String = self.impulse_region.iter().map(|&r| if r { '1' } else { '0' }).collect();
        let shift: Vec<String> = self
            .shift_map()
            .iter()
            .map(|s| s.map(|t| t.to_string()).unwrap_or_else(|| "-".into()))
            .collect();
        format!(
            "m {}\ndelta {}\nlambda {}\nresidual {}\niterations {}\nw {}\nregion {}\nshift {}\n",
            self.level,
            self.delta,
            self.lambda,
            self.residual,
            self.iterations,
            w.join(" "),
            region,
            shift.join(" ")
        )
    }
}

/// `min(ln A e^u (x), min_ξ c(x, ξ) + ln A e^u (ξ))`.
///
/// Additively homogeneous and monotone; at a solution it agrees with the
/// one-step equation whose impulse branch is `Mu`.
pub fn bellman_operator(op: &TiltedOperator, cost: &CostTable, u: &[f64]) -> Vec<f64> {
    let cont = op.log_apply(u);
    let targets = cost.targets();
    (0..op.len())
        .map(|x| {
            let jump = targets
                .iter()
                .enumerate()
                .map(|(k, &t)| cost.cost(x, k) + cont[t])
                .fold(f64::INFINITY, f64::min);
            cont[x].min(jump)
        })
        .collect()
}

fn minorization_of(op: &TiltedOperator) -> f64 {
    let n = op.len();
    let sums: Vec<f64> = (0..n).map(|x| op.row(x).iter().sum()).collect();
    (0..n)
        .map(|y| (0..n).map(|x| op.get(x, y) / sums[x]).fold(f64::INFINITY, f64::min))
        .sum()
}

fn check_inputs(op: &TiltedOperator, cost: &CostTable, opts: &SolverOptions) -> Result<()> {
    if cost.len() != op.len() {
        return Err(Error::DimensionMismatch { what: "cost vs kernel", expected: op.len(), found: cost.len() });
    }
    if opts.reference_index >= op.len() {
        return Err(Error::OutOfRange { index: opts.reference_index, len: op.len() });
    }
    if !(opts.tol_span > 0.0 && opts.residual_tol > 0.0 && opts.region_tol > 0.0 && opts.case_gap_tol > 0.0) {
        return Err(Error::InvalidParameter("tolerances must be positive".into()));
    }
    Ok(())
}

/// Solves the one-step equation `e^w = min(e^{(f − λ)δ} P e^w, e^{Mw})` at
/// the kernel's step, tilting by the reward at the left endpoint.
pub fn solve_dyadic_bellman(k: &StepKernel, cost: &CostTable, opts: &SolverOptions) -> Result<DyadicSolution> {
    solve_dyadic_bellman_with(&TiltedOperator::left_endpoint(k, cost.reward())?, cost, opts)
}

/// As [`solve_dyadic_bellman`] for a prepared tilted operator `A`, in which
/// case the continuation branch is `e^{-λδ} A e^w`.
pub fn solve_dyadic_bellman_with(
    op: &TiltedOperator,
    cost: &CostTable,
    opts: &SolverOptions,
) -> Result<DyadicSolution> {
    check_inputs(op, cost, opts)?;
    let minorization = minorization_of(op);
    if !(minorization > 0.0) {
        return Err(Error::Precondition("minorization constant is zero; span contraction fails".into()));
    }
    let delta = op.delta();
    let (u, log_rate, iterations, method) = match relative_value_iteration(op, cost, opts) {
        Ok((u, g, it)) => (u, g, it, SolveMethod::RelativeValueIteration),
        Err(_) => {
            let (u, g, it) = bisection(op, cost, opts)?;
            (u, g, it, SolveMethod::Bisection)
        }
    };
    let lambda = log_rate / delta;
    let targets = cost.targets();
    let floor = targets.iter().map(|&t| u[t]).fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = u.iter().map(|v| v - floor).collect();
    let m = apply_m_unchecked(&w, cost);
    let (residual, equivalence_defect) = fixed_point_defects(op, cost, &w, lambda);
    if residual > opts.residual_tol {
        return Err(Error::Residual { residual, tolerance: opts.residual_tol });
    }
    let impulse_region = w.iter().zip(&m.values).map(|(a, b)| a - b >= -opts.region_tol).collect();
    Ok(DyadicSolution {
        level: op.level(),
        delta,
        lambda,
        w,
        mw: m.values,
        impulse_region,
        argmin_shift: m.argmin_shift,
        residual,
        equivalence_defect,
        iterations,
        method,
        minorization,
    })
}

type Iterate = (Vec<f64>, f64, usize);

fn relative_value_iteration(op: &TiltedOperator, cost: &CostTable, opts: &SolverOptions) -> Result<Iterate> {
    let r = opts.reference_index;
    let mut u = vec![0.0; op.len()];
    let mut last_span = f64::INFINITY;
    let mut converged_at = None;
    let mut stalled = 0;
    for it in 1..=opts.max_iterations {
        let tu = bellman_operator(op, cost, &u);
        let diff: Vec<f64> = tu.iter().zip(&u).map(|(a, b)| a - b).collect();
        let s = span(&diff);
        let g = tu[r] - u[r];
        u = tu.iter().map(|v| v - tu[r]).collect();
        if !s.is_finite() {
            break;
        }
        // Once the tolerance is met keep polishing while the span still falls.
        if s <= opts.tol_span && converged_at.is_none() {
            converged_at = Some(it);
        }
        if let Some(at) = converged_at {
            if s >= last_span {
                stalled += 1;
            } else {
                stalled = 0;
            }
            if s <= 1e-15 || stalled >= 20 || it >= 2 * at + 100 {
                return Ok((u, g, it));
            }
        }
        last_span = last_span.min(s);
    }
    Err(Error::NoConvergence { iterations: opts.max_iterations, span: last_span, minorization: minorization_of(op) })
}

/// Bisection on the rate over `[−‖f‖δ, ln ρ(A)]`: for a trial rate the
/// shifted operator drifts up everywhere when the trial is too small and
/// down everywhere when it is too large.
fn bisection(op: &TiltedOperator, cost: &CostTable, opts: &SolverOptions) -> Result<Iterate> {
    let r = opts.reference_index;
    let log_root = perron(op, r)?.log_root;
    let mut lo = -cost.f_norm() * op.delta() - 1e-12;
    let mut hi = log_root + 1e-12;
    let mut u = vec![0.0; op.len()];
    let mut iterations = 0;
    while hi - lo > 1e-14 * hi.abs().max(1.0) && iterations < opts.max_iterations {
        let mid = 0.5 * (lo + hi);
        let mut decided = false;
        for _ in 0..1000 {
            iterations += 1;
            let tu = bellman_operator(op, cost, &u);
            let diff: Vec<f64> = tu.iter().zip(&u).map(|(a, b)| a - b).collect();
            let (dmin, dmax) = min_max(&diff);
            lo = lo.max(dmin);
            hi = hi.min(dmax);
            u = tu.iter().map(|v| v - tu[r]).collect();
            if dmin > mid {
                lo = lo.max(mid);
                decided = true;
            } else if dmax < mid {
                hi = hi.min(mid);
                decided = true;
            }
            if decided {
                break;
            }
        }
        if !decided {
            break;
        }
    }
    if hi - lo > 1e-10 {
        return Err(Error::NoConvergence { iterations, span: hi - lo, minorization: minorization_of(op) });
    }
    Ok((u, 0.5 * (lo + hi), iterations))
}

/// Sup-norm residual of the one-step equation and the gap between its two
/// impulse-branch forms, both in log scale.
pub(crate) fn fixed_point_defects(op: &TiltedOperator, cost: &CostTable, w: &[f64], lambda: f64) -> (f64, f64) {
    let shift = lambda * op.delta();
    let cont: Vec<f64> = op.log_apply(w).iter().map(|v| v - shift).collect();
    let m = apply_m_unchecked(w, cost);
    let targets = cost.targets();
    let mut residual: f64 = 0.0;
    let mut defect: f64 = 0.0;
    for x in 0..w.len() {
        residual = residual.max((cont[x].min(m.values[x]) - w[x]).abs());
        let via_targets = targets
            .iter()
            .enumerate()
            .map(|(k, &t)| cost.cost(x, k) + cont[t])
            .fold(f64::INFINITY, f64::min);
        defect = defect.max((via_targets - m.values[x]).abs());
    }
    (residual, defect)
}

/// Residual of the one-step equation for a stored solution, plus the
/// equivalence defect of the two impulse-branch forms.
pub fn verify_fixed_point(sol: &DyadicSolution, k: &StepKernel, cost: &CostTable) -> Result<(f64, f64)> {
    let op = TiltedOperator::left_endpoint(k, cost.reward())?;
    Ok(verify_fixed_point_with(sol, &op, cost))
}

pub fn verify_fixed_point_with(sol: &DyadicSolution, op: &TiltedOperator, cost: &CostTable) -> (f64, f64) {
    fixed_point_defects(op, cost, &sol.w, sol.lambda)
}
