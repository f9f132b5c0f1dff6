//! Risk-sensitive optimal stopping on dyadic time grids.

use crate::error::{Error, Result};
use crate::numeric::steps_in;
use crate::semigroup_mpe::TiltedOperator;
use crate::state_models::StepKernel;

/// Tolerance on `ln u − G` for stop-region membership.
pub const STOP_TOLERANCE: f64 = 1e-9;
const MAX_ITERATIONS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSolution {
    pub u: Vec<f64>,
    pub stop_region: Vec<bool>,
    pub iterations: usize,
    pub residual: f64,
    /// Largest increase seen between consecutive iterates (zero when the
    /// iteration was monotone throughout).
    pub max_increase: f64,
}

/// Fixed point of `u = min(e^{gδ} P u, e^G)`, iterated from `u = e^G`.
pub fn solve_dyadic_stopping(k: &StepKernel, g: &[f64], terminal: &[f64]) -> Result<StoppingSolution> {
    let min_g = g.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_g > 0.0) {
        return Err(Error::Precondition(format!("running cost must be bounded below by a positive constant, min is {min_g}")));
    }
    solve_dyadic_stopping_with(&TiltedOperator::left_endpoint(k, g)?, terminal)
}

/// As [`solve_dyadic_stopping`] for an operator already tilted by a strictly
/// positive running cost.
pub fn solve_dyadic_stopping_with(op: &TiltedOperator, terminal: &[f64]) -> Result<StoppingSolution> {
    let n = op.len();
    if terminal.len() != n {
        return Err(Error::DimensionMismatch { what: "terminal cost", expected: n, found: terminal.len() });
    }
    if let Some(i) = terminal.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Precondition(format!("terminal cost must be finite and nonnegative, entry {i} is {}", terminal[i])));
    }
    let cap: Vec<f64> = terminal.iter().map(|v| v.exp()).collect();
    let mut u = cap.clone();
    let mut max_increase: f64 = 0.0;
    for it in 1..=MAX_ITERATIONS {
        let next: Vec<f64> = op.apply(&u).iter().zip(&cap).map(|(a, b)| a.min(*b)).collect();
        let mut change: f64 = 0.0;
        for (a, b) in next.iter().zip(&u) {
            max_increase = max_increase.max(a - b);
            change = change.max((a - b).abs());
        }
        u = next;
        if change <= 1e-15 * 4.0 * cap.iter().cloned().fold(1.0, f64::max) {
            let residual = op
                .apply(&u)
                .iter()
                .zip(&cap)
                .zip(&u)
                .map(|((a, b), v)| (a.min(*b) - v).abs())
                .fold(0.0, f64::max);
            let stop_region = u.iter().zip(terminal).map(|(v, gt)| (v.ln() - gt).abs() <= STOP_TOLERANCE).collect();
            return Ok(StoppingSolution { u, stop_region, iterations: it, residual, max_increase });
        }
    }
    Err(Error::NoConvergence { iterations: MAX_ITERATIONS, span: f64::NAN, minorization: f64::NAN })
}

/// One-step defects: how far `e^{gδ} P u` falls below `u` anywhere, and how
/// far it is from `u` on the continuation set.
pub fn verify_stopping_martingale(sol: &StoppingSolution, k: &StepKernel, g: &[f64]) -> Result<(f64, f64)> {
    Ok(verify_stopping_martingale_with(sol, &TiltedOperator::left_endpoint(k, g)?))
}

pub fn verify_stopping_martingale_with(sol: &StoppingSolution, op: &TiltedOperator) -> (f64, f64) {
    let next = op.apply(&sol.u);
    let mut sub: f64 = 0.0;
    let mut mart: f64 = 0.0;
    for x in 0..sol.u.len() {
        sub = sub.max(sol.u[x] - next[x]);
        if !sol.stop_region[x] {
            mart = mart.max((next[x] - sol.u[x]).abs());
        }
    }
    (sub, mart)
}

/// Value surface `u(t, x)` on the time grid `0, δ, …, T`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSurface {
    pub delta: f64,
    /// `values[i][x]` is `u(iδ, x)`.
    pub values: Vec<Vec<f64>>,
    pub stop: Vec<Vec<bool>>,
}

impl StoppingSurface {
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    /// CSV with columns `t,state_index,u,stop_flag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,state_index,u,stop_flag\n");
        for (i, row) in self.values.iter().enumerate() {
            for (x, u) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", i as f64 * self.delta, x, u, self.stop[i][x] as u8));
            }
        }
        out
    }
}

/// Backward induction for the time-inhomogeneous problem with horizon `T`:
/// `u(T) = e^{G(T)}` and `u(t) = min(e^{G(t)}, e^{g(t) δ} P u(t + δ))`.
pub fn finite_horizon_stopping<Fg, FG>(k: &StepKernel, g: Fg, terminal: FG, horizon: f64) -> Result<StoppingSurface>
where
    Fg: Fn(f64, usize) -> f64,
    FG: Fn(f64, usize) -> f64,
{
    let delta = k.delta();
    let steps = steps_in(horizon, delta).ok_or(Error::GridMisaligned { horizon, delta })?;
    let n = k.len();
    let mut values = vec![vec![0.0; n]; steps + 1];
    let mut stop = vec![vec![true; n]; steps + 1];
    let t_end = steps as f64 * delta;
    for x in 0..n {
        values[steps][x] = terminal(t_end, x).exp();
    }
    for i in (0..steps).rev() {
        let t = i as f64 * delta;
        let cont = k.apply(&values[i + 1]);
        for x in 0..n {
            let now = terminal(t, x).exp();
            let wait = (g(t, x) * delta).exp() * cont[x];
            if !now.is_finite() || !wait.is_finite() {
                return Err(Error::NonFinite { what: "stopping surface", index: i * n + x });
            }
            values[i][x] = now.min(wait);
            stop[i][x] = now <= wait;
        }
    }
    Ok(StoppingSurface { delta, values, stop })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> StepKernel {
        StepKernel::from_rows(&[vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.25, 0.25, 0.5]], 0.5).unwrap()
    }

    #[test]
    fn zero_terminal_cost_stops_at_once() {
        let sol = solve_dyadic_stopping(&chain(), &[0.5, 0.2, 1.0], &[0.0; 3]).unwrap();
        assert_eq!(sol.u, vec![1.0; 3]);
        assert!(sol.stop_region.iter().all(|&s| s));
        let (sub, mart) = verify_stopping_martingale(&sol, &chain(), &[0.5, 0.2, 1.0]).unwrap();
        assert_eq!((sub, mart), (0.0, 0.0));
    }

    #[test]
    fn single_state_stops_immediately() {
        let k = StepKernel::identity(1, 0.25).unwrap();
        let sol = solve_dyadic_stopping(&k, &[0.3], &[1.7]).unwrap();
        assert!((sol.u[0] - 1.7f64.exp()).abs() < 1e-15);
        assert!(sol.stop_region[0]);
    }

    #[test]
    fn preconditions() {
        assert!(matches!(solve_dyadic_stopping(&chain(), &[0.5, 0.0, 1.0], &[0.0; 3]), Err(Error::Precondition(_))));
        assert!(matches!(solve_dyadic_stopping(&chain(), &[0.5; 3], &[0.0, -1.0, 0.0]), Err(Error::Precondition(_))));
        assert!(matches!(
            finite_horizon_stopping(&chain(), |_, _| 0.0, |_, _| 0.0, 0.7),
            Err(Error::GridMisaligned { .. })
        ));
    }

    #[test]
    fn iteration_is_monotone_and_martingale_holds() {
        let g = [0.1, 0.3, 0.2];
        let big = [2.0, 0.0, 1.5];
        let sol = solve_dyadic_stopping(&chain(), &g, &big).unwrap();
        assert_eq!(sol.max_increase, 0.0);
        assert!(sol.residual <= 1e-12);
        assert!(!sol.stop_region[0] && sol.stop_region[1]);
        let (sub, mart) = verify_stopping_martingale(&sol, &chain(), &g).unwrap();
        assert!(sub <= 1e-12 && mart <= 1e-12);
        let mut bumped = sol.clone();
        bumped.u[0] += 0.1;
        let (_, mart) = verify_stopping_martingale(&bumped, &chain(), &g).unwrap();
        assert!(mart > 0.02);
    }

    #[test]
    fn finite_horizon_single_step_and_trivial() {
        let k = chain();
        let s = finite_horizon_stopping(&k, |_, _| 0.0, |_, _| 0.0, 2.0).unwrap();
        assert!(s.values.iter().flatten().all(|&v| (v - 1.0).abs() < 1e-15));
        let g = |t: f64, x: usize| 0.2 * x as f64 - t;
        let big = |t: f64, x: usize| (1.0 + t) * (x as f64 - 1.0);
        let s = finite_horizon_stopping(&k, g, big, 0.5).unwrap();
        for x in 0..3 {
            let cont: f64 = (0..3).map(|y| k.get(x, y) * big(0.5, y).exp()).sum::<f64>() * (g(0.0, x) * 0.5).exp();
            assert!((s.values[0][x] - big(0.0, x).exp().min(cont)).abs() < 1e-15);
        }
        let csv = s.to_csv();
        assert!(csv.starts_with("t,state_index,u,stop_flag\n0,0,"));
        assert_eq!(csv.lines().count(), 7);
    }
}
