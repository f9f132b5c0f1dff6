//! Tilted one-step operators, their Perron roots and the multiplicative
//! Poisson equation.

use crate::error::{Error, Result};
use crate::numeric::{log_weighted_sum_exp, mat_mul};
use crate::state_models::StepKernel;

/// Relative tolerance on the Perron root.
pub const PERRON_TOLERANCE: f64 = 1e-12;
const ITERATIONS_PER_ROUND: usize = 400;
const MAX_SQUARINGS: u32 = 60;
/// Step count of the limit-sequence cross-check.
pub const SEQUENCE_STEPS: usize = 1000;
/// Largest number of paths enumerated by [`verify_change_of_measure`].
pub const PATH_LIMIT: u128 = 1 << 24;

/// `A(x, y) = e^{f(x) δ} P(x, y)`, or a power of such an operator.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedOperator {
    n: usize,
    delta: f64,
    level: u32,
    entries: Vec<f64>,
}

impl TiltedOperator {
    /// Tilts `k` by the reward at the left endpoint of each step.
    pub fn left_endpoint(k: &StepKernel, f: &[f64]) -> Result<Self> {
        let n = k.len();
        if f.len() != n {
            return Err(Error::DimensionMismatch { what: "reward vs kernel", expected: n, found: f.len() });
        }
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "reward", index: i });
        }
        let mut entries = Vec::with_capacity(n * n);
        for (x, row) in k.rows().enumerate() {
            let s = (f[x] * k.delta()).exp();
            entries.extend(row.iter().map(|p| s * p));
        }
        Ok(Self { n, delta: k.delta(), level: k.level(), entries })
    }

    /// Raw nonnegative matrix, for operators not built from a kernel.
    pub fn from_entries(n: usize, delta: f64, level: u32, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch { what: "operator entries", expected: n * n, found: entries.len() });
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite { what: "operator entry", index: i });
        }
        Ok(Self { n, delta, level, entries })
    }

    /// Two-step operator at the next coarser level.
    pub fn square(&self) -> Self {
        Self {
            n: self.n,
            delta: 2.0 * self.delta,
            level: self.level.saturating_sub(1),
            entries: mat_mul(self.n, &self.entries, &self.entries),
        }
    }

    /// Operators from `self.level()` down to `coarsest`, finest first.
    pub fn ladder(&self, coarsest: u32) -> Vec<Self> {
        let mut out = vec![self.clone()];
        while out.last().map(|o| o.level > coarsest).unwrap_or(false) {
            let next = out.last().unwrap().square();
            out.push(next);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.entries[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.entries[x * self.n..(x + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        self.entries
            .chunks(self.n)
            .map(|row| row.iter().zip(h).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `ln Σ_y A(x, y) e^{u(y)}` for every `x`.
    pub fn log_apply(&self, u: &[f64]) -> Vec<f64> {
        self.entries.chunks(self.n).map(|row| log_weighted_sum_exp(row, u)).collect()
    }

    pub fn transposed(&self) -> Self {
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                entries[y * n + x] = self.entries[x * n + y];
            }
        }
        Self { entries, ..self.clone() }
    }

    /// `true` when some power of the support pattern is strictly positive.
    pub fn is_primitive(&self) -> bool {
        let n = self.n;
        let mut b: Vec<bool> = self.entries.iter().map(|&v| v > 0.0).collect();
        let bound = (n - 1) * (n - 1) + 1;
        let mut power = 1usize;
        while power < bound {
            let mut next = vec![false; n * n];
            for i in 0..n {
                for k in 0..n {
                    if b[i * n + k] {
                        for j in 0..n {
                            next[i * n + j] |= b[k * n + j];
                        }
                    }
                }
            }
            b = next;
            power *= 2;
        }
        b.iter().all(|&v| v)
    }
}

/// `Q_δ h(x) = e^{f(x) δ} Σ_y P(x, y) h(y)`.
pub fn tilted_step(k: &StepKernel, f: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if h.len() != k.len() {
        return Err(Error::DimensionMismatch { what: "test function", expected: k.len(), found: h.len() });
    }
    if let Some(i) = h.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("test function must be positive, entry {i} is {}", h[i])));
    }
    Ok(TiltedOperator::left_endpoint(k, f)?.apply(h))
}

/// Perron root and right eigenvector of a primitive operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Perron {
    /// Natural log of the Perron root of one step.
    pub log_root: f64,
    /// Eigenvector normalized to 1 at the reference state.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Power iteration with Collatz–Wielandt bounds, switching to repeated
/// squaring of the (rescaled) operator when convergence is slow.
pub fn perron(op: &TiltedOperator, reference: usize) -> Result<Perron> {
    let n = op.n;
    if reference >= n {
        return Err(Error::OutOfRange { index: reference, len: n });
    }
    if !op.is_primitive() {
        return Err(Error::NotPrimitive);
    }
    // A^p = e^{log_scale} · m
    let mut m = op.entries.clone();
    let mut log_scale = 0.0;
    let mut power = 1.0;
    let mut h = vec![1.0; n];
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    for _ in 0..=MAX_SQUARINGS {
        for _ in 0..ITERATIONS_PER_ROUND {
            iterations += 1;
            let g: Vec<f64> = m.chunks(n).map(|row| row.iter().zip(&h).map(|(a, b)| a * b).sum()).collect();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for (gi, hi_) in g.iter().zip(&h) {
                let r = gi / hi_;
                lo = lo.min(r);
                hi = hi.max(r);
            }
            let norm = g[reference];
            h = g.iter().map(|v| v / norm).collect();
            gap = (hi / lo).ln() / power;
            let root = (0.5 * (lo.ln() + hi.ln()) + log_scale) / power;
            if gap <= 0.1 * PERRON_TOLERANCE || (hi / lo).ln() <= 4.0 * f64::EPSILON {
                return Ok(Perron { log_root: root, vector: h, iterations });
            }
        }
        m = mat_mul(n, &m, &m);
        let s = m.iter().cloned().fold(0.0, f64::max);
        m.iter_mut().for_each(|v| *v /= s);
        log_scale = 2.0 * log_scale + s.ln();
        power *= 2.0;
    }
    Err(Error::PowerIteration { iterations, gap })
}

/// `ln ρ(A)` for any nonnegative operator, primitive or not, from
/// `ln ‖A^p‖ / p` along repeated squaring (`p` up to `2^62`).
pub fn log_spectral_radius(op: &TiltedOperator) -> f64 {
    let n = op.n;
    let mut m = op.entries.clone();
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..62 {
        let s = m.iter().cloned().fold(0.0, f64::max);
        if s == 0.0 {
            return f64::NEG_INFINITY;
        }
        m.iter_mut().for_each(|v| *v /= s);
        log_scale += s.ln();
        m = mat_mul(n, &m, &m);
        log_scale *= 2.0;
        power *= 2.0;
    }
    let s = m.iter().cloned().fold(0.0, f64::max);
    (log_scale + s.ln()) / power
}

/// Left Perron vector normalized to a probability distribution.
pub fn left_perron_distribution(op: &TiltedOperator) -> Result<Vec<f64>> {
    let p = perron(&op.transposed(), 0)?;
    let s: f64 = p.vector.iter().sum();
    Ok(p.vector.iter().map(|v| v / s).collect())
}

/// Semigroup type with its limit-sequence cross-check.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupType {
    /// Long-run exponential rate per unit time.
    pub r_f: f64,
    pub iterations: usize,
    /// `(1/(kδ)) max_x ln Q^k 1(x)` at `k = SEQUENCE_STEPS`.
    pub sequence_ratio: f64,
    /// `(max ln Q^{k+1} 1 − max ln Q^k 1)/δ` at `k = SEQUENCE_STEPS`.
    pub sequence_increment: f64,
    /// Whether the increments had settled to 1e-10 by the last step.
    pub sequence_settled: bool,
}

pub fn semigroup_type(k: &StepKernel, f: &[f64]) -> Result<SemigroupType> {
    semigroup_type_of(&TiltedOperator::left_endpoint(k, f)?)
}

/// Errors if the settled limit sequence disagrees with the Perron rate by
/// more than 1e-6.
pub fn semigroup_type_of(op: &TiltedOperator) -> Result<SemigroupType> {
    let p = perron(op, 0)?;
    let r_f = p.log_root / op.delta;
    let mut u = vec![0.0; op.n];
    let mut prev_max = 0.0;
    let mut increment = 0.0;
    let mut prev_increment = f64::NAN;
    let mut ratio = 0.0;
    for k in 1..=SEQUENCE_STEPS + 1 {
        u = op.log_apply(&u);
        let mx = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prev_increment = increment;
        increment = (mx - prev_max) / op.delta;
        prev_max = mx;
        if k == SEQUENCE_STEPS {
            ratio = mx / (k as f64 * op.delta);
        }
    }
    let settled = (increment - prev_increment).abs() <= 1e-10 * increment.abs().max(1.0);
    if settled && (increment - r_f).abs() > 1e-6 {
        return Err(Error::Verification(format!(
            "Perron rate {r_f} and limit sequence {increment} disagree"
        )));
    }
    Ok(SemigroupType {
        r_f,
        iterations: p.iterations,
        sequence_ratio: ratio,
        sequence_increment: increment,
        sequence_settled: settled,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpeSolution {
    pub r_f: f64,
    /// Bias with `v(reference) = 0`.
    pub v: Vec<f64>,
    pub reference: usize,
    /// `e^{-v(x)} e^{(f(x) - r) δ} P(x, y) e^{v(y)}`.
    pub tilted_kernel: StepKernel,
    /// Largest deviation of a tilted row sum from one, before normalization.
    pub row_defect: f64,
    /// Sup-norm defect of the one-step equation.
    pub residual: f64,
}

/// Residual tolerance for an accepted solution.
pub const MPE_TOLERANCE: f64 = 1e-10;

pub fn solve_mpe(k: &StepKernel, f: &[f64], reference: usize) -> Result<MpeSolution> {
    solve_mpe_of(&TiltedOperator::left_endpoint(k, f)?, reference)
}

pub fn solve_mpe_of(op: &TiltedOperator, reference: usize) -> Result<MpeSolution> {
    let p = perron(op, reference)?;
    let r_f = p.log_root / op.delta;
    let v: Vec<f64> = p.vector.iter().map(|h| h.ln()).collect();
    let n = op.n;
    let lhs = op.log_apply(&v);
    let residual = (0..n)
        .map(|x| (v[x] - (lhs[x] - p.log_root)).abs())
        .fold(0.0, f64::max);
    let mut rows = Vec::with_capacity(n);
    let mut row_defect: f64 = 0.0;
    for x in 0..n {
        let row: Vec<f64> = (0..n)
            .map(|y| (v[y] - v[x] - p.log_root).exp() * op.get(x, y))
            .collect();
        row_defect = row_defect.max((row.iter().sum::<f64>() - 1.0).abs());
        rows.push(row);
    }
    if residual > MPE_TOLERANCE {
        return Err(Error::Residual { residual, tolerance: MPE_TOLERANCE });
    }
    let tilted_kernel = StepKernel::from_rows(&rows, op.delta)?;
    Ok(MpeSolution { r_f, v, reference, tilted_kernel, row_defect, residual })
}

impl MpeSolution {
    /// Key-value block: `r_f`, `residual`, the `v` vector, then the tilted
    /// kernel table.
    pub fn to_text(&self) -> String {
        let v: Vec<String> = self.v.iter().map(|x| format!("{x}")).collect();
        format!(
            "r_f {}\nresidual {}\nv {}\n{}",
            self.r_f,
            self.residual,
            v.join(" "),
            self.tilted_kernel.to_table()
        )
    }
}

/// Largest gap, over starting states, between the two sides of the
/// exponential change-of-measure identity at the deterministic time
/// `horizon_steps`, computed by enumerating every path.
pub fn verify_change_of_measure(
    op: &TiltedOperator,
    mpe: &MpeSolution,
    terminal: &[f64],
    lambda: f64,
    horizon_steps: usize,
) -> Result<f64> {
    let n = op.n;
    if terminal.len() != n || mpe.v.len() != n {
        return Err(Error::DimensionMismatch { what: "terminal reward", expected: n, found: terminal.len() });
    }
    let paths = (n as u128).checked_pow(horizon_steps as u32).unwrap_or(u128::MAX);
    if paths > PATH_LIMIT {
        return Err(Error::InstanceTooLarge { paths, limit: PATH_LIMIT });
    }
    let q = &mpe.tilted_kernel;
    let discount = (-lambda * op.delta).exp();
    let drift = ((mpe.r_f - lambda) * op.delta * horizon_steps as f64).exp();
    let mut worst: f64 = 0.0;
    for x in 0..n {
        let mut left = 0.0;
        let mut right = 0.0;
        let mut sink = |end: usize, w_p: f64, w_q: f64| {
            left += w_p * terminal[end].exp();
            right += w_q * (terminal[end] - mpe.v[end]).exp();
        };
        let weight = |a: usize, b: usize| (op.get(a, b) * discount, q.get(a, b));
        enumerate(n, x, horizon_steps, 1.0, 1.0, &mut sink, &weight);
        let right = mpe.v[x].exp() * drift * right;
        worst = worst.max((left - right).abs());
    }
    Ok(worst)
}

fn enumerate<S, W>(n: usize, x: usize, steps: usize, wp: f64, wq: f64, sink: &mut S, weight: &W)
where
    S: FnMut(usize, f64, f64),
    W: Fn(usize, usize) -> (f64, f64),
{
    if steps == 0 {
        sink(x, wp, wq);
        return;
    }
    for y in 0..n {
        let (a, b) = weight(x, y);
        if a == 0.0 && b == 0.0 {
            continue;
        }
        enumerate(n, y, steps - 1, wp * a, wq * b, sink, weight);
    }
}
