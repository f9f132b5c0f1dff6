//! Monte Carlo simulation of the controlled chain and the log-mean-exp
//! estimator of its cost rate.
//!
//! Path `i` of a batch draws from a ChaCha8 generator seeded with the master
//! seed and switched to stream `i`, so batches can be split across threads
//! without changing any path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost_model::CostTable;
use crate::error::{Error, Result};
use crate::numeric::steps_in;
use crate::semigroup_mpe::MpeSolution;
use crate::state_models::StepKernel;

pub use crate::dyadic_solver::ImpulsePolicy;

/// Where paths start.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    State(usize),
    Distribution(Vec<f64>),
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// States at times `0, δ, …, T` (pre-impulse at each time).
    pub states: Vec<usize>,
    /// `(step, from, to)` for each impulse.
    pub impulses: Vec<(usize, usize, usize)>,
    pub reward_part: f64,
    pub cost_part: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub n_paths: usize,
    pub horizon: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// `(Σ e^{S})² / Σ e^{2S}`.
    pub effective_sample_size: f64,
    /// `mean(S) / T`, never above the estimate.
    pub mean_rate: f64,
    pub mean_impulses: f64,
    pub max_impulses: usize,
    pub seed: u64,
}

impl SimulationReport {
    pub const CSV_HEADER: &'static str = "model_id,policy_id,m,T,n_paths,seed,estimate,std_error,mean_impulses";

    pub fn csv_row(&self, model_id: &str, policy_id: &str, m: u32) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            model_id,
            policy_id,
            m,
            self.horizon,
            self.n_paths,
            self.seed,
            self.estimate,
            self.std_error,
            self.mean_impulses
        )
    }
}

/// Cumulative rows for inversion sampling.
struct Sampler {
    n: usize,
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(k: &StepKernel) -> Self {
        let n = k.len();
        let mut cumulative = Vec::with_capacity(n * n);
        for row in k.rows() {
            let mut acc = 0.0;
            for &p in row {
                acc += p;
                cumulative.push(acc);
            }
        }
        Self { n, cumulative }
    }

    fn draw<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let row = &self.cumulative[x * self.n..(x + 1) * self.n];
        pick(row, rng.gen())
    }
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    let total = cumulative[cumulative.len() - 1];
    let target = u * total;
    let j = cumulative.partition_point(|&c| c <= target);
    // skip zero-probability states that share a cumulative value
    j.min(cumulative.len() - 1)
}

struct Plan<'a> {
    sampler: Sampler,
    policy: &'a ImpulsePolicy,
    cost: &'a CostTable,
    steps: usize,
    stride: usize,
    delta: f64,
    start: Option<Vec<f64>>,
    x0: usize,
}

impl<'a> Plan<'a> {
    fn new(k: &StepKernel, policy: &'a ImpulsePolicy, cost: &'a CostTable, init: &InitialLaw, horizon: f64) -> Result<Self> {
        let n = k.len();
        if cost.len() != n || policy.len() != n {
            return Err(Error::DimensionMismatch { what: "policy/cost vs kernel", expected: n, found: policy.len().min(cost.len()) });
        }
        for x in 0..n {
            if let Some(t) = policy.target(x) {
                if policy.in_region(t) {
                    return Err(Error::RejectedPolicy(format!("target {t} of state {x} lies in the impulse region")));
                }
                if cost.cost_to(x, t).is_none() {
                    return Err(Error::RejectedPolicy(format!("target {t} is not an impulse target")));
                }
            }
        }
        if policy.level > k.level() {
            return Err(Error::InvalidParameter(format!(
                "policy level {} is finer than kernel level {}",
                policy.level,
                k.level()
            )));
        }
        let stride = 1usize << (k.level() - policy.level);
        let steps = steps_in(horizon, k.delta()).ok_or(Error::GridMisaligned { horizon, delta: k.delta() })?;
        let (start, x0) = match init {
            InitialLaw::State(x) => {
                if *x >= n {
                    return Err(Error::OutOfRange { index: *x, len: n });
                }
                (None, *x)
            }
            InitialLaw::Distribution(p) => {
                if p.len() != n || p.iter().any(|v| !(*v >= 0.0)) || !(p.iter().sum::<f64>() > 0.0) {
                    return Err(Error::InvalidParameter("initial law must be a distribution over the states".into()));
                }
                let mut acc = 0.0;
                (Some(p.iter().map(|v| { acc += v; acc }).collect()), 0)
            }
        };
        Ok(Self { sampler: Sampler::new(k), policy, cost, steps, stride, delta: k.delta(), start, x0 })
    }

    /// Runs one path; `visit` sees every pre-impulse state and `jump` every
    /// impulse. Returns (visit counts per state, cost part).
    fn run<R: Rng>(&self, rng: &mut R, mut visit: impl FnMut(usize), mut jump: impl FnMut(usize, usize, usize)) -> (Vec<u64>, f64, usize) {
        let mut x = match &self.start {
            Some(c) => pick(c, rng.gen()),
            None => self.x0,
        };
        let mut counts = vec![0u64; self.sampler.n];
        let mut cost_part = 0.0;
        let mut impulses = 0;
        for i in 0..self.steps {
            visit(x);
            if i % self.stride == 0 {
                if let Some(t) = self.policy.target(x) {
                    cost_part += self.cost.cost_to(x, t).expect("validated target");
                    jump(i, x, t);
                    impulses += 1;
                    x = t;
                }
            }
            counts[x] += 1;
            x = self.sampler.draw(x, rng);
        }
        visit(x);
        (counts, cost_part, impulses)
    }

    fn reward(&self, counts: &[u64]) -> f64 {
        let f = self.cost.reward();
        counts.iter().zip(f).map(|(&c, &v)| v * (c as f64 * self.delta)).sum()
    }
}

/// Generator for path `index` of a batch with master seed `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates one path: at each impulse time a state in the region is first
/// shifted (paying the cost), then the reward accrues and the chain steps.
pub fn simulate_controlled<R: Rng>(
    k: &StepKernel,
    policy: &ImpulsePolicy,
    cost: &CostTable,
    init: &InitialLaw,
    horizon: f64,
    rng: &mut R,
) -> Result<PathRecord> {
    let plan = Plan::new(k, policy, cost, init, horizon)?;
    let mut states = Vec::with_capacity(plan.steps + 1);
    let mut impulses = Vec::new();
    let (counts, cost_part, _) = plan.run(rng, |x| states.push(x), |i, a, b| impulses.push((i, a, b)));
    let reward_part = plan.reward(&counts);
    Ok(PathRecord { states, impulses, reward_part, cost_part, exponent: reward_part + cost_part })
}

/// Recomputes the reward and cost parts of a recorded path.
pub fn recompute_exponent(record: &PathRecord, cost: &CostTable, delta: f64) -> (f64, f64) {
    let n = cost.len();
    let mut counts = vec![0u64; n];
    let mut next_impulse = record.impulses.iter().peekable();
    let mut cost_part = 0.0;
    for (i, &x) in record.states[..record.states.len() - 1].iter().enumerate() {
        let mut y = x;
        if let Some(&&(step, from, to)) = next_impulse.peek() {
            if step == i && from == x {
                cost_part += cost.cost_to(from, to).unwrap_or(f64::NAN);
                y = to;
                next_impulse.next();
            }
        }
        counts[y] += 1;
    }
    let f = cost.reward();
    let reward = counts.iter().zip(f).map(|(&c, &v)| v * (c as f64 * delta)).sum();
    (reward, cost_part)
}

/// Exponents and impulse counts of `n_paths` independent paths.
pub fn simulate_batch(
    k: &StepKernel,
    policy: &ImpulsePolicy,
    cost: &CostTable,
    init: &InitialLaw,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let plan = Plan::new(k, policy, cost, init, horizon)?;
    let mut exponents = Vec::with_capacity(n_paths);
    let mut counts_out = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        let mut rng = path_rng(seed, i as u64);
        let (counts, cost_part, impulses) = plan.run(&mut rng, |_| {}, |_, _, _| {});
        exponents.push(plan.reward(&counts) + cost_part);
        counts_out.push(impulses);
    }
    Ok((exponents, counts_out))
}

/// `(1/T)(logsumexp(S) − ln N)` with a delta-method standard error.
pub fn estimate_cost_rate(exponents: &[f64], impulses: &[usize], horizon: f64, seed: u64) -> Result<SimulationReport> {
    let n = exponents.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least two paths, got {n}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    if let Some(i) = exponents.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "path exponent", index: i });
    }
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ys: Vec<f64> = exponents.iter().map(|s| (s - max).exp()).collect();
    let nf = n as f64;
    let sum: f64 = ys.iter().sum();
    let mean = sum / nf;
    let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (nf - 1.0);
    let sum_sq: f64 = ys.iter().map(|y| y * y).sum();
    let estimate = (max + mean.ln()) / horizon;
    let std_error = var.sqrt() / (nf.sqrt() * mean * horizon);
    let mean_rate = exponents.iter().sum::<f64>() / nf / horizon;
    let mean_impulses = if impulses.is_empty() { 0.0 } else { impulses.iter().sum::<usize>() as f64 / impulses.len() as f64 };
    Ok(SimulationReport {
        n_paths: n,
        horizon,
        estimate,
        std_error,
        effective_sample_size: sum * sum / sum_sq,
        mean_rate,
        mean_impulses,
        max_impulses: impulses.iter().copied().max().unwrap_or(0),
        seed,
    })
}

/// Simulates a batch and summarizes it.
pub fn run_simulation(
    k: &StepKernel,
    policy: &ImpulsePolicy,
    cost: &CostTable,
    init: &InitialLaw,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<SimulationReport> {
    let (s, c) = simulate_batch(k, policy, cost, init, horizon, n_paths, seed)?;
    estimate_cost_rate(&s, &c, horizon, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoImpulseReport {
    pub report: SimulationReport,
    pub r_f: f64,
    /// `(estimate − r_f) / std_error`, zero when both sides agree exactly.
    pub z_score: f64,
    pub within_three_se: bool,
}

/// Uncontrolled estimate of the exponential rate compared against `r(f)`.
pub fn validate_no_impulse(
    k: &StepKernel,
    cost: &CostTable,
    init: &InitialLaw,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    mpe: &MpeSolution,
) -> Result<NoImpulseReport> {
    let policy = ImpulsePolicy::empty(k.len(), k.level());
    let report = run_simulation(k, &policy, cost, init, horizon, n_paths, seed)?;
    let diff = report.estimate - mpe.r_f;
    let slack = 1e-12 * mpe.r_f.abs().max(1.0);
    let within = diff.abs() <= 3.0 * report.std_error + slack;
    let z_score = if diff.abs() <= slack { 0.0 } else { diff / report.std_error };
    Ok(NoImpulseReport { report, r_f: mpe.r_f, z_score, within_three_se: within })
}
