use crate::cost_model::CostTable;
use crate::error::{Error, Result};
use crate::semigroup_mpe::{log_spectral_radius, TiltedOperator};

use super::bellman::DyadicSolution;

/// Stationary impulse rule: shift out of `region` to `shift[x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulsePolicy {
    pub level: u32,
    region: Vec<bool>,
    shift: Vec<Option<usize>>,
}

impl ImpulsePolicy {
    pub fn empty(n: usize, level: u32) -> Self {
        Self { level, region: vec![false; n], shift: vec![None; n] }
    }

    /// Checks that every region state has a target in the impulse set and
    /// that no target lies inside the region.
    pub fn new(level: u32, shift: Vec<Option<usize>>, cost: &CostTable) -> Result<Self> {
        if shift.len() != cost.len() {
            return Err(Error::DimensionMismatch { what: "shift map", expected: cost.len(), found: shift.len() });
        }
        let region: Vec<bool> = shift.iter().map(Option::is_some).collect();
        for (x, t) in shift.iter().enumerate() {
            if let Some(t) = *t {
                if cost.cost_to(x, t).is_none() {
                    return Err(Error::RejectedPolicy(format!("target {t} of state {x} is not an impulse target")));
                }
                if region[t] {
                    return Err(Error::RejectedPolicy(format!("target {t} of state {x} lies in the impulse region")));
                }
            }
        }
        Ok(Self { level, region, shift })
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region.iter().all(|&r| !r)
    }

    pub fn in_region(&self, x: usize) -> bool {
        self.region[x]
    }

    pub fn target(&self, x: usize) -> Option<usize> {
        self.shift[x]
    }

    pub fn region(&self) -> &[bool] {
        &self.region
    }

    pub fn shift_map(&self) -> &[Option<usize>] {
        &self.shift
    }
}

/// One-step identities of the extracted policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCheck {
    /// Largest `|ln(e^{-λδ} A e^w) − w|` over continuation states.
    pub martingale_defect: f64,
    /// Largest `w − ln(e^{-λδ} A e^w)` over all states (positive part).
    pub submartingale_defect: f64,
}

/// Hitting rule of the solution: impulse where `w = Mw`, move to the
/// minimizing target. A target that itself lies in the region is replaced by
/// that target's own target.
pub fn extract_policy(
    sol: &DyadicSolution,
    op: &TiltedOperator,
    cost: &CostTable,
) -> Result<(ImpulsePolicy, PolicyCheck)> {
    let n = sol.w.len();
    let shift_tol = 1e-10;
    let cont: Vec<f64> = op.log_apply(&sol.w).iter().map(|v| v - sol.lambda * op.delta()).collect();
    let mut martingale: f64 = 0.0;
    let mut sub: f64 = 0.0;
    for x in 0..n {
        sub = sub.max(sol.w[x] - cont[x]);
        if !sol.impulse_region[x] {
            martingale = martingale.max((cont[x] - sol.w[x]).abs());
        }
    }
    let check = PolicyCheck { martingale_defect: martingale, submartingale_defect: sub.max(0.0) };
    if martingale > shift_tol || check.submartingale_defect > 1e-12 {
        return Err(Error::Verification(format!(
            "one-step identities fail: martingale {martingale:e}, submartingale {:e}",
            check.submartingale_defect
        )));
    }
    let mut shift = vec![None; n];
    for x in 0..n {
        if !sol.impulse_region[x] {
            continue;
        }
        let mut t = sol.argmin_shift[x];
        let mut hops = 0;
        while sol.impulse_region[t] {
            t = sol.argmin_shift[t];
            hops += 1;
            if hops > n {
                return Err(Error::Verification(format!("shift map cycles through the region from {x}")));
            }
        }
        shift[x] = Some(t);
    }
    Ok((ImpulsePolicy::new(sol.level, shift, cost)?, check))
}

/// `K(x, ·) = e^{c(x, σ(x))} A(σ(x), ·)` on the region, `A(x, ·)` elsewhere.
pub fn policy_operator(policy: &ImpulsePolicy, op: &TiltedOperator, cost: &CostTable) -> Result<TiltedOperator> {
    let n = op.len();
    if policy.len() != n {
        return Err(Error::DimensionMismatch { what: "policy", expected: n, found: policy.len() });
    }
    let mut entries = Vec::with_capacity(n * n);
    for x in 0..n {
        match policy.target(x) {
            Some(t) => {
                let c = cost.cost_to(x, t).ok_or_else(|| Error::RejectedPolicy(format!("{t} is not a target")))?;
                entries.extend(op.row(t).iter().map(|a| c.exp() * a));
            }
            None => entries.extend_from_slice(op.row(x)),
        }
    }
    TiltedOperator::from_entries(n, op.delta(), op.level(), entries)
}

/// Long-run cost rate of a stationary policy: `ln ρ(K) / δ`.
pub fn policy_rate(policy: &ImpulsePolicy, op: &TiltedOperator, cost: &CostTable) -> Result<f64> {
    let k = policy_operator(policy, op, cost)?;
    Ok(log_spectral_radius(&k) / op.delta())
}

/// Every stationary policy: a region and, for each region state, a target
/// outside the region. Returns the smallest rate and a policy attaining it.
pub fn enumerate_policies(op: &TiltedOperator, cost: &CostTable) -> Result<(f64, ImpulsePolicy)> {
    let n = op.len();
    if n > 16 {
        return Err(Error::InstanceTooLarge { paths: 1u128 << n, limit: 1 << 16 });
    }
    let mut best = (f64::INFINITY, ImpulsePolicy::empty(n, op.level()));
    for mask in 0u32..(1u32 << n) {
        let region: Vec<usize> = (0..n).filter(|x| mask >> x & 1 == 1).collect();
        let allowed: Vec<usize> = cost.targets().iter().copied().filter(|t| mask >> t & 1 == 0).collect();
        if !region.is_empty() && allowed.is_empty() {
            continue;
        }
        let mut choice = vec![0usize; region.len()];
        loop {
            let mut shift = vec![None; n];
            for (x, c) in region.iter().zip(&choice) {
                shift[*x] = Some(allowed[*c]);
            }
            let policy = ImpulsePolicy::new(op.level(), shift, cost)?;
            let rate = policy_rate(&policy, op, cost)?;
            if rate < best.0 {
                best = (rate, policy);
            }
            // odometer over target choices
            let mut i = 0;
            while i < choice.len() {
                choice[i] += 1;
                if choice[i] < allowed.len() {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
            if i == choice.len() {
                break;
            }
        }
    }
    Ok(best)
}
