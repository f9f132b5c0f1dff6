//! Running reward, shift cost and the one-impulse operator `M`.

use crate::error::{Error, Result};
use crate::state_models::{parse_token, StateGrid};

/// Slack allowed in the triangle-inequality and floor checks.
pub const CERTIFICATE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// `c0 + scale · min(ρ, cap)`.
    MetricCapped { cap: f64 },
    /// `c0 + scale · ρ / (1 + ρ)`.
    Rational,
    /// `c0 + scale / (1 + e^{-ρ})`.
    Logistic,
    /// Rows indexed by state, columns by impulse target in increasing order.
    ExplicitTable(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub kind: CostKind,
    pub c0: f64,
    pub scale: f64,
}

impl CostSpec {
    pub fn metric_capped(c0: f64, cap: f64) -> Self {
        Self { kind: CostKind::MetricCapped { cap }, c0, scale: 1.0 }
    }

    pub fn rational(c0: f64) -> Self {
        Self { kind: CostKind::Rational, c0, scale: 1.0 }
    }

    pub fn logistic(c0: f64) -> Self {
        Self { kind: CostKind::Logistic, c0, scale: 1.0 }
    }

    pub fn explicit(c0: f64, table: Vec<Vec<f64>>) -> Self {
        Self { kind: CostKind::ExplicitTable(table), c0, scale: 1.0 }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    fn h(&self, rho: f64) -> f64 {
        match &self.kind {
            CostKind::MetricCapped { cap } => rho.min(*cap),
            CostKind::Rational => rho / (1.0 + rho),
            CostKind::Logistic => 1.0 / (1.0 + (-rho).exp()),
            CostKind::ExplicitTable(_) => unreachable!("explicit tables have no h"),
        }
    }
}

/// Shift costs `c(x, ξ)` for every state and target, with the running reward.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    n: usize,
    targets: Vec<usize>,
    c: Vec<f64>,
    f: Vec<f64>,
    c0: f64,
    f_norm: f64,
    c_norm: f64,
}

/// Values and minimizing targets of `Mw`.
#[derive(Debug, Clone, PartialEq)]
pub struct MResult {
    pub values: Vec<f64>,
    /// Minimizing target state per state; ties go to the smallest index.
    pub argmin_shift: Vec<usize>,
}

pub fn build_cost(spec: &CostSpec, grid: &StateGrid, f: &[f64]) -> Result<CostTable> {
    if f.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            what: "reward vs grid",
            expected: grid.len(),
            found: f.len(),
        });
    }
    if !(spec.scale >= 0.0) || !spec.scale.is_finite() {
        return Err(Error::InvalidParameter(format!("cost scale {} must be nonnegative", spec.scale)));
    }
    if let CostKind::MetricCapped { cap } = spec.kind {
        if !(cap >= 0.0) {
            return Err(Error::InvalidParameter(format!("cap {cap} must be nonnegative")));
        }
    }
    let targets = grid.impulse_indices().to_vec();
    let n = grid.len();
    let c: Vec<f64> = match &spec.kind {
        CostKind::ExplicitTable(rows) => {
            if rows.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "cost table rows",
                    expected: n,
                    found: rows.len(),
                });
            }
            let mut out = Vec::with_capacity(n * targets.len());
            for row in rows {
                if row.len() != targets.len() {
                    return Err(Error::DimensionMismatch {
                        what: "cost table columns",
                        expected: targets.len(),
                        found: row.len(),
                    });
                }
                out.extend_from_slice(row);
            }
            out
        }
        _ => (0..n)
            .flat_map(|x| targets.iter().map(move |&t| (x, t)))
            .map(|(x, t)| spec.c0 + spec.scale * spec.h(grid.distance(x, t)))
            .collect(),
    };
    CostTable::from_parts(n, targets, c, f.to_vec(), spec.c0)
}

impl CostTable {
    /// Validates a raw table: floor, finiteness and the triangle inequality.
    pub fn from_parts(n: usize, targets: Vec<usize>, c: Vec<f64>, f: Vec<f64>, c0: f64) -> Result<Self> {
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::InvalidParameter(format!("cost floor c0 = {c0} must be positive")));
        }
        if targets.is_empty() {
            return Err(Error::InvalidGrid("impulse set is empty".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::OutOfRange { index: t, len: n });
        }
        if targets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("impulse targets must be strictly increasing".into()));
        }
        if f.len() != n {
            return Err(Error::DimensionMismatch { what: "reward", expected: n, found: f.len() });
        }
        if c.len() != n * targets.len() {
            return Err(Error::DimensionMismatch {
                what: "cost entries",
                expected: n * targets.len(),
                found: c.len(),
            });
        }
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "reward", index: i });
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "cost", index: i });
        }
        let u = targets.len();
        for x in 0..n {
            for (k, &t) in targets.iter().enumerate() {
                let value = c[x * u + k];
                if value < c0 - CERTIFICATE_SLACK {
                    return Err(Error::CostFloor { x, target: t, value, c0 });
                }
            }
        }
        // c(x, y) ≤ c(x, z) + c(z, y) for x in E and y, z in U.
        for x in 0..n {
            for (ky, &y) in targets.iter().enumerate() {
                for (kz, &z) in targets.iter().enumerate() {
                    let lhs = c[x * u + ky];
                    let rhs = c[x * u + kz] + c[z * u + ky];
                    if lhs > rhs + CERTIFICATE_SLACK {
                        return Err(Error::TriangleViolation { x, y, z, lhs, rhs });
                    }
                }
            }
        }
        let f_norm = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let c_norm = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self { n, targets, c, f, c0, f_norm, c_norm })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn reward(&self) -> &[f64] {
        &self.f
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn f_norm(&self) -> f64 {
        self.f_norm
    }

    pub fn c_norm(&self) -> f64 {
        self.c_norm
    }

    /// `c(x, targets[k])`.
    pub fn cost(&self, x: usize, k: usize) -> f64 {
        self.c[x * self.targets.len() + k]
    }

    /// `c(x, ξ)` for a target state `ξ`, if it is in the impulse set.
    pub fn cost_to(&self, x: usize, xi: usize) -> Option<f64> {
        self.targets.binary_search(&xi).ok().map(|k| self.cost(x, k))
    }

    /// Same costs with a different running reward.
    pub fn with_reward(&self, f: &[f64]) -> Result<Self> {
        Self::from_parts(self.n, self.targets.clone(), self.c.clone(), f.to_vec(), self.c0)
    }

    /// Plain-text table: header `cost n |U| c0`, a `targets` line, a `reward`
    /// line and one row of costs per state.
    pub fn to_table(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        let mut out = format!("cost {} {} {}\n", self.n, self.targets.len(), self.c0);
        let t: Vec<String> = self.targets.iter().map(|t| t.to_string()).collect();
        out.push_str(&format!("targets {}\n", t.join(" ")));
        out.push_str(&format!("reward {}\n", join(&self.f)));
        for row in self.c.chunks(self.targets.len()) {
            out.push_str(&join(row));
            out.push('\n');
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let mut next = |what: &str| {
            lines.next().ok_or(Error::Parse { line: 0, message: format!("missing {what}") })
        };
        let (ln, header) = next("header")?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.len() != 4 || tok[0] != "cost" {
            return Err(Error::Parse { line: ln + 1, message: "expected `cost n |U| c0`".into() });
        }
        let n: usize = parse_token(tok[1], ln)?;
        let u: usize = parse_token(tok[2], ln)?;
        let c0: f64 = parse_token(tok[3], ln)?;
        let (ln, tline) = next("targets line")?;
        let targets = keyed_values::<usize>(tline, "targets", ln)?;
        if targets.len() != u {
            return Err(Error::Parse { line: ln + 1, message: format!("expected {u} targets") });
        }
        let (ln, rline) = next("reward line")?;
        let f = keyed_values::<f64>(rline, "reward", ln)?;
        let mut c = Vec::with_capacity(n * u);
        for _ in 0..n {
            let (ln, line) = next("cost row")?;
            let row = line
                .split_whitespace()
                .map(|t| parse_token::<f64>(t, ln))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != u {
                return Err(Error::Parse { line: ln + 1, message: format!("expected {u} costs") });
            }
            c.extend(row);
        }
        Self::from_parts(n, targets, c, f, c0)
    }
}

fn keyed_values<T: std::str::FromStr>(line: &str, key: &str, ln: usize) -> Result<Vec<T>> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::Parse { line: ln + 1, message: format!("expected `{key}` line") });
    }
    it.map(|t| parse_token(t, ln)).collect()
}

/// `Mw(x) = min_{ξ ∈ U} c(x, ξ) + w(ξ)`; `w` is indexed by state.
pub fn apply_m(w: &[f64], cost: &CostTable) -> Result<MResult> {
    if w.len() != cost.n {
        return Err(Error::DimensionMismatch { what: "bias", expected: cost.n, found: w.len() });
    }
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "bias", index: i });
    }
    Ok(apply_m_unchecked(w, cost))
}

pub(crate) fn apply_m_unchecked(w: &[f64], cost: &CostTable) -> MResult {
    let mut values = Vec::with_capacity(cost.n);
    let mut argmin_shift = Vec::with_capacity(cost.n);
    for x in 0..cost.n {
        let mut best = f64::INFINITY;
        let mut arg = cost.targets[0];
        for (k, &t) in cost.targets.iter().enumerate() {
            let v = cost.cost(x, k) + w[t];
            if v < best {
                best = v;
                arg = t;
            }
        }
        values.push(best);
        argmin_shift.push(arg);
    }
    MResult { values, argmin_shift }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, impulse: Vec<usize>) -> StateGrid {
        StateGrid::uniform_line(0.0, (n - 1) as f64, n, impulse, 0).unwrap()
    }

    #[test]
    fn zero_cap_gives_constant_cost() {
        let g = line(4, vec![0, 2]);
        let t = build_cost(&CostSpec::metric_capped(0.7, 0.0), &g, &[0.0; 4]).unwrap();
        for x in 0..4 {
            for k in 0..2 {
                assert_eq!(t.cost(x, k), 0.7);
            }
        }
    }

    #[test]
    fn zero_distance_hits_the_floor() {
        let g = line(3, vec![0, 1, 2]);
        for spec in [CostSpec::metric_capped(0.3, 5.0), CostSpec::rational(0.3)] {
            let t = build_cost(&spec, &g, &[0.0; 3]).unwrap();
            for x in 0..3 {
                assert_eq!(t.cost_to(x, x), Some(0.3));
            }
        }
        // the logistic family sits half a unit above the floor at distance 0
        let t = build_cost(&CostSpec::logistic(0.3), &g, &[0.0; 3]).unwrap();
        assert_eq!(t.cost_to(1, 1), Some(0.8));
    }

    #[test]
    fn explicit_table_triangle_violation() {
        let g = line(3, vec![1, 2]);
        let table = vec![vec![0.3, 1.0], vec![0.2, 0.5], vec![0.5, 0.2]];
        let err = build_cost(&CostSpec::explicit(0.2, table), &g, &[0.0; 3]).unwrap_err();
        match err {
            Error::TriangleViolation { x, y, z, lhs, rhs } => {
                assert_eq!((x, y, z), (0, 2, 1));
                assert_eq!(lhs, 1.0);
                assert!((rhs - 0.8).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn floor_and_reward_errors() {
        let g = line(2, vec![0]);
        let low = CostSpec::explicit(0.2, vec![vec![0.2], vec![0.1]]);
        assert!(matches!(build_cost(&low, &g, &[0.0; 2]), Err(Error::CostFloor { x: 1, .. })));
        let spec = CostSpec::rational(0.2);
        assert!(matches!(
            build_cost(&spec, &g, &[0.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
        assert!(build_cost(&CostSpec::rational(0.0), &g, &[0.0; 2]).is_err());
    }

    #[test]
    fn m_operator_examples() {
        let g = line(3, vec![0, 1, 2]);
        let t = build_cost(&CostSpec::metric_capped(1.0, 0.0), &g, &[0.0; 3]).unwrap();
        let m = apply_m(&[0.0; 3], &t).unwrap();
        assert_eq!(m.values, vec![1.0; 3]);
        assert_eq!(m.argmin_shift, vec![0; 3]);

        let g = line(3, vec![2]);
        let t = build_cost(&CostSpec::rational(0.5), &g, &[0.0; 3]).unwrap();
        let w = [4.0, -1.0, 0.25];
        let m = apply_m(&w, &t).unwrap();
        for x in 0..3 {
            assert_eq!(m.values[x], t.cost_to(x, 2).unwrap() + 0.25);
        }
        assert!(apply_m(&[0.0, f64::INFINITY, 0.0], &t).is_err());
    }

    #[test]
    fn table_round_trip() {
        let g = line(3, vec![0, 2]);
        let t = build_cost(&CostSpec::rational(0.25), &g, &[0.1, -2.0, 3.5]).unwrap();
        let back = CostTable::from_table(&t.to_table()).unwrap();
        assert_eq!(back, t);
        assert!(CostTable::from_table("cost 1 1 0.5\ntargets 0\n").is_err());
    }
}
