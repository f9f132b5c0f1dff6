use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::mat_mul;
use crate::state_models::StateGrid;

/// Tolerance on raw row sums before renormalization.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Row-stochastic one-step transition matrix at time step `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepKernel {
    n: usize,
    delta: f64,
    level: u32,
    dyadic: bool,
    probs: Vec<f64>,
}

/// Dyadic level `m` with `delta == 2^-m`, when there is one.
pub fn dyadic_level(delta: f64) -> Option<u32> {
    if !(delta > 0.0) || delta > 1.0 {
        return None;
    }
    let m = -delta.log2();
    let r = m.round();
    if r <= 64.0 && (2f64.powi(-(r as i32)) - delta).abs() <= 1e-15 * delta {
        Some(r as u32)
    } else {
        None
    }
}

/// Step size of dyadic level `m`.
pub fn dyadic_delta(level: u32) -> f64 {
    2f64.powi(-(level as i32))
}

impl StepKernel {
    /// Validates and normalizes a dense table of rows.
    pub fn from_rows(rows: &[Vec<f64>], delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {delta}"
            )));
        }
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidGrid("kernel with no states".into()));
        }
        let mut probs = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "kernel row",
                    expected: n,
                    found: row.len(),
                });
            }
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    return Err(Error::NonFinite {
                        what: "kernel entry",
                        index: i * n + j,
                    });
                }
                if p < 0.0 {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j,
                        value: p,
                    });
                }
                sum += p;
            }
            if sum == 0.0 {
                return Err(Error::DegenerateRow { row: i });
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::RowSum { row: i, sum });
            }
            probs.extend(row.iter().map(|p| p / sum));
        }
        let (level, dyadic) = match dyadic_level(delta) {
            Some(m) => (m, true),
            None => (0, false),
        };
        Ok(Self {
            n,
            delta,
            level,
            dyadic,
            probs,
        })
    }

    /// Kernel `exp(delta · Q)` of a generator `Q` at dyadic level `level`.
    ///
    /// Uses uniformization at a step small enough that the uniformization
    /// rate times the step is at most one, then squares back up.
    pub fn from_generator(generator: &[Vec<f64>], level: u32) -> Result<Self> {
        let n = generator.len();
        if n == 0 {
            return Err(Error::InvalidGrid("generator with no states".into()));
        }
        let mut rate: f64 = 0.0;
        for (i, row) in generator.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "generator row",
                    expected: n,
                    found: row.len(),
                });
            }
            let mut off = 0.0;
            for (j, &q) in row.iter().enumerate() {
                if !q.is_finite() {
                    return Err(Error::NonFinite {
                        what: "generator entry",
                        index: i * n + j,
                    });
                }
                if i != j {
                    if q < 0.0 {
                        return Err(Error::NegativeEntry {
                            row: i,
                            col: j,
                            value: q,
                        });
                    }
                    off += q;
                }
            }
            if (off + row[i]).abs() > 1e-9 * (1.0 + off) {
                return Err(Error::RowSum {
                    row: i,
                    sum: off + row[i],
                });
            }
            rate = rate.max(off);
        }
        let delta = dyadic_delta(level);
        let mut squarings = 0u32;
        let mut h = delta;
        while rate * h > 1.0 {
            h /= 2.0;
            squarings += 1;
        }
        // Uniformized jump chain: B = I + Q / rate.
        let mut jump = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let q = generator[i][j];
                jump[i * n + j] = if rate > 0.0 { q / rate } else { 0.0 };
            }
            jump[i * n + i] += 1.0;
        }
        let lam = rate * h;
        let mut weight = (-lam).exp();
        let mut power = identity(n);
        let mut probs: Vec<f64> = power.iter().map(|v| v * weight).collect();
        let mut cumulative = weight;
        let mut k = 0usize;
        while 1.0 - cumulative > 1e-18 && k < 200 {
            k += 1;
            power = mat_mul(n, &power, &jump);
            weight *= lam / k as f64;
            cumulative += weight;
            for (p, v) in probs.iter_mut().zip(&power) {
                *p += weight * v;
            }
        }
        normalize_rows(n, &mut probs);
        for _ in 0..squarings {
            probs = mat_mul(n, &probs, &probs);
            normalize_rows(n, &mut probs);
        }
        Ok(Self {
            n,
            delta,
            level,
            dyadic: true,
            probs,
        })
    }

    pub fn identity(n: usize, delta: f64) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::from_rows(&rows, delta)
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

    /// `false` once squaring has run past level 0 or when `delta` was not a
    /// power of two to begin with.
    pub fn is_dyadic(&self) -> bool {
        self.dyadic
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n..(x + 1) * self.n]
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.probs[x * self.n + y]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// `Σ_y P(x, y) h(y)` for every `x`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|row| row.iter().zip(h).map(|(p, v)| p * v).sum())
            .collect()
    }

    /// Largest deviation of a row sum from one.
    pub fn stochasticity_defect(&self) -> f64 {
        self.rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Reads the plain-text table format written by [`StepKernel::to_table`].
    pub fn from_table(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty kernel table".into(),
        })?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 6 || tokens[0] != "states" || tokens[2] != "delta" || tokens[4] != "level"
        {
            return Err(Error::Parse {
                line: hline + 1,
                message: "expected `states n delta d level m`".into(),
            });
        }
        let n: usize = parse_token(tokens[1], hline)?;
        let delta: f64 = parse_token(tokens[3], hline)?;
        let level: u32 = parse_token(tokens[5], hline)?;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, line) = lines.next().ok_or(Error::Parse {
                line: hline + 1,
                message: format!("expected {n} rows"),
            })?;
            let row = line
                .split_whitespace()
                .map(|t| parse_token::<f64>(t, ln))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::Parse {
                line: ln + 1,
                message: "trailing data after kernel rows".into(),
            });
        }
        let mut k = Self::from_rows(&rows, delta)?;
        k.dyadic = dyadic_level(delta) == Some(level);
        k.level = level;
        Ok(k)
    }

    /// Plain-text table: header `states n delta d level m`, then one row of
    /// probabilities per line. Values use shortest round-trip formatting.
    pub fn to_table(&self) -> String {
        let mut out = format!("states {} delta {} level {}\n", self.n, self.delta, self.level);
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|p| format!("{p}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

pub(crate) fn parse_token<T: std::str::FromStr>(token: &str, line: usize) -> Result<T> {
    token.parse().map_err(|_| Error::Parse {
        line: line + 1,
        message: format!("cannot parse `{token}`"),
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn normalize_rows(n: usize, m: &mut [f64]) {
    for row in m.chunks_mut(n) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
}

/// Validates `rows` against `grid` and returns the normalized kernel.
pub fn build_finite_chain(rows: &[Vec<f64>], grid: &StateGrid, delta: f64) -> Result<StepKernel> {
    if rows.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            what: "kernel rows vs grid",
            expected: grid.len(),
            found: rows.len(),
        });
    }
    StepKernel::from_rows(rows, delta)
}

/// Two-step composition: the kernel of the next coarser dyadic level.
///
/// A level-0 input is still squared, but the result is flagged non-dyadic.
pub fn square_kernel(k: &StepKernel) -> StepKernel {
    let probs = mat_mul(k.n, &k.probs, &k.probs);
    let (level, dyadic) = if k.level > 0 {
        (k.level - 1, k.dyadic)
    } else {
        (0, false)
    };
    StepKernel {
        n: k.n,
        delta: 2.0 * k.delta,
        level,
        dyadic,
        probs,
    }
}

/// Kernels for levels `finest.level()` down to `coarsest`, finest first.
pub fn dyadic_ladder(finest: &StepKernel, coarsest: u32) -> Vec<StepKernel> {
    let mut out = vec![finest.clone()];
    while out.last().map(|k| k.level() > coarsest).unwrap_or(false) {
        let next = square_kernel(out.last().unwrap());
        out.push(next);
    }
    out
}

/// Column-minimum minorization certificate `a·ν ≤ P(x, ·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinorizationReport {
    pub a: f64,
    pub nu: Vec<f64>,
    pub nu_on_u: f64,
    /// Set when `ν(U) = 0`, which breaks the requirement that the minorizing
    /// measure charges the impulse set.
    pub misses_impulse_set: bool,
}

pub fn check_minorization(k: &StepKernel, grid: &StateGrid) -> MinorizationReport {
    let n = k.len();
    let col_min: Vec<f64> = (0..n)
        .map(|y| (0..n).map(|x| k.get(x, y)).fold(f64::INFINITY, f64::min))
        .collect();
    let a: f64 = col_min.iter().sum();
    // With a = 0 there is no minorizing measure; ν is reported uniform.
    let nu: Vec<f64> = if a > 0.0 {
        col_min.iter().map(|c| c / a).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let nu_on_u = if a > 0.0 {
        grid.impulse_indices().iter().map(|&i| nu[i]).sum()
    } else {
        0.0
    };
    MinorizationReport {
        a,
        nu,
        nu_on_u,
        misses_impulse_set: nu_on_u == 0.0,
    }
}

/// Draws the next state from row `x` by inversion.
pub fn sample_step<R: Rng + ?Sized>(k: &StepKernel, x: usize, rng: &mut R) -> Result<usize> {
    if x >= k.len() {
        return Err(Error::OutOfRange {
            index: x,
            len: k.len(),
        });
    }
    Ok(sample_row(k.row(x), rng))
}

pub(crate) fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}
