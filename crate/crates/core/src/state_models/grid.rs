use crate::error::{Error, Result};

/// Finite state space with a metric, the impulse target set `U` and a
/// reference state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    points: Vec<Vec<f64>>,
    metric: Vec<f64>,
    impulse_indices: Vec<usize>,
    reference_index: usize,
}

const METRIC_SLACK: f64 = 1e-12;

impl StateGrid {
    /// Builds a grid from explicit coordinates and an explicit distance table.
    ///
    /// The table is validated exhaustively: symmetry, zero diagonal,
    /// nonnegativity and the triangle inequality over every triple.
    pub fn new(
        points: Vec<Vec<f64>>,
        metric: Vec<Vec<f64>>,
        impulse_indices: Vec<usize>,
        reference_index: usize,
    ) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidGrid("no states".into()));
        }
        if metric.len() != n {
            return Err(Error::DimensionMismatch {
                what: "metric rows",
                expected: n,
                found: metric.len(),
            });
        }
        let mut flat = Vec::with_capacity(n * n);
        for row in &metric {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "metric columns",
                    expected: n,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        for (i, p) in points.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite {
                    what: "state coordinates",
                    index: i,
                });
            }
        }
        validate_metric(n, &flat)?;
        let mut impulse_indices = impulse_indices;
        impulse_indices.sort_unstable();
        impulse_indices.dedup();
        if impulse_indices.is_empty() {
            return Err(Error::InvalidGrid("impulse set U is empty".into()));
        }
        if let Some(&bad) = impulse_indices.iter().find(|&&i| i >= n) {
            return Err(Error::OutOfRange { index: bad, len: n });
        }
        if reference_index >= n {
            return Err(Error::OutOfRange {
                index: reference_index,
                len: n,
            });
        }
        Ok(Self {
            points,
            metric: flat,
            impulse_indices,
            reference_index,
        })
    }

    /// Grid with the Euclidean metric on the given coordinates.
    pub fn euclidean(
        points: Vec<Vec<f64>>,
        impulse_indices: Vec<usize>,
        reference_index: usize,
    ) -> Result<Self> {
        let metric = points
            .iter()
            .map(|p| points.iter().map(|q| euclid(p, q)).collect())
            .collect();
        Self::new(points, metric, impulse_indices, reference_index)
    }

    /// `n` equally spaced points on `[lo, hi]`.
    pub fn uniform_line(
        lo: f64,
        hi: f64,
        n: usize,
        impulse_indices: Vec<usize>,
        reference_index: usize,
    ) -> Result<Self> {
        if n == 0 || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "bad line [{lo}, {hi}] with {n} points"
            )));
        }
        if n > 1 && hi == lo {
            return Err(Error::InvalidGrid("repeated grid points".into()));
        }
        let points = (0..n)
            .map(|i| {
                if n == 1 {
                    vec![lo]
                } else {
                    vec![lo + (hi - lo) * i as f64 / (n - 1) as f64]
                }
            })
            .collect();
        Self::euclidean(points, impulse_indices, reference_index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// First coordinate of every state; the discretizers work on the line.
    pub fn coordinates_1d(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[0]).collect()
    }

    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.metric[x * self.len() + y]
    }

    pub fn impulse_indices(&self) -> &[usize] {
        &self.impulse_indices
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn is_impulse_target(&self, x: usize) -> bool {
        self.impulse_indices.binary_search(&x).is_ok()
    }

    pub fn with_reference(&self, reference_index: usize) -> Result<Self> {
        if reference_index >= self.len() {
            return Err(Error::OutOfRange {
                index: reference_index,
                len: self.len(),
            });
        }
        Ok(Self {
            reference_index,
            ..self.clone()
        })
    }

    /// Index of the nearest grid point along the first coordinate; ties go to
    /// the smaller index.
    pub fn snap(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (p[0] - x).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

fn euclid(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn validate_metric(n: usize, m: &[f64]) -> Result<()> {
    for x in 0..n {
        if m[x * n + x] != 0.0 {
            return Err(Error::InvalidGrid(format!("nonzero diagonal at {x}")));
        }
        for y in 0..n {
            let d = m[x * n + y];
            if !d.is_finite() || d < 0.0 {
                return Err(Error::InvalidGrid(format!("bad distance at ({x}, {y})")));
            }
            if (d - m[y * n + x]).abs() > METRIC_SLACK {
                return Err(Error::InvalidGrid(format!("asymmetric at ({x}, {y})")));
            }
        }
    }
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                let lhs = m[x * n + y];
                let rhs = m[x * n + z] + m[z * n + y];
                if lhs > rhs + METRIC_SLACK * (1.0 + rhs) {
                    return Err(Error::InvalidGrid(format!(
                        "triangle inequality fails for ({x}, {y}) via {z}"
                    )));
                }
            }
        }
    }
    Ok(())
}
