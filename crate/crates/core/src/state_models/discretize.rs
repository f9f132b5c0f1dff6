//! One-step kernels for the two reference continuous-state processes, plus
//! exact continuous-space samplers used to check them.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use libm::erfc;

use crate::error::{Error, Result};
use crate::state_models::{StateGrid, StepKernel};

/// Kernel together with the states whose deterministic motion left the grid
/// hull during construction.
#[derive(Debug, Clone)]
pub struct Discretized {
    pub kernel: StepKernel,
    pub outside_hull: Vec<usize>,
}

/// Piecewise deterministic process: flow `φ(x, t)` between jumps arriving at
/// constant rate; at a jump the state moves to `A(x⁻) + noise_std · N(0, 1)`.
pub struct PdpModel<F, A> {
    pub flow: F,
    pub jump_rate: f64,
    pub shift: A,
    pub noise_std: f64,
}

impl<F, A> PdpModel<F, A>
where
    F: Fn(f64, f64) -> f64,
    A: Fn(f64) -> f64,
{
    /// Exact position after `delta` time units from `x`; any number of jumps.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, delta: f64, rng: &mut R) -> f64 {
        let clock = Exp::new(self.jump_rate).expect("positive jump rate");
        let mut y = x;
        let mut t = 0.0;
        loop {
            let tau: f64 = clock.sample(rng);
            if t + tau >= delta {
                return (self.flow)(y, delta - t);
            }
            let pre = (self.flow)(y, tau);
            let z: f64 = StandardNormal.sample(rng);
            y = (self.shift)(pre) + self.noise_std * z;
            t += tau;
        }
    }
}

/// Voronoi cell edges of a sorted one-dimensional grid, with half-width
/// outer cells.
fn cell_edges(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut e = Vec::with_capacity(n + 1);
    let first = if n > 1 { (xs[1] - xs[0]) / 2.0 } else { 0.5 };
    let last = if n > 1 { (xs[n - 1] - xs[n - 2]) / 2.0 } else { 0.5 };
    e.push(xs[0] - first);
    for w in xs.windows(2) {
        e.push(0.5 * (w[0] + w[1]));
    }
    e.push(xs[n - 1] + last);
    e
}

fn sorted_line(grid: &StateGrid) -> Result<Vec<f64>> {
    let xs = grid.coordinates_1d();
    if grid.points().iter().any(|p| p.len() != 1) {
        return Err(Error::InvalidGrid("discretizers need a one-dimensional grid".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("grid points must be strictly increasing".into()));
    }
    Ok(xs)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("time step must be positive, got {delta}")))
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Mass of `N(mean, sd²)` on each cell of `edges`.
fn gaussian_cells(mean: f64, sd: f64, edges: &[f64]) -> Vec<f64> {
    let cdf: Vec<f64> = edges.iter().map(|e| std_normal_cdf((e - mean) / sd)).collect();
    cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
}

/// One-step kernel of a piecewise deterministic process on a line grid.
///
/// Row `x`: with probability `e^{-rδ}` no jump and a point mass at the grid
/// point nearest `φ(x, δ)`; otherwise a jump at `δ/2` followed by the
/// Gaussian around `A(φ(x, δ/2))`, integrated over grid cells, truncated to
/// the hull and renormalized.
pub fn discretize_pdp<F, A>(model: &PdpModel<F, A>, grid: &StateGrid, delta: f64) -> Result<Discretized>
where
    F: Fn(f64, f64) -> f64,
    A: Fn(f64) -> f64,
{
    check_delta(delta)?;
    if !(model.jump_rate > 0.0) || !model.jump_rate.is_finite() {
        return Err(Error::InvalidParameter("jump rate must be positive".into()));
    }
    if !(model.noise_std > 0.0) {
        return Err(Error::InvalidParameter("jump noise must be positive".into()));
    }
    let xs = sorted_line(grid)?;
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let edges = cell_edges(&xs);
    let n = xs.len();
    let stay = (-model.jump_rate * delta).exp();
    let mut rows = Vec::with_capacity(n);
    let mut outside = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        let drift = (model.flow)(x, delta);
        let centre = (model.shift)((model.flow)(x, 0.5 * delta));
        if !drift.is_finite() || !centre.is_finite() {
            return Err(Error::NonFinite { what: "pdp flow", index: i });
        }
        if drift < lo || drift > hi || centre < lo || centre > hi {
            outside.push(i);
        }
        let mut jump = gaussian_cells(centre, model.noise_std, &edges);
        let total: f64 = jump.iter().sum();
        if !(total > 0.0) {
            // All mass fell outside the hull: send it to the nearest end.
            jump = vec![0.0; n];
            jump[grid.snap(centre)] = 1.0;
        } else {
            jump.iter_mut().for_each(|p| *p /= total);
        }
        let mut row: Vec<f64> = jump.iter().map(|p| (1.0 - stay) * p).collect();
        row[grid.snap(drift)] += stay;
        rows.push(row);
    }
    Ok(Discretized {
        kernel: StepKernel::from_rows(&rows, delta)?,
        outside_hull: outside,
    })
}

/// Reflected driftless diffusion `dX = sqrt(A(X)) dW` on `[lower, upper]`.
pub struct ReflectedDiffusion<D> {
    pub diffusion: D,
    pub lower: f64,
    pub upper: f64,
    /// Variance rates below this are clamped up to it.
    pub floor: f64,
}

impl<D: Fn(f64) -> f64> ReflectedDiffusion<D> {
    fn variance(&self, x: f64, delta: f64) -> f64 {
        (self.diffusion)(x).max(self.floor) * delta
    }

    /// Folds a real number into `[lower, upper]` by repeated reflection.
    pub fn fold(&self, y: f64) -> f64 {
        let w = self.upper - self.lower;
        let m = (y - self.lower).rem_euclid(2.0 * w);
        if m <= w {
            self.lower + m
        } else {
            self.lower + 2.0 * w - m
        }
    }

    /// Exact one-step sample for constant diffusion: Gaussian increment then
    /// reflection into the domain.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, delta: f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.fold(x + self.variance(x, delta).sqrt() * z)
    }
}

/// One-step kernel of a reflected diffusion on a line grid.
///
/// Each row is the Gaussian increment with variance `A(x)δ`, folded once at
/// each boundary, integrated over grid cells and renormalized. A row whose
/// folded mass exceeds one half is rejected.
pub fn discretize_reflected_diffusion<D>(
    model: &ReflectedDiffusion<D>,
    grid: &StateGrid,
    delta: f64,
) -> Result<StepKernel>
where
    D: Fn(f64) -> f64,
{
    check_delta(delta)?;
    if !(model.upper > model.lower) {
        return Err(Error::InvalidParameter("empty domain".into()));
    }
    if !(model.floor > 0.0) {
        return Err(Error::InvalidParameter("ellipticity floor must be positive".into()));
    }
    let xs = sorted_line(grid)?;
    if xs[0] < model.lower || xs[xs.len() - 1] > model.upper {
        return Err(Error::InvalidGrid("grid extends past the domain".into()));
    }
    let (l, u) = (model.lower, model.upper);
    let mut edges = cell_edges(&xs);
    let last = edges.len() - 1;
    edges[0] = l;
    edges[last] = u;
    let mut rows = Vec::with_capacity(xs.len());
    for (i, &x) in xs.iter().enumerate() {
        let sd = model.variance(x, delta).sqrt();
        let folded = std_normal_cdf((l - x) / sd) + 1.0 - std_normal_cdf((u - x) / sd);
        if folded > 0.5 {
            return Err(Error::FoldExceeded { state: i, mass: folded });
        }
        let direct = gaussian_cells(x, sd, &edges);
        // Images: mass below l lands at 2l − y, mass above u at 2u − y.
        let low = gaussian_cells(2.0 * l - x, sd, &edges);
        let high = gaussian_cells(2.0 * u - x, sd, &edges);
        let mut row: Vec<f64> = (0..xs.len()).map(|j| direct[j] + low[j] + high[j]).collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
        rows.push(row);
    }
    StepKernel::from_rows(&rows, delta)
}

/// Empirical one-step law from `samples` draws of `draw`, snapped to the grid.
pub fn empirical_row<R, S>(grid: &StateGrid, samples: usize, rng: &mut R, mut draw: S) -> Vec<f64>
where
    R: Rng + ?Sized,
    S: FnMut(&mut R) -> f64,
{
    let mut counts = vec![0usize; grid.len()];
    for _ in 0..samples {
        counts[grid.snap(draw(rng))] += 1;
    }
    counts.iter().map(|&c| c as f64 / samples as f64).collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normal_cdf_reference_values() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-14);
        assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!((std_normal_cdf(-2.5) - 0.006_209_665_325_776_132).abs() < 1e-14);
        assert!((std_normal_cdf(0.3) - 0.617_911_422_188_952_7).abs() < 1e-14);
        assert!((std_normal_cdf(5.0) - 0.999_999_713_348_428_1).abs() < 1e-14);
    }

    #[test]
    fn pdp_without_jumps_follows_the_flow() {
        let grid = StateGrid::uniform_line(-3.0, 3.0, 21, vec![10], 10).unwrap();
        let model = PdpModel {
            flow: |x: f64, t: f64| x * (-t).exp(),
            jump_rate: 1e-12,
            shift: |_x: f64| 0.0,
            noise_std: 1.0,
        };
        let d = discretize_pdp(&model, &grid, 0.25).unwrap();
        for (i, &x) in grid.coordinates_1d().iter().enumerate() {
            let j = grid.snap(x * (-0.25f64).exp());
            assert!(d.kernel.get(i, j) > 1.0 - 1e-11);
        }
        assert!(d.outside_hull.is_empty());
    }

    #[test]
    fn pdp_with_frequent_resets_is_gaussian() {
        let grid = StateGrid::uniform_line(-3.0, 3.0, 21, vec![10], 10).unwrap();
        let model = PdpModel {
            flow: |x: f64, _t: f64| x,
            jump_rate: 1e3,
            shift: |_x: f64| 0.0,
            noise_std: 1.0,
        };
        let k = discretize_pdp(&model, &grid, 1.0).unwrap().kernel;
        let row = k.row(3);
        for j in 0..21 {
            assert!((row[j] - row[20 - j]).abs() < 1e-12);
        }
        assert!(row[10] > row[9] && row[9] > row[8]);
    }

    #[test]
    fn reflected_rows_are_symmetric_and_freeze_without_noise() {
        let grid = StateGrid::uniform_line(0.0, 1.0, 11, vec![0], 0).unwrap();
        let model = ReflectedDiffusion {
            diffusion: |_x: f64| 1.0,
            lower: 0.0,
            upper: 1.0,
            floor: 1e-12,
        };
        let k = discretize_reflected_diffusion(&model, &grid, 0.01).unwrap();
        let row = k.row(5);
        for j in 0..11 {
            assert!((row[j] - row[10 - j]).abs() < 1e-14);
        }
        let frozen = ReflectedDiffusion {
            diffusion: |_x: f64| 0.0,
            lower: 0.0,
            upper: 1.0,
            floor: 1e-12,
        };
        let k = discretize_reflected_diffusion(&frozen, &grid, 0.01).unwrap();
        for i in 0..11 {
            assert!(k.get(i, i) > 1.0 - 1e-12);
        }
    }

    #[test]
    fn reflected_rejects_oversized_steps() {
        let grid = StateGrid::uniform_line(0.0, 1.0, 11, vec![0], 0).unwrap();
        let model = ReflectedDiffusion {
            diffusion: |_x: f64| 1.0,
            lower: 0.0,
            upper: 1.0,
            floor: 1e-12,
        };
        assert!(matches!(
            discretize_reflected_diffusion(&model, &grid, 4.0),
            Err(Error::FoldExceeded { .. })
        ));
    }

    #[test]
    fn folding_is_a_triangle_wave() {
        let model = ReflectedDiffusion {
            diffusion: |_x: f64| 1.0,
            lower: 0.0,
            upper: 1.0,
            floor: 1e-12,
        };
        assert!((model.fold(-0.25) - 0.25).abs() < 1e-15);
        assert!((model.fold(1.25) - 0.75).abs() < 1e-15);
        assert!((model.fold(2.25) - 0.25).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let y = model.sample(0.0, 0.5, &mut rng);
            assert!((0.0..=1.0).contains(&y));
        }
    }
}
