//! Small numerical helpers shared by the solvers.

/// `ln Σ_i w_i e^{x_i}` for nonnegative weights, computed with max-subtraction.
///
/// Returns `-inf` when every weight is zero.
pub fn log_weighted_sum_exp(weights: &[f64], xs: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (&w, &x) in weights.iter().zip(xs) {
        if w > 0.0 && x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = weights
        .iter()
        .zip(xs)
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, &x)| w * (x - max).exp())
        .sum();
    max + s.ln()
}

/// `ln Σ_i e^{x_i}`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// max − min over the entries.
pub fn span(xs: &[f64]) -> f64 {
    let (lo, hi) = min_max(xs);
    hi - lo
}

pub fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

pub fn sup_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Dense row-major product `a · b` of two `n × n` matrices.
pub(crate) fn mat_mul(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut out[i * n..(i + 1) * n];
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            for (o, &bkj) in row.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `true` when `value` is an integer multiple of `step` up to `1e-9` relative slack.
pub(crate) fn steps_in(value: f64, step: f64) -> Option<usize> {
    if !(value >= 0.0) || !(step > 0.0) {
        return None;
    }
    let k = (value / step).round();
    if (k * step - value).abs() <= 1e-9 * value.max(step) {
        Some(k as usize)
    } else {
        None
    }
}
