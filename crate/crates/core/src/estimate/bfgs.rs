//! BFGS minimizer with a strong Wolfe line search.

use nalgebra::{DMatrix, DVector};

/// Objective returning value and gradient, or `None` where undefined.
pub(crate) trait Objective {
    fn evaluate(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> Objective for F {
    fn evaluate(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Largest change of any coordinate in one step.
    pub max_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted step, starting point first.
    pub trace: Vec<f64>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
    gradient: Vec<f64>,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn probe(f: &mut impl Objective, x: &[f64], d: &[f64], alpha: f64) -> Option<Point> {
    let trial: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    let (value, gradient) = f.evaluate(&trial)?;
    if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return None;
    }
    Some(Point {
        alpha,
        value,
        slope: dot(&gradient, d),
        gradient,
    })
}

/// Step length satisfying the strong Wolfe conditions, or the best
/// sufficient-decrease point found when curvature cannot be met.
fn line_search(f: &mut impl Objective, x: &[f64], d: &[f64], f0: f64, slope0: f64, alpha_max: f64) -> Option<Point> {
    let armijo = |p: &Point| p.value <= f0 + C1 * p.alpha * slope0;
    let mut prev = Point {
        alpha: 0.0,
        value: f0,
        slope: slope0,
        gradient: Vec::new(),
    };
    let mut alpha = alpha_max.min(1.0);
    for i in 0..30 {
        let Some(p) = probe(f, x, d, alpha) else {
            return zoom(f, x, d, f0, slope0, prev, alpha, None);
        };
        if !armijo(&p) || (i > 0 && p.value >= prev.value) {
            let hi_alpha = p.alpha;
            return zoom(f, x, d, f0, slope0, prev, hi_alpha, Some(p));
        }
        if p.slope.abs() <= -C2 * slope0 {
            return Some(p);
        }
        if p.slope >= 0.0 {
            let hi_alpha = prev.alpha;
            let hi = if prev.gradient.is_empty() { None } else { Some(prev) };
            return zoom(f, x, d, f0, slope0, p, hi_alpha, hi);
        }
        if alpha >= alpha_max {
            return Some(p);
        }
        alpha = (2.0 * alpha).min(alpha_max);
        prev = p;
    }
    (!prev.gradient.is_empty()).then_some(prev)
}

#[allow(clippy::too_many_arguments)]
fn zoom(
    f: &mut impl Objective,
    x: &[f64],
    d: &[f64],
    f0: f64,
    slope0: f64,
    mut lo: Point,
    mut hi_alpha: f64,
    mut hi: Option<Point>,
) -> Option<Point> {
    for _ in 0..40 {
        let width = hi_alpha - lo.alpha;
        // Safeguarded quadratic interpolation from the low end.
        let mut alpha = lo.alpha + 0.5 * width;
        if let Some(h) = &hi {
            let denom = 2.0 * (h.value - lo.value - lo.slope * width);
            if denom > 0.0 {
                let step = -lo.slope * width * width / denom;
                alpha = lo.alpha + step.clamp(0.1 * width.abs(), 0.9 * width.abs()) * width.signum();
            }
        }
        if width.abs() < 1e-14 * lo.alpha.abs().max(1e-8) {
            break;
        }
        match probe(f, x, d, alpha) {
            None => {
                hi_alpha = alpha;
                hi = None;
            }
            Some(p) if p.value > f0 + C1 * alpha * slope0 || p.value >= lo.value => {
                hi_alpha = alpha;
                hi = Some(p);
            }
            Some(p) => {
                if p.slope.abs() <= -C2 * slope0 {
                    return Some(p);
                }
                if p.slope * (hi_alpha - lo.alpha) >= 0.0 {
                    hi_alpha = lo.alpha;
                    hi = Some(std::mem::replace(&mut lo, p));
                } else {
                    lo = p;
                }
            }
        }
    }
    (lo.alpha > 0.0 && !lo.gradient.is_empty()).then_some(lo)
}

/// Minimize from `x0`. Returns `None` when the objective is undefined at `x0`.
pub(crate) fn minimize(f: &mut impl Objective, x0: &[f64], opts: BfgsOptions) -> Option<BfgsOutcome> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut value, mut gradient) = f.evaluate(&x)?;
    if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return None;
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut trace = vec![value];
    let mut iterations = 0;
    while iterations < opts.max_iter && norm(&gradient) > opts.tolerance {
        let g = DVector::from_column_slice(&gradient);
        let mut d: Vec<f64> = (-(&h * &g)).iter().copied().collect();
        let mut slope = dot(&d, &gradient);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = gradient.iter().map(|v| -v).collect();
            slope = dot(&d, &gradient);
        }
        let biggest = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let alpha_max = if biggest > 0.0 {
            (opts.max_step / biggest).max(1.0e-12)
        } else {
            1.0
        };
        // Without curvature information the first trial step is kept short.
        let alpha_max = if fresh {
            alpha_max.min(1.0 / norm(&gradient).max(1.0))
        } else {
            alpha_max
        };
        let Some(p) = line_search(f, &x, &d, value, slope, alpha_max.max(1e-12)) else {
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        let s = DVector::from_iterator(n, d.iter().map(|v| p.alpha * v));
        let y = DVector::from_iterator(n, p.gradient.iter().zip(&gradient).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        x.iter_mut().zip(s.iter()).for_each(|(a, b)| *a += b);
        value = p.value;
        gradient = p.gradient;
        trace.push(value);
        iterations += 1;
    }
    let converged = norm(&gradient) <= opts.tolerance;
    Some(BfgsOutcome {
        x,
        value,
        gradient,
        iterations,
        converged,
        trace,
    })
}
