//! Small local optimizers: projected L-BFGS for box-constrained smooth
//! objectives and Nelder-Mead for derivative-free refinement.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsSettings {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub pg_tol: f64,
    /// Stop when the relative decrease of the objective falls below this.
    pub f_tol: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            memory: 8,
            pg_tol: 1e-5,
            f_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box `[lower, upper]`. The objective returns the
/// value and gradient, or `None` where it cannot be evaluated; such points
/// are treated as infinitely bad by the line search.
pub fn minimize_box<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], s: &LbfgsSettings) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut evals = 1;
    let (mut fx, mut g) = f(&x)
        .filter(|(v, g)| v.is_finite() && g.iter().all(|c| c.is_finite()))
        .ok_or_else(|| Error::Optimization("objective not finite at the starting point".into()))?;
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iter = 0;
    while iter < s.max_iter {
        iter += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let pg = (0..n)
            .map(|i| (x[i] - (x[i] - g[i]).clamp(lower[i], upper[i])).abs())
            .fold(0.0, f64::max);
        if pg < s.pg_tol {
            converged = true;
            break;
        }
        // two-loop recursion restricted to free coordinates
        let mut q: Vec<f64> = (0..n).map(|i| if free[i] { g[i] } else { 0.0 }).collect();
        let mut alphas = Vec::with_capacity(mem.len());
        for (sv, yv, rho) in mem.iter().rev() {
            let a = rho * dot(sv, &q);
            for i in 0..n {
                q[i] -= a * yv[i];
            }
            alphas.push(a);
        }
        if let Some((sv, yv, _)) = mem.back() {
            let gamma = dot(sv, yv) / dot(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((sv, yv, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            for i in 0..n {
                q[i] += (a - b) * sv[i];
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| if free[i] { -q[i] } else { 0.0 }).collect();
        if dot(&d, &g) >= 0.0 {
            mem.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }
        let mut t = if mem.is_empty() {
            (1.0 / d.iter().map(|v| v.abs()).fold(0.0, f64::max)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + t * d[i]).collect();
            project(&mut xn, lower, upper);
            let step: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
            let decrease = dot(&g, &step);
            evals += 1;
            if let Some((fv, gv)) = f(&xn) {
                if fv.is_finite() && gv.iter().all(|c| c.is_finite()) && fv <= fx + 1e-4 * decrease {
                    accepted = Some((xn, fv, gv, step));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fv, gv, step)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let yv: Vec<f64> = (0..n).map(|i| gv[i] - g[i]).collect();
        let sy = dot(&step, &yv);
        if sy > 1e-12 * dot(&step, &step).sqrt() * dot(&yv, &yv).sqrt() {
            if mem.len() == s.memory {
                mem.pop_front();
            }
            mem.push_back((step, yv, 1.0 / sy));
        }
        let rel = (fx - fv).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fv;
        g = gv;
        if rel < s.f_tol {
            converged = true;
            break;
        }
    }
    Ok(Minimum {
        x,
        f: fx,
        iterations: iter,
        evaluations: evals,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadSettings {
    pub max_evals: usize,
    /// Initial simplex edge, relative to the box width.
    pub initial_step: f64,
    pub f_tol: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            initial_step: 0.05,
            f_tol: 1e-10,
        }
    }
}

/// Nelder-Mead minimization with iterates clamped to the box. Non-finite
/// objective values are treated as `+inf`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], s: &NelderMeadSettings) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let clamp = |mut x: Vec<f64>| {
        project(&mut x, lower, upper);
        x
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let start = clamp(x0.to_vec());
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for j in 0..n {
        let mut v = start.clone();
        let h = s.initial_step * (upper[j] - lower[j]);
        v[j] = if v[j] + h <= upper[j] { v[j] + h } else { v[j] - h };
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }
    let mut iterations = 0;
    let mut converged = false;
    while evals < s.max_evals {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if (worst - best).abs() <= s.f_tol * best.abs().max(1e-300) || (worst == best && best.is_finite()) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p.0[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64, w: &[f64]| clamp((0..n).map(|j| centroid[j] + t * (w[j] - centroid[j])).collect());
        let worst_pt = simplex[n].0.clone();
        let xr = along(-1.0, &worst_pt);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0, &worst_pt);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-0.5, &worst_pt);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5, &worst_pt);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let b = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let v = clamp((0..n).map(|j| b[j] + 0.5 * (p.0[j] - b[j])).collect());
                    p.1 = eval(&v, &mut evals);
                    p.0 = v;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Minimum {
        x,
        f: fx,
        iterations,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn lbfgs_finds_rosenbrock_minimum() {
        let s = LbfgsSettings {
            max_iter: 500,
            ..Default::default()
        };
        let m = minimize_box(|x| Some(rosenbrock(x)), &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &s).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn lbfgs_stops_on_active_bound() {
        let f = |x: &[f64]| Some(((x[0] - 3.0).powi(2) + x[1] * x[1], vec![2.0 * (x[0] - 3.0), 2.0 * x[1]]));
        let m = minimize_box(f, &[0.0, 1.0], &[-1.0, -1.0], &[1.0, 1.0], &LbfgsSettings::default()).unwrap();
        assert_eq!(m.x[0], 1.0);
        assert!(m.x[1].abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let m = nelder_mead(
            |x| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.1).powi(2),
            &[0.0, 0.0],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &NelderMeadSettings::default(),
        );
        assert!((m.x[0] - 0.3).abs() < 1e-4 && (m.x[1] + 0.1).abs() < 1e-4);
    }
}
