use std::collections::VecDeque;

use crate::error::Result;

const MEMORY: usize = 10;

#[derive(Debug, Clone)]
pub(crate) struct BoundedResult {
    pub z: Vec<f64>,
    pub gradient: Vec<f64>,
    /// `|P(z − ∇) − z|∞`.
    pub stationarity: f64,
    pub iterations: usize,
}

fn project(z: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in z.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

pub(crate) fn projected_stationarity(z: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    z.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((zi, gi), (lo, hi))| ((zi - gi).clamp(*lo, *hi) - zi).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected L-BFGS with projected Armijo backtracking on a box.
///
/// Variables sitting on a bound with the gradient pushing outward are frozen
/// for the quasi-Newton direction; the two-loop recursion runs on the rest.
pub(crate) fn minimize_bounded<F>(
    mut func: F,
    z0: &[f64],
    lower: &[f64],
    upper: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<BoundedResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let dim = z0.len();
    let mut z = z0.to_vec();
    project(&mut z, lower, upper);
    let (mut f, mut g) = func(&z)?;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut iterations = 0;
    let mut stationarity = projected_stationarity(&z, &g, lower, upper);

    while iterations < max_iter {
        if stationarity <= tol {
            break;
        }
        iterations += 1;
        let free: Vec<bool> = (0..dim)
            .map(|i| !((z[i] <= lower[i] && g[i] > 0.0) || (z[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let mut d: Vec<f64> = (0..dim).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        if !memory.is_empty() {
            let mut alphas = Vec::with_capacity(memory.len());
            for (s, y, rho) in memory.iter().rev() {
                let a = rho * dot(s, &d);
                for (di, yi) in d.iter_mut().zip(y) {
                    *di -= a * yi;
                }
                alphas.push(a);
            }
            let (s, y, _) = memory.back().unwrap();
            let gamma = dot(s, y) / dot(y, y);
            for di in &mut d {
                *di *= gamma;
            }
            for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(y, &d);
                for (di, si) in d.iter_mut().zip(s) {
                    *di += (a - b) * si;
                }
            }
            for (di, fr) in d.iter_mut().zip(&free) {
                if !fr {
                    *di = 0.0;
                }
            }
        }
        let slope = dot(&g, &d);
        if !(slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
            memory.clear();
            d = (0..dim).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }
        let mut step = if memory.is_empty() {
            let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if dmax > 1.0 {
                1.0 / dmax
            } else {
                1.0
            }
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = z.iter().zip(&d).map(|(zi, di)| zi + step * di).collect();
            project(&mut trial, lower, upper);
            let (ft, gt) = func(&trial)?;
            let decrease: f64 = g.iter().zip(trial.iter().zip(&z)).map(|(gi, (t, zi))| gi * (t - zi)).sum();
            let armijo = ft <= f + 1e-4 * decrease;
            // below the resolution of f, fall back to decrease of the stationarity measure
            let flat = (ft - f).abs() <= 1e-13 * (1.0 + f.abs())
                && projected_stationarity(&trial, &gt, lower, upper) < stationarity;
            if ft.is_finite() && (armijo || flat) {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        };
        let s: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let moved = trial.iter().zip(&z).any(|(a, b)| a != b);
        z = trial;
        f = ft;
        g = gt;
        stationarity = projected_stationarity(&z, &g, lower, upper);
        if !moved {
            break;
        }
    }
    Ok(BoundedResult {
        z,
        gradient: g,
        stationarity,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_unconstrained() {
        let r = minimize_bounded(
            |v| {
                let (a, b) = (v[0], v[1]);
                Ok((
                    (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                    vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)],
                ))
            },
            &[-1.2, 1.0],
            &[f64::NEG_INFINITY; 2],
            &[f64::INFINITY; 2],
            1e-10,
            10_000,
        )
        .unwrap();
        assert!(r.stationarity <= 1e-10);
        assert!((r.z[0] - 1.0).abs() < 1e-6 && (r.z[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn active_bound() {
        // min (a − 2)² + (b + 1)² on [0, 1]²
        let r = minimize_bounded(
            |v| Ok(((v[0] - 2.0).powi(2) + (v[1] + 1.0).powi(2), vec![2.0 * (v[0] - 2.0), 2.0 * (v[1] + 1.0)])),
            &[0.5, 0.5],
            &[0.0, 0.0],
            &[1.0, 1.0],
            1e-12,
            100,
        )
        .unwrap();
        assert_eq!(r.z, vec![1.0, 0.0]);
        assert!(r.stationarity <= 1e-10);
    }
}
