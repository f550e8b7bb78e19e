use nalgebra::{DMatrix, DVector};

use super::{ConeBundle, GradientBundle};
use crate::problem::{dot, norm};

/// The set subtracted from `hull(A)` in [`hull_distance`].
#[derive(Debug, Clone, Copy)]
pub enum Subtrahend<'a> {
    Hull(&'a GradientBundle),
    Cone(&'a ConeBundle),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullDistance {
    pub distance: f64,
    /// Convex weights on the generators of `A`.
    pub a_weights: Vec<f64>,
    /// Convex weights (hull) or cone coefficients (cone) on `B`, before `scale`.
    pub b_weights: Vec<f64>,
    pub iterations: usize,
    /// Iteration budget ran out before the optimality gap closed.
    pub exhausted: bool,
}

/// `min |point − (a − scale·b)|` over `a ∈ hull(A)` and `b ∈ hull(B)` or `cone(B)`.
///
/// Wolfe's minimum-norm-point iteration (a fully corrective conditional
/// gradient scheme) over the atoms `a_i − scale·b_j − point`. The cone is
/// truncated to total mass `4(|point| + max|a_i|) + 1`, which contains the
/// optimal cone element unless the rays nearly cancel.
pub fn hull_distance(point: &[f64], a: &GradientBundle, b: Subtrahend<'_>, scale: f64) -> HullDistance {
    let dim = point.len();
    let a_gens = &a.generators;
    let max_a = a_gens.iter().map(|g| norm(g)).fold(0.0, f64::max);
    let (b_gens, is_cone): (&[Vec<f64>], bool) = match b {
        Subtrahend::Hull(h) => (&h.generators, false),
        Subtrahend::Cone(c) => (&c.rays, true),
    };
    let mass = if is_cone { 4.0 * (norm(point) + max_a) + 1.0 } else { 1.0 };
    let b_factor = scale * mass;

    // atom (i, j): a_i − b_factor·b_j − point; j = None is the cone apex
    let atom = |i: usize, j: Option<usize>| -> Vec<f64> {
        (0..dim)
            .map(|c| {
                let bj = j.map_or(0.0, |j| b_gens[j][c]);
                a_gens[i][c] - b_factor * bj - point[c]
            })
            .collect()
    };
    let lmo = |x: &[f64]| -> (usize, Option<usize>) {
        let i = argmin(a_gens.iter().map(|g| dot(x, g)));
        // maximize <x, b_factor·b_j> to minimize <x, atom>
        let j = if b_gens.is_empty() {
            None
        } else {
            let jb = argmin(b_gens.iter().map(|g| -dot(x, g)));
            if is_cone && b_factor * dot(x, &b_gens[jb]) <= 0.0 {
                None
            } else {
                Some(jb)
            }
        };
        (i, j)
    };

    let scale_sq = {
        let s = norm(point).max(max_a).max(
            b_gens.iter().map(|g| b_factor.abs() * norm(g)).fold(0.0, f64::max),
        );
        s.max(1.0).powi(2)
    };
    let budget = (10 * (a_gens.len() + b_gens.len())).max(10);

    let first_j = if is_cone || b_gens.is_empty() { None } else { Some(0) };
    let mut corral: Vec<((usize, Option<usize>), Vec<f64>)> = vec![((0, first_j), atom(0, first_j))];
    let mut lam = vec![1.0];
    let mut x = corral[0].1.clone();
    let mut iterations = 0;
    let mut exhausted = true;

    while iterations < budget {
        iterations += 1;
        let key = lmo(&x);
        let y = atom(key.0, key.1);
        let gap = dot(&x, &x) - dot(&x, &y);
        if gap <= 1e-15 * scale_sq || corral.iter().any(|(k, _)| *k == key) {
            exhausted = false;
            break;
        }
        corral.push((key, y));
        lam.push(0.0);
        loop {
            let alpha = affine_minimizer(&corral);
            if alpha.iter().all(|&v| v > 1e-14) {
                lam = alpha;
                break;
            }
            let mut theta = 1.0;
            for (l, al) in lam.iter().zip(&alpha) {
                if *al <= 1e-14 && l - al > 0.0 {
                    theta = f64::min(theta, l / (l - al));
                }
            }
            for (l, al) in lam.iter_mut().zip(&alpha) {
                *l = theta * al + (1.0 - theta) * *l;
            }
            let min_idx = argmin(lam.iter().copied());
            let mut keep = Vec::with_capacity(lam.len());
            for (idx, l) in lam.iter().enumerate() {
                keep.push(idx != min_idx && *l > 1e-14);
            }
            let mut it = keep.iter();
            corral.retain(|_| *it.next().unwrap());
            let mut it = keep.iter();
            lam.retain(|_| *it.next().unwrap());
            let total: f64 = lam.iter().sum();
            if total > 0.0 {
                for l in &mut lam {
                    *l /= total;
                }
            }
            if corral.len() <= 1 {
                if corral.is_empty() {
                    corral.push(((0, first_j), atom(0, first_j)));
                }
                lam = vec![1.0];
                break;
            }
        }
        x = combine(&corral, &lam, dim);
    }

    let mut a_weights = vec![0.0; a_gens.len()];
    let mut b_weights = vec![0.0; b_gens.len()];
    for (((i, j), _), l) in corral.iter().zip(&lam) {
        a_weights[*i] += l;
        if let Some(j) = j {
            b_weights[*j] += l * mass;
        }
    }
    HullDistance {
        distance: norm(&x),
        a_weights,
        b_weights,
        iterations,
        exhausted,
    }
}

fn combine(corral: &[((usize, Option<usize>), Vec<f64>)], lam: &[f64], dim: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    for ((_, v), l) in corral.iter().zip(lam) {
        for (xc, vc) in x.iter_mut().zip(v) {
            *xc += l * vc;
        }
    }
    x
}

/// Minimizer of `|Σ α_i v_i|` subject to `Σ α_i = 1` (affine hull of the corral).
fn affine_minimizer(corral: &[((usize, Option<usize>), Vec<f64>)]) -> Vec<f64> {
    let k = corral.len();
    let dim = corral[0].1.len();
    let v0 = &corral[0].1;
    // α = (1 − Σβ, β); minimize |v0 + D β|, D columns v_i − v0
    let d = DMatrix::from_fn(dim, k - 1, |r, c| corral[c + 1].1[r] - v0[r]);
    let rhs = DVector::from_iterator(dim, v0.iter().map(|v| -v));
    let svd = d.svd(true, true);
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let beta = svd
        .solve(&rhs, (max_sv * 1e-12).max(1e-300))
        .unwrap_or_else(|_| DVector::zeros(k - 1));
    let mut alpha = Vec::with_capacity(k);
    alpha.push(1.0 - beta.sum());
    alpha.extend(beta.iter());
    alpha
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, v) in values.enumerate() {
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(gens: Vec<Vec<f64>>) -> GradientBundle {
        GradientBundle::from_generators(vec![0.0; gens[0].len()], gens)
    }

    #[test]
    fn trivial_cases_are_exact() {
        let a = bundle(vec![vec![0.0]]);
        let zero = ConeBundle::zero(vec![0.0]);
        let r = hull_distance(&[0.0], &a, Subtrahend::Cone(&zero), 1.0);
        assert!(r.distance <= 1e-10);

        let a = bundle(vec![vec![4.0], vec![6.0]]);
        let r = hull_distance(&[5.0], &a, Subtrahend::Hull(&bundle(vec![vec![0.0]])), 1.0);
        assert!(r.distance <= 1e-10, "{r:?}");
        assert!((r.a_weights[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn point_outside_single_ray_cone() {
        let a = bundle(vec![vec![0.0, 1.0]]);
        let mut cone = ConeBundle::zero(vec![0.0, 0.0]);
        cone.push_ray(&[1.0, 1.0]);
        let r = hull_distance(&[0.0, 0.0], &a, Subtrahend::Cone(&cone), 1.0);
        assert!((r.distance - 0.5f64.sqrt()).abs() < 1e-10, "{r:?}");
        // witness: β' = 1/2 on (1,1) means β = √2/2 on the unit ray
        assert!((r.b_weights[0] - 0.5f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn cone_absorbs_feasible_difference() {
        // (0,0) = (0,-1) − β(0,-1) at β = 1
        let a = bundle(vec![vec![0.0, -1.0]]);
        let mut cone = ConeBundle::zero(vec![0.0, 0.0]);
        cone.push_ray(&[0.0, -1.0]);
        let r = hull_distance(&[0.0, 0.0], &a, Subtrahend::Cone(&cone), 1.0);
        assert!(r.distance <= 1e-10);
    }

    #[test]
    fn two_dimensional_hull_projection() {
        let a = bundle(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let zero = ConeBundle::zero(vec![0.0, 0.0]);
        let r = hull_distance(&[0.0, 0.0], &a, Subtrahend::Cone(&zero), 1.0);
        assert!((r.distance - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(!r.exhausted);
    }

    #[test]
    fn many_duplicate_generators() {
        let gens = (0..64).map(|i| vec![2.0 + 1e-12 * i as f64, -1.0]).collect();
        let a = bundle(gens);
        let zero = ConeBundle::zero(vec![0.0, 0.0]);
        let r = hull_distance(&[2.0, 0.0], &a, Subtrahend::Cone(&zero), 1.0);
        assert!((r.distance - 1.0).abs() < 1e-10);
    }
}
