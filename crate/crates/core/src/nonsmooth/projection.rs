use crate::error::{Error, Result};
use crate::problem::{dot, norm, OCProblem};

const FEASIBILITY_TOL: f64 = 1e-10;

/// Euclidean projection of `origin` onto `{v : g_j(v) ≤ 0}`.
///
/// `constraints(v)` returns the values `g_j(v)` and their gradients. Each
/// outer step linearizes the constraints at the current iterate and projects
/// `origin` exactly onto the resulting polyhedron by dual coordinate ascent
/// (Hildreth); the iteration is Newton's method on the projection KKT system.
/// Restarts from perturbed linearization points before giving up.
pub fn project_inequalities<F>(origin: &[f64], constraints: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)>,
{
    let (g0, _) = constraints(origin)?;
    if g0.iter().all(|g| *g <= 0.0) {
        return Ok(origin.to_vec());
    }
    let scale = 1.0 + norm(origin);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let starts = 1 + 2 * origin.len();
    for start in 0..starts {
        let mut v = origin.to_vec();
        if start > 0 {
            let c = (start - 1) / 2;
            v[c] += if start % 2 == 1 { 1e-3 } else { -1e-3 } * scale;
        }
        let candidate = sqp_projection(origin, v, &constraints)?;
        let (g, _) = constraints(&candidate)?;
        let viol = g.iter().copied().fold(0.0, f64::max);
        if viol <= FEASIBILITY_TOL * scale {
            return Ok(candidate);
        }
        if best.as_ref().is_none_or(|(b, _)| viol < *b) {
            best = Some((viol, candidate));
        }
    }
    Err(Error::ProjectionFailed {
        violation: best.map_or(f64::INFINITY, |(v, _)| v),
    })
}

fn sqp_projection<F>(origin: &[f64], mut v: Vec<f64>, constraints: &F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)>,
{
    for _ in 0..100 {
        let (g, grads) = constraints(&v)?;
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (gj, aj) in g.iter().zip(&grads) {
            if dot(aj, aj) < 1e-28 {
                continue;
            }
            rows.push(aj.clone());
            rhs.push(dot(aj, &v) - gj);
        }
        let w = hildreth(origin, &rows, &rhs);
        let step = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        // the tangential roundoff grows once converged, so stop early
        if step <= 1e-12 * (1.0 + norm(&v)) {
            break;
        }
    }
    Ok(v)
}

/// Projection of `origin` onto `{w : rows_j · w ≤ rhs_j}` by Hildreth's method.
fn hildreth(origin: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let mut w = origin.to_vec();
    let mut lam = vec![0.0; rows.len()];
    let sq: Vec<f64> = rows.iter().map(|r| dot(r, r)).collect();
    for _ in 0..50_000 {
        let mut change: f64 = 0.0;
        for j in 0..rows.len() {
            let r = (dot(&rows[j], &w) - rhs[j]) / sq[j];
            let new = (lam[j] + r).max(0.0);
            let delta = new - lam[j];
            if delta != 0.0 {
                for (wi, ai) in w.iter_mut().zip(&rows[j]) {
                    *wi -= delta * ai;
                }
                lam[j] = new;
                change = change.max(delta.abs() * sq[j].sqrt());
            }
        }
        if change <= 1e-16 * (1.0 + norm(&w)) {
            break;
        }
    }
    w
}

/// Distance from `(x, u)` to `S(t)` and the nearest point, stacked as `(x, u)`.
pub fn distance_to_s(problem: &OCProblem, t: f64, x: &[f64], u: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = problem.state_dim;
    let origin = [x, u].concat();
    let nearest = project_inequalities(&origin, |v| {
        let (xs, us) = v.split_at(n);
        Ok((problem.mixed_values(t, xs, us)?, problem.mixed_gradients(t, xs, us)?))
    })?;
    let d = norm(&crate::problem::sub(&origin, &nearest));
    Ok((d, nearest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_reference_problem, mixed_residual, ReferenceId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn examples() {
        let (a, _) = load_reference_problem(ReferenceId::A);
        assert_eq!(distance_to_s(&a, 0.0, &[0.0], &[0.5]).unwrap().0, 0.0);
        let (d, p) = distance_to_s(&a, 0.0, &[0.0], &[2.0]).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert!((p[1] - 1.0).abs() < 1e-12);
        let (c, _) = load_reference_problem(ReferenceId::C);
        let (d, p) = distance_to_s(&c, 0.0, &[0.5], &[1.0]).unwrap();
        assert!((d - 0.25 * 2f64.sqrt()).abs() < 1e-12, "{d}");
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn corner_projection() {
        let (c, _) = load_reference_problem(ReferenceId::C);
        // below u = 0 and beyond u + x = 1: nearest is the corner (1, 0)
        let (d, p) = distance_to_s(&c, 0.0, &[2.0], &[-1.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-10 && p[1].abs() < 1e-10, "{p:?}");
        assert!((d - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn curved_constraint() {
        // disc of radius 1
        let proj = project_inequalities(&[3.0, 4.0], |v| {
            Ok((vec![v[0] * v[0] + v[1] * v[1] - 1.0], vec![vec![2.0 * v[0], 2.0 * v[1]]]))
        })
        .unwrap();
        assert!((proj[0] - 0.6).abs() < 1e-10 && (proj[1] - 0.8).abs() < 1e-10);
    }

    #[test]
    fn empty_set_fails() {
        let err = project_inequalities(&[0.0], |v| Ok((vec![v[0] - 1.0, 2.0 - v[0]], vec![vec![1.0], vec![-1.0]])))
            .unwrap_err();
        assert!(matches!(err, Error::ProjectionFailed { .. }));
    }

    #[test]
    fn zero_distance_iff_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for id in ReferenceId::ALL {
            let (p, _) = load_reference_problem(id);
            for _ in 0..1000 {
                let x = [rng.gen_range(-2.0..2.0)];
                let u = [rng.gen_range(-2.0..2.0)];
                let (_, gmax) = mixed_residual(&p, 0.5, &x, &u).unwrap();
                let (d, _) = distance_to_s(&p, 0.5, &x, &u).unwrap();
                assert_eq!(d == 0.0, gmax <= 1e-8, "{id} x={x:?} u={u:?} d={d} g={gmax}");
            }
        }
    }
}
