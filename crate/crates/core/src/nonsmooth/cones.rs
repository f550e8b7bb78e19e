use super::{distance_to_s, ConeBundle, GradientBundle, Sampling};
use crate::error::{Error, Result};
use crate::problem::{norm, orthogonal_complement, EndpointDescriptor, OCProblem};

/// Clarke normal cone to `S(t)` at `(x, u)` from the gradients of the
/// constraints with `|g_j| ≤ activity_tol`. Interior points give the zero cone.
pub fn normal_cone_s(problem: &OCProblem, t: f64, x: &[f64], u: &[f64], activity_tol: f64) -> Result<ConeBundle> {
    let base = [x, u].concat();
    let g = problem.mixed_values(t, x, u)?;
    let worst = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if worst > activity_tol {
        return Err(Error::NotInSet {
            what: format!("mixed-constraint set S({t})"),
            point: base,
            tol: activity_tol,
        });
    }
    let grads = problem.mixed_gradients(t, x, u)?;
    let mut cone = ConeBundle::zero(base);
    for (j, (gj, grad)) in g.iter().zip(&grads).enumerate() {
        if gj.abs() <= activity_tol {
            let n = norm(grad);
            if n < 1e-12 {
                return Err(Error::DegenerateNormal { constraint: j, norm: n });
            }
            cone.push_ray(grad);
        }
    }
    Ok(cone)
}

/// Closed-form limiting normal cone of an endpoint descriptor.
pub fn endpoint_normal_cone(descriptor: &EndpointDescriptor, point: &[f64], tol: f64) -> Result<ConeBundle> {
    let n = point.len();
    if !descriptor.contains(point, tol) {
        return Err(Error::NotInSet {
            what: "endpoint set".into(),
            point: point.to_vec(),
            tol,
        });
    }
    let unit = |i: usize, s: f64| {
        let mut e = vec![0.0; n];
        e[i] = s;
        e
    };
    let mut cone = ConeBundle::zero(point.to_vec());
    match descriptor {
        EndpointDescriptor::Point { .. } => {
            for i in 0..n {
                cone.push_ray(&unit(i, 1.0));
                cone.push_ray(&unit(i, -1.0));
            }
        }
        EndpointDescriptor::Box { lower, upper } => {
            for i in 0..n {
                if (point[i] - lower[i]).abs() <= tol {
                    cone.push_ray(&unit(i, -1.0));
                }
                if (point[i] - upper[i]).abs() <= tol {
                    cone.push_ray(&unit(i, 1.0));
                }
            }
        }
        EndpointDescriptor::Affine { basis, .. } => {
            for c in orthogonal_complement(basis, n) {
                cone.push_ray(&c);
                cone.push_ray(&c.iter().map(|v| -v).collect::<Vec<_>>());
            }
        }
        EndpointDescriptor::Free => {}
    }
    Ok(cone)
}

/// Sampled Clarke subdifferential of `(x, u) ↦ d_{S(t)}(x, u)`.
pub fn distance_subdiff(problem: &OCProblem, t: f64, x: &[f64], u: &[f64], sampling: &Sampling) -> Result<GradientBundle> {
    let n = problem.state_dim;
    sampling.estimate(
        |v| {
            let (xs, us) = v.split_at(n);
            Ok(distance_to_s(problem, t, xs, us)?.0)
        },
        &[x, u].concat(),
    )
}
