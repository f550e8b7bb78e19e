//! Deterministic sampling of the control slice `S(t, x) = {u : g(t, x, u) ≤ 0}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nonsmooth::project_inequalities;
use crate::problem::OCProblem;

/// Farthest the axis search looks for the edge of `S(t, x)`.
pub(crate) const REACH: f64 = 1e3;
const FEASIBLE: f64 = 1e-12;
const MAX_VERTEX_DIM: usize = 10;

pub(crate) fn max_mixed(problem: &OCProblem, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    Ok(problem
        .mixed_values(t, x, u)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Nearest point of `S(t, x)` to `u` with `x` held fixed.
pub(crate) fn project_control(problem: &OCProblem, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let n = problem.state_dim;
    project_inequalities(u, |v| {
        let grads = problem
            .mixed_gradients(t, x, v)?
            .into_iter()
            .map(|g| g[n..].to_vec())
            .collect();
        Ok((problem.mixed_values(t, x, v)?, grads))
    })
}

/// Axis-aligned extent of `S(t, x)` through a feasible center.
#[derive(Debug, Clone)]
pub(crate) struct ControlRegion {
    pub t: f64,
    pub x: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Some axis stayed feasible out to [`REACH`].
    pub escaped: bool,
}

impl ControlRegion {
    /// Walks out from `u_ref` (projected onto `S(t, x)` first if needed)
    /// along each coordinate axis to the edge of the set.
    pub fn new(problem: &OCProblem, t: f64, x: &[f64], u_ref: &[f64]) -> Result<Self> {
        let center = if max_mixed(problem, t, x, u_ref)? <= FEASIBLE {
            u_ref.to_vec()
        } else {
            project_control(problem, t, x, u_ref).map_err(|_| Error::SamplerStarved { t })?
        };
        let k = center.len();
        let mut lower = center.clone();
        let mut upper = center.clone();
        let mut escaped = false;
        for c in 0..k {
            for sign in [-1.0, 1.0] {
                let feasible = |r: f64| -> Result<bool> {
                    let mut u = center.clone();
                    u[c] += sign * r;
                    Ok(max_mixed(problem, t, x, &u)? <= FEASIBLE)
                };
                let (reach, hit) = axis_extent(feasible)?;
                escaped |= hit;
                if sign < 0.0 {
                    lower[c] -= reach;
                } else {
                    upper[c] += reach;
                }
            }
        }
        Ok(ControlRegion {
            t,
            x: x.to_vec(),
            center,
            lower,
            upper,
            escaped,
        })
    }

    pub fn is_feasible(&self, problem: &OCProblem, u: &[f64]) -> Result<bool> {
        Ok(max_mixed(problem, self.t, &self.x, u)? <= FEASIBLE)
    }

    /// Feasible corners of the axis box.
    pub fn vertices(&self, problem: &OCProblem) -> Result<Vec<Vec<f64>>> {
        let k = self.center.len();
        if k > MAX_VERTEX_DIM {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for mask in 0..(1usize << k) {
            let v: Vec<f64> = (0..k)
                .map(|c| if mask >> c & 1 == 1 { self.upper[c] } else { self.lower[c] })
                .collect();
            if self.is_feasible(problem, &v)? {
                out.push(v);
            }
        }
        Ok(out)
    }

    /// Last feasible point on the ray from the center along `dir`, or
    /// `None` if the ray stays feasible out to [`REACH`].
    pub fn edge_along(&self, problem: &OCProblem, dir: &[f64]) -> Result<Option<Vec<f64>>> {
        let at = |r: f64| -> Vec<f64> { self.center.iter().zip(dir).map(|(c, d)| c + r * d).collect() };
        let (r, escaped) = axis_extent(|r| self.is_feasible(problem, &at(r)))?;
        Ok((!escaped).then(|| at(r)))
    }

    /// Sampling box: the axis box widened by half its width on each side,
    /// so that sets reaching past their axis extents are still covered.
    pub fn sampling_box(&self) -> (Vec<f64>, Vec<f64>) {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                let margin = 0.5 * (hi - lo);
                (lo - margin, hi + margin)
            })
            .unzip()
    }

    /// The first `count` feasible points of the rejection-sampling stream
    /// for `seed`. Streams are nested: a larger `count` extends a smaller one.
    pub fn draw(&self, problem: &OCProblem, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let (lo, hi) = self.sampling_box();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0;
        while out.len() < count && attempts < 50 * count {
            attempts += 1;
            let u: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(a, b)| if b > a { rng.gen_range(*a..=*b) } else { *a })
                .collect();
            if self.is_feasible(problem, &u)? {
                out.push(u);
            }
        }
        Ok(out)
    }
}

/// Largest `r ∈ [0, REACH]` with `feasible(r)`, assuming feasibility along
/// the ray is an interval containing 0; the flag reports reaching `REACH`.
fn axis_extent<F>(feasible: F) -> Result<(f64, bool)>
where
    F: Fn(f64) -> Result<bool>,
{
    if feasible(REACH)? {
        return Ok((REACH, true));
    }
    let mut lo = 0.0;
    let mut hi = 0.5;
    while hi < REACH && feasible(hi)? {
        lo = hi;
        hi *= 2.0;
    }
    let hi_cap = hi.min(REACH);
    let mut hi = hi_cap;
    for _ in 0..200 {
        if hi - lo <= 1e-14 * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_reference_problem, ReferenceId};

    #[test]
    fn box_extents_are_exact() {
        let (a, _) = load_reference_problem(ReferenceId::A);
        let r = ControlRegion::new(&a, 0.0, &[0.0], &[0.3]).unwrap();
        assert!((r.lower[0] + 1.0).abs() < 1e-12 && (r.upper[0] - 1.0).abs() < 1e-12);
        assert!(!r.escaped);
        assert_eq!(r.vertices(&a).unwrap().len(), 2);

        // 0 ≤ u ≤ 1 − x at x = 0.25, starting outside
        let (c, _) = load_reference_problem(ReferenceId::C);
        let r = ControlRegion::new(&c, 0.0, &[0.25], &[2.0]).unwrap();
        assert!((r.center[0] - 0.75).abs() < 1e-9);
        assert!(r.lower[0].abs() < 1e-9 && (r.upper[0] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn unbounded_slice_escapes() {
        let (mut a, _) = load_reference_problem(ReferenceId::A);
        a.mixed_constraints.truncate(1);
        let r = ControlRegion::new(&a, 0.0, &[0.0], &[0.0]).unwrap();
        assert!(r.escaped);
    }

    #[test]
    fn draws_are_nested_and_feasible() {
        let (c, _) = load_reference_problem(ReferenceId::C);
        let r = ControlRegion::new(&c, 0.0, &[0.5], &[0.1]).unwrap();
        let small = r.draw(&c, 10, 7).unwrap();
        let large = r.draw(&c, 40, 7).unwrap();
        assert_eq!(small.len(), 10);
        assert_eq!(&large[..10], &small[..]);
        assert!(large.iter().all(|u| u[0] >= 0.0 && u[0] <= 0.5));
    }
}
