//! Computable surrogates for the nonsmooth-analysis objects used by the
//! optimality conditions: sampled Clarke subdifferentials, normal cones of
//! inequality-described sets and endpoint descriptors, distance functions,
//! and distances between convex hulls and cones.

mod cones;
mod hull;
mod projection;

pub use cones::{distance_subdiff, endpoint_normal_cone, normal_cone_s};
pub use hull::{hull_distance, HullDistance, Subtrahend};
pub use projection::{distance_to_s, project_inequalities};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problem::norm;

/// Finite generator set; interpreted as the convex hull of `generators`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    pub base: Vec<f64>,
    pub generators: Vec<Vec<f64>>,
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
}

impl GradientBundle {
    /// Bundle with given generators and no sampling metadata.
    pub fn from_generators(base: Vec<f64>, generators: Vec<Vec<f64>>) -> Self {
        GradientBundle {
            base,
            generators,
            radius: 0.0,
            samples: 0,
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// Largest pairwise distance between generators.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.generators.iter().enumerate() {
            for b in &self.generators[i + 1..] {
                d = d.max(norm(&crate::problem::sub(a, b)));
            }
        }
        d
    }

    /// Smallest and largest value of coordinate `c` over the generators.
    pub fn coordinate_range(&self, c: usize) -> (f64, f64) {
        self.generators.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| {
            (lo.min(g[c]), hi.max(g[c]))
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for g in &mut out.generators {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
        out
    }
}

/// Finitely generated cone `{Σ β_r ray_r : β_r ≥ 0}`; rays have unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeBundle {
    pub base: Vec<f64>,
    pub rays: Vec<Vec<f64>>,
}

impl ConeBundle {
    pub fn zero(base: Vec<f64>) -> Self {
        ConeBundle { base, rays: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.rays.is_empty()
    }

    /// Adds `ray / |ray|`; zero rays are dropped.
    pub fn push_ray(&mut self, ray: &[f64]) {
        let n = norm(ray);
        if n > 0.0 {
            self.rays.push(ray.iter().map(|v| v / n).collect());
        }
    }

    pub fn negated(&self) -> Self {
        ConeBundle {
            base: self.base.clone(),
            rays: self.rays.iter().map(|r| r.iter().map(|v| -v).collect()).collect(),
        }
    }
}

/// Sampling parameters for [`subdiff_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub radius: f64,
    /// Samples per dimension of the argument.
    pub samples_per_dim: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            radius: 1e-4,
            samples_per_dim: 32,
            seed: 0,
        }
    }
}

impl Sampling {
    pub fn with_seed(self, seed: u64) -> Self {
        Sampling { seed, ..self }
    }

    pub fn estimate<F>(&self, func: F, point: &[f64]) -> Result<GradientBundle>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        subdiff_estimate(func, point, self.radius, self.samples_per_dim * point.len().max(1), self.seed)
    }
}

/// Gradient-sampling estimate of the Clarke subdifferential of `func` at `point`.
///
/// Each sample draws an offset `o` uniformly from the ball of the given
/// radius and takes central-difference gradients (step `radius / 100`) at
/// `point + o`, `point + o/2` and `point + o/4`. When those three gradients
/// are affine in the distance along the ray, the generator is their linear
/// extrapolation to `point` (the limiting gradient along that ray);
/// otherwise a kink was crossed and all three are kept.
pub fn subdiff_estimate<F>(func: F, point: &[f64], radius: f64, samples: usize, seed: u64) -> Result<GradientBundle>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let dim = point.len();
    let step = radius / 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut generators = Vec::with_capacity(samples);
    let grad_at = |y: &[f64]| -> Result<Vec<f64>> {
        let mut w = y.to_vec();
        let mut g = Vec::with_capacity(dim);
        for i in 0..dim {
            w[i] = y[i] + step;
            let up = func(&w)?;
            w[i] = y[i] - step;
            let down = func(&w)?;
            w[i] = y[i];
            g.push((up - down) / (2.0 * step));
        }
        Ok(g)
    };
    for _ in 0..samples.max(1) {
        let dir = ball_sample(&mut rng, dim);
        let at = |frac: f64| -> Vec<f64> {
            point
                .iter()
                .zip(&dir)
                .map(|(p, d)| p + frac * radius * d)
                .collect()
        };
        let g_far = grad_at(&at(1.0))?;
        let g_mid = grad_at(&at(0.5))?;
        let g_near = grad_at(&at(0.25))?;
        let mut affine = true;
        for i in 0..dim {
            let outer = g_far[i] - g_mid[i];
            let inner = g_mid[i] - g_near[i];
            if (outer - 2.0 * inner).abs() > 1e-6 + 1e-3 * outer.abs() {
                affine = false;
                break;
            }
        }
        if affine {
            generators.push(g_near.iter().zip(&g_mid).map(|(n, m)| 2.0 * n - m).collect());
        } else {
            generators.push(g_far);
            generators.push(g_mid);
            generators.push(g_near);
        }
    }
    Ok(GradientBundle {
        base: point.to_vec(),
        generators,
        radius,
        samples,
        seed,
    })
}

/// Independent seed for sub-stream `(stream, index)` of `seed` (splitmix64 mixing).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform sample from the closed unit ball of ℝ^dim.
pub(crate) fn ball_sample<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
    let n = norm(&v);
    let r: f64 = rng.gen::<f64>().powf(1.0 / dim as f64);
    if n > 0.0 {
        for x in &mut v {
            *x *= r / n;
        }
    }
    v
}

pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box–Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(f: impl Fn(&[f64]) -> f64) -> impl Fn(&[f64]) -> Result<f64> {
        move |v| Ok(f(v))
    }

    #[test]
    fn smooth_quadratic_collapses() {
        let b = subdiff_estimate(ok(|v| v[0] * v[0]), &[3.0], 1e-3, 32, 7).unwrap();
        for g in &b.generators {
            assert!((g[0] - 6.0).abs() <= 1e-6, "{g:?}");
        }
        let q = subdiff_estimate(ok(|v| v[0] * v[0] + 3.0 * v[0] * v[1] - v[1] * v[1]), &[0.4, -1.2], 1e-3, 64, 1)
            .unwrap();
        assert!(q.diameter() <= 1e-6, "{}", q.diameter());
    }

    #[test]
    fn abs_at_zero_spans_interval() {
        let b = subdiff_estimate(ok(|v| v[0].abs()), &[0.0], 1e-3, 64, 0).unwrap();
        let (lo, hi) = b.coordinate_range(0);
        assert!((lo + 1.0).abs() < 0.05 && (hi - 1.0).abs() < 0.05, "{lo} {hi}");
        assert!(b.generators.iter().all(|g| g[0].abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn positive_part_at_zero() {
        let b = subdiff_estimate(ok(|v| v[0].max(0.0)), &[0.0], 1e-4, 64, 3).unwrap();
        let (lo, hi) = b.coordinate_range(0);
        assert!(lo.abs() < 0.05 && (hi - 1.0).abs() < 0.05, "{lo} {hi}");
    }

    #[test]
    fn kink_inside_radius_keeps_raw_gradients() {
        // kink at 5e-4, radius 1e-3: extrapolation must not overshoot the hull [-1, 1]
        let b = subdiff_estimate(ok(|v| (v[0] - 5e-4).abs()), &[0.0], 1e-3, 256, 11).unwrap();
        assert!(b.generators.iter().all(|g| g[0].abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn same_seed_same_bundle() {
        let f = ok(|v| (v[0] - v[1]).abs() + v[0] * v[1]);
        let a = subdiff_estimate(&f, &[0.1, 0.1], 1e-4, 64, 99).unwrap();
        let b = subdiff_estimate(&f, &[0.1, 0.1], 1e-4, 64, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failure_reports_point() {
        let err = subdiff_estimate(
            |v: &[f64]| {
                if v[0] > 0.0 {
                    Err(crate::Error::Evaluation {
                        what: "f".into(),
                        point: v.to_vec(),
                    })
                } else {
                    Ok(0.0)
                }
            },
            &[0.0],
            1e-3,
            16,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, crate::Error::Evaluation { point, .. } if point[0] > 0.0));
    }
}
