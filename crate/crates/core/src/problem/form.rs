//! Scalar evaluators over a flat argument vector.
//!
//! Problem data is stored as built-in algebraic forms so that problems can
//! be read from and written to JSON. The argument conventions are fixed by
//! the caller: `(t, x, u)` for dynamics, mixed constraints and running cost,
//! `(t, x)` for the state constraint and `(x_a, x_b)` for the endpoint cost.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// A closed-form scalar function with an exact gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Form {
    Constant {
        value: f64,
    },
    /// `constant + coeffs · v`
    Linear {
        #[serde(default)]
        constant: f64,
        coeffs: Vec<f64>,
    },
    /// `constant + linear · v + vᵀ matrix v`
    Quadratic {
        #[serde(default)]
        constant: f64,
        linear: Vec<f64>,
        matrix: Vec<Vec<f64>>,
    },
    /// `constant + Σ matrix[i][j] · v[left[i]] · v[right[j]]`
    Bilinear {
        #[serde(default)]
        constant: f64,
        left: Vec<usize>,
        right: Vec<usize>,
        matrix: Vec<Vec<f64>>,
    },
    /// Pointwise maximum of the terms.
    Max { terms: Vec<Form> },
}

impl Form {
    pub fn constant(value: f64) -> Self {
        Form::Constant { value }
    }

    pub fn linear(constant: f64, coeffs: Vec<f64>) -> Self {
        Form::Linear { constant, coeffs }
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        match self {
            Form::Constant { value } => *value,
            Form::Linear { constant, coeffs } => constant + dot(coeffs, v),
            Form::Quadratic {
                constant,
                linear,
                matrix,
            } => {
                let mut acc = constant + dot(linear, v);
                for (i, row) in matrix.iter().enumerate() {
                    acc += v[i] * dot(row, v);
                }
                acc
            }
            Form::Bilinear {
                constant,
                left,
                right,
                matrix,
            } => {
                let mut acc = *constant;
                for (i, &li) in left.iter().enumerate() {
                    for (j, &rj) in right.iter().enumerate() {
                        acc += matrix[i][j] * v[li] * v[rj];
                    }
                }
                acc
            }
            Form::Max { terms } => terms
                .iter()
                .map(|f| f.value(v))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Exact gradient; for `Max` the gradient of the first maximizing term.
    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; v.len()];
        self.add_gradient(v, 1.0, &mut g);
        g
    }

    fn add_gradient(&self, v: &[f64], scale: f64, g: &mut [f64]) {
        match self {
            Form::Constant { .. } => {}
            Form::Linear { coeffs, .. } => {
                for (gi, c) in g.iter_mut().zip(coeffs) {
                    *gi += scale * c;
                }
            }
            Form::Quadratic { linear, matrix, .. } => {
                for (gi, c) in g.iter_mut().zip(linear) {
                    *gi += scale * c;
                }
                for (i, row) in matrix.iter().enumerate() {
                    for (j, m) in row.iter().enumerate() {
                        g[i] += scale * m * v[j];
                        g[j] += scale * m * v[i];
                    }
                }
            }
            Form::Bilinear {
                left,
                right,
                matrix,
                ..
            } => {
                for (i, &li) in left.iter().enumerate() {
                    for (j, &rj) in right.iter().enumerate() {
                        g[li] += scale * matrix[i][j] * v[rj];
                        g[rj] += scale * matrix[i][j] * v[li];
                    }
                }
            }
            Form::Max { terms } => {
                let mut best = None;
                let mut best_val = f64::NEG_INFINITY;
                for (k, f) in terms.iter().enumerate() {
                    let val = f.value(v);
                    if val > best_val {
                        best_val = val;
                        best = Some(k);
                    }
                }
                if let Some(k) = best {
                    terms[k].add_gradient(v, scale, g);
                }
            }
        }
    }

    /// Number of arguments the form reads, or `None` if it reads none.
    pub fn arity(&self) -> Option<usize> {
        match self {
            Form::Constant { .. } => None,
            Form::Linear { coeffs, .. } => Some(coeffs.len()),
            Form::Quadratic { linear, matrix, .. } => {
                let m = matrix.len();
                if matrix.iter().any(|r| r.len() != m) || (m != linear.len() && m != 0) {
                    Some(usize::MAX)
                } else {
                    Some(linear.len().max(m))
                }
            }
            Form::Bilinear {
                left,
                right,
                matrix,
                ..
            } => {
                if matrix.len() != left.len() || matrix.iter().any(|r| r.len() != right.len()) {
                    Some(usize::MAX)
                } else {
                    left.iter().chain(right).max().map(|m| m + 1)
                }
            }
            Form::Max { terms } => terms.iter().filter_map(Form::arity).max(),
        }
    }

    /// Whether the form is a constant or affine function.
    pub fn is_affine(&self) -> bool {
        matches!(self, Form::Constant { .. } | Form::Linear { .. })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub type CustomFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Scalar evaluator: a built-in form, or an in-process closure whose
/// gradient is taken by central differences.
#[derive(Clone)]
pub enum Evaluator {
    Form(Form),
    Custom { label: String, func: CustomFn },
}

impl fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Evaluator::Form(form) => form.fmt(f),
            Evaluator::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl From<Form> for Evaluator {
    fn from(form: Form) -> Self {
        Evaluator::Form(form)
    }
}

const CUSTOM_FD_STEP: f64 = 1e-7;

impl Evaluator {
    pub fn custom(label: impl Into<String>, func: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Evaluator::Custom {
            label: label.into(),
            func: Arc::new(func),
        }
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        match self {
            Evaluator::Form(f) => f.value(v),
            Evaluator::Custom { func, .. } => func(v),
        }
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Evaluator::Form(f) => f.gradient(v),
            Evaluator::Custom { func, .. } => {
                let mut w = v.to_vec();
                (0..v.len())
                    .map(|i| {
                        let h = CUSTOM_FD_STEP * (1.0 + v[i].abs());
                        w[i] = v[i] + h;
                        let up = func(&w);
                        w[i] = v[i] - h;
                        let down = func(&w);
                        w[i] = v[i];
                        (up - down) / (2.0 * h)
                    })
                    .collect()
            }
        }
    }

    pub fn form(&self) -> Option<&Form> {
        match self {
            Evaluator::Form(f) => Some(f),
            Evaluator::Custom { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches_differences() {
        let f = Form::Quadratic {
            constant: 1.0,
            linear: vec![0.5, -1.0],
            matrix: vec![vec![2.0, 1.0], vec![0.0, 3.0]],
        };
        let v = [0.3, -0.7];
        let g = f.gradient(&v);
        let custom = Evaluator::custom("same", move |w| f.value(w));
        let gd = custom.gradient(&v);
        for (a, b) in g.iter().zip(&gd) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn bilinear_and_max() {
        let b = Form::Bilinear {
            constant: 0.0,
            left: vec![0],
            right: vec![1],
            matrix: vec![vec![2.0]],
        };
        assert_eq!(b.value(&[3.0, 4.0]), 24.0);
        assert_eq!(b.gradient(&[3.0, 4.0]), vec![8.0, 6.0]);
        let m = Form::Max {
            terms: vec![Form::constant(0.0), Form::linear(0.0, vec![1.0])],
        };
        assert_eq!(m.value(&[-2.0]), 0.0);
        assert_eq!(m.gradient(&[2.0]), vec![1.0]);
        assert_eq!(m.arity(), Some(1));
    }

    #[test]
    fn form_json_shape() {
        let f: Form = serde_json::from_str(r#"{"kind":"linear","coeffs":[0,0,1]}"#).unwrap();
        assert_eq!(f, Form::linear(0.0, vec![0.0, 0.0, 1.0]));
    }
}
