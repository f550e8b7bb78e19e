//! The penalized NLP with the nonsmooth terms lifted to epigraph slacks:
//!
//! ```text
//! minimize  l + running + i Σ c_m s_m + w Σ Δt r
//! s.t.      Euler defects = 0, affine endpoint rows = 0,
//!           g_j ≤ 0 (those that are not plain control bounds),
//!           h(t_m, x_m) − s_m ≤ 0,  ±(u − anchor) − r ≤ 0,
//!           box bounds on x_0, x_N, u, s ≥ 0, r ≥ 0
//! ```
//!
//! The slack formulation is exact: at any minimizer `s_m = h⁺` and `r = |u − anchor|`.

use crate::error::Result;
use crate::problem::{orthogonal_complement, EndpointDescriptor, Evaluator, Form};
use crate::transcription::{DiscreteNLP, Layout};

/// Sparse constraint rows (values plus gradient entries), CSR style.
#[derive(Debug, Default, Clone)]
pub(crate) struct Rows {
    pub values: Vec<f64>,
    start: Vec<usize>,
    idx: Vec<usize>,
    coef: Vec<f64>,
}

impl Rows {
    fn clear(&mut self) {
        self.values.clear();
        self.start.clear();
        self.idx.clear();
        self.coef.clear();
    }

    fn push(&mut self, value: f64) {
        self.values.push(value);
        self.start.push(self.idx.len());
    }

    fn entry(&mut self, i: usize, c: f64) {
        if c != 0.0 {
            self.idx.push(i);
            self.coef.push(c);
        }
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let end = self.start.get(r + 1).copied().unwrap_or(self.idx.len());
        (self.start[r]..end).map(move |e| (self.idx[e], self.coef[e]))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
}

/// Mixed constraint `a·u_c + b ≤ 0` handled as a bound on `u_c`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ControlBound {
    pub constraint: usize,
    pub coord: usize,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone)]
struct AffineRow {
    node: usize,
    row: Vec<f64>,
    rhs: f64,
}

pub(crate) struct Lifted<'a> {
    pub nlp: &'a DiscreteNLP,
    pub layout: Layout,
    pub slack0: usize,
    pub anchor0: Option<usize>,
    pub len: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub general: Vec<usize>,
    pub bounds: Vec<ControlBound>,
    affine: Vec<AffineRow>,
    weights: Vec<f64>,
}

fn as_control_bound(j: usize, g: &Evaluator, n: usize) -> Option<ControlBound> {
    let Some(Form::Linear { constant, coeffs }) = g.form() else {
        return None;
    };
    if coeffs[..=n].iter().any(|c| *c != 0.0) {
        return None;
    }
    let nonzero: Vec<usize> = (n + 1..coeffs.len()).filter(|&i| coeffs[i] != 0.0).collect();
    match nonzero.as_slice() {
        [i] => Some(ControlBound {
            constraint: j,
            coord: i - n - 1,
            a: coeffs[*i],
            b: *constant,
        }),
        _ => None,
    }
}

impl<'a> Lifted<'a> {
    pub fn new(nlp: &'a DiscreteNLP) -> Self {
        let layout = nlp.layout;
        let (n, k, steps) = (layout.state_dim, layout.control_dim, layout.n_steps);
        let slack0 = layout.len();
        let anchor0 = nlp.anchor.as_ref().map(|_| slack0 + steps + 1);
        let len = slack0 + steps + 1 + if anchor0.is_some() { steps * k } else { 0 };
        let mut lower = vec![f64::NEG_INFINITY; len];
        let mut upper = vec![f64::INFINITY; len];
        for v in &mut lower[slack0..] {
            *v = 0.0;
        }

        let problem = &nlp.problem;
        let mut general = Vec::new();
        let mut bounds = Vec::new();
        let mut u_lo = vec![f64::NEG_INFINITY; k];
        let mut u_hi = vec![f64::INFINITY; k];
        for (j, g) in problem.mixed_constraints.iter().enumerate() {
            match as_control_bound(j, g, n) {
                Some(cb) => {
                    let edge = -cb.b / cb.a;
                    if cb.a > 0.0 {
                        u_hi[cb.coord] = u_hi[cb.coord].min(edge);
                    } else {
                        u_lo[cb.coord] = u_lo[cb.coord].max(edge);
                    }
                    bounds.push(cb);
                }
                None => general.push(j),
            }
        }
        for m in 0..steps {
            for c in 0..k {
                lower[layout.u(m) + c] = u_lo[c];
                upper[layout.u(m) + c] = u_hi[c];
            }
        }

        let mut affine = Vec::new();
        for (node, desc) in [(0, &problem.endpoint_set.initial), (steps, &problem.endpoint_set.terminal)] {
            if let Some((lo, hi)) = desc.bounds() {
                for i in 0..n {
                    lower[layout.x(node) + i] = lo[i];
                    upper[layout.x(node) + i] = hi[i];
                }
            }
            if let EndpointDescriptor::Affine { offset, basis } = desc {
                for row in orthogonal_complement(basis, n) {
                    let rhs = row.iter().zip(offset).map(|(a, b)| a * b).sum();
                    affine.push(AffineRow { node, row, rhs });
                }
            }
        }

        Lifted {
            weights: nlp.quadrature_weights(),
            nlp,
            layout,
            slack0,
            anchor0,
            len,
            lower,
            upper,
            general,
            bounds,
            affine,
        }
    }

    /// Lifts a decision vector over `(x, u)` with the exact slacks.
    pub fn lift(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut v = z.to_vec();
        v.resize(self.len, 0.0);
        for ((vi, lo), hi) in v[..self.slack0].iter_mut().zip(&self.lower).zip(&self.upper) {
            *vi = vi.max(*lo).min(*hi);
        }
        let l = self.layout;
        for m in 0..=l.n_steps {
            let h = self.nlp.problem.state_constraint_at(self.nlp.grid[m], l.state(&v, m))?;
            v[self.slack0 + m] = h.max(0.0);
        }
        if let (Some(a0), Some(anchor)) = (self.anchor0, &self.nlp.anchor) {
            for m in 0..l.n_steps {
                for c in 0..l.control_dim {
                    v[a0 + m * l.control_dim + c] = (v[l.u(m) + c] - anchor.controls[m][c]).abs();
                }
            }
        }
        Ok(v)
    }

    /// Smooth objective and its gradient.
    pub fn objective(&self, v: &[f64], grad: &mut [f64]) -> Result<f64> {
        let l = self.layout;
        let p = &self.nlp.problem;
        let n = l.state_dim;
        let steps = l.n_steps;
        let grid = &self.nlp.grid;
        grad.iter_mut().for_each(|g| *g = 0.0);

        let (xa, xb) = (l.state(v, 0), l.state(v, steps));
        let mut value = p.endpoint_cost_at(xa, xb)?;
        let gl = p.endpoint_cost_gradient(xa, xb)?;
        for i in 0..n {
            grad[l.x(0) + i] += gl[i];
            grad[l.x(steps) + i] += gl[n + i];
        }

        if p.running_cost.is_some() {
            for m in 0..steps {
                let dt = grid[m + 1] - grid[m];
                let u = l.control(v, m);
                for (node, t) in [(m, grid[m]), (m + 1, grid[m + 1])] {
                    let x = l.state(v, node);
                    value += 0.5 * dt * p.running_cost_at(t, x, u)?;
                    let g = p.running_cost_gradient(t, x, u)?;
                    for i in 0..n {
                        grad[l.x(node) + i] += 0.5 * dt * g[i];
                    }
                    for c in 0..l.control_dim {
                        grad[l.u(m) + c] += 0.5 * dt * g[n + c];
                    }
                }
            }
        }

        let pen = self.nlp.penalty;
        for (m, c) in self.weights.iter().enumerate() {
            value += pen * c * v[self.slack0 + m];
            grad[self.slack0 + m] += pen * c;
        }

        if let (Some(a0), Some(anchor)) = (self.anchor0, &self.nlp.anchor) {
            for m in 0..steps {
                let dt = grid[m + 1] - grid[m];
                for c in 0..l.control_dim {
                    let idx = a0 + m * l.control_dim + c;
                    value += anchor.weight * dt * v[idx];
                    grad[idx] += anchor.weight * dt;
                }
            }
        }
        Ok(value)
    }

    /// Equality rows (defects, then affine endpoint rows) and inequality rows
    /// (general mixed per step, then state epigraph per node, then anchor pairs).
    pub fn constraints(&self, v: &[f64], eq: &mut Rows, ineq: &mut Rows) -> Result<()> {
        eq.clear();
        ineq.clear();
        let l = self.layout;
        let p = &self.nlp.problem;
        let (n, k, steps) = (l.state_dim, l.control_dim, l.n_steps);
        let grid = &self.nlp.grid;

        for m in 0..steps {
            let dt = grid[m + 1] - grid[m];
            let (x, u) = (l.state(v, m), l.control(v, m));
            let f = p.dynamics_at(grid[m], x, u)?;
            let (jx, ju) = p.dynamics_jacobian(grid[m], x, u)?;
            for i in 0..n {
                eq.push(l.state(v, m + 1)[i] - x[i] - dt * f[i]);
                eq.entry(l.x(m + 1) + i, 1.0);
                for j in 0..n {
                    let d = if i == j { 1.0 } else { 0.0 };
                    eq.entry(l.x(m) + j, -d - dt * jx[i][j]);
                }
                for c in 0..k {
                    eq.entry(l.u(m) + c, -dt * ju[i][c]);
                }
            }
        }
        for row in &self.affine {
            let x = l.state(v, row.node);
            eq.push(row.row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - row.rhs);
            for i in 0..n {
                eq.entry(l.x(row.node) + i, row.row[i]);
            }
        }

        if !self.general.is_empty() {
            for m in 0..steps {
                let (x, u) = (l.state(v, m), l.control(v, m));
                let g = p.mixed_values(grid[m], x, u)?;
                let dg = p.mixed_gradients(grid[m], x, u)?;
                for &j in &self.general {
                    ineq.push(g[j]);
                    for i in 0..n {
                        ineq.entry(l.x(m) + i, dg[j][i]);
                    }
                    for c in 0..k {
                        ineq.entry(l.u(m) + c, dg[j][n + c]);
                    }
                }
            }
        }
        for m in 0..=steps {
            let x = l.state(v, m);
            let h = p.state_constraint_at(grid[m], x)?;
            let dh = p.state_constraint_gradient(grid[m], x)?;
            ineq.push(h - v[self.slack0 + m]);
            for i in 0..n {
                ineq.entry(l.x(m) + i, dh[i]);
            }
            ineq.entry(self.slack0 + m, -1.0);
        }
        if let (Some(a0), Some(anchor)) = (self.anchor0, &self.nlp.anchor) {
            for m in 0..steps {
                for c in 0..k {
                    let (ui, ri) = (l.u(m) + c, a0 + m * k + c);
                    let d = v[ui] - anchor.controls[m][c];
                    for sign in [1.0, -1.0] {
                        ineq.push(sign * d - v[ri]);
                        ineq.entry(ui, sign);
                        ineq.entry(ri, -1.0);
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of general mixed rows preceding the epigraph rows.
    pub fn general_rows(&self) -> usize {
        self.general.len() * self.layout.n_steps
    }

    /// Augmented Lagrangian (PHR for the inequalities) and its gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn augmented(
        &self,
        v: &[f64],
        lam: &[f64],
        nu: &[f64],
        rho: f64,
        eq: &mut Rows,
        ineq: &mut Rows,
        grad: &mut Vec<f64>,
    ) -> Result<f64> {
        grad.resize(self.len, 0.0);
        let mut value = self.objective(v, grad)?;
        self.constraints(v, eq, ineq)?;
        for r in 0..eq.len() {
            let c = eq.values[r];
            value += lam[r] * c + 0.5 * rho * c * c;
            let coef = lam[r] + rho * c;
            for (i, a) in eq.row(r) {
                grad[i] += coef * a;
            }
        }
        for r in 0..ineq.len() {
            let g = ineq.values[r];
            let shifted = (g + nu[r] / rho).max(0.0);
            value += 0.5 * rho * (shifted * shifted - (nu[r] / rho).powi(2));
            let coef = rho * shifted;
            if coef != 0.0 {
                for (i, a) in ineq.row(r) {
                    grad[i] += coef * a;
                }
            }
        }
        Ok(value)
    }
}
