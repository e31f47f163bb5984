//! Cyclic coordinate descent for `min 1/2 x'Qx - c'x + pen * |x|_1`.
//!
//! Used for the L2-relaxation dual (`Q = Sigma' Sigma`) and for LASSO in
//! gram form (`Q = Sigma`).

use nalgebra::{DMatrix, DVector};

const NEWTON_EVERY: usize = 4;
const NEWTON_REPEATS: usize = 32;

const NULL_CUTOFF: f64 = 1e-10;
const JITTER: f64 = 1e-9;

/// How the curvature matrix `Q` is accessed.
#[derive(Clone, Copy)]
pub(crate) enum Curvature<'a> {
    /// `Q` stored explicitly. State is `Q x`.
    Explicit(&'a DMatrix<f64>),
    /// `Q = S S` for symmetric `S`, never formed. State is `S x`.
    SquaredSym(&'a DMatrix<f64>),
}

impl Curvature<'_> {
    fn dim(&self) -> usize {
        match self {
            Curvature::Explicit(q) | Curvature::SquaredSym(q) => q.nrows(),
        }
    }

    pub(crate) fn diag(&self) -> Vec<f64> {
        match self {
            Curvature::Explicit(q) => q.diagonal().iter().copied().collect(),
            Curvature::SquaredSym(s) => s.column_iter().map(|c| c.norm_squared()).collect(),
        }
    }

    fn col(&self, i: usize) -> &[f64] {
        let m = match self {
            Curvature::Explicit(q) | Curvature::SquaredSym(q) => q,
        };
        let n = m.nrows();
        &m.as_slice()[i * n..(i + 1) * n]
    }

    fn init_state(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut s = vec![0.0; n];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.col(i), &mut s);
            }
        }
        s
    }

    #[inline]
    fn grad(&self, i: usize, state: &[f64]) -> f64 {
        match self {
            Curvature::Explicit(_) => state[i],
            Curvature::SquaredSym(_) => dot(self.col(i), state),
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * k + l] * b[4 * k + l];
        }
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub(crate) fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Sets `x[active] = from + t * step` for the largest `t <= 1` at which no
/// nonzero coordinate has crossed zero; the blocking coordinate is set to
/// exactly zero and its position in `active` returned.
fn move_until_sign_change(
    x: &mut [f64],
    active: &[usize],
    from: &DVector<f64>,
    step: &DVector<f64>,
) -> Option<usize> {
    let mut t = 1.0_f64;
    let mut blocking = None;
    for a in 0..active.len() {
        let (x0, x1) = (from[a], from[a] + step[a]);
        if x0 != 0.0 && x1.signum() != x0.signum() {
            let ta = x0 / (x0 - x1);
            if ta < t {
                t = ta;
                blocking = Some(a);
            }
        }
    }
    for (a, &i) in active.iter().enumerate() {
        x[i] = from[a] + t * step[a];
    }
    if let Some(a) = blocking {
        x[active[a]] = 0.0;
    }
    blocking
}

#[derive(Debug, Clone)]
pub(crate) struct CdOutcome {
    pub x: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

pub(crate) struct CdProblem<'a> {
    pub curvature: Curvature<'a>,
    pub diag: &'a [f64],
    pub linear: &'a [f64],
    pub penalty: f64,
}

impl CdProblem<'_> {
    /// Runs cyclic sweeps in `order` until the largest coordinate change in a
    /// full sweep drops below `tol`. Between full sweeps the nonzero
    /// coordinates are cycled on their own until they settle.
    pub fn solve(
        &self,
        tol: f64,
        max_sweeps: usize,
        warm: Option<&[f64]>,
        order: &[usize],
    ) -> CdOutcome {
        let n = self.linear.len();
        let mut x = match warm {
            Some(w) => w.to_vec(),
            None => vec![0.0; n],
        };
        for (xi, &d) in x.iter_mut().zip(self.diag) {
            if d <= 0.0 {
                *xi = 0.0;
            }
        }
        let mut state = self.curvature.init_state(&x);
        let mut sweeps = 0;
        let mut active: Vec<usize> = Vec::with_capacity(n);
        loop {
            let change = self.sweep(&mut x, &mut state, order.iter().copied());
            sweeps += 1;
            if change < tol {
                return CdOutcome {
                    x,
                    sweeps,
                    converged: true,
                };
            }
            if sweeps >= max_sweeps {
                return CdOutcome {
                    x,
                    sweeps,
                    converged: false,
                };
            }
            active.clear();
            active.extend(order.iter().copied().filter(|&i| x[i] != 0.0));
            let mut inner = 0;
            loop {
                let change = self.sweep(&mut x, &mut state, active.iter().copied());
                sweeps += 1;
                inner += 1;
                if sweeps >= max_sweeps {
                    return CdOutcome {
                        x,
                        sweeps,
                        converged: false,
                    };
                }
                if change < tol {
                    break;
                }
                if inner % NEWTON_EVERY == 0 {
                    active.retain(|&i| x[i] != 0.0);
                    if self.newton(&mut x, &mut active) {
                        state = self.curvature.init_state(&x);
                        active.retain(|&i| x[i] != 0.0);
                    }
                }
            }
        }
    }

    fn restricted_curvature(&self, active: &[usize]) -> DMatrix<f64> {
        let k = active.len();
        DMatrix::from_fn(k, k, |a, b| {
            let (i, j) = (active[a], active[b]);
            match self.curvature {
                Curvature::Explicit(m) => m[(i, j)],
                Curvature::SquaredSym(_) => dot(self.curvature.col(i), self.curvature.col(j)),
            }
        })
    }

    fn restricted_rhs(&self, x: &[f64], active: &[usize]) -> DVector<f64> {
        DVector::from_fn(active.len(), |a, _| {
            let i = active[a];
            self.linear[i] - self.penalty * x[i].signum()
        })
    }

    /// Objective restricted to `active`, valid when every nonzero of `x` is
    /// in `active`.
    fn restricted_objective(&self, x: &[f64], active: &[usize], q: &DMatrix<f64>) -> f64 {
        let v = DVector::from_fn(active.len(), |a, _| x[active[a]]);
        let lin: f64 = active
            .iter()
            .map(|&i| self.linear[i] * x[i] - self.penalty * x[i].abs())
            .sum();
        0.5 * v.dot(&(q * &v)) - lin
    }

    /// Active-set steps: with the signs of the nonzero coordinates held fixed
    /// the objective is quadratic on `active`. Each step moves from `x`
    /// toward that quadratic's minimizer and stops where the first coordinate
    /// would change sign; the blocking coordinate then leaves the set and the
    /// step repeats on a downdated factorization. A step that fails to lower
    /// the objective (possible when the curvature is singular and had to be
    /// regularized) is undone. Returns whether `x` moved.
    fn newton(&self, x: &mut [f64], active: &mut Vec<usize>) -> bool {
        if active.is_empty() {
            return false;
        }
        let q = self.restricted_curvature(active);
        let start: Vec<f64> = active.iter().map(|&i| x[i]).collect();
        let before = self.restricted_objective(x, active, &q);
        let support = active.clone();
        let restore = |x: &mut [f64], active: &mut Vec<usize>| {
            for (&i, &v) in support.iter().zip(&start) {
                x[i] = v;
            }
            *active = support.clone();
        };
        let k = active.len();
        let top = q.diagonal().amax();
        let jitter = || (q.clone() + DMatrix::identity(k, k) * (JITTER * top)).cholesky();
        if let Some(mut chol) = q.clone().cholesky().or_else(jitter) {
            let mut moved = false;
            for _ in 0..NEWTON_REPEATS {
                let rhs = self.restricted_rhs(x, active);
                let target = chol.solve(&rhs);
                if target.iter().any(|v| !v.is_finite()) {
                    break;
                }
                let current = DVector::from_fn(active.len(), |a, _| x[active[a]]);
                moved = true;
                match move_until_sign_change(x, active, &current, &(&target - &current)) {
                    Some(pos) if active.len() > 1 => {
                        active.remove(pos);
                        chol = chol.remove_column(pos);
                    }
                    _ => break,
                }
            }
            if moved && self.restricted_objective(x, &support, &q) < before {
                return true;
            }
            restore(x, active);
        }
        if self.null_space_step(x, active, q.clone())
            && self.restricted_objective(x, &support, &q) < before
        {
            return true;
        }
        restore(x, active);
        false
    }

    /// Fallback for a singular restricted curvature: minimize over its range
    /// (keeping the null-space part of `x`), then descend along the null
    /// space, where the objective is linear, until a coordinate reaches zero.
    fn null_space_step(&self, x: &mut [f64], active: &[usize], q: DMatrix<f64>) -> bool {
        let k = active.len();
        let rhs = self.restricted_rhs(x, active);
        let current = DVector::from_fn(k, |a, _| x[active[a]]);
        let eig = q.symmetric_eigen();
        let top = eig.eigenvalues.amax();
        if !(top > 0.0) {
            return false;
        }
        let mut target = DVector::zeros(k);
        let mut null_dir = DVector::zeros(k);
        for (j, &lam) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(j);
            if lam > NULL_CUTOFF * top {
                target.axpy(v.dot(&rhs) / lam, &v, 1.0);
            } else {
                target.axpy(v.dot(&current), &v, 1.0);
                null_dir.axpy(v.dot(&rhs), &v, 1.0);
            }
        }
        if target.iter().any(|v| !v.is_finite()) {
            return false;
        }
        if move_until_sign_change(x, active, &current, &(&target - &current)).is_some() {
            return true;
        }
        if null_dir.amax() > NULL_CUTOFF * rhs.amax().max(f64::MIN_POSITIVE) {
            let here = DVector::from_fn(k, |a, _| x[active[a]]);
            let scale = null_dir
                .iter()
                .zip(here.iter())
                .filter(|(d, xi)| **xi != 0.0 && **d != 0.0 && d.signum() != xi.signum())
                .map(|(d, xi)| -xi / d)
                .fold(f64::INFINITY, f64::min);
            if scale.is_finite() {
                move_until_sign_change(x, active, &here, &(null_dir * (scale * 1.000_001)));
            }
        }
        true
    }

    fn sweep(&self, x: &mut [f64], state: &mut [f64], coords: impl Iterator<Item = usize>) -> f64 {
        let mut max_change = 0.0_f64;
        for i in coords {
            let qi = self.diag[i];
            if qi <= 0.0 {
                continue;
            }
            let xi = x[i];
            let g = self.curvature.grad(i, state) - qi * xi;
            let new = soft_threshold(self.linear[i] - g, self.penalty) / qi;
            let d = new - xi;
            if d != 0.0 {
                x[i] = new;
                axpy(d, self.curvature.col(i), state);
                max_change = max_change.max(d.abs());
            }
        }
        max_change
    }

    #[cfg(test)]
    pub fn objective(&self, x: &[f64]) -> f64 {
        let s = self.curvature.init_state(x);
        let quad = match self.curvature {
            Curvature::Explicit(_) => dot(x, &s),
            Curvature::SquaredSym(_) => dot(&s, &s),
        };
        0.5 * quad - dot(self.linear, x) + self.penalty * x.iter().map(|v| v.abs()).sum::<f64>()
    }
}
