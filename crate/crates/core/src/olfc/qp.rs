//! Small dense convex QP with separable objective:
//!
//! ```text
//! min ½ Σ h_j x_j² + cᵀx   s.t.  A x = b,  G x <= g
//! ```
//!
//! Solved with a proximal method of multipliers. Each inner subproblem is a
//! strongly convex piecewise quadratic, minimised by semismooth Newton with an
//! Armijo backtrack. Multipliers follow the `f + yᵀ(Ax - b) + zᵀ(Gx - g)` sign
//! convention.

use crate::linalg::Dense;
use crate::Scalar;

#[derive(Debug, Clone)]
pub(crate) struct Qp<T> {
    pub hdiag: Vec<T>,
    pub c: Vec<T>,
    pub a: Vec<Vec<T>>,
    pub b: Vec<T>,
    pub g: Vec<Vec<T>>,
    pub gb: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct QpSolution<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub z: Vec<T>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum QpFailure<T> {
    NonConvergence(usize),
    /// Minimum achievable constraint violation is bounded away from zero.
    Infeasible(T),
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Inner subproblem data: penalty, multiplier shifts and prox centre.
struct Inner<'a, T> {
    qp: &'a Qp<T>,
    rho: T,
    y: &'a [T],
    z: &'a [T],
    center: &'a [T],
    prox: T,
    with_objective: bool,
}

impl<T: Scalar> Inner<'_, T> {
    fn eq_shift(&self, x: &[T], i: usize) -> T {
        dot(&self.qp.a[i], x) - self.qp.b[i] + self.y[i] / self.rho
    }

    fn ineq_shift(&self, x: &[T], i: usize) -> T {
        (dot(&self.qp.g[i], x) - self.qp.gb[i] + self.z[i] / self.rho).max(T::zero())
    }

    fn value(&self, x: &[T]) -> T {
        let half = T::of(0.5);
        let mut v = T::zero();
        if self.with_objective {
            for j in 0..x.len() {
                v += half * self.qp.hdiag[j] * x[j] * x[j] + self.qp.c[j] * x[j];
            }
        }
        for i in 0..self.qp.a.len() {
            let s = self.eq_shift(x, i);
            v += half * self.rho * s * s;
        }
        for i in 0..self.qp.g.len() {
            let s = self.ineq_shift(x, i);
            v += half * self.rho * s * s;
        }
        for j in 0..x.len() {
            let dx = x[j] - self.center[j];
            v += half * dx * dx / self.prox;
        }
        v
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        let n = x.len();
        let mut grad: Vec<T> = (0..n)
            .map(|j| (x[j] - self.center[j]) / self.prox)
            .collect();
        if self.with_objective {
            for j in 0..n {
                grad[j] += self.qp.hdiag[j] * x[j] + self.qp.c[j];
            }
        }
        for i in 0..self.qp.a.len() {
            let s = self.rho * self.eq_shift(x, i);
            for (gj, &aij) in grad.iter_mut().zip(&self.qp.a[i]) {
                *gj += s * aij;
            }
        }
        for i in 0..self.qp.g.len() {
            let s = self.rho * self.ineq_shift(x, i);
            if s > T::zero() {
                for (gj, &gij) in grad.iter_mut().zip(&self.qp.g[i]) {
                    *gj += s * gij;
                }
            }
        }
        grad
    }

    fn hessian(&self, x: &[T]) -> Dense<T> {
        let n = x.len();
        let mut h = Dense::zeros(n);
        for j in 0..n {
            *h.at(j, j) = T::one() / self.prox
                + if self.with_objective {
                    self.qp.hdiag[j]
                } else {
                    T::zero()
                };
        }
        let mut add_row = |row: &[T]| {
            for (j, &rj) in row.iter().enumerate() {
                if rj == T::zero() {
                    continue;
                }
                for (k, &rk) in row.iter().enumerate() {
                    *h.at(j, k) += self.rho * rj * rk;
                }
            }
        };
        for row in &self.qp.a {
            add_row(row);
        }
        for (i, row) in self.qp.g.iter().enumerate() {
            if self.ineq_shift(x, i) > T::zero() {
                add_row(row);
            }
        }
        h
    }

    /// Semismooth Newton from `x`; returns the approximate minimiser.
    fn minimize(&self, mut x: Vec<T>, tol: T) -> Vec<T> {
        for _ in 0..200 {
            let grad = self.gradient(&x);
            let gnorm = grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));
            if gnorm <= tol {
                break;
            }
            let mut step: Vec<T> = grad.iter().map(|&g| -g).collect();
            if !self.hessian(&x).cholesky_solve(&mut step) {
                step = grad.iter().map(|&g| -g * self.prox).collect();
            }
            let f0 = self.value(&x);
            let slope = dot(&grad, &step);
            let mut t = T::one();
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<T> = x.iter().zip(&step).map(|(&xi, &si)| xi + t * si).collect();
                if self.value(&trial) <= f0 + T::of(1e-4) * t * slope {
                    x = trial;
                    accepted = true;
                    break;
                }
                t *= T::of(0.5);
            }
            if !accepted {
                break;
            }
        }
        x
    }
}

impl<T: Scalar> Qp<T> {
    pub fn n_vars(&self) -> usize {
        self.hdiag.len()
    }

    fn primal_residual(&self, x: &[T]) -> T {
        let eq = (0..self.a.len()).map(|i| (dot(&self.a[i], x) - self.b[i]).abs());
        let ineq = (0..self.g.len()).map(|i| dot(&self.g[i], x) - self.gb[i]);
        eq.chain(ineq).fold(T::zero(), T::max)
    }

    fn dual_residual(&self, x: &[T], y: &[T], z: &[T]) -> T {
        let mut grad: Vec<T> = (0..x.len())
            .map(|j| self.hdiag[j] * x[j] + self.c[j])
            .collect();
        for (row, &yi) in self.a.iter().zip(y) {
            for (gj, &aij) in grad.iter_mut().zip(row) {
                *gj += yi * aij;
            }
        }
        for (row, &zi) in self.g.iter().zip(z) {
            for (gj, &gij) in grad.iter_mut().zip(row) {
                *gj += zi * gij;
            }
        }
        grad.iter().fold(T::zero(), |m, g| m.max(g.abs()))
    }

    fn complementarity(&self, x: &[T], z: &[T]) -> T {
        (0..self.g.len())
            .map(|i| (z[i] * (dot(&self.g[i], x) - self.gb[i])).abs())
            .fold(T::zero(), T::max)
    }

    fn max_penalty() -> T {
        T::one() / T::epsilon().sqrt()
    }

    /// Least-squares feasibility search. Returns a feasible point, or the
    /// irreducible violation if the constraint set is empty.
    pub fn phase1(&self, tol: T) -> Result<Vec<T>, QpFailure<T>> {
        let n = self.n_vars();
        let y = vec![T::zero(); self.a.len()];
        let z = vec![T::zero(); self.g.len()];
        let mut x = vec![T::zero(); n];
        let threshold = (tol * T::of(100.0)).max(T::epsilon().sqrt());
        for _ in 0..500 {
            let inner = Inner {
                qp: self,
                rho: T::one(),
                y: &y,
                z: &z,
                center: &x,
                prox: T::of(1e4),
                with_objective: false,
            };
            let next = inner.minimize(x.clone(), T::epsilon() * T::of(100.0));
            let moved = next
                .iter()
                .zip(&x)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
            x = next;
            let viol = self.primal_residual(&x);
            if viol <= tol {
                return Ok(x);
            }
            if moved <= T::epsilon() * T::of(10.0) {
                break;
            }
        }
        let viol = self.primal_residual(&x);
        if viol <= threshold {
            Ok(x)
        } else {
            Err(QpFailure::Infeasible(viol))
        }
    }

    pub fn solve(&self, x0: Vec<T>, tol: T, max_iter: usize) -> Result<QpSolution<T>, QpFailure<T>> {
        let mut x = x0;
        let mut y = vec![T::zero(); self.a.len()];
        let mut z = vec![T::zero(); self.g.len()];
        let mut rho = T::of(10.0);
        let prox = T::of(100.0);
        let mut last_primal = T::infinity();
        for it in 1..=max_iter {
            let inner_tol = (tol * T::of(1e-3)).max(T::epsilon() * T::of(100.0));
            let inner = Inner {
                qp: self,
                rho,
                y: &y,
                z: &z,
                center: &x,
                prox,
                with_objective: true,
            };
            x = inner.minimize(x.clone(), inner_tol);
            for i in 0..self.a.len() {
                y[i] += rho * (dot(&self.a[i], &x) - self.b[i]);
            }
            for i in 0..self.g.len() {
                z[i] = (z[i] + rho * (dot(&self.g[i], &x) - self.gb[i])).max(T::zero());
            }
            let primal = self.primal_residual(&x);
            let dual = self.dual_residual(&x, &y, &z);
            let comp = self.complementarity(&x, &z);
            if primal <= tol && dual <= tol && comp <= tol {
                return Ok(QpSolution {
                    x,
                    y,
                    z,
                    iterations: it,
                });
            }
            if primal > T::of(0.25) * last_primal && rho < Self::max_penalty() {
                rho = (rho * T::of(10.0)).min(Self::max_penalty());
            }
            last_primal = primal;
        }
        Err(QpFailure::NonConvergence(max_iter))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constrained_projection() {
        // min ½(x-2)² + ½(y+1)² s.t. x + y = 0.5, x <= 1
        let qp: Qp<f64> = Qp {
            hdiag: vec![1.0, 1.0],
            c: vec![-2.0, 1.0],
            a: vec![vec![1.0, 1.0]],
            b: vec![0.5],
            g: vec![vec![1.0, 0.0]],
            gb: vec![1.0],
        };
        let sol = qp.solve(vec![0.0, 0.0], 1e-10, 200).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-8);
        assert!((sol.x[1] + 0.5).abs() < 1e-8);
        // stationarity: x - 2 + y0 + z0 = 0, y + 1 + y0 = 0
        assert!((sol.y[0] + 0.5).abs() < 1e-7);
        assert!((sol.z[0] - 1.5).abs() < 1e-7);
    }

    #[test]
    fn detects_empty_set() {
        let qp: Qp<f64> = Qp {
            hdiag: vec![1.0],
            c: vec![0.0],
            a: vec![],
            b: vec![],
            g: vec![vec![1.0], vec![-1.0]],
            gb: vec![0.15, -0.2],
        };
        match qp.phase1(1e-8) {
            Err(QpFailure::Infeasible(v)) => assert!((v - 0.025).abs() < 1e-6),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn singular_directions_are_handled() {
        // x2 free and absent from the objective: only the prox term fixes it.
        let qp: Qp<f64> = Qp {
            hdiag: vec![1.0, 0.0],
            c: vec![-1.0, 0.0],
            a: vec![vec![1.0, 0.0]],
            b: vec![0.3],
            g: vec![],
            gb: vec![],
        };
        let sol = qp.solve(vec![0.0, 0.0], 1e-10, 200).unwrap();
        assert!((sol.x[0] - 0.3).abs() < 1e-9);
        assert!(sol.x[1].abs() < 1e-9);
    }
}
