//! The optimal load-side frequency control problem.
//!
//! ```text
//! min  Σ_i C_e,i(d_i) + C_h,i(q_i) + ½ D_i ω_i²
//! s.t. P_i^in - d_i - D_i ω_i - (C P)_i          = 0     (λ_i)
//!      P_i^in - d_i - (C B Cᵀ φ)_i               = 0     (μ_i)
//!      q_i <= k_m d_i + b_m,  m ∈ K+                     (ζ_i^m)
//!      q_i >= k_n d_i + b_n,  n ∈ K-                     (ζ_i^n)
//!      d_lo <= d_i <= d_hi                               (γ_lo, γ_hi)
//!      Qv_lo <= Q_i^in - q_i <= Qv_hi                    (δ_lo, δ_hi)
//!      P_lo <= B_ij (φ_i - φ_j) <= P_hi                  (σ_lo, σ_hi)
//! ```
//!
//! Every inequality multiplier enters the Lagrangian as `+ mult * g(x)` with the
//! constraint written `g(x) <= 0`. The virtual balance row carries no damping
//! term, so any optimum restores every frequency deviation to zero.
//!
//! Buses without an electric unit keep `d_i = 0`; buses without a heat unit keep
//! `q_i = Q_i^in` and contribute no heat cost.

mod oracle;
mod qp;

pub use oracle::{centralized_solve, OracleError};

use thiserror::Error;

use crate::network::{net_line_injection, BusId, BusPhysicalParams, NetworkTopology};
use crate::Scalar;

/// Quadratic cost `C(x) = (a/2) x² + b x` with `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostFunction<T> {
    pub quadratic: T,
    pub linear: T,
}

impl<T: Scalar> CostFunction<T> {
    pub fn new(quadratic: T, linear: T) -> Self {
        Self { quadratic, linear }
    }

    pub fn value(&self, x: T) -> T {
        T::of(0.5) * self.quadratic * x * x + self.linear * x
    }

    pub fn derivative(&self, x: T) -> T {
        self.quadratic * x + self.linear
    }

    /// `(C')⁻¹(y)`.
    pub fn derivative_inverse(&self, y: T) -> T {
        (y - self.linear) / self.quadratic
    }

    /// Lipschitz constant of `C'`, which is also its strong-convexity modulus.
    pub fn curvature(&self) -> T {
        self.quadratic
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            quadratic: self.quadratic * factor,
            linear: self.linear * factor,
        }
    }
}

/// Half-plane boundary `q = slope * d + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane<T> {
    pub slope: T,
    pub intercept: T,
}

impl<T: Scalar> HalfPlane<T> {
    pub fn new(slope: T, intercept: T) -> Self {
        Self { slope, intercept }
    }

    #[inline]
    pub fn at(&self, d: T) -> T {
        self.slope * d + self.intercept
    }
}

/// CHP feasible region as an intersection of half-planes in the `(d, q)` plane.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChpRegion<T> {
    /// `q <= k_m d + b_m`
    pub upper: Vec<HalfPlane<T>>,
    /// `q >= k_n d + b_n`
    pub lower: Vec<HalfPlane<T>>,
}

impl<T: Scalar> ChpRegion<T> {
    pub fn is_empty(&self) -> bool {
        self.upper.is_empty() && self.lower.is_empty()
    }

    /// Largest half-plane violation at `(d, q)`, zero when inside.
    pub fn violation(&self, d: T, q: T) -> T {
        let up = self.upper.iter().map(|h| q - h.at(d));
        let lo = self.lower.iter().map(|h| h.at(d) - q);
        up.chain(lo).fold(T::zero(), T::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChpCheck<T> {
    pub feasible: bool,
    pub violation: T,
}

pub fn chp_feasible<T: Scalar>(region: &ChpRegion<T>, d: T, q: T, tol: T) -> ChpCheck<T> {
    let violation = region.violation(d, q);
    ChpCheck {
        feasible: violation <= tol,
        violation,
    }
}

/// Controllable electric load at a bus.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectricUnit<T> {
    pub cost: CostFunction<T>,
    pub bounds: (T, T),
}

/// Controllable heat load at a bus, optionally coupled to `d` by a CHP region.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatUnit<T> {
    pub cost: CostFunction<T>,
    pub chp: ChpRegion<T>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("bus {bus}: {which} cost must have positive quadratic coefficient, got {value}")]
    NonConvexCost {
        bus: BusId,
        which: &'static str,
        value: f64,
    },
    #[error("bus {bus}: d bounds [{lo}, {hi}] are empty")]
    EmptyDemandBounds { bus: BusId, lo: f64, hi: f64 },
    #[error("line {line}: flow bounds [{lo}, {hi}] are empty")]
    EmptyLineBounds { line: String, lo: f64, hi: f64 },
    #[error("{what}: expected {expected} entries, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlfcProblem<T> {
    pub topology: NetworkTopology<T>,
    pub buses: Vec<BusPhysicalParams<T>>,
    pub electric: Vec<Option<ElectricUnit<T>>>,
    pub heat: Vec<Option<HeatUnit<T>>>,
    /// Optional `[lower, upper]` limits on each line's virtual flow.
    pub line_limits: Vec<Option<(T, T)>>,
}

impl<T: Scalar> OlfcProblem<T> {
    pub fn n_buses(&self) -> usize {
        self.topology.n_buses()
    }

    pub fn n_lines(&self) -> usize {
        self.topology.n_lines()
    }

    pub fn validate(&self) -> Vec<ProblemError> {
        let mut errs = Vec::new();
        let n = self.n_buses();
        for (what, got) in [
            ("bus parameters", self.buses.len()),
            ("electric units", self.electric.len()),
            ("heat units", self.heat.len()),
        ] {
            if got != n {
                errs.push(ProblemError::Length {
                    what,
                    expected: n,
                    got,
                });
            }
        }
        if self.line_limits.len() != self.n_lines() {
            errs.push(ProblemError::Length {
                what: "line limits",
                expected: self.n_lines(),
                got: self.line_limits.len(),
            });
        }
        if !errs.is_empty() {
            return errs;
        }
        for i in 0..n {
            let bus = self.topology.bus_id(i);
            if let Some(e) = &self.electric[i] {
                if !e.cost.quadratic.is_strictly_positive() {
                    errs.push(ProblemError::NonConvexCost {
                        bus,
                        which: "electric",
                        value: e.cost.quadratic.as_f64(),
                    });
                }
                if e.bounds.0 > e.bounds.1 || e.bounds.0.is_nan() || e.bounds.1.is_nan() {
                    errs.push(ProblemError::EmptyDemandBounds {
                        bus,
                        lo: e.bounds.0.as_f64(),
                        hi: e.bounds.1.as_f64(),
                    });
                }
            }
            if let Some(h) = &self.heat[i] {
                if !h.cost.quadratic.is_strictly_positive() {
                    errs.push(ProblemError::NonConvexCost {
                        bus,
                        which: "heat",
                        value: h.cost.quadratic.as_f64(),
                    });
                }
            }
        }
        for (l, lim) in self.line_limits.iter().enumerate() {
            if let Some((lo, hi)) = lim {
                if lo > hi || lo.is_nan() || hi.is_nan() {
                    errs.push(ProblemError::EmptyLineBounds {
                        line: self.topology.line_name(l),
                        lo: lo.as_f64(),
                        hi: hi.as_f64(),
                    });
                }
            }
        }
        errs
    }

    /// Lipschitz constant of every cost derivative (largest quadratic coefficient).
    pub fn lipschitz(&self) -> T {
        self.costs().fold(T::zero(), |m, c| m.max(c.curvature()))
    }

    /// Strong-convexity modulus shared by all costs (smallest quadratic coefficient).
    pub fn strong_convexity(&self) -> T {
        self.costs().fold(T::infinity(), |m, c| m.min(c.curvature()))
    }

    fn costs(&self) -> impl Iterator<Item = &CostFunction<T>> {
        self.electric
            .iter()
            .flatten()
            .map(|e| &e.cost)
            .chain(self.heat.iter().flatten().map(|h| &h.cost))
    }

    pub fn min_damping(&self) -> T {
        self.buses
            .iter()
            .fold(T::infinity(), |m, b| m.min(b.damping))
    }

    /// Same problem with every CHP coupling removed.
    pub fn without_chp(&self) -> Self {
        let mut p = self.clone();
        for h in p.heat.iter_mut().flatten() {
            h.chp = ChpRegion::default();
        }
        p
    }

    /// Same problem with every cost multiplied by `factor`.
    pub fn with_costs_scaled(&self, factor: T) -> Self {
        let mut p = self.clone();
        for e in p.electric.iter_mut().flatten() {
            e.cost = e.cost.scaled(factor);
        }
        for h in p.heat.iter_mut().flatten() {
            h.cost = h.cost.scaled(factor);
        }
        p
    }

    pub fn has_chp(&self) -> bool {
        self.heat.iter().flatten().any(|h| !h.chp.is_empty())
    }

    /// Virtual flows `B_ij (φ_i - φ_j)` per line.
    pub fn virtual_flows(&self, phi: &[T]) -> Vec<T> {
        self.topology
            .lines()
            .iter()
            .map(|l| l.susceptance * (phi[l.from] - phi[l.to]))
            .collect()
    }

    /// Worst violation of each constraint family at a primal point.
    pub fn violations(&self, d: &[T], q: &[T], phi: &[T]) -> ConstraintViolations<T> {
        let mut v = ConstraintViolations::<T>::default();
        for i in 0..self.n_buses() {
            if let Some(e) = &self.electric[i] {
                v.demand_bounds = v
                    .demand_bounds
                    .max(e.bounds.0 - d[i])
                    .max(d[i] - e.bounds.1);
            }
            if let Some(h) = &self.heat[i] {
                v.chp = v.chp.max(h.chp.violation(d[i], q[i]));
                let (lo, hi) = self.buses[i].heat_buffer_bounds;
                let buf = self.buses[i].heat_injection - q[i];
                v.heat_buffer = v.heat_buffer.max(lo - buf).max(buf - hi);
            }
        }
        for (l, f) in self.virtual_flows(phi).into_iter().enumerate() {
            if let Some((lo, hi)) = self.line_limits[l] {
                v.line_flow = v.line_flow.max(lo - f).max(f - hi);
            }
        }
        v
    }
}

/// Largest violation per constraint family, zero when satisfied.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConstraintViolations<T> {
    pub chp: T,
    pub demand_bounds: T,
    pub heat_buffer: T,
    pub line_flow: T,
}

impl<T: Scalar> ConstraintViolations<T> {
    pub fn max(&self) -> T {
        self.chp
            .max(self.demand_bounds)
            .max(self.heat_buffer)
            .max(self.line_flow)
    }
}

/// Dual variables, one entry per bus (per line for `sigma_*`). Entries for
/// constraints a bus does not have are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers<T> {
    pub lambda: Vec<T>,
    pub mu: Vec<T>,
    pub zeta_upper: Vec<Vec<T>>,
    pub zeta_lower: Vec<Vec<T>>,
    pub gamma_lower: Vec<T>,
    pub gamma_upper: Vec<T>,
    pub delta_lower: Vec<T>,
    pub delta_upper: Vec<T>,
    pub sigma_lower: Vec<T>,
    pub sigma_upper: Vec<T>,
}

impl<T: Scalar> Multipliers<T> {
    pub fn zeros(problem: &OlfcProblem<T>) -> Self {
        let n = problem.n_buses();
        let m = problem.n_lines();
        let chp = |f: fn(&ChpRegion<T>) -> usize| -> Vec<Vec<T>> {
            problem
                .heat
                .iter()
                .map(|h| vec![T::zero(); h.as_ref().map_or(0, |h| f(&h.chp))])
                .collect()
        };
        Self {
            lambda: vec![T::zero(); n],
            mu: vec![T::zero(); n],
            zeta_upper: chp(|c| c.upper.len()),
            zeta_lower: chp(|c| c.lower.len()),
            gamma_lower: vec![T::zero(); n],
            gamma_upper: vec![T::zero(); n],
            delta_lower: vec![T::zero(); n],
            delta_upper: vec![T::zero(); n],
            sigma_lower: vec![T::zero(); m],
            sigma_upper: vec![T::zero(); m],
        }
    }

    /// All sign-constrained multipliers, flattened.
    pub fn inequality_values(&self) -> impl Iterator<Item = T> + '_ {
        self.zeta_upper
            .iter()
            .chain(&self.zeta_lower)
            .flatten()
            .chain(&self.gamma_lower)
            .chain(&self.gamma_upper)
            .chain(&self.delta_lower)
            .chain(&self.delta_upper)
            .chain(&self.sigma_lower)
            .chain(&self.sigma_upper)
            .copied()
    }
}

/// Primal-dual point of the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OlfcSolution<T> {
    pub omega: Vec<T>,
    pub d: Vec<T>,
    pub q: Vec<T>,
    pub line_flow: Vec<T>,
    /// Virtual angles, zero at the lowest-index bus of each component.
    pub phi: Vec<T>,
    pub objective: T,
    pub multipliers: Multipliers<T>,
}

pub fn objective<T: Scalar>(problem: &OlfcProblem<T>, omega: &[T], d: &[T], q: &[T]) -> T {
    let mut f = T::zero();
    for i in 0..problem.n_buses() {
        if let Some(e) = &problem.electric[i] {
            f += e.cost.value(d[i]);
        }
        if let Some(h) = &problem.heat[i] {
            f += h.cost.value(q[i]);
        }
        f += T::of(0.5) * problem.buses[i].damping * omega[i] * omega[i];
    }
    f
}

/// Max-norms of the four KKT blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual<T> {
    pub stationarity: T,
    pub primal_infeasibility: T,
    pub dual_infeasibility: T,
    pub complementarity: T,
}

impl<T: Scalar> KktResidual<T> {
    pub fn max(&self) -> T {
        self.stationarity
            .max(self.primal_infeasibility)
            .max(self.dual_infeasibility)
            .max(self.complementarity)
    }
}

/// Assembles the gradient of the Lagrangian in `(ω, d, q, P, φ)`, the constraint
/// residuals, multiplier signs and complementary slackness at `candidate`.
pub fn kkt_residual<T: Scalar>(problem: &OlfcProblem<T>, candidate: &OlfcSolution<T>) -> KktResidual<T> {
    let topo = &problem.topology;
    let mult = &candidate.multipliers;
    let (n, m) = (problem.n_buses(), problem.n_lines());
    let OlfcSolution {
        omega, d, q, phi, ..
    } = candidate;

    let mut stat = T::zero();
    let mut primal = T::zero();
    let mut comp = T::zero();
    let track = |slot: &mut T, v: T| *slot = slot.max(v.abs());

    // g(x) <= 0 with multiplier `y`: contributes to primal infeasibility and complementarity.
    let inequality = |g: T, y: T, primal: &mut T, comp: &mut T| {
        *primal = primal.max(g);
        *comp = comp.max((y * g).abs());
    };

    for i in 0..n {
        let p = &problem.buses[i];
        track(&mut stat, p.damping * (omega[i] - mult.lambda[i]));

        if let Some(e) = &problem.electric[i] {
            let mut g = e.cost.derivative(d[i]) - mult.lambda[i] - mult.mu[i]
                - mult.gamma_lower[i]
                + mult.gamma_upper[i];
            if let Some(h) = &problem.heat[i] {
                for (k, hp) in h.chp.upper.iter().enumerate() {
                    g -= mult.zeta_upper[i][k] * hp.slope;
                }
                for (k, hp) in h.chp.lower.iter().enumerate() {
                    g += mult.zeta_lower[i][k] * hp.slope;
                }
            }
            track(&mut stat, g);
            inequality(e.bounds.0 - d[i], mult.gamma_lower[i], &mut primal, &mut comp);
            inequality(d[i] - e.bounds.1, mult.gamma_upper[i], &mut primal, &mut comp);
        }

        if let Some(h) = &problem.heat[i] {
            let mut g = h.cost.derivative(q[i]) - mult.delta_upper[i] + mult.delta_lower[i];
            for (k, hp) in h.chp.upper.iter().enumerate() {
                g += mult.zeta_upper[i][k];
                inequality(q[i] - hp.at(d[i]), mult.zeta_upper[i][k], &mut primal, &mut comp);
            }
            for (k, hp) in h.chp.lower.iter().enumerate() {
                g -= mult.zeta_lower[i][k];
                inequality(hp.at(d[i]) - q[i], mult.zeta_lower[i][k], &mut primal, &mut comp);
            }
            track(&mut stat, g);
            let (lo, hi) = p.heat_buffer_bounds;
            let buf = p.heat_injection - q[i];
            inequality(buf - hi, mult.delta_upper[i], &mut primal, &mut comp);
            inequality(lo - buf, mult.delta_lower[i], &mut primal, &mut comp);
        }

        let physical = p.electric_injection
            - d[i]
            - p.damping * omega[i]
            - net_line_injection(i, &candidate.line_flow, topo);
        primal = primal.max(physical.abs());
    }

    let virt = problem.virtual_flows(phi);
    for i in 0..n {
        let balance =
            problem.buses[i].electric_injection - d[i] - net_line_injection(i, &virt, topo);
        primal = primal.max(balance.abs());
    }

    let mut phi_grad = vec![T::zero(); n];
    for l in 0..m {
        let line = topo.line(l);
        let (f, t) = (line.from, line.to);
        track(&mut stat, mult.lambda[t] - mult.lambda[f]);
        let w = line.susceptance
            * (mult.mu[f] - mult.mu[t] + mult.sigma_lower[l] - mult.sigma_upper[l]);
        phi_grad[f] -= w;
        phi_grad[t] += w;
        if let Some((lo, hi)) = problem.line_limits[l] {
            inequality(lo - virt[l], mult.sigma_lower[l], &mut primal, &mut comp);
            inequality(virt[l] - hi, mult.sigma_upper[l], &mut primal, &mut comp);
        }
    }
    for g in phi_grad {
        track(&mut stat, g);
    }

    let dual = mult
        .inequality_values()
        .fold(T::zero(), |m, y| m.max(-y));

    KktResidual {
        stationarity: stat,
        primal_infeasibility: primal.max(T::zero()),
        dual_infeasibility: dual,
        complementarity: comp,
    }
}

#[cfg(test)]
mod tests;
