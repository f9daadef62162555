//! Weighted distance `U = ½ Σ (z - z*)² / ε` to a closed-loop equilibrium.

use crate::controller::{state_from_solution, ControllerGains, PrimalMode};
use crate::olfc::{OlfcProblem, OlfcSolution};
use crate::Scalar;

use super::{
    oracle_tolerance, reference_solution, run, snapshot, vector_field, ClosedLoopState, Scenario,
    SimError,
};

/// Slack per unit time allowed in the descent check.
pub const LYAPUNOV_SLACK: f64 = 1e-6;
/// Largest closed-loop rate at the oracle point accepted as an equilibrium.
pub const FIXED_POINT_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumSource {
    /// Primal-dual point from the centralized solver.
    Oracle,
    /// The oracle point failed the fixed-point check; the run's own limit is used.
    SelfConsistent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovStats<T> {
    pub source: EquilibriumSource,
    /// Max-norm of the closed-loop vector field at the oracle point.
    pub fixed_point_residual: T,
    pub checked_steps: usize,
    pub violations: usize,
    /// Largest single-step increase of `U` (zero if it never increased).
    pub max_increase: T,
}

impl<T: Scalar> LyapunovStats<T> {
    /// Share of checked steps satisfying the descent condition.
    pub fn descent_fraction(&self) -> f64 {
        if self.checked_steps == 0 {
            1.0
        } else {
            1.0 - self.violations as f64 / self.checked_steps as f64
        }
    }
}

/// `½ Σ (z_j - z*_j)² / ε_j`
pub fn lyapunov_value<T: Scalar>(z: &[T], z_star: &[T], eps: &[T]) -> T {
    let half = T::of(0.5);
    z.iter()
        .zip(z_star)
        .zip(eps)
        .fold(T::zero(), |u, ((&a, &b), &e)| {
            let dz = a - b;
            u + half * dz * dz / e
        })
}

/// Gains paired with [`lyapunov_coordinates`].
pub fn lyapunov_weights<T: Scalar>(
    problem: &OlfcProblem<T>,
    gains: &ControllerGains<T>,
    primal_mode: PrimalMode,
) -> Vec<T> {
    let mut w = Vec::new();
    let dynamic = primal_mode == PrimalMode::Dynamic;
    let n = problem.n_buses();
    if dynamic {
        w.extend((0..n).filter(|&i| problem.electric[i].is_some()).map(|i| gains.eps_d[i]));
        w.extend((0..n).filter(|&i| problem.heat[i].is_some()).map(|i| gains.eps_q[i]));
    }
    w.extend_from_slice(&gains.eps_phi);
    w.extend(problem.topology.lines().iter().map(|l| l.susceptance));
    w.extend((0..n).filter(|&i| problem.topology.is_generator(i)).map(|i| gains.eps_lambda[i]));
    w.extend_from_slice(&gains.eps_mu);
    for i in 0..n {
        if problem.electric[i].is_some() {
            w.extend([gains.eps_gamma; 2]);
        }
        if let Some(h) = &problem.heat[i] {
            w.extend([gains.eps_delta; 2]);
            w.extend(std::iter::repeat_n(gains.eps_zeta, h.chp.upper.len() + h.chp.lower.len()));
        }
    }
    for lim in &problem.line_limits {
        if lim.is_some() {
            w.extend([gains.eps_sigma; 2]);
        }
    }
    w
}

/// Flattens the coordinates entering `U`: primal states, angles, flows,
/// generator frequencies (as `λ`), `μ` and the multipliers of `problem`.
pub fn lyapunov_coordinates<T: Scalar>(
    state: &ClosedLoopState<T>,
    problem: &OlfcProblem<T>,
    scenario: &Scenario<T>,
) -> Vec<T> {
    let snap = snapshot(state, problem, &scenario.gains, &scenario.options);
    let c = &state.ctrl;
    let n = problem.n_buses();
    let mut z = Vec::new();
    if scenario.options.primal_mode == PrimalMode::Dynamic {
        z.extend((0..n).filter(|&i| problem.electric[i].is_some()).map(|i| c.d[i]));
        z.extend((0..n).filter(|&i| problem.heat[i].is_some()).map(|i| c.q[i]));
    }
    z.extend_from_slice(&c.phi);
    z.extend_from_slice(&state.line_flow);
    z.extend((0..n).filter(|&i| problem.topology.is_generator(i)).map(|i| snap.omega[i]));
    z.extend_from_slice(&snap.mu);
    for i in 0..n {
        if problem.electric[i].is_some() {
            z.extend([c.gamma_lower[i], c.gamma_upper[i]]);
        }
        if let Some(h) = &problem.heat[i] {
            z.extend([c.delta_upper[i], c.delta_lower[i]]);
            z.extend(c.zeta_upper[i].iter().take(h.chp.upper.len()));
            z.extend(c.zeta_lower[i].iter().take(h.chp.lower.len()));
        }
    }
    for (l, lim) in problem.line_limits.iter().enumerate() {
        if lim.is_some() {
            z.extend([c.sigma_lower[l], c.sigma_upper[l]]);
        }
    }
    z
}

/// Closed-loop state at a KKT point. Angles are shifted per component so that
/// `Σ φ_i / ε_φ,i` matches the zero initial state (the dynamics conserve it).
pub fn equilibrium_from_solution<T: Scalar>(
    solution: &OlfcSolution<T>,
    problem: &OlfcProblem<T>,
    gains: &ControllerGains<T>,
) -> ClosedLoopState<T> {
    let mut ctrl = state_from_solution(solution, problem, gains);
    let comps = problem.topology.components();
    let n = problem.n_buses();
    for root in 0..n {
        let members: Vec<usize> = (0..n).filter(|&i| comps[i] == root).collect();
        if members.is_empty() {
            continue;
        }
        let (num, den) = members.iter().fold((T::zero(), T::zero()), |(a, b), &i| {
            (a + ctrl.phi[i] / gains.eps_phi[i], b + T::one() / gains.eps_phi[i])
        });
        let shift = num / den;
        for &i in &members {
            ctrl.phi[i] -= shift;
        }
    }
    ClosedLoopState {
        omega: solution.omega.clone(),
        line_flow: solution.line_flow.clone(),
        ctrl,
    }
}

pub(crate) struct Monitor<T> {
    z_star: Vec<T>,
    weights: Vec<T>,
    stats: LyapunovStats<T>,
}

impl<T: Scalar> Monitor<T> {
    fn new(z_star: Vec<T>, weights: Vec<T>, source: EquilibriumSource, residual: T) -> Self {
        Self {
            z_star,
            weights,
            stats: LyapunovStats {
                source,
                fixed_point_residual: residual,
                checked_steps: 0,
                violations: 0,
                max_increase: T::zero(),
            },
        }
    }

    pub fn value(&self, state: &ClosedLoopState<T>, problem: &OlfcProblem<T>, scenario: &Scenario<T>) -> T {
        lyapunov_value(&lyapunov_coordinates(state, problem, scenario), &self.z_star, &self.weights)
    }

    pub fn observe(&mut self, before: T, after: T, h: T) {
        let s = &mut self.stats;
        s.checked_steps += 1;
        let inc = after - before;
        if inc > T::of(LYAPUNOV_SLACK) * h {
            s.violations += 1;
        }
        s.max_increase = s.max_increase.max(inc);
    }

    pub fn stats(self) -> LyapunovStats<T> {
        self.stats
    }
}

/// Builds the monitor for the post-disturbance problem. `None` when the oracle
/// cannot solve it.
pub(crate) fn prepare<T: Scalar>(scenario: &Scenario<T>) -> Result<Option<Monitor<T>>, SimError> {
    let final_problem = scenario.final_problem();
    let controlled = scenario.controlled_problem();
    let tol = oracle_tolerance::<T>();
    let Ok(solution) = reference_solution(&controlled) else {
        return Ok(None);
    };
    let weights = lyapunov_weights(&controlled, &scenario.gains, scenario.options.primal_mode);
    let z = equilibrium_from_solution(&solution, &controlled, &scenario.gains);
    let residual = vector_field(&z, scenario, &final_problem)?.max_abs();
    if residual <= T::of(FIXED_POINT_TOL).max(tol * T::of(100.0)) {
        let z_star = lyapunov_coordinates(&z, &controlled, scenario);
        return Ok(Some(Monitor::new(z_star, weights, EquilibriumSource::Oracle, residual)));
    }
    let limit = run(scenario, None)?;
    let last = limit.last();
    let z = ClosedLoopState {
        omega: last.physical.omega.clone(),
        line_flow: last.physical.line_flow.clone(),
        ctrl: last.ctrl.clone(),
    };
    let z_star = lyapunov_coordinates(&z, &controlled, scenario);
    Ok(Some(Monitor::new(
        z_star,
        weights,
        EquilibriumSource::SelfConsistent,
        residual,
    )))
}
