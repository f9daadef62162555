use crate::network::net_line_injection;
use crate::olfc::{kkt_residual, ConstraintViolations, KktResidual, OlfcProblem, OlfcSolution};
use crate::scalar::max_abs;
use crate::Scalar;

use super::{LyapunovStats, Trajectory};

/// Tail `max |ω|` below which a run counts as converged.
pub const OMEGA_TOL: f64 = 1e-4;
/// Per-coordinate primal distance to the oracle below which a run counts as converged.
pub const PRIMAL_TOL: f64 = 1e-3;
/// Frequency band used for settling times.
pub const SETTLING_BAND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Converged,
    /// Finished without reaching the convergence tolerances.
    Slow,
    /// Numerical blowup.
    Unstable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Converged => "converged",
            Self::Slow => "slow",
            Self::Unstable => "unstable",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateReport<T> {
    pub max_tail_omega: T,
    pub peak_omega: T,
    /// Violations at the final sample, against the CHP-coupled problem.
    pub violations: ConstraintViolations<T>,
    /// Largest `|d - d*|`, `|q - q*|` or virtual-flow difference at the final sample.
    pub primal_distance: T,
    pub final_objective: T,
    pub oracle_objective: T,
    /// KKT residual of the final sample on the problem the controller solves.
    pub kkt: KktResidual<T>,
    /// Largest per-bus `|P^in - d - Σ virtual flow out|` or per-component `|Σ (P^in - d)|`.
    pub absorption: T,
    pub settling_time: Option<T>,
    pub min_multiplier: T,
    pub max_clamp: T,
    pub lyapunov: Option<LyapunovStats<T>>,
}

impl<T: Scalar> SteadyStateReport<T> {
    pub fn verdict(&self) -> Verdict {
        if self.max_tail_omega <= T::of(OMEGA_TOL) && self.primal_distance <= T::of(PRIMAL_TOL) {
            Verdict::Converged
        } else {
            Verdict::Slow
        }
    }
}

/// First sample time after which `max_i |ω_i|` stays within `band`; `None`
/// if the final sample is still outside.
pub fn settling_time<T: Scalar>(traj: &Trajectory<T>, band: T) -> Option<T> {
    let outside = |k: usize| max_abs(&traj.samples[k].physical.omega) > band;
    match (0..traj.samples.len()).rev().find(|&k| outside(k)) {
        None => Some(traj.samples.first()?.time),
        Some(k) if k + 1 == traj.samples.len() => None,
        Some(k) => Some(traj.samples[k + 1].time),
    }
}

/// Tail statistics over the last `tail_fraction` of samples and final-sample
/// comparison against `oracle`. `problem` is the post-disturbance problem the
/// controller solves.
pub fn steady_state_report<T: Scalar>(
    traj: &Trajectory<T>,
    problem: &OlfcProblem<T>,
    oracle: &OlfcSolution<T>,
    tail_fraction: f64,
) -> SteadyStateReport<T> {
    let n_samples = traj.samples.len();
    let tail = ((n_samples as f64 * tail_fraction).ceil() as usize).clamp(1, n_samples);
    let max_tail_omega = traj.samples[n_samples - tail..]
        .iter()
        .fold(T::zero(), |m, s| m.max(max_abs(&s.physical.omega)));
    let peak_omega = traj
        .samples
        .iter()
        .fold(T::zero(), |m, s| m.max(max_abs(&s.physical.omega)));

    let last = traj.last();
    let virt = problem.virtual_flows(&last.ctrl.phi);
    let primal_distance = last
        .d
        .iter()
        .zip(&oracle.d)
        .chain(last.q.iter().zip(&oracle.q))
        .chain(virt.iter().zip(&oracle.line_flow))
        .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));

    let topo = &problem.topology;
    let mut absorption = T::zero();
    let mut per_component = vec![T::zero(); problem.n_buses()];
    let comps = topo.components();
    for i in 0..problem.n_buses() {
        let surplus = problem.buses[i].electric_injection - last.d[i];
        absorption = absorption.max((surplus - net_line_injection(i, &virt, topo)).abs());
        per_component[comps[i]] += surplus;
    }
    absorption = per_component.iter().fold(absorption, |m, &s| m.max(s.abs()));

    let min_multiplier = traj
        .samples
        .iter()
        .flat_map(|s| s.ctrl.multiplier_values())
        .fold(T::zero(), T::min);

    SteadyStateReport {
        max_tail_omega,
        peak_omega,
        violations: last.violations,
        primal_distance,
        final_objective: last.objective,
        oracle_objective: oracle.objective,
        kkt: kkt_residual(problem, &last.as_solution(problem)),
        absorption,
        settling_time: settling_time(traj, T::of(SETTLING_BAND)),
        min_multiplier,
        max_clamp: traj.diagnostics.max_clamp,
        lyapunov: traj.diagnostics.lyapunov.clone(),
    }
}
