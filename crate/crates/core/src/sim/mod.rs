//! Closed-loop simulation of the grid physics and the distributed controller.
//!
//! One integrator step is one communication round. Disturbances are steps in
//! `P^in`/`Q^in` applied between steps; multipliers are clamped at zero after
//! every step.

mod lyapunov;
mod report;
mod sweep;

pub use lyapunov::{
    equilibrium_from_solution, lyapunov_coordinates, lyapunov_value, lyapunov_weights,
    EquilibriumSource, LyapunovStats,
};
pub use report::{settling_time, steady_state_report, SteadyStateReport, Verdict};
pub use sweep::{sweep, SweepEntry};

use thiserror::Error;

use crate::comm::{CommConfig, Exchange, LoggedMessage};
use crate::controller::{
    applied_primal, controller_derivatives, local_mu, ControllerError, ControllerGains,
    ControllerOptions, ControllerState, DampingModel, Measurements, PrimalMode,
};
use crate::network::{heat_buffer, physical_derivatives, resolve_frequencies, BusId, PhysicalState};
use crate::olfc::{
    centralized_solve, objective, ConstraintViolations, Multipliers, OlfcProblem, OlfcSolution,
    OracleError,
};
use crate::scalar::max_abs;
use crate::Scalar;

/// KKT tolerance of [`reference_solution`].
pub fn oracle_tolerance<T: Scalar>() -> T {
    T::of(1e-8).max(T::epsilon().sqrt() * T::of(10.0))
}

/// Oracle solution every report and Lyapunov reference is measured against.
pub fn reference_solution<T: Scalar>(problem: &OlfcProblem<T>) -> Result<OlfcSolution<T>, OracleError> {
    centralized_solve(problem, oracle_tolerance(), 500)
}

/// States beyond this magnitude count as numerical blowup.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance<T> {
    pub time: T,
    /// Bus index.
    pub bus: usize,
    pub delta_p: T,
    pub delta_q: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig<T> {
    pub step: T,
    pub duration: T,
    pub method: Method,
    /// Record every `decimation`-th step.
    pub decimation: usize,
}

impl<T: Scalar> IntegratorConfig<T> {
    pub fn n_steps(&self) -> usize {
        (self.duration / self.step).round().to_usize().unwrap_or(0)
    }
}

impl<T: Scalar> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            step: T::of(1e-3),
            duration: T::of(60.0),
            method: Method::Rk4,
            decimation: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub name: String,
    /// Problem data before any disturbance.
    pub problem: OlfcProblem<T>,
    pub gains: ControllerGains<T>,
    pub options: ControllerOptions,
    pub damping: DampingModel<T>,
    pub disturbances: Vec<Disturbance<T>>,
    pub integrator: IntegratorConfig<T>,
    pub comm: CommConfig,
    /// Skip the Lyapunov monitor (and the oracle solve it needs).
    pub monitor_lyapunov: bool,
    pub log_messages: bool,
}

impl<T: Scalar> Scenario<T> {
    /// Problem with every disturbance applied.
    pub fn final_problem(&self) -> OlfcProblem<T> {
        let mut p = self.problem.clone();
        for d in &self.disturbances {
            p.buses[d.bus].electric_injection += d.delta_p;
            p.buses[d.bus].heat_injection += d.delta_q;
        }
        p
    }

    /// The problem the controller actually solves: CHP couplings dropped when not enforced.
    pub fn controlled_problem(&self) -> OlfcProblem<T> {
        let p = self.final_problem();
        if self.options.chp_enforced {
            p
        } else {
            p.without_chp()
        }
    }

    pub fn last_disturbance_time(&self) -> T {
        self.disturbances.last().map_or(T::zero(), |d| d.time)
    }

    /// Every violated invariant.
    pub fn validate(&self) -> Vec<String> {
        let mut errs: Vec<String> = self.problem.validate().iter().map(ToString::to_string).collect();
        let topo = &self.problem.topology;
        errs.extend(self.gains.validate(topo).iter().map(ToString::to_string));
        let n = topo.n_buses();
        for (name, len) in [
            ("eps_d", self.gains.eps_d.len()),
            ("eps_q", self.gains.eps_q.len()),
            ("eps_phi", self.gains.eps_phi.len()),
            ("eps_lambda", self.gains.eps_lambda.len()),
            ("eps_mu", self.gains.eps_mu.len()),
            ("k", self.gains.k.len()),
        ] {
            if len != n {
                errs.push(format!("gain vector {name} has {len} entries for {n} buses"));
            }
        }
        let mut net = Vec::new();
        for (i, p) in self.problem.buses.iter().enumerate() {
            p.validate(topo.bus_id(i), topo.kind(i), &mut net);
        }
        errs.extend(net.iter().map(ToString::to_string));
        if let DampingModel::Additive(tau) = &self.damping {
            if tau.len() != n {
                errs.push(format!("additive damping offsets have {} entries for {n} buses", tau.len()));
            }
        }
        if let DampingModel::Multiplier(k) = self.damping {
            if !k.is_strictly_positive() {
                errs.push(format!("damping multiplier must be > 0, got {k}"));
            }
        }
        let h = self.integrator.step;
        if !h.is_strictly_positive() {
            errs.push(format!("integrator step must be > 0, got {h}"));
        }
        if self.integrator.duration.partial_cmp(&h) != Some(std::cmp::Ordering::Greater) {
            errs.push(format!(
                "duration {} must exceed the step {h}",
                self.integrator.duration
            ));
        }
        if self.integrator.decimation == 0 {
            errs.push("decimation must be >= 1".into());
        }
        for w in self.disturbances.windows(2) {
            if w[1].time < w[0].time {
                errs.push(format!(
                    "disturbances not sorted by time: {} after {}",
                    w[1].time, w[0].time
                ));
            }
        }
        for d in &self.disturbances {
            if d.bus >= n {
                errs.push(format!("disturbance at unknown bus index {}", d.bus));
            }
            if d.time.is_nan() || d.time < T::zero() {
                errs.push(format!("disturbance time {} is negative", d.time));
            }
        }
        if self.options.primal_mode == PrimalMode::Instantaneous && self.options.control_load_buses {
            errs.push("instantaneous primal mode cannot be combined with load-bus control".into());
        }
        if !self.options.control_load_buses {
            for i in 0..n.min(self.problem.electric.len()) {
                if !topo.is_generator(i) && self.problem.electric[i].is_some() {
                    errs.push(format!(
                        "bus {} is a load bus with a controllable demand; enable load-bus control",
                        topo.bus_id(i)
                    ));
                }
            }
        }
        if !(0.0..1.0).contains(&self.comm.drop_probability) {
            errs.push(format!(
                "drop probability must lie in [0, 1), got {}",
                self.comm.drop_probability
            ));
        }
        errs
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    InvalidScenario(Vec<String>),
    #[error("numerical blowup at t = {time:.4} s")]
    NumericalBlowup { time: f64 },
    #[error(transparent)]
    Communication(#[from] ControllerError),
}

/// Integrated state: generator frequencies (load entries are refreshed
/// algebraically), line flows and the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState<T> {
    pub omega: Vec<T>,
    pub line_flow: Vec<T>,
    pub ctrl: ControllerState<T>,
}

impl<T: Scalar> ClosedLoopState<T> {
    pub fn zeros(problem: &OlfcProblem<T>) -> Self {
        Self {
            omega: vec![T::zero(); problem.n_buses()],
            line_flow: vec![T::zero(); problem.n_lines()],
            ctrl: ControllerState::zeros(problem),
        }
    }

    fn axpy(&mut self, a: T, other: &Self) {
        for (x, &y) in self.omega.iter_mut().zip(&other.omega) {
            *x += a * y;
        }
        for (x, &y) in self.line_flow.iter_mut().zip(&other.line_flow) {
            *x += a * y;
        }
        self.ctrl.axpy(a, &other.ctrl);
    }

    pub fn max_abs(&self) -> T {
        max_abs(&self.omega)
            .max(max_abs(&self.line_flow))
            .max(self.ctrl.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(&self.line_flow).all(|x| x.is_finite()) && self.ctrl.is_finite()
    }
}

/// Everything derived from a state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub omega: Vec<T>,
    pub mu: Vec<T>,
    pub d: Vec<T>,
    pub q: Vec<T>,
}

/// Frequencies, broadcast multipliers and applied primal values at `state`.
pub fn snapshot<T: Scalar>(
    state: &ClosedLoopState<T>,
    problem: &OlfcProblem<T>,
    gains: &ControllerGains<T>,
    options: &ControllerOptions,
) -> Snapshot<T> {
    let topo = &problem.topology;
    let n = problem.n_buses();
    // Load-bus demand is a dynamic state whenever it exists, so frequencies can
    // be resolved before the primal values.
    let d_state: Vec<T> = (0..n)
        .map(|i| {
            if problem.electric[i].is_some() {
                state.ctrl.d[i]
            } else {
                T::zero()
            }
        })
        .collect();
    let omega = resolve_frequencies(&state.omega, &state.line_flow, &d_state, &problem.buses, topo);
    let mut mu = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for i in 0..n {
        let m = local_mu(i, &state.ctrl, omega[i], topo, gains);
        let (di, qi) = applied_primal(
            i,
            &state.ctrl,
            omega[i],
            m,
            problem.buses[i].heat_injection,
            problem,
            options,
        );
        mu.push(m);
        d.push(di);
        q.push(qi);
    }
    Snapshot { omega, mu, d, q }
}

/// Closed-loop vector field. `problem` carries the current injections.
fn closed_loop_derivative<T: Scalar>(
    state: &ClosedLoopState<T>,
    problem: &OlfcProblem<T>,
    controlled: &OlfcProblem<T>,
    scenario: &Scenario<T>,
    damping_used: &[T],
    exchange: &Exchange<T>,
) -> Result<ClosedLoopState<T>, ControllerError> {
    let snap = snapshot(state, controlled, &scenario.gains, &scenario.options);
    let outgoing: Vec<(T, T)> = snap.mu.iter().zip(&state.ctrl.phi).map(|(&m, &p)| (m, p)).collect();
    let inboxes = exchange.deliver(&outgoing);
    let meas = Measurements {
        omega: snap.omega.clone(),
        line_flow: state.line_flow.clone(),
        heat_injection: problem.buses.iter().map(|b| b.heat_injection).collect(),
    };
    let ctrl = controller_derivatives(
        &state.ctrl,
        &meas,
        &inboxes,
        controlled,
        &scenario.gains,
        &scenario.options,
        damping_used,
    )?;
    let phys = PhysicalState {
        omega: state.omega.clone(),
        line_flow: state.line_flow.clone(),
        heat_buffer: Vec::new(),
    };
    let pd = physical_derivatives(&phys, &snap.d, &problem.buses, &problem.topology);
    Ok(ClosedLoopState {
        omega: pd.omega_dot,
        line_flow: pd.line_flow_dot,
        ctrl,
    })
}

/// Runs one closed-loop evaluation with ideal communication; used for
/// fixed-point checks.
pub fn vector_field<T: Scalar>(
    state: &ClosedLoopState<T>,
    scenario: &Scenario<T>,
    problem: &OlfcProblem<T>,
) -> Result<ClosedLoopState<T>, ControllerError> {
    let mut controlled = problem.clone();
    if !scenario.options.chp_enforced {
        controlled = controlled.without_chp();
    }
    let damping: Vec<T> = problem.buses.iter().map(|b| b.damping).collect();
    let damping_used = scenario.damping.damping_used(&damping);
    let mut exchange = Exchange::new(&problem.topology, CommConfig::default());
    let snap = snapshot(state, &controlled, &scenario.gains, &scenario.options);
    let outgoing: Vec<(T, T)> = snap.mu.iter().zip(&state.ctrl.phi).map(|(&m, &p)| (m, p)).collect();
    exchange.begin_round(0, &outgoing);
    closed_loop_derivative(state, problem, &controlled, scenario, &damping_used, &exchange)
}

/// One recorded instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub time: T,
    pub physical: PhysicalState<T>,
    pub ctrl: ControllerState<T>,
    /// Applied demand and heat consumption.
    pub d: Vec<T>,
    pub q: Vec<T>,
    pub mu: Vec<T>,
    pub lyapunov: Option<T>,
    pub objective: T,
    /// Measured against the true (CHP-coupled) problem.
    pub violations: ConstraintViolations<T>,
}

impl<T: Scalar> Sample<T> {
    /// The sampled point as a primal-dual candidate, with `λ = ω`.
    pub fn as_solution(&self, problem: &OlfcProblem<T>) -> OlfcSolution<T> {
        let c = &self.ctrl;
        let mut multipliers = Multipliers::zeros(problem);
        multipliers.lambda.clone_from(&self.physical.omega);
        multipliers.mu.clone_from(&self.mu);
        multipliers.gamma_lower.clone_from(&c.gamma_lower);
        multipliers.gamma_upper.clone_from(&c.gamma_upper);
        multipliers.delta_lower.clone_from(&c.delta_lower);
        multipliers.delta_upper.clone_from(&c.delta_upper);
        multipliers.sigma_lower.clone_from(&c.sigma_lower);
        multipliers.sigma_upper.clone_from(&c.sigma_upper);
        if problem.has_chp() {
            multipliers.zeta_upper.clone_from(&c.zeta_upper);
            multipliers.zeta_lower.clone_from(&c.zeta_lower);
        }
        OlfcSolution {
            omega: self.physical.omega.clone(),
            d: self.d.clone(),
            q: self.q.clone(),
            line_flow: self.physical.line_flow.clone(),
            phi: c.phi.clone(),
            objective: self.objective,
            multipliers,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics<T> {
    pub steps: usize,
    /// Largest negative excursion removed by the multiplier clamp.
    pub max_clamp: T,
    pub lyapunov: Option<LyapunovStats<T>>,
    pub last_disturbance: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub bus_ids: Vec<BusId>,
    pub line_names: Vec<String>,
    pub samples: Vec<Sample<T>>,
    pub diagnostics: Diagnostics<T>,
    pub message_log: Option<Vec<LoggedMessage<T>>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn last(&self) -> &Sample<T> {
        self.samples.last().expect("trajectory has at least the initial sample")
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        self.samples.iter().map(|s| s.time)
    }
}

/// Integrates the scenario over `[0, T]`.
pub fn simulate<T: Scalar>(scenario: &Scenario<T>) -> Result<Trajectory<T>, SimError> {
    let errs = scenario.validate();
    if !errs.is_empty() {
        return Err(SimError::InvalidScenario(errs));
    }
    let monitor = if scenario.monitor_lyapunov {
        lyapunov::prepare(scenario)?
    } else {
        None
    };
    run(scenario, monitor)
}

pub(crate) fn run<T: Scalar>(
    scenario: &Scenario<T>,
    monitor: Option<lyapunov::Monitor<T>>,
) -> Result<Trajectory<T>, SimError> {
    let topo = &scenario.problem.topology;
    let cfg = scenario.integrator;
    let h = cfg.step;
    let n_steps = cfg.n_steps();
    let true_problem = scenario.final_problem();
    let mut problem = scenario.problem.clone();
    let mut controlled = if scenario.options.chp_enforced {
        problem.clone()
    } else {
        problem.without_chp()
    };
    let damping: Vec<T> = problem.buses.iter().map(|b| b.damping).collect();
    let damping_used = scenario.damping.damping_used(&damping);
    let mut exchange = Exchange::new(topo, scenario.comm.clone());
    if scenario.log_messages {
        exchange.enable_log();
    }
    let t_last = scenario.last_disturbance_time();
    let mut monitor = monitor;

    let mut state = ClosedLoopState::zeros(&problem);
    let mut pending = scenario.disturbances.iter().peekable();
    let mut samples = Vec::with_capacity(n_steps / cfg.decimation + 2);
    let mut max_clamp = T::zero();
    let mut t = T::zero();
    let half_step = h * T::of(0.5);

    let record = |t: T,
                  state: &ClosedLoopState<T>,
                  problem: &OlfcProblem<T>,
                  controlled: &OlfcProblem<T>,
                  u: Option<T>|
     -> Sample<T> {
        let snap = snapshot(state, controlled, &scenario.gains, &scenario.options);
        let heat: Vec<T> = (0..problem.n_buses())
            .map(|i| heat_buffer(problem.buses[i].heat_injection, snap.q[i]))
            .collect();
        let objective = objective(&true_problem, &snap.omega, &snap.d, &snap.q);
        let violations = true_problem.violations(&snap.d, &snap.q, &state.ctrl.phi);
        Sample {
            time: t,
            physical: PhysicalState {
                omega: snap.omega,
                line_flow: state.line_flow.clone(),
                heat_buffer: heat,
            },
            ctrl: state.ctrl.clone(),
            d: snap.d,
            q: snap.q,
            mu: snap.mu,
            lyapunov: u,
            objective,
            violations,
        }
    };

    for step in 0..n_steps {
        let mut changed = false;
        while let Some(d) = pending.next_if(|d| d.time <= t + half_step) {
            problem.buses[d.bus].electric_injection += d.delta_p;
            problem.buses[d.bus].heat_injection += d.delta_q;
            changed = true;
        }
        if changed {
            controlled = if scenario.options.chp_enforced {
                problem.clone()
            } else {
                problem.without_chp()
            };
        }
        let monitoring = pending.peek().is_none() && t + half_step >= t_last;
        let u_now = match (&monitor, monitoring) {
            (Some(m), true) => Some(m.value(&state, &controlled, scenario)),
            _ => None,
        };
        if step % cfg.decimation == 0 {
            samples.push(record(t, &state, &problem, &controlled, u_now));
        }

        let snap = snapshot(&state, &controlled, &scenario.gains, &scenario.options);
        let outgoing: Vec<(T, T)> = snap.mu.iter().zip(&state.ctrl.phi).map(|(&m, &p)| (m, p)).collect();
        exchange.begin_round(step as u64, &outgoing);
        let f = |x: &ClosedLoopState<T>| {
            closed_loop_derivative(x, &problem, &controlled, scenario, &damping_used, &exchange)
        };
        match cfg.method {
            Method::Euler => {
                let k1 = f(&state)?;
                state.axpy(h, &k1);
            }
            Method::Rk4 => {
                let k1 = f(&state)?;
                let mut x = state.clone();
                x.axpy(half_step, &k1);
                let k2 = f(&x)?;
                x.clone_from(&state);
                x.axpy(half_step, &k2);
                let k3 = f(&x)?;
                x.clone_from(&state);
                x.axpy(h, &k3);
                let k4 = f(&x)?;
                let sixth = h / T::of(6.0);
                state.axpy(sixth, &k1);
                state.axpy(sixth * T::of(2.0), &k2);
                state.axpy(sixth * T::of(2.0), &k3);
                state.axpy(sixth, &k4);
            }
        }
        max_clamp = max_clamp.max(state.ctrl.clamp_multipliers());
        if scenario.options.primal_mode == PrimalMode::Instantaneous {
            let snap = snapshot(&state, &controlled, &scenario.gains, &scenario.options);
            state.ctrl.d = snap.d;
            state.ctrl.q = snap.q;
        }
        t = T::of((step + 1) as f64) * h;
        if !state.is_finite() || state.max_abs() > T::of(BLOWUP_LIMIT) {
            return Err(SimError::NumericalBlowup { time: t.as_f64() });
        }
        if let (Some(m), Some(u0)) = (&mut monitor, u_now) {
            let u1 = m.value(&state, &controlled, scenario);
            m.observe(u0, u1, h);
        }
    }
    let u_end = monitor.as_ref().and_then(|m| {
        (t + half_step >= t_last).then(|| m.value(&state, &controlled, scenario))
    });
    samples.push(record(t, &state, &problem, &controlled, u_end));
    Ok(Trajectory {
        bus_ids: topo.bus_ids().to_vec(),
        line_names: (0..topo.n_lines()).map(|l| topo.line_name(l)).collect(),
        samples,
        diagnostics: Diagnostics {
            steps: n_steps,
            max_clamp,
            lyapunov: monitor.map(|m| m.stats()),
            last_disturbance: t_last,
        },
        message_log: exchange.log().map(<[_]>::to_vec),
    })
}
