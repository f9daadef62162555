//! Distributed primal-dual controller.
//!
//! Every bus runs the same agent. Its inputs are its own controller state, local
//! measurements (frequency deviation, flows on incident lines, local heat
//! injection) and the `(mu, phi)` messages received from graph neighbors. The
//! electric injection `P^in` is never an input: the internal variable `r`
//! integrates the measured mismatch instead, and `mu` is recovered from `r` and
//! the local frequency.
//!
//! Update laws, with `λ_i = ω_i` and multipliers projected by [`positive_projection`]:
//!
//! ```text
//! d'   = -ε_d (C_e'(d) - ω - μ - γ_lo + γ_hi - Σ ζ_up k + Σ ζ_dn k)
//! q'   = -ε_q (C_h'(q) - δ_hi + δ_lo + Σ ζ_up - Σ ζ_dn)
//! φ_i' =  ε_φ Σ_lines ±B (μ_from - μ_to + σ_lo - σ_hi)
//! r'   =  K (D̃ ω + P^e - Σ_lines ±B (φ_from - φ_to))
//! ζ_up' = ε_ζ [q - k d - b]⁺     ζ_dn' = ε_ζ [k d + b - q]⁺
//! γ_lo' = ε_γ [d_lo - d]⁺        γ_hi' = ε_γ [d - d_hi]⁺
//! δ_hi' = ε_δ [Q^in - q - Qv_hi]⁺ δ_lo' = ε_δ [Qv_lo - Q^in + q]⁺
//! σ_lo' = ε_σ [P_lo - B Δφ]⁺     σ_hi' = ε_σ [B Δφ - P_hi]⁺
//! ```
//!
//! Each rate is the gradient of the problem Lagrangian with every inequality
//! multiplier attached as `+ mult * g(x)`, `g(x) <= 0`, so equilibria of the
//! closed loop are exactly its KKT points.

use thiserror::Error;

use crate::comm::NeighborMessage;
use crate::network::{net_line_injection, BusId, BusKind, NetworkTopology};
use crate::olfc::{ChpRegion, Multipliers, OlfcProblem, OlfcSolution};
use crate::scalar::max_abs;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("bus {bus} received no message from neighbor {neighbor}")]
    MissingNeighborMessage { bus: BusId, neighbor: BusId },
    #[error("gain {name} at bus {bus} must be > 0, got {value}")]
    NonPositiveGain {
        name: &'static str,
        bus: BusId,
        value: f64,
    },
    #[error("controller gain {name} must be > 0, got {value}")]
    NonPositiveFamilyGain { name: &'static str, value: f64 },
}

/// Step sizes of the primal-dual flow. Line-flow dynamics use `B_ij` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains<T> {
    pub eps_d: Vec<T>,
    pub eps_q: Vec<T>,
    pub eps_phi: Vec<T>,
    /// Must equal `1 / M_i` on generator buses for `mu` recovery to be exact.
    pub eps_lambda: Vec<T>,
    pub eps_mu: Vec<T>,
    pub k: Vec<T>,
    pub eps_zeta: T,
    pub eps_gamma: T,
    pub eps_delta: T,
    pub eps_sigma: T,
}

impl<T: Scalar> ControllerGains<T> {
    /// Every gain set to `value`.
    pub fn uniform(n_buses: usize, value: T) -> Self {
        let v = vec![value; n_buses];
        Self {
            eps_d: v.clone(),
            eps_q: v.clone(),
            eps_phi: v.clone(),
            eps_lambda: v.clone(),
            eps_mu: v.clone(),
            k: v,
            eps_zeta: value,
            eps_gamma: value,
            eps_delta: value,
            eps_sigma: value,
        }
    }

    pub fn validate(&self, topology: &NetworkTopology<T>) -> Vec<ControllerError> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("eps_d", &self.eps_d),
            ("eps_q", &self.eps_q),
            ("eps_phi", &self.eps_phi),
            ("eps_lambda", &self.eps_lambda),
            ("eps_mu", &self.eps_mu),
            ("k", &self.k),
        ] {
            for (i, &g) in v.iter().enumerate() {
                if !g.is_strictly_positive() {
                    errs.push(ControllerError::NonPositiveGain {
                        name,
                        bus: topology.bus_id(i),
                        value: g.as_f64(),
                    });
                }
            }
        }
        for (name, g) in [
            ("eps_zeta", self.eps_zeta),
            ("eps_gamma", self.eps_gamma),
            ("eps_delta", self.eps_delta),
            ("eps_sigma", self.eps_sigma),
        ] {
            if !g.is_strictly_positive() {
                errs.push(ControllerError::NonPositiveFamilyGain {
                    name,
                    value: g.as_f64(),
                });
            }
        }
        errs
    }
}

/// Damping coefficient the controller believes in, used in the `r` dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum DampingModel<T> {
    Exact,
    /// `D̃_i = k D_i`
    Multiplier(T),
    /// `D̃_i = D_i + τa_i`
    Additive(Vec<T>),
}

impl<T: Scalar> DampingModel<T> {
    pub fn damping_used(&self, true_damping: &[T]) -> Vec<T> {
        match self {
            Self::Exact => true_damping.to_vec(),
            Self::Multiplier(k) => true_damping.iter().map(|&d| *k * d).collect(),
            Self::Additive(tau) => true_damping.iter().zip(tau).map(|(&d, &t)| d + t).collect(),
        }
    }

    /// Per-bus offsets `τa_i = D̃_i - D_i`.
    pub fn offsets(&self, true_damping: &[T]) -> Vec<T> {
        self.damping_used(true_damping)
            .iter()
            .zip(true_damping)
            .map(|(&u, &d)| u - d)
            .collect()
    }

    /// Whether every offset lies strictly inside [`robustness_interval`] for the problem.
    pub fn within_robustness_interval(&self, problem: &OlfcProblem<T>) -> bool {
        let damping: Vec<T> = problem.buses.iter().map(|b| b.damping).collect();
        let (lo, hi) = robustness_interval(problem.lipschitz(), problem.min_damping());
        self.offsets(&damping).iter().all(|&t| lo < t && t < hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrimalMode {
    /// `d`, `q` follow their gradient flows.
    #[default]
    Dynamic,
    /// `d`, `q` solve their stationarity equations in closed form every evaluation
    /// (the infinite-gain limit).
    Instantaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerOptions {
    /// When false, CHP half-planes are ignored by the controller (their multipliers stay 0).
    pub chp_enforced: bool,
    pub primal_mode: PrimalMode,
    /// Allow electric units on load buses. Off by default: controllable demand
    /// sits on generator buses, load buses contribute only damping.
    pub control_load_buses: bool,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self {
            chp_enforced: true,
            primal_mode: PrimalMode::Dynamic,
            control_load_buses: false,
        }
    }
}

/// Per-bus and per-line controller state. Entries for constraints a bus does
/// not have stay at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState<T> {
    pub d: Vec<T>,
    pub q: Vec<T>,
    pub phi: Vec<T>,
    pub r: Vec<T>,
    pub gamma_lower: Vec<T>,
    pub gamma_upper: Vec<T>,
    pub delta_lower: Vec<T>,
    pub delta_upper: Vec<T>,
    pub zeta_upper: Vec<Vec<T>>,
    pub zeta_lower: Vec<Vec<T>>,
    pub sigma_lower: Vec<T>,
    pub sigma_upper: Vec<T>,
}

impl<T: Scalar> ControllerState<T> {
    pub fn zeros(problem: &OlfcProblem<T>) -> Self {
        let n = problem.n_buses();
        let m = problem.n_lines();
        let shape = |f: fn(&ChpRegion<T>) -> usize| -> Vec<Vec<T>> {
            problem
                .heat
                .iter()
                .map(|h| vec![T::zero(); h.as_ref().map_or(0, |h| f(&h.chp))])
                .collect()
        };
        Self {
            d: vec![T::zero(); n],
            q: vec![T::zero(); n],
            phi: vec![T::zero(); n],
            r: vec![T::zero(); n],
            gamma_lower: vec![T::zero(); n],
            gamma_upper: vec![T::zero(); n],
            delta_lower: vec![T::zero(); n],
            delta_upper: vec![T::zero(); n],
            zeta_upper: shape(|c| c.upper.len()),
            zeta_lower: shape(|c| c.lower.len()),
            sigma_lower: vec![T::zero(); m],
            sigma_upper: vec![T::zero(); m],
        }
    }

    /// Every state vector in a fixed order; `zeta` contributes one vector per bus.
    pub fn vectors(&self) -> impl Iterator<Item = &Vec<T>> {
        [
            &self.d,
            &self.q,
            &self.phi,
            &self.r,
            &self.gamma_lower,
            &self.gamma_upper,
            &self.delta_lower,
            &self.delta_upper,
            &self.sigma_lower,
            &self.sigma_upper,
        ]
        .into_iter()
        .chain(self.zeta_upper.iter())
        .chain(self.zeta_lower.iter())
    }

    fn vectors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        [
            &mut self.d,
            &mut self.q,
            &mut self.phi,
            &mut self.r,
            &mut self.gamma_lower,
            &mut self.gamma_upper,
            &mut self.delta_lower,
            &mut self.delta_upper,
            &mut self.sigma_lower,
            &mut self.sigma_upper,
        ]
        .into_iter()
        .chain(self.zeta_upper.iter_mut())
        .chain(self.zeta_lower.iter_mut())
    }

    fn multipliers_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.gamma_lower
            .iter_mut()
            .chain(self.gamma_upper.iter_mut())
            .chain(self.delta_lower.iter_mut())
            .chain(self.delta_upper.iter_mut())
            .chain(self.sigma_lower.iter_mut())
            .chain(self.sigma_upper.iter_mut())
            .chain(self.zeta_upper.iter_mut().flatten())
            .chain(self.zeta_lower.iter_mut().flatten())
    }

    /// Every sign-constrained multiplier, flattened.
    pub fn multiplier_values(&self) -> impl Iterator<Item = T> + '_ {
        self.gamma_lower
            .iter()
            .chain(&self.gamma_upper)
            .chain(&self.delta_lower)
            .chain(&self.delta_upper)
            .chain(&self.sigma_lower)
            .chain(&self.sigma_upper)
            .chain(self.zeta_upper.iter().flatten())
            .chain(self.zeta_lower.iter().flatten())
            .copied()
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: T, other: &Self) {
        for (x, y) in self.vectors_mut().zip(other.vectors()) {
            for (xi, &yi) in x.iter_mut().zip(y) {
                *xi += a * yi;
            }
        }
    }

    /// Clamps multipliers at zero; returns the largest magnitude removed.
    pub fn clamp_multipliers(&mut self) -> T {
        let mut worst = T::zero();
        for m in self.multipliers_mut() {
            if *m < T::zero() {
                worst = worst.max(-*m);
                *m = T::zero();
            }
        }
        worst
    }

    pub fn max_abs(&self) -> T {
        self.vectors().fold(T::zero(), |m, v| m.max(max_abs(v)))
    }

    pub fn is_finite(&self) -> bool {
        self.vectors().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Local measurements available to each bus agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements<T> {
    pub omega: Vec<T>,
    pub line_flow: Vec<T>,
    pub heat_injection: Vec<T>,
}

/// `[w]_v^+`: `w` if `w > 0` or `v > 0`, else `0`.
#[inline]
pub fn positive_projection<T: Scalar>(w: T, v: T) -> T {
    if w > T::zero() || v > T::zero() {
        w
    } else {
        T::zero()
    }
}

/// Inverts `r = (K/ε_μ) μ - (K/ε_λ) ω` for `μ`.
#[inline]
pub fn recover_mu<T: Scalar>(r: T, omega: T, k: T, eps_mu: T, eps_lambda: T) -> T {
    eps_mu / k * r + eps_mu / eps_lambda * omega
}

/// Inverse of [`recover_mu`].
#[inline]
pub fn internal_from_mu<T: Scalar>(mu: T, omega: T, k: T, eps_mu: T, eps_lambda: T) -> T {
    k / eps_mu * mu - k / eps_lambda * omega
}

/// Admissible damping offsets `τa` for the inaccurate-damping guarantee:
/// `(2(d' - √(d'² + d' D_min)), d' + √(d'² + d' D_min))` with `d' = 1/L`.
pub fn robustness_interval<T: Scalar>(lipschitz: T, d_min: T) -> (T, T) {
    let dp = T::one() / lipschitz;
    let root = (dp * dp + dp * d_min).sqrt();
    (T::of(2.0) * (dp - root), dp + root)
}

/// The multiplier `mu_i` bus `i` broadcasts, computed from its own `r_i` and `ω_i`.
///
/// On load buses the frequency is algebraic and `λ_i` is eliminated, so `r_i`
/// tracks `mu_i` directly.
pub fn local_mu<T: Scalar>(
    bus: usize,
    ctrl: &ControllerState<T>,
    omega: T,
    topology: &NetworkTopology<T>,
    gains: &ControllerGains<T>,
) -> T {
    match topology.kind(bus) {
        BusKind::Generator => recover_mu(
            ctrl.r[bus],
            omega,
            gains.k[bus],
            gains.eps_mu[bus],
            gains.eps_lambda[bus],
        ),
        BusKind::Load => gains.eps_mu[bus] / gains.k[bus] * ctrl.r[bus],
    }
}

fn chp_of<'a, T>(problem: &'a OlfcProblem<T>, bus: usize, options: &ControllerOptions) -> Option<&'a ChpRegion<T>> {
    if !options.chp_enforced {
        return None;
    }
    problem.heat[bus].as_ref().map(|h| &h.chp)
}

/// `(d_i, q_i)` the bus applies. In instantaneous mode these solve the primal
/// stationarity equations given the current duals.
pub fn applied_primal<T: Scalar>(
    bus: usize,
    ctrl: &ControllerState<T>,
    omega: T,
    mu: T,
    heat_injection: T,
    problem: &OlfcProblem<T>,
    options: &ControllerOptions,
) -> (T, T) {
    let chp = chp_of(problem, bus, options);
    let d = match &problem.electric[bus] {
        None => T::zero(),
        Some(_) if options.primal_mode == PrimalMode::Dynamic => ctrl.d[bus],
        Some(e) => {
            let mut target = omega + mu + ctrl.gamma_lower[bus] - ctrl.gamma_upper[bus];
            if let Some(c) = chp {
                for (k, hp) in c.upper.iter().enumerate() {
                    target += ctrl.zeta_upper[bus][k] * hp.slope;
                }
                for (k, hp) in c.lower.iter().enumerate() {
                    target -= ctrl.zeta_lower[bus][k] * hp.slope;
                }
            }
            e.cost.derivative_inverse(target)
        }
    };
    let q = match &problem.heat[bus] {
        None => heat_injection,
        Some(_) if options.primal_mode == PrimalMode::Dynamic => ctrl.q[bus],
        Some(h) => {
            let mut target = ctrl.delta_upper[bus] - ctrl.delta_lower[bus];
            if let Some(c) = chp {
                for k in 0..c.upper.len() {
                    target -= ctrl.zeta_upper[bus][k];
                }
                for k in 0..c.lower.len() {
                    target += ctrl.zeta_lower[bus][k];
                }
            }
            h.cost.derivative_inverse(target)
        }
    };
    (d, q)
}

/// Time derivative of every controller field.
///
/// The agent at bus `i` reads only index `i` of the controller state and the
/// measurements, the lines incident to `i`, and its inbox. Line multipliers are
/// line state, advanced by the line's sending end using the receiving end's
/// `phi` from the inbox.
#[allow(clippy::too_many_arguments)]
pub fn controller_derivatives<T: Scalar>(
    ctrl: &ControllerState<T>,
    meas: &Measurements<T>,
    inboxes: &[Vec<NeighborMessage<T>>],
    problem: &OlfcProblem<T>,
    gains: &ControllerGains<T>,
    options: &ControllerOptions,
    damping_used: &[T],
) -> Result<ControllerState<T>, ControllerError> {
    let topo = &problem.topology;
    let mut out = ControllerState::zeros(problem);
    for i in 0..topo.n_buses() {
        bus_derivative(i, ctrl, meas, &inboxes[i], problem, gains, options, damping_used, &mut out)?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn bus_derivative<T: Scalar>(
    i: usize,
    ctrl: &ControllerState<T>,
    meas: &Measurements<T>,
    inbox: &[NeighborMessage<T>],
    problem: &OlfcProblem<T>,
    gains: &ControllerGains<T>,
    options: &ControllerOptions,
    damping_used: &[T],
    out: &mut ControllerState<T>,
) -> Result<(), ControllerError> {
    let topo = &problem.topology;
    let omega = meas.omega[i];
    let q_in = meas.heat_injection[i];
    let mu = local_mu(i, ctrl, omega, topo, gains);
    let (d, q) = applied_primal(i, ctrl, omega, mu, q_in, problem, options);
    let chp = chp_of(problem, i, options);
    let dynamic = options.primal_mode == PrimalMode::Dynamic;

    if let Some(e) = &problem.electric[i] {
        let mut grad = e.cost.derivative(d) - omega - mu - ctrl.gamma_lower[i] + ctrl.gamma_upper[i];
        if let Some(c) = chp {
            for (k, hp) in c.upper.iter().enumerate() {
                grad -= ctrl.zeta_upper[i][k] * hp.slope;
            }
            for (k, hp) in c.lower.iter().enumerate() {
                grad += ctrl.zeta_lower[i][k] * hp.slope;
            }
        }
        if dynamic {
            out.d[i] = -gains.eps_d[i] * grad;
        }
        let (lo, hi) = e.bounds;
        out.gamma_lower[i] = gains.eps_gamma * positive_projection(lo - d, ctrl.gamma_lower[i]);
        out.gamma_upper[i] = gains.eps_gamma * positive_projection(d - hi, ctrl.gamma_upper[i]);
    }

    if let Some(h) = &problem.heat[i] {
        let mut grad = h.cost.derivative(q) - ctrl.delta_upper[i] + ctrl.delta_lower[i];
        if let Some(c) = chp {
            for (k, hp) in c.upper.iter().enumerate() {
                grad += ctrl.zeta_upper[i][k];
                out.zeta_upper[i][k] =
                    gains.eps_zeta * positive_projection(q - hp.at(d), ctrl.zeta_upper[i][k]);
            }
            for (k, hp) in c.lower.iter().enumerate() {
                grad -= ctrl.zeta_lower[i][k];
                out.zeta_lower[i][k] =
                    gains.eps_zeta * positive_projection(hp.at(d) - q, ctrl.zeta_lower[i][k]);
            }
        }
        if dynamic {
            out.q[i] = -gains.eps_q[i] * grad;
        }
        let (lo, hi) = problem.buses[i].heat_buffer_bounds;
        let buffer = q_in - q;
        out.delta_upper[i] = gains.eps_delta * positive_projection(buffer - hi, ctrl.delta_upper[i]);
        out.delta_lower[i] = gains.eps_delta * positive_projection(lo - buffer, ctrl.delta_lower[i]);
    }

    let mut phi_rate = T::zero();
    let mut virtual_out = T::zero();
    for inc in topo.incident(i) {
        let msg = inbox
            .iter()
            .find(|m| m.sender == inc.neighbor)
            .ok_or(ControllerError::MissingNeighborMessage {
                bus: topo.bus_id(i),
                neighbor: topo.bus_id(inc.neighbor),
            })?;
        let line = topo.line(inc.line);
        let b = line.susceptance;
        let (sig_lo, sig_hi) = (ctrl.sigma_lower[inc.line], ctrl.sigma_upper[inc.line]);
        if inc.leaving {
            phi_rate += b * (mu - msg.mu + sig_lo - sig_hi);
            let flow = b * (ctrl.phi[i] - msg.phi);
            virtual_out += flow;
            if let Some((lo, hi)) = problem.line_limits[inc.line] {
                out.sigma_lower[inc.line] = gains.eps_sigma * positive_projection(lo - flow, sig_lo);
                out.sigma_upper[inc.line] = gains.eps_sigma * positive_projection(flow - hi, sig_hi);
            }
        } else {
            phi_rate -= b * (msg.mu - mu + sig_lo - sig_hi);
            virtual_out -= b * (msg.phi - ctrl.phi[i]);
        }
    }
    out.phi[i] = gains.eps_phi[i] * phi_rate;
    out.r[i] = gains.k[i]
        * (damping_used[i] * omega + net_line_injection(i, &meas.line_flow, topo) - virtual_out);
    Ok(())
}

/// Controller state sitting at a primal-dual point of the problem with `ω = 0`.
pub fn state_from_solution<T: Scalar>(
    solution: &OlfcSolution<T>,
    problem: &OlfcProblem<T>,
    gains: &ControllerGains<T>,
) -> ControllerState<T> {
    let mult: &Multipliers<T> = &solution.multipliers;
    let n = problem.n_buses();
    let mut s = ControllerState::zeros(problem);
    s.d.copy_from_slice(&solution.d);
    s.q.copy_from_slice(&solution.q);
    s.phi.copy_from_slice(&solution.phi);
    for i in 0..n {
        s.r[i] = match problem.topology.kind(i) {
            BusKind::Generator => internal_from_mu(
                mult.mu[i],
                solution.omega[i],
                gains.k[i],
                gains.eps_mu[i],
                gains.eps_lambda[i],
            ),
            BusKind::Load => gains.k[i] / gains.eps_mu[i] * mult.mu[i],
        };
    }
    s.gamma_lower.copy_from_slice(&mult.gamma_lower);
    s.gamma_upper.copy_from_slice(&mult.gamma_upper);
    s.delta_lower.copy_from_slice(&mult.delta_lower);
    s.delta_upper.copy_from_slice(&mult.delta_upper);
    s.sigma_lower.copy_from_slice(&mult.sigma_lower);
    s.sigma_upper.copy_from_slice(&mult.sigma_upper);
    s.zeta_upper.clone_from(&mult.zeta_upper);
    s.zeta_lower.clone_from(&mult.zeta_lower);
    s
}

#[cfg(test)]
mod tests;
