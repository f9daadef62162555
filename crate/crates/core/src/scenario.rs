//! TOML scenario files and the built-in presets.
//!
//! A scenario file holds one experiment: buses with their physical data and
//! optional electric/heat units, lines, controller gains and options,
//! disturbances, integrator settings and the communication model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::CommConfig;
use crate::controller::{ControllerGains, ControllerOptions, DampingModel, PrimalMode};
use crate::network::{BusId, BusKind, BusPhysicalParams, NetworkTopology};
use crate::olfc::{
    centralized_solve, ChpRegion, CostFunction, ElectricUnit, HalfPlane, HeatUnit, OlfcProblem,
    OracleError,
};
use crate::sim::{Disturbance, IntegratorConfig, Method, Scenario};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("scenario is invalid:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(rename = "bus")]
    pub buses: Vec<BusEntry>,
    #[serde(rename = "line", default)]
    pub lines: Vec<LineEntry>,
    #[serde(default)]
    pub controller: ControllerEntry,
    #[serde(default)]
    pub gains: GainsEntry,
    #[serde(rename = "disturbance", default)]
    pub disturbances: Vec<DisturbanceEntry>,
    #[serde(default)]
    pub integrator: IntegratorEntry,
    #[serde(default)]
    pub comm: CommEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub id: u32,
    pub kind: BusKind,
    #[serde(default)]
    pub inertia: f64,
    pub damping: f64,
    #[serde(default)]
    pub p_in: f64,
    #[serde(default)]
    pub q_in: f64,
    /// `[lower, upper]` on `Q^in - q`.
    #[serde(default)]
    pub buffer: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub electric: Option<ElectricEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heat: Option<HeatEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectricEntry {
    /// `[quadratic, linear]`
    pub cost: [f64; 2],
    pub bounds: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatEntry {
    /// `[quadratic, linear]`
    pub cost: [f64; 2],
    /// `[slope, intercept]` pairs of `q <= slope d + intercept`.
    #[serde(default)]
    pub chp_upper: Vec<[f64; 2]>,
    /// `[slope, intercept]` pairs of `q >= slope d + intercept`.
    #[serde(default)]
    pub chp_lower: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub from: u32,
    pub to: u32,
    pub susceptance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limits: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerEntry {
    pub chp_enforced: bool,
    pub primal_mode: PrimalModeEntry,
    pub control_load_buses: bool,
    pub damping: DampingEntry,
}

impl Default for ControllerEntry {
    fn default() -> Self {
        Self {
            chp_enforced: true,
            primal_mode: PrimalModeEntry::Dynamic,
            control_load_buses: false,
            damping: DampingEntry::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimalModeEntry {
    Dynamic,
    Instantaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DampingEntry {
    Exact,
    Multiplier { k: f64 },
    Additive { offsets: Vec<f64> },
}

/// A gain given once for every bus or per bus in bus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerBus {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerBus {
    fn expand(&self, n: usize, name: &str, errs: &mut Vec<String>) -> Vec<f64> {
        match self {
            Self::Uniform(v) => vec![*v; n],
            Self::Each(v) => {
                if v.len() != n {
                    errs.push(format!("gains.{name} has {} entries for {n} buses", v.len()));
                }
                v.clone()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsEntry {
    pub eps_d: PerBus,
    pub eps_q: PerBus,
    pub eps_phi: PerBus,
    /// Defaults to `1 / M` on generator buses and 1 on load buses.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_lambda: Option<PerBus>,
    pub eps_mu: PerBus,
    pub k: PerBus,
    pub eps_zeta: f64,
    pub eps_gamma: f64,
    pub eps_delta: f64,
    pub eps_sigma: f64,
}

impl Default for GainsEntry {
    fn default() -> Self {
        Self {
            eps_d: PerBus::Uniform(1.0),
            eps_q: PerBus::Uniform(1.0),
            eps_phi: PerBus::Uniform(1.0),
            eps_lambda: None,
            eps_mu: PerBus::Uniform(1.0),
            k: PerBus::Uniform(1.0),
            eps_zeta: 1.0,
            eps_gamma: 1.0,
            eps_delta: 1.0,
            eps_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEntry {
    pub time: f64,
    pub bus: u32,
    #[serde(default)]
    pub delta_p: f64,
    #[serde(default)]
    pub delta_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorEntry {
    pub step: f64,
    pub duration: f64,
    pub method: MethodEntry,
    pub decimation: usize,
    pub monitor_lyapunov: bool,
}

impl Default for IntegratorEntry {
    fn default() -> Self {
        Self {
            step: 1e-3,
            duration: 60.0,
            method: MethodEntry::Rk4,
            decimation: 10,
            monitor_lyapunov: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodEntry {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommEntry {
    pub delay_rounds: usize,
    pub drop_probability: f64,
    pub seed: u64,
    pub replay_on_drop: bool,
    pub log_messages: bool,
}

impl Default for CommEntry {
    fn default() -> Self {
        let c = CommConfig::default();
        Self {
            delay_rounds: c.delay_rounds,
            drop_probability: c.drop_probability,
            seed: c.seed,
            replay_on_drop: c.replay_on_drop,
            log_messages: false,
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario files always serialize")
    }

    /// Converts to a validated scenario, collecting every violated invariant.
    pub fn build<T: Scalar>(&self) -> Result<Scenario<T>, ScenarioError> {
        let mut errs = Vec::new();
        let t = T::of;
        let buses: Vec<(BusId, BusKind)> = self.buses.iter().map(|b| (BusId(b.id), b.kind)).collect();
        let lines: Vec<(BusId, BusId, T)> = self
            .lines
            .iter()
            .map(|l| (BusId(l.from), BusId(l.to), t(l.susceptance)))
            .collect();
        let topology = match NetworkTopology::new(&buses, &lines) {
            Ok(topo) => topo,
            Err(e) => {
                errs.push(e.to_string());
                return Err(ScenarioError::Validation(errs));
            }
        };
        let n = topology.n_buses();

        let params = self
            .buses
            .iter()
            .map(|b| BusPhysicalParams {
                inertia: t(b.inertia),
                damping: t(b.damping),
                electric_injection: t(b.p_in),
                heat_injection: t(b.q_in),
                heat_buffer_bounds: (t(b.buffer[0]), t(b.buffer[1])),
            })
            .collect();
        let plane = |p: &[f64; 2]| HalfPlane::new(t(p[0]), t(p[1]));
        let problem = OlfcProblem {
            buses: params,
            electric: self
                .buses
                .iter()
                .map(|b| {
                    b.electric.as_ref().map(|e| ElectricUnit {
                        cost: CostFunction::new(t(e.cost[0]), t(e.cost[1])),
                        bounds: (t(e.bounds[0]), t(e.bounds[1])),
                    })
                })
                .collect(),
            heat: self
                .buses
                .iter()
                .map(|b| {
                    b.heat.as_ref().map(|h| HeatUnit {
                        cost: CostFunction::new(t(h.cost[0]), t(h.cost[1])),
                        chp: ChpRegion {
                            upper: h.chp_upper.iter().map(plane).collect(),
                            lower: h.chp_lower.iter().map(plane).collect(),
                        },
                    })
                })
                .collect(),
            line_limits: self
                .lines
                .iter()
                .map(|l| l.limits.map(|[lo, hi]| (t(lo), t(hi))))
                .collect(),
            topology,
        };

        let g = &self.gains;
        let eps_lambda = match &g.eps_lambda {
            Some(v) => v.expand(n, "eps_lambda", &mut errs),
            None => self
                .buses
                .iter()
                .map(|b| match b.kind {
                    BusKind::Generator if b.inertia > 0.0 => 1.0 / b.inertia,
                    _ => 1.0,
                })
                .collect(),
        };
        let vec_t = |v: Vec<f64>| v.into_iter().map(t).collect::<Vec<T>>();
        let gains = ControllerGains {
            eps_d: vec_t(g.eps_d.expand(n, "eps_d", &mut errs)),
            eps_q: vec_t(g.eps_q.expand(n, "eps_q", &mut errs)),
            eps_phi: vec_t(g.eps_phi.expand(n, "eps_phi", &mut errs)),
            eps_lambda: vec_t(eps_lambda),
            eps_mu: vec_t(g.eps_mu.expand(n, "eps_mu", &mut errs)),
            k: vec_t(g.k.expand(n, "k", &mut errs)),
            eps_zeta: t(g.eps_zeta),
            eps_gamma: t(g.eps_gamma),
            eps_delta: t(g.eps_delta),
            eps_sigma: t(g.eps_sigma),
        };

        let mut disturbances = Vec::new();
        for d in &self.disturbances {
            match problem.topology.bus_index(BusId(d.bus)) {
                Some(bus) => disturbances.push(Disturbance {
                    time: t(d.time),
                    bus,
                    delta_p: t(d.delta_p),
                    delta_q: t(d.delta_q),
                }),
                None => errs.push(format!("disturbance at t = {} names unknown bus {}", d.time, d.bus)),
            }
        }

        let c = &self.controller;
        let scenario = Scenario {
            name: self.name.clone(),
            problem,
            gains,
            options: ControllerOptions {
                chp_enforced: c.chp_enforced,
                primal_mode: match c.primal_mode {
                    PrimalModeEntry::Dynamic => PrimalMode::Dynamic,
                    PrimalModeEntry::Instantaneous => PrimalMode::Instantaneous,
                },
                control_load_buses: c.control_load_buses,
            },
            damping: match &c.damping {
                DampingEntry::Exact => DampingModel::Exact,
                DampingEntry::Multiplier { k } => DampingModel::Multiplier(t(*k)),
                DampingEntry::Additive { offsets } => DampingModel::Additive(vec_t(offsets.clone())),
            },
            disturbances,
            integrator: IntegratorConfig {
                step: t(self.integrator.step),
                duration: t(self.integrator.duration),
                method: match self.integrator.method {
                    MethodEntry::Euler => Method::Euler,
                    MethodEntry::Rk4 => Method::Rk4,
                },
                decimation: self.integrator.decimation,
            },
            comm: CommConfig {
                delay_rounds: self.comm.delay_rounds,
                drop_probability: self.comm.drop_probability,
                seed: self.comm.seed,
                replay_on_drop: self.comm.replay_on_drop,
            },
            monitor_lyapunov: self.integrator.monitor_lyapunov,
            log_messages: self.comm.log_messages,
        };

        errs.extend(scenario.validate());
        if errs.is_empty() {
            let tol = T::of(1e-6).max(T::epsilon().sqrt() * T::of(10.0));
            for (label, problem) in [
                ("before disturbances", scenario.problem.clone()),
                ("after disturbances", scenario.final_problem()),
            ] {
                if let Err(OracleError::Infeasible { violation }) = centralized_solve(&problem, tol, 500) {
                    errs.push(format!(
                        "problem {label} is infeasible: constraints cannot be met closer than {violation:.3e}"
                    ));
                }
            }
        }
        if errs.is_empty() {
            Ok(scenario)
        } else {
            Err(ScenarioError::Validation(errs))
        }
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario<T: Scalar>(path: impl AsRef<Path>) -> Result<Scenario<T>, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioFile::parse(&text)?.build()
}

pub fn parse_scenario<T: Scalar>(text: &str) -> Result<Scenario<T>, ScenarioError> {
    ScenarioFile::parse(text)?.build()
}

const PRESETS: &[(&str, &str)] = &[
    ("paper-bus3", include_str!("../presets/paper-bus3.toml")),
    ("single-bus", include_str!("../presets/single-bus.toml")),
    ("single-chp", include_str!("../presets/single-chp.toml")),
    ("two-bus", include_str!("../presets/two-bus.toml")),
    ("two-bus-chp", include_str!("../presets/two-bus-chp.toml")),
    ("two-bus-line-limit", include_str!("../presets/two-bus-line-limit.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// TOML source of a built-in preset.
pub fn preset_source(name: &str) -> Result<&'static str, ScenarioError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| ScenarioError::UnknownPreset(name.to_string()))
}

pub fn preset_file(name: &str) -> Result<ScenarioFile, ScenarioError> {
    ScenarioFile::parse(preset_source(name)?)
}

pub fn load_preset<T: Scalar>(name: &str) -> Result<Scenario<T>, ScenarioError> {
    preset_file(name)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_loads() {
        for name in preset_names() {
            let s: Scenario<f64> = load_preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
        }
    }

    #[test]
    fn bus3_preset_contents() {
        let s: Scenario<f64> = load_preset("paper-bus3").unwrap();
        let topo = &s.problem.topology;
        assert_eq!(topo.n_buses(), 3);
        assert!((0..3).all(|i| topo.is_generator(i)));
        let b3 = topo.bus_index(BusId(3)).unwrap();
        let (dp, dq): (f64, f64) = s
            .disturbances
            .iter()
            .filter(|d| d.bus == b3)
            .fold((0.0, 0.0), |(p, q), d| (p + d.delta_p, q + d.delta_q));
        assert_eq!((dp, dq), (0.3, 0.3));
        assert_eq!(s.problem.buses[b3].heat_buffer_bounds, (-0.1, 0.1));
        let chp = &s.problem.heat[b3].as_ref().unwrap().chp;
        assert_eq!(chp.upper, vec![HalfPlane::new(0.5, 0.0)]);
        assert!(chp.lower.is_empty());
    }

    #[test]
    fn round_trips_through_toml() {
        let file = preset_file("paper-bus3").unwrap();
        let again = ScenarioFile::parse(&file.to_toml()).unwrap();
        assert_eq!(file, again);
    }

    fn with_damping(d: f64) -> String {
        preset_source("two-bus").unwrap().replacen("damping = 1.0", &format!("damping = {d}"), 1)
    }

    #[test]
    fn zero_damping_names_bus_and_reason() {
        let err = parse_scenario::<f64>(&with_damping(0.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bus 1"), "{msg}");
        assert!(msg.contains("damping must be > 0"), "{msg}");
    }

    #[test]
    fn lists_every_violation() {
        let text = with_damping(-1.0).replace("step = 0.001", "step = -0.001");
        match parse_scenario::<f64>(&text) {
            Err(ScenarioError::Validation(errs)) => assert!(errs.len() >= 2, "{errs:?}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unsorted_disturbances_rejected() {
        let text = format!(
            "{}\n[[disturbance]]\ntime = 5.0\nbus = 1\ndelta_p = 0.1\n\n[[disturbance]]\ntime = 2.0\nbus = 2\ndelta_p = 0.1\n",
            preset_source("two-bus").unwrap().split("[[disturbance]]").next().unwrap()
        );
        let err = parse_scenario::<f64>(&text).unwrap_err().to_string();
        assert!(err.contains("not sorted"), "{err}");
    }

    #[test]
    fn infeasible_problem_rejected() {
        let text = preset_source("single-chp").unwrap().replace("delta_q = 0.2", "delta_q = 0.3");
        let err = parse_scenario::<f64>(&text).unwrap_err().to_string();
        assert!(err.contains("infeasible"), "{err}");
    }

    #[test]
    fn empty_disturbance_list_is_valid() {
        let text = preset_source("two-bus").unwrap().split("[[disturbance]]").next().unwrap().to_string();
        let s: Scenario<f64> = parse_scenario(&text).unwrap();
        assert!(s.disturbances.is_empty());
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = ScenarioFile::parse("name = \"x\"\n[[bus]]\nid = \"one\"\n").unwrap_err().to_string();
        assert!(err.contains("line 3") || err.contains("3:"), "{err}");
    }

    #[test]
    fn inertia_default_sets_eps_lambda() {
        let s: Scenario<f64> = load_preset("two-bus").unwrap();
        for (i, b) in s.problem.buses.iter().enumerate() {
            assert_eq!(s.gains.eps_lambda[i], 1.0 / b.inertia);
        }
    }
}
