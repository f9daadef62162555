//! Distributed optimal load-side frequency control for integrated electricity-heat
//! networks.
//!
//! The crate is organised around the closed loop a bus controller lives in:
//!
//! * [`network`]: topology, incidence matrix, DC flows and the swing/line-flow
//!   physics of generator and load buses.
//! * [`olfc`]: the constrained optimal control problem, its KKT residual and a
//!   centralized oracle solver used to certify the distributed limit point.
//! * [`controller`]: per-bus primal-dual update laws driven only by local
//!   measurements and neighbor messages.
//! * [`comm`]: the synchronous neighbor exchange of `(mu, phi)`.
//! * [`sim`]: closed-loop integration, Lyapunov monitoring, steady-state reports
//!   and damping sweeps.
//! * [`scenario`]: TOML scenario files, validation and built-in presets.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`/`*32`
//! aliases below fix the common choices.

#![allow(clippy::needless_range_loop)]

pub mod comm;
pub mod controller;
pub mod export;
pub(crate) mod linalg;
pub mod network;
pub mod olfc;
pub mod scalar;
pub mod scenario;
pub mod sim;

pub use scalar::Scalar;

pub use comm::{CommConfig, Exchange, NeighborMessage};
pub use controller::{
    ControllerGains, ControllerOptions, ControllerState, DampingModel, PrimalMode,
};
pub use network::{BusId, BusKind, BusPhysicalParams, LineId, NetworkTopology, PhysicalState};
pub use olfc::{
    centralized_solve, kkt_residual, ChpRegion, CostFunction, KktResidual, OlfcProblem,
    OlfcSolution, OracleError,
};
pub use scenario::{load_scenario, ScenarioError};
pub use sim::{simulate, Method, Scenario, SimError, SteadyStateReport, Trajectory, Verdict};

pub type Topology64 = NetworkTopology<f64>;
pub type Problem64 = OlfcProblem<f64>;
pub type Solution64 = OlfcSolution<f64>;
pub type Scenario64 = Scenario<f64>;
pub type Trajectory64 = Trajectory<f64>;

pub type Topology32 = NetworkTopology<f32>;
pub type Problem32 = OlfcProblem<f32>;
pub type Solution32 = OlfcSolution<f32>;
pub type Scenario32 = Scenario<f32>;
pub type Trajectory32 = Trajectory<f32>;
