//! Electricity-heat network topology and the physical-layer dynamics.
//!
//! Buses are either generator buses, whose frequency deviation obeys the swing
//! equation, or load buses, whose frequency deviation is fixed algebraically by
//! the power balance. Lines carry DC power flow deviations. The real phase angle
//! is never stored: line flows are integrated directly from frequency differences.
//!
//! Buses are addressed internally by dense index (`0..n`); [`BusId`] is the
//! user-facing label carried through scenario files and output columns.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dense index of a line in [`NetworkTopology::lines`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LineId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line<T> {
    pub from: usize,
    pub to: usize,
    pub susceptance: T,
}

/// One end of a line as seen from a bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incidence {
    pub line: usize,
    pub neighbor: usize,
    /// `true` when the line is oriented away from this bus.
    pub leaving: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network has no buses")]
    Empty,
    #[error("bus {0} declared more than once")]
    DuplicateBus(BusId),
    #[error("line references unknown bus {0}")]
    UnknownBus(BusId),
    #[error("line {0}-{0} is a self-loop")]
    SelfLoop(BusId),
    #[error("more than one line from bus {0} to bus {1}")]
    DuplicateLine(BusId, BusId),
    #[error("line {0}-{1} has non-positive susceptance {2}")]
    NonPositiveSusceptance(BusId, BusId, f64),
    #[error("bus {bus}: damping must be > 0 (load-bus power balance divides by it), got {value}")]
    NonPositiveDamping { bus: BusId, value: f64 },
    #[error("generator bus {bus}: inertia must be > 0, got {value}")]
    NonPositiveInertia { bus: BusId, value: f64 },
    #[error("bus {bus}: heat buffer bounds must satisfy lower <= 0 <= upper, got [{lower}, {upper}]")]
    BufferBounds { bus: BusId, lower: f64, upper: f64 },
    #[error("expected {expected} bus parameter entries, got {got}")]
    ParamCount { expected: usize, got: usize },
}

/// Directed graph of buses and lines with generator/load partition.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology<T> {
    bus_ids: Vec<BusId>,
    kinds: Vec<BusKind>,
    lines: Vec<Line<T>>,
    incidence: Vec<Vec<Incidence>>,
    index: HashMap<BusId, usize>,
}

impl<T: Scalar> NetworkTopology<T> {
    /// Builds a topology from `(id, kind)` buses and `(from, to, susceptance)` lines.
    ///
    /// Bus order is preserved; it defines the dense index used everywhere else.
    pub fn new(
        buses: &[(BusId, BusKind)],
        lines: &[(BusId, BusId, T)],
    ) -> Result<Self, NetworkError> {
        if buses.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (i, (id, _)) in buses.iter().enumerate() {
            if index.insert(*id, i).is_some() {
                return Err(NetworkError::DuplicateBus(*id));
            }
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(lines.len());
        for &(from, to, b) in lines {
            let f = *index.get(&from).ok_or(NetworkError::UnknownBus(from))?;
            let t = *index.get(&to).ok_or(NetworkError::UnknownBus(to))?;
            if f == t {
                return Err(NetworkError::SelfLoop(from));
            }
            if !seen.insert((f, t)) {
                return Err(NetworkError::DuplicateLine(from, to));
            }
            if !b.is_strictly_positive() {
                return Err(NetworkError::NonPositiveSusceptance(from, to, b.as_f64()));
            }
            out.push(Line {
                from: f,
                to: t,
                susceptance: b,
            });
        }
        let mut incidence = vec![Vec::new(); buses.len()];
        for (l, line) in out.iter().enumerate() {
            incidence[line.from].push(Incidence {
                line: l,
                neighbor: line.to,
                leaving: true,
            });
            incidence[line.to].push(Incidence {
                line: l,
                neighbor: line.from,
                leaving: false,
            });
        }
        Ok(Self {
            bus_ids: buses.iter().map(|b| b.0).collect(),
            kinds: buses.iter().map(|b| b.1).collect(),
            lines: out,
            incidence,
            index,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn bus_id(&self, bus: usize) -> BusId {
        self.bus_ids[bus]
    }

    pub fn bus_ids(&self) -> &[BusId] {
        &self.bus_ids
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn kind(&self, bus: usize) -> BusKind {
        self.kinds[bus]
    }

    pub fn is_generator(&self, bus: usize) -> bool {
        self.kinds[bus] == BusKind::Generator
    }

    pub fn lines(&self) -> &[Line<T>] {
        &self.lines
    }

    pub fn line(&self, l: usize) -> &Line<T> {
        &self.lines[l]
    }

    /// Lines touching `bus`, in line order.
    pub fn incident(&self, bus: usize) -> &[Incidence] {
        &self.incidence[bus]
    }

    /// Distinct graph neighbors of `bus`, ascending by bus index.
    pub fn neighbors(&self, bus: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self.incidence[bus].iter().map(|i| i.neighbor).collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    /// `from-to` label of a line, using bus ids.
    pub fn line_name(&self, l: usize) -> String {
        let line = &self.lines[l];
        format!("{}-{}", self.bus_ids[line.from], self.bus_ids[line.to])
    }

    /// Connected-component label per bus. Labels are the lowest bus index in the
    /// component, so the label bus doubles as the component's angle reference.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n_buses();
        let mut label = vec![usize::MAX; n];
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = start;
            let mut queue = VecDeque::from([start]);
            while let Some(b) = queue.pop_front() {
                for inc in &self.incidence[b] {
                    if label[inc.neighbor] == usize::MAX {
                        label[inc.neighbor] = start;
                        queue.push_back(inc.neighbor);
                    }
                }
            }
        }
        label
    }

    /// Hop distance between two buses, `None` if disconnected.
    pub fn hop_distance(&self, a: usize, b: usize) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.n_buses()];
        dist[a] = 0;
        let mut queue = VecDeque::from([a]);
        while let Some(x) = queue.pop_front() {
            if x == b {
                return Some(dist[x]);
            }
            for inc in &self.incidence[x] {
                if dist[inc.neighbor] == usize::MAX {
                    dist[inc.neighbor] = dist[x] + 1;
                    queue.push_back(inc.neighbor);
                }
            }
        }
        None
    }
}

/// Per-bus physical parameters. All power quantities are per-unit deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct BusPhysicalParams<T> {
    /// Generator inertia `M_i`; ignored on load buses.
    pub inertia: T,
    /// Total damping `D_i` (generator plus frequency-sensitive load).
    pub damping: T,
    /// Uncontrollable electric injection `P_i^in`.
    pub electric_injection: T,
    /// Uncontrollable heat injection `Q_i^in`.
    pub heat_injection: T,
    /// Heat buffer bounds `[lower, upper]` on `Q_i^in - q_i`.
    pub heat_buffer_bounds: (T, T),
}

impl<T: Scalar> BusPhysicalParams<T> {
    pub fn validate(&self, id: BusId, kind: BusKind, errors: &mut Vec<NetworkError>) {
        if !self.damping.is_strictly_positive() {
            errors.push(NetworkError::NonPositiveDamping {
                bus: id,
                value: self.damping.as_f64(),
            });
        }
        if kind == BusKind::Generator && !self.inertia.is_strictly_positive() {
            errors.push(NetworkError::NonPositiveInertia {
                bus: id,
                value: self.inertia.as_f64(),
            });
        }
        let (lo, hi) = self.heat_buffer_bounds;
        if !(lo <= T::zero() && T::zero() <= hi) {
            errors.push(NetworkError::BufferBounds {
                bus: id,
                lower: lo.as_f64(),
                upper: hi.as_f64(),
            });
        }
    }
}

/// Physical state: frequency deviation per bus, flow deviation per line and
/// heat-buffer usage per bus.
///
/// `omega` on load buses is algebraic; it is kept up to date by the simulator
/// but never integrated.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalState<T> {
    pub omega: Vec<T>,
    pub line_flow: Vec<T>,
    pub heat_buffer: Vec<T>,
}

impl<T: Scalar> PhysicalState<T> {
    pub fn zeros(n_buses: usize, n_lines: usize) -> Self {
        Self {
            omega: vec![T::zero(); n_buses],
            line_flow: vec![T::zero(); n_lines],
            heat_buffer: vec![T::zero(); n_buses],
        }
    }
}

/// Signed incidence matrix, `|N|` rows by `|E|` columns.
pub fn build_incidence<T: Scalar>(topology: &NetworkTopology<T>) -> Vec<Vec<i8>> {
    let mut c = vec![vec![0i8; topology.n_lines()]; topology.n_buses()];
    for (l, line) in topology.lines().iter().enumerate() {
        c[line.from][l] = 1;
        c[line.to][l] = -1;
    }
    c
}

/// DC flow `B (angle_i - angle_j)`.
#[inline]
pub fn dc_flow<T: Scalar>(susceptance: T, angle_i: T, angle_j: T) -> T {
    susceptance * (angle_i - angle_j)
}

/// Power leaving `bus` over its lines: outgoing flows minus incoming flows.
pub fn net_line_injection<T: Scalar>(
    bus: usize,
    line_flow: &[T],
    topology: &NetworkTopology<T>,
) -> T {
    topology
        .incident(bus)
        .iter()
        .fold(T::zero(), |acc, inc| {
            if inc.leaving {
                acc + line_flow[inc.line]
            } else {
                acc - line_flow[inc.line]
            }
        })
}

/// Heat buffer usage `Q^in - q`.
#[inline]
pub fn heat_buffer<T: Scalar>(heat_injection: T, q: T) -> T {
    heat_injection - q
}

/// Frequencies at every bus: generator entries copied from `omega`, load entries
/// solved from `0 = P^in - d - D w - P^e`.
pub fn resolve_frequencies<T: Scalar>(
    omega: &[T],
    line_flow: &[T],
    d: &[T],
    params: &[BusPhysicalParams<T>],
    topology: &NetworkTopology<T>,
) -> Vec<T> {
    (0..topology.n_buses())
        .map(|i| match topology.kind(i) {
            BusKind::Generator => omega[i],
            BusKind::Load => {
                let p = &params[i];
                (p.electric_injection - d[i] - net_line_injection(i, line_flow, topology))
                    / p.damping
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalDerivatives<T> {
    /// `dω/dt` on generator buses, zero on load buses.
    pub omega_dot: Vec<T>,
    pub line_flow_dot: Vec<T>,
    /// Frequencies used for the line dynamics, load buses solved algebraically.
    pub omega: Vec<T>,
}

/// Swing equation on generator buses, algebraic balance on load buses and
/// `dP_ij/dt = B_ij (ω_i - ω_j)` on lines.
pub fn physical_derivatives<T: Scalar>(
    state: &PhysicalState<T>,
    d: &[T],
    params: &[BusPhysicalParams<T>],
    topology: &NetworkTopology<T>,
) -> PhysicalDerivatives<T> {
    let omega = resolve_frequencies(&state.omega, &state.line_flow, d, params, topology);
    let omega_dot = (0..topology.n_buses())
        .map(|i| match topology.kind(i) {
            BusKind::Generator => {
                let p = &params[i];
                (p.electric_injection
                    - d[i]
                    - p.damping * omega[i]
                    - net_line_injection(i, &state.line_flow, topology))
                    / p.inertia
            }
            BusKind::Load => T::zero(),
        })
        .collect();
    let line_flow_dot = topology
        .lines()
        .iter()
        .map(|line| line.susceptance * (omega[line.from] - omega[line.to]))
        .collect();
    PhysicalDerivatives {
        omega_dot,
        line_flow_dot,
        omega,
    }
}
