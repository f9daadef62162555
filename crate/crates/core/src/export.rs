//! CSV and key-value writers for trajectories, oracle solutions, reports and
//! message logs. Floats use the shortest round-trip representation (see
//! [`format_number`]), so equal runs produce byte-identical files.

use std::io::Write;

use crate::comm::LoggedMessage;
use crate::network::NetworkTopology;
use crate::olfc::{OlfcProblem, OlfcSolution};
use crate::sim::Trajectory;
use crate::Scalar;

fn num<T: Scalar>(x: T) -> String {
    format_number(x.as_f64())
}

/// Shortest round-trip decimal, in exponent form outside `[1e-4, 1e15)`.
pub fn format_number(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Column names of [`write_trajectory`].
pub fn trajectory_header<T: Scalar>(traj: &Trajectory<T>) -> Vec<String> {
    let ids: Vec<String> = traj.bus_ids.iter().map(ToString::to_string).collect();
    let mut h = vec!["time".to_string()];
    let per_bus = |h: &mut Vec<String>, name: &str| h.extend(ids.iter().map(|id| format!("{name}.{id}")));
    per_bus(&mut h, "omega");
    h.extend(traj.line_names.iter().map(|l| format!("P.{l}")));
    for name in ["d", "q", "Qv", "phi", "r", "mu", "gamma_lower", "gamma_upper", "delta_lower", "delta_upper"] {
        per_bus(&mut h, name);
    }
    if let Some(first) = traj.samples.first() {
        for (name, zeta) in [("zeta_upper", &first.ctrl.zeta_upper), ("zeta_lower", &first.ctrl.zeta_lower)] {
            for (i, planes) in zeta.iter().enumerate() {
                h.extend((0..planes.len()).map(|k| format!("{name}.{}.{}", ids[i], k + 1)));
            }
        }
    }
    for name in ["sigma_lower", "sigma_upper"] {
        h.extend(traj.line_names.iter().map(|l| format!("{name}.{l}")));
    }
    h.extend(
        ["U", "objective", "violation.chp", "violation.demand", "violation.buffer", "violation.line"]
            .map(String::from),
    );
    h
}

pub fn write_trajectory<T: Scalar, W: Write>(traj: &Trajectory<T>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(traj))?;
    for s in &traj.samples {
        let c = &s.ctrl;
        let mut row = vec![num(s.time)];
        let vectors = [
            &s.physical.omega,
            &s.physical.line_flow,
            &s.d,
            &s.q,
            &s.physical.heat_buffer,
            &c.phi,
            &c.r,
            &s.mu,
            &c.gamma_lower,
            &c.gamma_upper,
            &c.delta_lower,
            &c.delta_upper,
        ];
        row.extend(vectors.into_iter().flatten().map(|&x| num(x)));
        row.extend(c.zeta_upper.iter().chain(&c.zeta_lower).flatten().map(|&x| num(x)));
        row.extend(c.sigma_lower.iter().chain(&c.sigma_upper).map(|&x| num(x)));
        row.push(s.lyapunov.map(num).unwrap_or_default());
        row.push(num(s.objective));
        let v = &s.violations;
        row.extend([v.chp, v.demand_bounds, v.heat_buffer, v.line_flow].map(num));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `(kind, id, variable, value)` for every primal and dual entry.
pub fn write_oracle<T: Scalar, W: Write>(
    solution: &OlfcSolution<T>,
    problem: &OlfcProblem<T>,
    out: W,
) -> csv::Result<()> {
    let topo = &problem.topology;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "id", "variable", "value"])?;
    let m = &solution.multipliers;
    for i in 0..problem.n_buses() {
        let id = topo.bus_id(i).to_string();
        let mut entries = vec![
            ("omega", solution.omega[i]),
            ("d", solution.d[i]),
            ("q", solution.q[i]),
            ("phi", solution.phi[i]),
            ("lambda", m.lambda[i]),
            ("mu", m.mu[i]),
            ("gamma_lower", m.gamma_lower[i]),
            ("gamma_upper", m.gamma_upper[i]),
            ("delta_lower", m.delta_lower[i]),
            ("delta_upper", m.delta_upper[i]),
        ];
        if problem.electric[i].is_none() {
            entries.retain(|(k, _)| !matches!(*k, "d" | "gamma_lower" | "gamma_upper"));
        }
        if problem.heat[i].is_none() {
            entries.retain(|(k, _)| !matches!(*k, "q" | "delta_lower" | "delta_upper"));
        }
        for (var, v) in entries {
            w.write_record(["bus", &id, var, &num(v)])?;
        }
        for (name, zeta) in [("zeta_upper", &m.zeta_upper[i]), ("zeta_lower", &m.zeta_lower[i])] {
            for (k, &z) in zeta.iter().enumerate() {
                w.write_record(["bus", &id, &format!("{name}.{}", k + 1), &num(z)])?;
            }
        }
    }
    for l in 0..problem.n_lines() {
        let name = topo.line_name(l);
        w.write_record(["line", &name, "P", &num(solution.line_flow[l])])?;
        if problem.line_limits[l].is_some() {
            w.write_record(["line", &name, "sigma_lower", &num(m.sigma_lower[l])])?;
            w.write_record(["line", &name, "sigma_upper", &num(m.sigma_upper[l])])?;
        }
    }
    w.write_record(["problem", "", "objective", &num(solution.objective)])?;
    w.flush()?;
    Ok(())
}

/// Ordered key-value report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(pub Vec<(String, String)>);

impl KeyValues {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// `key: value` lines.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (k, v) in &self.0 {
            writeln!(out, "{k}: {v}")?;
        }
        Ok(())
    }

    /// Two-column CSV.
    pub fn write_flat<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["key", "value"])?;
        for (k, v) in &self.0 {
            w.write_record([k, v])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rows `(round, edge, mu, phi, dropped)` with edges written `sender->receiver`.
pub fn write_message_log<T: Scalar, W: Write>(
    log: &[LoggedMessage<T>],
    topology: &NetworkTopology<T>,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "edge", "mu", "phi", "dropped"])?;
    for m in log {
        w.write_record([
            m.round.to_string(),
            format!("{}->{}", topology.bus_id(m.sender), topology.bus_id(m.receiver)),
            num(m.mu),
            num(m.phi),
            m.dropped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
