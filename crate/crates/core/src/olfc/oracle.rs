use thiserror::Error;

use super::qp::{Qp, QpFailure};
use super::{kkt_residual, objective, Multipliers, OlfcProblem, OlfcSolution};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("centralized solver did not reach the KKT tolerance within {0} iterations")]
    NonConvergence(usize),
    #[error("constraint set is empty: least-squares violation bottoms out at {violation:.3e}")]
    Infeasible { violation: f64 },
    #[error("tolerance must be positive")]
    InvalidTolerance,
}

#[derive(Debug, Clone, Copy)]
enum Row {
    ZetaUpper(usize, usize),
    ZetaLower(usize, usize),
    GammaLower(usize),
    GammaUpper(usize),
    DeltaUpper(usize),
    DeltaLower(usize),
    SigmaLower(usize),
    SigmaUpper(usize),
}

struct Layout {
    n_vars: usize,
    omega: Vec<usize>,
    d: Vec<Option<usize>>,
    q: Vec<Option<usize>>,
    flow: Vec<usize>,
    phi: Vec<Option<usize>>,
}

impl Layout {
    fn new<T: Scalar>(problem: &OlfcProblem<T>) -> Self {
        let n = problem.n_buses();
        let mut next = 0usize;
        let mut take = || {
            next += 1;
            next - 1
        };
        let omega = (0..n).map(|_| take()).collect();
        let d = problem.electric.iter().map(|e| e.as_ref().map(|_| take())).collect();
        let q = problem.heat.iter().map(|h| h.as_ref().map(|_| take())).collect();
        let flow = (0..problem.n_lines()).map(|_| take()).collect();
        let comps = problem.topology.components();
        let phi = (0..n).map(|i| (comps[i] != i).then(&mut take)).collect();
        Self {
            n_vars: next,
            omega,
            d,
            q,
            flow,
            phi,
        }
    }
}

fn build<T: Scalar>(problem: &OlfcProblem<T>, layout: &Layout) -> (Qp<T>, Vec<Row>) {
    let topo = &problem.topology;
    let nv = layout.n_vars;
    let mut hdiag = vec![T::zero(); nv];
    let mut c = vec![T::zero(); nv];
    for i in 0..problem.n_buses() {
        hdiag[layout.omega[i]] = problem.buses[i].damping;
        if let (Some(e), Some(j)) = (&problem.electric[i], layout.d[i]) {
            hdiag[j] = e.cost.quadratic;
            c[j] = e.cost.linear;
        }
        if let (Some(h), Some(j)) = (&problem.heat[i], layout.q[i]) {
            hdiag[j] = h.cost.quadratic;
            c[j] = h.cost.linear;
        }
    }

    let zero_row = || vec![T::zero(); nv];
    let mut a = Vec::new();
    let mut b = Vec::new();
    // Physical balance rows, then virtual balance rows; Ax - b equals the printed residual.
    for i in 0..problem.n_buses() {
        let p = &problem.buses[i];
        let mut row = zero_row();
        row[layout.omega[i]] = -p.damping;
        if let Some(j) = layout.d[i] {
            row[j] = -T::one();
        }
        for inc in topo.incident(i) {
            row[layout.flow[inc.line]] = if inc.leaving { -T::one() } else { T::one() };
        }
        a.push(row);
        b.push(-p.electric_injection);
    }
    for i in 0..problem.n_buses() {
        let p = &problem.buses[i];
        let mut row = zero_row();
        if let Some(j) = layout.d[i] {
            row[j] = -T::one();
        }
        for inc in topo.incident(i) {
            let line = topo.line(inc.line);
            let sign = if inc.leaving { T::one() } else { -T::one() };
            if let Some(j) = layout.phi[line.from] {
                row[j] -= sign * line.susceptance;
            }
            if let Some(j) = layout.phi[line.to] {
                row[j] += sign * line.susceptance;
            }
        }
        a.push(row);
        b.push(-p.electric_injection);
    }

    let mut g = Vec::new();
    let mut gb = Vec::new();
    let mut rows = Vec::new();
    for i in 0..problem.n_buses() {
        let p = &problem.buses[i];
        if let (Some(e), Some(j)) = (&problem.electric[i], layout.d[i]) {
            let mut r = zero_row();
            r[j] = -T::one();
            g.push(r);
            gb.push(-e.bounds.0);
            rows.push(Row::GammaLower(i));
            let mut r = zero_row();
            r[j] = T::one();
            g.push(r);
            gb.push(e.bounds.1);
            rows.push(Row::GammaUpper(i));
        }
        if let (Some(h), Some(jq)) = (&problem.heat[i], layout.q[i]) {
            for (k, hp) in h.chp.upper.iter().enumerate() {
                let mut r = zero_row();
                r[jq] = T::one();
                if let Some(jd) = layout.d[i] {
                    r[jd] = -hp.slope;
                }
                g.push(r);
                gb.push(hp.intercept);
                rows.push(Row::ZetaUpper(i, k));
            }
            for (k, hp) in h.chp.lower.iter().enumerate() {
                let mut r = zero_row();
                r[jq] = -T::one();
                if let Some(jd) = layout.d[i] {
                    r[jd] = hp.slope;
                }
                g.push(r);
                gb.push(-hp.intercept);
                rows.push(Row::ZetaLower(i, k));
            }
            let (lo, hi) = p.heat_buffer_bounds;
            let mut r = zero_row();
            r[jq] = -T::one();
            g.push(r);
            gb.push(hi - p.heat_injection);
            rows.push(Row::DeltaUpper(i));
            let mut r = zero_row();
            r[jq] = T::one();
            g.push(r);
            gb.push(p.heat_injection - lo);
            rows.push(Row::DeltaLower(i));
        }
    }
    for (l, lim) in problem.line_limits.iter().enumerate() {
        if let Some((lo, hi)) = *lim {
            let line = topo.line(l);
            let mut flow_row = zero_row();
            if let Some(j) = layout.phi[line.from] {
                flow_row[j] = line.susceptance;
            }
            if let Some(j) = layout.phi[line.to] {
                flow_row[j] = -line.susceptance;
            }
            g.push(flow_row.iter().map(|&v| -v).collect());
            gb.push(-lo);
            rows.push(Row::SigmaLower(l));
            g.push(flow_row);
            gb.push(hi);
            rows.push(Row::SigmaUpper(l));
        }
    }
    (
        Qp {
            hdiag,
            c,
            a,
            b,
            g,
            gb,
        },
        rows,
    )
}

/// Solves the control problem centrally: a least-squares phase-1 proves
/// feasibility, then a proximal augmented-Lagrangian method runs the
/// primal-dual iteration on the problem's Lagrangian until every KKT block is
/// below `tol`.
///
/// The reported line flows are the DC-consistent representative `B (φ_i - φ_j)`;
/// real flows on meshed networks are otherwise only determined up to loop flows.
pub fn centralized_solve<T: Scalar>(
    problem: &OlfcProblem<T>,
    tol: T,
    max_iter: usize,
) -> Result<OlfcSolution<T>, OracleError> {
    if !tol.is_strictly_positive() {
        return Err(OracleError::InvalidTolerance);
    }
    let layout = Layout::new(problem);
    let (qp, rows) = build(problem, &layout);
    let x0 = qp.phase1(tol * T::of(0.1)).map_err(|e| match e {
        QpFailure::Infeasible(v) => OracleError::Infeasible {
            violation: v.as_f64(),
        },
        QpFailure::NonConvergence(k) => OracleError::NonConvergence(k),
    })?;
    let sol = qp
        .solve(x0, tol * T::of(0.1), max_iter)
        .map_err(|e| match e {
            QpFailure::NonConvergence(k) => OracleError::NonConvergence(k),
            QpFailure::Infeasible(v) => OracleError::Infeasible {
                violation: v.as_f64(),
            },
        })?;

    let n = problem.n_buses();
    let x = &sol.x;
    let omega: Vec<T> = layout.omega.iter().map(|&j| x[j]).collect();
    let d: Vec<T> = layout.d.iter().map(|j| j.map_or(T::zero(), |j| x[j])).collect();
    let q: Vec<T> = (0..n)
        .map(|i| layout.q[i].map_or(problem.buses[i].heat_injection, |j| x[j]))
        .collect();
    let phi: Vec<T> = layout.phi.iter().map(|j| j.map_or(T::zero(), |j| x[j])).collect();

    let mut mult = Multipliers::zeros(problem);
    mult.lambda.copy_from_slice(&sol.y[..n]);
    mult.mu.copy_from_slice(&sol.y[n..2 * n]);
    for (row, &z) in rows.iter().zip(&sol.z) {
        match *row {
            Row::ZetaUpper(i, k) => mult.zeta_upper[i][k] = z,
            Row::ZetaLower(i, k) => mult.zeta_lower[i][k] = z,
            Row::GammaLower(i) => mult.gamma_lower[i] = z,
            Row::GammaUpper(i) => mult.gamma_upper[i] = z,
            Row::DeltaUpper(i) => mult.delta_upper[i] = z,
            Row::DeltaLower(i) => mult.delta_lower[i] = z,
            Row::SigmaLower(l) => mult.sigma_lower[l] = z,
            Row::SigmaUpper(l) => mult.sigma_upper[l] = z,
        }
    }

    let solution = OlfcSolution {
        objective: objective(problem, &omega, &d, &q),
        line_flow: problem.virtual_flows(&phi),
        omega,
        d,
        q,
        phi,
        multipliers: mult,
    };
    if kkt_residual(problem, &solution).max() <= tol {
        Ok(solution)
    } else {
        Err(OracleError::NonConvergence(sol.iterations))
    }
}
