use super::*;
use crate::network::{BusKind, BusPhysicalParams};

const TOL: f64 = 1e-6;

fn bus(p_in: f64, q_in: f64) -> BusPhysicalParams<f64> {
    BusPhysicalParams {
        inertia: 1.0,
        damping: 1.0,
        electric_injection: p_in,
        heat_injection: q_in,
        heat_buffer_bounds: (-0.1, 0.1),
    }
}

fn unit_cost() -> CostFunction<f64> {
    CostFunction::new(1.0, 0.0)
}

fn electric() -> Option<ElectricUnit<f64>> {
    Some(ElectricUnit {
        cost: unit_cost(),
        bounds: (-1.0, 1.0),
    })
}

fn chp_half() -> Option<HeatUnit<f64>> {
    Some(HeatUnit {
        cost: unit_cost(),
        chp: ChpRegion {
            upper: vec![HalfPlane::new(0.5, 0.0)],
            lower: vec![],
        },
    })
}

fn single_bus(p_in: f64, q_in: f64, heat: Option<HeatUnit<f64>>) -> OlfcProblem<f64> {
    OlfcProblem {
        topology: NetworkTopology::new(&[(BusId(1), BusKind::Generator)], &[]).unwrap(),
        buses: vec![bus(p_in, q_in)],
        electric: vec![electric()],
        heat: vec![heat],
        line_limits: vec![],
    }
}

/// Bus 1 plain generator, bus 2 CHP with the `q <= 0.5 d` boundary.
fn two_bus_chp(q_in: f64, line_limit: Option<(f64, f64)>) -> OlfcProblem<f64> {
    OlfcProblem {
        topology: NetworkTopology::new(
            &[(BusId(1), BusKind::Generator), (BusId(2), BusKind::Generator)],
            &[(BusId(1), BusId(2), 5.0)],
        )
        .unwrap(),
        buses: vec![bus(0.0, 0.0), bus(0.3, q_in)],
        electric: vec![electric(), electric()],
        heat: vec![None, chp_half()],
        line_limits: vec![line_limit],
    }
}

fn triangle() -> OlfcProblem<f64> {
    let mut p = OlfcProblem {
        topology: NetworkTopology::new(
            &[
                (BusId(1), BusKind::Generator),
                (BusId(2), BusKind::Generator),
                (BusId(3), BusKind::Generator),
            ],
            &[(BusId(1), BusId(2), 10.0), (BusId(2), BusId(3), 8.0), (BusId(1), BusId(3), 12.0)],
        )
        .unwrap(),
        buses: vec![bus(0.0, 0.0), bus(0.1, 0.0), bus(0.3, 0.3)],
        electric: vec![electric(), electric(), electric()],
        heat: vec![None, None, chp_half()],
        line_limits: vec![Some((-0.05, 0.05)), None, Some((-1.0, 1.0))],
    };
    p.electric[0].as_mut().unwrap().cost = CostFunction::new(0.5, 0.1);
    p
}

/// Exhaustive grid over `(d_1, q_2)` on the two-bus CHP case; `d_2` and the line
/// flow follow from the balance rows with every ω = 0.
fn grid_two_bus(p: &OlfcProblem<f64>, step: f64) -> Option<(f64, f64, f64)> {
    let total = p.buses[0].electric_injection + p.buses[1].electric_injection;
    let q_in = p.buses[1].heat_injection;
    let (buf_lo, buf_hi) = p.buses[1].heat_buffer_bounds;
    let mut best: Option<(f64, f64, f64, f64)> = None;
    let nd = (2.0 / step).round() as i64;
    let nq = ((buf_hi - buf_lo) / step).round() as i64;
    for a in 0..=nd {
        let d1 = -1.0 + a as f64 * step;
        let d2 = total - d1;
        if !(-1.0..=1.0).contains(&d2) {
            continue;
        }
        let flow = p.buses[0].electric_injection - d1;
        if let Some((lo, hi)) = p.line_limits[0] {
            if flow < lo - 1e-12 || flow > hi + 1e-12 {
                continue;
            }
        }
        for b in 0..=nq {
            let q = q_in - buf_hi + b as f64 * step;
            if q > 0.5 * d2 + 1e-12 {
                continue;
            }
            let f = 0.5 * (d1 * d1 + d2 * d2 + q * q);
            if best.is_none_or(|bst| f < bst.3) {
                best = Some((d1, d2, q, f));
            }
        }
    }
    best.map(|(d1, d2, q, _)| (d1, d2, q))
}

#[test]
fn chp_feasibility_examples() {
    let region = ChpRegion {
        upper: vec![HalfPlane::new(0.5_f64, 0.0)],
        lower: vec![],
    };
    let ok = chp_feasible(&region, 0.3, 0.15, 1e-12);
    assert!(ok.feasible);
    assert_eq!(ok.violation, 0.0);
    let bad = chp_feasible(&region, 0.3, 0.2, 1e-12);
    assert!(!bad.feasible);
    assert!((bad.violation - 0.05).abs() < 1e-12);
    assert!(chp_feasible(&ChpRegion::default(), 5.0, -3.0, 0.0).feasible);
}

#[test]
fn objective_examples() {
    let p = single_bus(0.3, 0.3, Some(HeatUnit {
        cost: unit_cost(),
        chp: ChpRegion::default(),
    }));
    assert_eq!(objective(&p, &[0.0], &[0.0], &[0.0]), 0.0);
    assert!((objective(&p, &[0.0], &[0.3], &[0.3]) - 0.09).abs() < 1e-15);
    let mut p2 = p.clone();
    p2.buses[0].damping = 2.0;
    let base = objective(&p2, &[0.0], &[0.3], &[0.3]);
    assert!((objective(&p2, &[0.1], &[0.3], &[0.3]) - base - 0.01).abs() < 1e-15);
}

#[test]
fn single_bus_balance_forces_demand() {
    let p = single_bus(0.3, 0.0, Some(HeatUnit {
        cost: unit_cost(),
        chp: ChpRegion::default(),
    }));
    let s = centralized_solve(&p, TOL, 500).unwrap();
    assert!((s.d[0] - 0.3).abs() < 1e-6);
    assert!(s.omega[0].abs() < 1e-6);
    assert!(s.q[0].abs() < 1e-6);
    assert!(kkt_residual(&p, &s).max() <= TOL);
}

#[test]
fn single_chp_bus_with_equal_steps_is_infeasible() {
    // d is pinned to P^in = 0.3 by the balance rows, so q <= 0.15 while the
    // buffer demands q >= 0.2.
    let p = single_bus(0.3, 0.3, chp_half());
    match centralized_solve(&p, TOL, 500) {
        Err(OracleError::Infeasible { violation }) => assert!(violation > 1e-3),
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn single_chp_bus_feasible_variant() {
    let p = single_bus(0.3, 0.2, chp_half());
    let s = centralized_solve(&p, TOL, 500).unwrap();
    assert!((s.d[0] - 0.3).abs() < 1e-6);
    assert!((s.q[0] - 0.1).abs() < 1e-6);
    assert!(s.multipliers.delta_upper[0] > 0.0);
}

#[test]
fn two_bus_chp_matches_grid_search() {
    let p = two_bus_chp(0.3, None);
    let s = centralized_solve(&p, TOL, 500).unwrap();
    let (d1, d2, q) = grid_two_bus(&p, 1e-4).unwrap();
    assert!((s.d[0] - d1).abs() < 2e-3, "{} vs {}", s.d[0], d1);
    assert!((s.d[1] - d2).abs() < 2e-3);
    assert!((s.q[1] - q).abs() < 2e-3);
    // closed form: d = (-0.1, 0.4), q = 0.2
    assert!((s.d[0] + 0.1).abs() < 1e-5);
    assert!((s.d[1] - 0.4).abs() < 1e-5);
    assert!((s.q[1] - 0.2).abs() < 1e-5);
}

#[test]
fn two_bus_line_limit_matches_grid_search() {
    // Unlimited optimum splits d = (0.15, 0.15); the flow floor -0.05 caps d_1 at 0.05.
    let p = two_bus_chp(0.0, Some((-0.05, 0.05)));
    let s = centralized_solve(&p, TOL, 500).unwrap();
    let (d1, d2, q) = grid_two_bus(&p, 1e-4).unwrap();
    assert!((s.d[0] - d1).abs() < 2e-3);
    assert!((s.d[1] - d2).abs() < 2e-3);
    assert!((s.q[1] - q).abs() < 2e-3);
    assert!((s.d[0] - 0.05).abs() < 1e-5);
    assert!(s.multipliers.sigma_lower[0] > 0.0);
}

#[test]
fn optimum_restores_frequency_and_is_feasible() {
    for p in [two_bus_chp(0.3, None), two_bus_chp(0.0, Some((-0.05, 0.05))), triangle()] {
        let s = centralized_solve(&p, TOL, 500).unwrap();
        assert!(s.omega.iter().all(|w| w.abs() <= TOL));
        assert!(p.violations(&s.d, &s.q, &s.phi).max() <= TOL);
        let r = kkt_residual(&p, &s);
        assert!(r.max() <= TOL, "{r:?}");
        assert_eq!(s.phi[0], 0.0);
    }
}

#[test]
fn perturbing_demand_raises_stationarity() {
    let p = triangle();
    let s = centralized_solve(&p, TOL, 500).unwrap();
    let alpha = p.strong_convexity();
    let mut bumped = s.clone();
    bumped.d[1] += 0.1;
    let r = kkt_residual(&p, &bumped);
    assert!(r.stationarity >= alpha * 0.1 - TOL);
}

#[test]
fn negative_multiplier_is_dual_infeasible() {
    let p = triangle();
    let mut s = centralized_solve(&p, TOL, 500).unwrap();
    s.multipliers.gamma_upper[2] = -0.01;
    assert!(kkt_residual(&p, &s).dual_infeasibility > 0.0);
}

#[test]
fn cost_scaling_leaves_primal_unchanged() {
    let p = triangle();
    let base = centralized_solve(&p, TOL, 500).unwrap();
    for c in [0.5, 3.0, 20.0] {
        let s = centralized_solve(&p.with_costs_scaled(c), TOL, 1000).unwrap();
        for i in 0..3 {
            assert!((s.d[i] - base.d[i]).abs() < 1e-5);
            assert!((s.q[i] - base.q[i]).abs() < 1e-5);
            assert!((s.multipliers.mu[i] - c * base.multipliers.mu[i]).abs() < 1e-4 * c);
        }
    }
}

#[test]
fn optimum_beats_random_feasible_points() {
    use rand::{Rng, SeedableRng};
    let p = two_bus_chp(0.3, None);
    let s = centralized_solve(&p, TOL, 500).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut tested = 0;
    while tested < 200 {
        let d1: f64 = rng.gen_range(-1.0..1.0);
        let d2 = 0.3 - d1;
        let q: f64 = rng.gen_range(0.2..0.4);
        if d2.abs() > 1.0 || q > 0.5 * d2 {
            continue;
        }
        let phi = [0.0, -(0.0 - d1) / 5.0];
        assert!(p.violations(&[d1, d2], &[0.0, q], &phi).max() <= 1e-12);
        assert!(s.objective <= objective(&p, &[0.0, 0.0], &[d1, d2], &[0.0, q]) + 1e-9);
        tested += 1;
    }
}

#[test]
fn solves_in_single_precision() {
    let p32 = OlfcProblem::<f32> {
        topology: NetworkTopology::new(
            &[(BusId(1), BusKind::Generator), (BusId(2), BusKind::Generator)],
            &[(BusId(1), BusId(2), 5.0)],
        )
        .unwrap(),
        buses: vec![
            BusPhysicalParams {
                inertia: 1.0,
                damping: 1.0,
                electric_injection: 0.0,
                heat_injection: 0.0,
                heat_buffer_bounds: (-0.1, 0.1),
            },
            BusPhysicalParams {
                inertia: 1.0,
                damping: 1.0,
                electric_injection: 0.3,
                heat_injection: 0.3,
                heat_buffer_bounds: (-0.1, 0.1),
            },
        ],
        electric: vec![
            Some(ElectricUnit {
                cost: CostFunction::new(1.0, 0.0),
                bounds: (-1.0, 1.0),
            });
            2
        ],
        heat: vec![
            None,
            Some(HeatUnit {
                cost: CostFunction::new(1.0, 0.0),
                chp: ChpRegion {
                    upper: vec![HalfPlane::new(0.5, 0.0)],
                    lower: vec![],
                },
            }),
        ],
        line_limits: vec![None],
    };
    let s = centralized_solve(&p32, 1e-4, 500).unwrap();
    assert!((s.d[1] - 0.4).abs() < 1e-3);
}
