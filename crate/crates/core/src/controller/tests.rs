use proptest::prelude::*;

use super::*;
use crate::comm::exchange_round;
use crate::olfc::centralized_solve;
use crate::scenario::{load_preset, preset_names};
use crate::sim::Scenario;

fn measurements_at(solution: &OlfcSolution<f64>, problem: &OlfcProblem<f64>) -> Measurements<f64> {
    Measurements {
        omega: solution.omega.clone(),
        line_flow: solution.line_flow.clone(),
        heat_injection: problem.buses.iter().map(|b| b.heat_injection).collect(),
    }
}

fn inboxes(
    ctrl: &ControllerState<f64>,
    meas: &Measurements<f64>,
    problem: &OlfcProblem<f64>,
    gains: &ControllerGains<f64>,
) -> Vec<Vec<NeighborMessage<f64>>> {
    let out: Vec<(f64, f64)> = (0..problem.n_buses())
        .map(|i| (local_mu(i, ctrl, meas.omega[i], &problem.topology, gains), ctrl.phi[i]))
        .collect();
    exchange_round(&out, &problem.topology, 0)
}

fn derivative(
    ctrl: &ControllerState<f64>,
    meas: &Measurements<f64>,
    problem: &OlfcProblem<f64>,
    scenario: &Scenario<f64>,
) -> ControllerState<f64> {
    let damping: Vec<f64> = problem.buses.iter().map(|b| b.damping).collect();
    controller_derivatives(
        ctrl,
        meas,
        &inboxes(ctrl, meas, problem, &scenario.gains),
        problem,
        &scenario.gains,
        &scenario.options,
        &damping,
    )
    .unwrap()
}

#[test]
fn projection_examples() {
    assert_eq!(positive_projection(-1.0, 0.0), 0.0);
    assert_eq!(positive_projection(-1.0, 0.5), -1.0);
    assert_eq!(positive_projection(2.0, 0.0), 2.0);
    assert_eq!(positive_projection(0.0, 0.0), 0.0);
}

#[test]
fn recover_mu_example() {
    assert_eq!(recover_mu(2.0, 0.5, 1.0, 1.0, 1.0), 2.5);
    assert!((recover_mu(1.0_f64, -0.2, 4.0, 2.0, 0.5) - (0.5 - 0.8)).abs() < 1e-15);
}

#[test]
fn robustness_interval_example() {
    let (lo, hi) = robustness_interval(1.0, 1.0);
    assert!((lo - 2.0 * (1.0 - 2f64.sqrt())).abs() < 1e-12);
    assert!((hi - (1.0 + 2f64.sqrt())).abs() < 1e-12);
    assert!((lo + 0.8284).abs() < 1e-4 && (hi - 2.4142).abs() < 1e-4);
}

#[test]
fn bus3_preset_damping_range_is_covered() {
    let s: Scenario<f64> = load_preset("paper-bus3").unwrap();
    for k in [0.1, 0.3, 1.0, 3.0, 10.0] {
        assert!(DampingModel::Multiplier(k).within_robustness_interval(&s.problem), "k = {k}");
    }
    assert!(!DampingModel::Multiplier(100.0).within_robustness_interval(&s.problem));
    assert!(!DampingModel::Multiplier(0.01).within_robustness_interval(&s.problem));
}

#[test]
fn damping_models() {
    let d = [1.0_f64, 2.0];
    assert_eq!(DampingModel::Exact.damping_used(&d), vec![1.0, 2.0]);
    assert_eq!(DampingModel::Multiplier(0.5).damping_used(&d), vec![0.5, 1.0]);
    let tau = DampingModel::Additive(vec![0.1, -0.5]).offsets(&d);
    assert!((tau[0] - 0.1).abs() < 1e-15 && tau[1] == -0.5);
}

#[test]
fn kkt_points_are_fixed_points() {
    for name in preset_names() {
        let s: Scenario<f64> = load_preset(name).unwrap();
        let problem = s.final_problem();
        let sol = centralized_solve(&problem, 1e-10, 500).unwrap();
        let ctrl = state_from_solution(&sol, &problem, &s.gains);
        let meas = measurements_at(&sol, &problem);
        let rate = derivative(&ctrl, &meas, &problem, &s);
        assert!(rate.max_abs() < 1e-7, "{name}: {rate:?}");
    }
}

#[test]
fn zero_state_is_at_rest_without_injections() {
    for name in preset_names() {
        let s: Scenario<f64> = load_preset(name).unwrap();
        let ctrl = ControllerState::zeros(&s.problem);
        let meas = Measurements {
            omega: vec![0.0; s.problem.n_buses()],
            line_flow: vec![0.0; s.problem.n_lines()],
            heat_injection: vec![0.0; s.problem.n_buses()],
        };
        assert_eq!(derivative(&ctrl, &meas, &s.problem, &s).max_abs(), 0.0, "{name}");
    }
}

fn single_bus() -> (Scenario<f64>, Measurements<f64>) {
    let s: Scenario<f64> = load_preset("single-bus").unwrap();
    let meas = Measurements {
        omega: vec![0.0],
        line_flow: vec![],
        heat_injection: vec![0.0],
    };
    (s, meas)
}

#[test]
fn demand_bound_multiplier_activates() {
    let (s, meas) = single_bus();
    let hi = s.problem.electric[0].as_ref().unwrap().bounds.1;
    let mut ctrl = ControllerState::zeros(&s.problem);
    ctrl.d[0] = hi + 0.1;
    let rate = derivative(&ctrl, &meas, &s.problem, &s);
    assert!((rate.gamma_upper[0] - s.gains.eps_gamma * 0.1).abs() < 1e-12);
    assert_eq!(rate.gamma_lower[0], 0.0);

    ctrl.d[0] = 0.0;
    let rate = derivative(&ctrl, &meas, &s.problem, &s);
    assert_eq!(rate.gamma_upper[0], 0.0);
    ctrl.gamma_upper[0] = 0.2;
    let rate = derivative(&ctrl, &meas, &s.problem, &s);
    assert!((rate.gamma_upper[0] + s.gains.eps_gamma * hi).abs() < 1e-12);
    assert!(rate.d[0] < 0.0);
}

#[test]
fn chp_multiplier_follows_violation() {
    let s: Scenario<f64> = load_preset("single-chp").unwrap();
    let meas = Measurements {
        omega: vec![0.0],
        line_flow: vec![],
        heat_injection: vec![0.0],
    };
    let mut ctrl = ControllerState::zeros(&s.problem);
    ctrl.d[0] = 0.2;
    ctrl.q[0] = 0.15;
    let rate = derivative(&ctrl, &meas, &s.problem, &s);
    assert!((rate.zeta_upper[0][0] - s.gains.eps_zeta * 0.05).abs() < 1e-12);

    let mut relaxed = s.clone();
    relaxed.options.chp_enforced = false;
    let rate = derivative(&ctrl, &meas, &s.problem, &relaxed);
    assert_eq!(rate.zeta_upper[0][0], 0.0);
}

#[test]
fn angle_law_moves_toward_equal_mu() {
    let s: Scenario<f64> = load_preset("two-bus").unwrap();
    let mut ctrl = ControllerState::zeros(&s.problem);
    // r_1 > 0 gives mu_1 > mu_2 = 0 with omega = 0.
    ctrl.r[0] = 0.1;
    let meas = Measurements {
        omega: vec![0.0; 2],
        line_flow: vec![0.0],
        heat_injection: vec![0.0; 2],
    };
    let rate = derivative(&ctrl, &meas, &s.problem, &s);
    assert!(rate.phi[0] > 0.0 && rate.phi[1] < 0.0);
    assert_eq!(rate.phi[0], -rate.phi[1]);

    ctrl.r[0] = 0.0;
    ctrl.phi[0] = 0.01;
    let rate = derivative(&ctrl, &meas, &s.problem, &s);
    // Virtual export from bus 1 lowers its r (and so its mu).
    assert!(rate.r[0] < 0.0 && rate.r[1] > 0.0);
}

#[test]
fn electric_injection_is_never_read() {
    for name in preset_names() {
        let s: Scenario<f64> = load_preset(name).unwrap();
        let a = s.final_problem();
        let mut b = a.clone();
        for (i, bus) in b.buses.iter_mut().enumerate() {
            bus.electric_injection += 0.37 + i as f64;
        }
        let mut ctrl = ControllerState::zeros(&a);
        for (i, x) in ctrl.r.iter_mut().enumerate() {
            *x = 0.01 * (i as f64 + 1.0);
        }
        ctrl.phi.iter_mut().enumerate().for_each(|(i, p)| *p = -0.003 * i as f64);
        ctrl.d.iter_mut().for_each(|d| *d = 0.05);
        let meas = Measurements {
            omega: (0..a.n_buses()).map(|i| 0.001 * i as f64).collect(),
            line_flow: (0..a.n_lines()).map(|l| 0.02 * (l as f64 + 1.0)).collect(),
            heat_injection: a.buses.iter().map(|b| b.heat_injection).collect(),
        };
        let bits = |c: &ControllerState<f64>| -> Vec<u64> {
            c.vectors().flat_map(|v| v.iter().map(|x| x.to_bits())).collect()
        };
        let ra = derivative(&ctrl, &meas, &a, &s);
        let rb = derivative(&ctrl, &meas, &b, &s);
        assert_eq!(bits(&ra), bits(&rb), "{name}");
    }
}

#[test]
fn missing_neighbor_message_is_an_error() {
    let s: Scenario<f64> = load_preset("two-bus").unwrap();
    let ctrl = ControllerState::zeros(&s.problem);
    let meas = Measurements {
        omega: vec![0.0; 2],
        line_flow: vec![0.0],
        heat_injection: vec![0.0; 2],
    };
    let err = controller_derivatives(
        &ctrl,
        &meas,
        &[vec![], vec![]],
        &s.problem,
        &s.gains,
        &s.options,
        &[1.0, 1.0],
    )
    .unwrap_err();
    assert_eq!(
        err,
        ControllerError::MissingNeighborMessage {
            bus: BusId(1),
            neighbor: BusId(2)
        }
    );
}

#[test]
fn instantaneous_primal_solves_stationarity() {
    let s: Scenario<f64> = load_preset("single-chp").unwrap();
    let options = ControllerOptions {
        primal_mode: PrimalMode::Instantaneous,
        ..s.options
    };
    let mut ctrl = ControllerState::zeros(&s.problem);
    ctrl.zeta_upper[0][0] = 0.3;
    ctrl.delta_lower[0] = 0.1;
    ctrl.gamma_lower[0] = 0.05;
    let (d, q) = applied_primal(0, &ctrl, 0.01, 0.2, 0.1, &s.problem, &options);
    let e = s.problem.electric[0].as_ref().unwrap();
    let h = s.problem.heat[0].as_ref().unwrap();
    // C_e'(d) = ω + μ + γ_lo - γ_hi + ζ_up k
    assert!((e.cost.derivative(d) - (0.01 + 0.2 + 0.05 + 0.3 * 0.5)).abs() < 1e-12);
    // C_h'(q) = δ_hi - δ_lo - ζ_up
    assert!((h.cost.derivative(q) - (0.0 - 0.1 - 0.3)).abs() < 1e-12);
}

#[test]
fn gains_validation_names_offenders() {
    let s: Scenario<f64> = load_preset("two-bus").unwrap();
    let mut g = s.gains.clone();
    g.eps_mu[1] = 0.0;
    g.eps_sigma = -1.0;
    let errs = g.validate(&s.problem.topology);
    assert_eq!(errs.len(), 2);
    assert!(errs[0].to_string().contains("bus 2"));
}

#[test]
fn clamp_reports_largest_excursion() {
    let s: Scenario<f64> = load_preset("paper-bus3").unwrap();
    let mut c = ControllerState::zeros(&s.problem);
    c.gamma_lower[0] = -1e-3;
    c.sigma_upper[2] = -2e-3;
    c.zeta_upper[2][0] = 0.4;
    assert_eq!(c.clamp_multipliers(), 2e-3);
    assert!(c.multiplier_values().all(|m| m >= 0.0));
    assert_eq!(c.zeta_upper[2][0], 0.4);
}

proptest! {
    #[test]
    fn mu_recovery_round_trips(
        mu in -10.0..10.0f64,
        omega in -1.0..1.0f64,
        k in 0.1..10.0f64,
        em in 0.1..10.0f64,
        el in 0.1..10.0f64,
    ) {
        let r = internal_from_mu(mu, omega, k, em, el);
        prop_assert!((recover_mu(r, omega, k, em, el) - mu).abs() < 1e-9 * (1.0 + mu.abs()));
    }

    #[test]
    fn projection_never_pushes_zero_negative(w in -5.0..5.0f64, v in 0.0..1.0f64) {
        let p = positive_projection(w, v);
        if v == 0.0 {
            prop_assert!(p >= 0.0);
        } else {
            prop_assert_eq!(p, w);
        }
    }

    #[test]
    fn interval_brackets_zero_and_widens_with_damping(l in 0.01..10.0f64, d in 0.01..10.0f64) {
        let (lo, hi) = robustness_interval(l, d);
        prop_assert!(lo < 0.0 && 0.0 < hi);
        let (lo2, hi2) = robustness_interval(l, d * 2.0);
        prop_assert!(lo2 < lo && hi2 > hi);
        let (lo3, hi3) = robustness_interval(l * 2.0, d);
        prop_assert!(lo3 > lo && hi3 < hi);
    }
}
