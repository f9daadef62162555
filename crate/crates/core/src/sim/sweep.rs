use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::controller::DampingModel;
use crate::olfc::OlfcSolution;
use crate::Scalar;

use super::{reference_solution, simulate, steady_state_report, Scenario, SimError, SteadyStateReport, Trajectory, Verdict};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry<T> {
    /// Damping multiplier `k` in `D̃ = k D`.
    pub k: T,
    pub verdict: Verdict,
    pub report: Option<SteadyStateReport<T>>,
    pub trajectory: Option<Trajectory<T>>,
    /// Set for blowups and any other failure.
    pub error: Option<String>,
}

fn run_one<T: Scalar>(
    template: &Scenario<T>,
    oracle: Option<&OlfcSolution<T>>,
    k: T,
    tail_fraction: f64,
) -> SweepEntry<T> {
    let mut scenario = template.clone();
    scenario.damping = DampingModel::Multiplier(k);
    match simulate(&scenario) {
        Ok(traj) => {
            let report = oracle
                .map(|o| steady_state_report(&traj, &scenario.controlled_problem(), o, tail_fraction));
            SweepEntry {
                k,
                verdict: report.as_ref().map_or(Verdict::Slow, SteadyStateReport::verdict),
                report,
                trajectory: Some(traj),
                error: None,
            }
        }
        Err(e) => SweepEntry {
            k,
            verdict: if matches!(e, SimError::NumericalBlowup { .. }) {
                Verdict::Unstable
            } else {
                Verdict::Slow
            },
            report: None,
            trajectory: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs the template once per damping multiplier, at most `jobs` at a time.
/// Results come back in the order of `values`.
pub fn sweep<T: Scalar>(
    template: &Scenario<T>,
    values: &[T],
    jobs: usize,
    tail_fraction: f64,
) -> Vec<SweepEntry<T>> {
    let oracle = reference_solution(&template.controlled_problem()).ok();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepEntry<T>>>> = Mutex::new(vec![None; values.len()]);
    let workers = jobs.clamp(1, values.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&k) = values.get(i) else { break };
                let entry = run_one(template, oracle.as_ref(), k, tail_fraction);
                results.lock().expect("no worker panicked")[i] = Some(entry);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|e| e.expect("every value ran"))
        .collect()
}
