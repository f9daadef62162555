//! Synchronous neighbor exchange of `(mu, phi)`.
//!
//! [`exchange_round`] is the ideal channel: every bus hears every neighbor's
//! current values. [`Exchange`] adds a fixed delay and random drops; a dropped
//! message is either omitted or replaced by the last value that got through.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::NetworkTopology;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborMessage<T> {
    /// Bus index of the sender.
    pub sender: usize,
    pub mu: T,
    pub phi: T,
    pub round: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommConfig {
    pub delay_rounds: usize,
    pub drop_probability: f64,
    pub seed: u64,
    /// Deliver the last received value in place of a dropped message.
    pub replay_on_drop: bool,
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            delay_rounds: 0,
            drop_probability: 0.0,
            seed: 0,
            replay_on_drop: true,
        }
    }
}

impl CommConfig {
    pub fn is_ideal(&self) -> bool {
        self.delay_rounds == 0 && self.drop_probability == 0.0
    }
}

/// One logged delivery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedMessage<T> {
    pub round: u64,
    pub sender: usize,
    pub receiver: usize,
    pub mu: T,
    pub phi: T,
    pub dropped: bool,
}

/// Inboxes for one ideal round: each bus gets one message per neighbor, sorted by sender.
pub fn exchange_round<T: Scalar>(
    outgoing: &[(T, T)],
    topology: &NetworkTopology<T>,
    round: u64,
) -> Vec<Vec<NeighborMessage<T>>> {
    (0..topology.n_buses())
        .map(|i| {
            topology
                .neighbors(i)
                .into_iter()
                .map(|j| NeighborMessage {
                    sender: j,
                    mu: outgoing[j].0,
                    phi: outgoing[j].1,
                    round,
                })
                .collect()
        })
        .collect()
}

/// Stateful channel with delay, drops and an optional message log.
#[derive(Debug, Clone)]
pub struct Exchange<T> {
    config: CommConfig,
    neighbors: Vec<Vec<usize>>,
    history: VecDeque<(u64, Vec<(T, T)>)>,
    /// `dropped[i][k]`: message from `neighbors[i][k]` to `i` lost this round.
    dropped: Vec<Vec<bool>>,
    last_delivered: Vec<Vec<Option<NeighborMessage<T>>>>,
    rng: ChaCha8Rng,
    round: u64,
    log: Option<Vec<LoggedMessage<T>>>,
}

impl<T: Scalar> Exchange<T> {
    pub fn new(topology: &NetworkTopology<T>, config: CommConfig) -> Self {
        let neighbors: Vec<Vec<usize>> = (0..topology.n_buses()).map(|i| topology.neighbors(i)).collect();
        let dropped = neighbors.iter().map(|n| vec![false; n.len()]).collect();
        let last_delivered = neighbors.iter().map(|n| vec![None; n.len()]).collect();
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            neighbors,
            history: VecDeque::new(),
            dropped,
            last_delivered,
            round: 0,
            log: None,
        }
    }

    pub fn config(&self) -> &CommConfig {
        &self.config
    }

    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn log(&self) -> Option<&[LoggedMessage<T>]> {
        self.log.as_deref()
    }

    /// Starts a round with the values every bus holds at its beginning and
    /// samples which links drop this round.
    pub fn begin_round(&mut self, round: u64, outgoing: &[(T, T)]) {
        if self.history.is_empty() {
            self.seed_replay(round, outgoing);
        } else {
            self.commit_last_delivered();
        }
        self.round = round;
        self.history.push_back((round, outgoing.to_vec()));
        while self.history.len() > self.config.delay_rounds + 1 {
            self.history.pop_front();
        }
        let p = self.config.drop_probability;
        for row in &mut self.dropped {
            for slot in row.iter_mut() {
                *slot = p > 0.0 && self.rng.gen::<f64>() < p;
            }
        }
        if let Some(log) = &mut self.log {
            let (_, values) = self.history.front().expect("history has the current round");
            for (i, nbrs) in self.neighbors.iter().enumerate() {
                for (k, &j) in nbrs.iter().enumerate() {
                    log.push(LoggedMessage {
                        round,
                        sender: j,
                        receiver: i,
                        mu: values[j].0,
                        phi: values[j].1,
                        dropped: self.dropped[i][k],
                    });
                }
            }
        }
    }

    /// Replay memory starts from the values exchanged when links come up.
    fn seed_replay(&mut self, round: u64, outgoing: &[(T, T)]) {
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            for (k, &j) in nbrs.iter().enumerate() {
                self.last_delivered[i][k] = Some(NeighborMessage {
                    sender: j,
                    mu: outgoing[j].0,
                    phi: outgoing[j].1,
                    round,
                });
            }
        }
    }

    fn commit_last_delivered(&mut self) {
        let Some((sent_round, values)) = self.history.front() else {
            return;
        };
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            for (k, &j) in nbrs.iter().enumerate() {
                if !self.dropped[i][k] {
                    self.last_delivered[i][k] = Some(NeighborMessage {
                        sender: j,
                        mu: values[j].0,
                        phi: values[j].1,
                        round: *sent_round,
                    });
                }
            }
        }
    }

    /// Inboxes for the current round. With zero delay, `current` (the values at
    /// the present integrator stage) is delivered; otherwise the step-start
    /// values from `delay_rounds` rounds ago.
    pub fn deliver(&self, current: &[(T, T)]) -> Vec<Vec<NeighborMessage<T>>> {
        let (sent_round, values) = if self.config.delay_rounds == 0 {
            (self.round, current)
        } else {
            let (r, v) = self.history.front().expect("begin_round called first");
            (*r, v.as_slice())
        };
        self.neighbors
            .iter()
            .enumerate()
            .map(|(i, nbrs)| {
                nbrs.iter()
                    .enumerate()
                    .filter_map(|(k, &j)| {
                        if self.dropped[i][k] {
                            if self.config.replay_on_drop {
                                self.last_delivered[i][k]
                            } else {
                                None
                            }
                        } else {
                            Some(NeighborMessage {
                                sender: j,
                                mu: values[j].0,
                                phi: values[j].1,
                                round: sent_round,
                            })
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{BusId, BusKind};

    fn path(n: u32) -> NetworkTopology<f64> {
        let buses: Vec<_> = (1..=n).map(|i| (BusId(i), BusKind::Generator)).collect();
        let lines: Vec<_> = (1..n).map(|i| (BusId(i), BusId(i + 1), 1.0)).collect();
        NetworkTopology::new(&buses, &lines).unwrap()
    }

    #[test]
    fn two_bus_round_swaps_values() {
        let topo = path(2);
        let inbox = exchange_round(&[(0.5, 0.1), (-0.2, 0.0)], &topo, 7);
        assert_eq!(inbox[0], vec![NeighborMessage { sender: 1, mu: -0.2, phi: 0.0, round: 7 }]);
        assert_eq!(inbox[1], vec![NeighborMessage { sender: 0, mu: 0.5, phi: 0.1, round: 7 }]);
    }

    #[test]
    fn isolated_bus_gets_empty_inbox() {
        let topo = NetworkTopology::<f64>::new(
            &[(BusId(1), BusKind::Generator), (BusId(2), BusKind::Generator), (BusId(3), BusKind::Load)],
            &[(BusId(1), BusId(2), 1.0)],
        )
        .unwrap();
        let inbox = exchange_round(&[(1.0, 0.0); 3], &topo, 0);
        assert!(inbox[2].is_empty());
        assert_eq!(inbox[0].len(), 1);
    }

    #[test]
    fn inbox_sorted_by_sender() {
        let topo = NetworkTopology::<f64>::new(
            &[(BusId(1), BusKind::Generator), (BusId(2), BusKind::Generator), (BusId(3), BusKind::Generator)],
            &[(BusId(3), BusId(2), 1.0), (BusId(2), BusId(1), 1.0)],
        )
        .unwrap();
        let inbox = exchange_round(&[(0.0, 0.0); 3], &topo, 0);
        let senders: Vec<_> = inbox[1].iter().map(|m| m.sender).collect();
        assert_eq!(senders, vec![0, 2]);
    }

    #[test]
    fn one_round_delay_delivers_previous_values() {
        let topo = path(2);
        let cfg = CommConfig {
            delay_rounds: 1,
            ..CommConfig::default()
        };
        let mut ex = Exchange::new(&topo, cfg);
        ex.begin_round(0, &[(1.0, 0.0), (2.0, 0.0)]);
        let first = ex.deliver(&[(1.0, 0.0), (2.0, 0.0)]);
        assert_eq!(first[0][0].mu, 2.0);
        ex.begin_round(1, &[(3.0, 0.0), (4.0, 0.0)]);
        let second = ex.deliver(&[(3.0, 0.0), (4.0, 0.0)]);
        assert_eq!(second[0][0].mu, 2.0);
        assert_eq!(second[0][0].round, 0);
        ex.begin_round(2, &[(5.0, 0.0), (6.0, 0.0)]);
        assert_eq!(ex.deliver(&[(5.0, 0.0), (6.0, 0.0)])[1][0].mu, 3.0);
    }

    #[test]
    fn zero_delay_uses_stage_values() {
        let topo = path(2);
        let mut ex = Exchange::new(&topo, CommConfig::default());
        ex.begin_round(0, &[(1.0, 0.0), (2.0, 0.0)]);
        let inbox = ex.deliver(&[(1.5, 0.0), (2.5, 0.0)]);
        assert_eq!(inbox[0][0].mu, 2.5);
        assert_eq!(inbox, exchange_round(&[(1.5, 0.0), (2.5, 0.0)], &topo, 0));
    }

    fn run_drops(seed: u64, replay: bool) -> Vec<Vec<Vec<NeighborMessage<f64>>>> {
        let topo = path(4);
        let cfg = CommConfig {
            drop_probability: 0.4,
            seed,
            replay_on_drop: replay,
            ..CommConfig::default()
        };
        let mut ex = Exchange::new(&topo, cfg);
        (0..50u64)
            .map(|r| {
                let v: Vec<_> = (0..4).map(|i| (r as f64 + i as f64 * 0.1, 0.0)).collect();
                ex.begin_round(r, &v);
                ex.deliver(&v)
            })
            .collect()
    }

    #[test]
    fn drops_are_deterministic_per_seed() {
        assert_eq!(run_drops(3, true), run_drops(3, true));
        assert_ne!(run_drops(3, false), run_drops(4, false));
    }

    #[test]
    fn dropped_messages_are_omitted_or_replayed() {
        let omitted = run_drops(11, false);
        let total: usize = omitted.iter().flatten().map(Vec::len).sum();
        assert!(total < 50 * 6);
        let replayed = run_drops(11, true);
        for (round, inboxes) in replayed.iter().enumerate() {
            for msgs in inboxes {
                for m in msgs {
                    assert!(m.round <= round as u64);
                }
            }
        }
    }

    #[test]
    fn replay_covers_every_link_from_the_first_round() {
        let replayed = run_drops(11, true);
        assert!(replayed.iter().all(|inboxes| inboxes.iter().map(Vec::len).eq([1, 2, 2, 1])));

        let topo = path(2);
        let cfg = CommConfig {
            drop_probability: 1.0,
            ..CommConfig::default()
        };
        let mut ex = Exchange::new(&topo, cfg);
        ex.begin_round(0, &[(1.0, 0.1), (2.0, 0.2)]);
        let inbox = ex.deliver(&[(1.5, 0.0), (2.5, 0.0)]);
        assert_eq!((inbox[0][0].mu, inbox[0][0].phi, inbox[0][0].round), (2.0, 0.2, 0));
        ex.begin_round(1, &[(3.0, 0.0), (4.0, 0.0)]);
        assert_eq!(ex.deliver(&[(3.0, 0.0), (4.0, 0.0)])[1][0].mu, 1.0);
    }

    #[test]
    fn log_records_every_directed_link() {
        let topo = path(3);
        let mut ex = Exchange::new(&topo, CommConfig::default());
        ex.enable_log();
        ex.begin_round(0, &[(0.0, 0.0); 3]);
        ex.begin_round(1, &[(0.0, 0.0); 3]);
        assert_eq!(ex.log().unwrap().len(), 8);
    }
}
