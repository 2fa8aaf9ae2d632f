//! Poisson arrivals with one independent random stream per origin.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::config::AggressivenessRange;

/// A generated vehicle waiting to enter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingArrival {
    pub due: f64,
    pub origin: usize,
    pub exit: usize,
    /// Uniform draw compared against the penetration rate. Drawn for every
    /// vehicle so that realizations do not depend on the rate or policy.
    pub kind_draw: f64,
    pub aggressiveness: f64,
}

#[derive(Debug, Clone)]
struct OriginStream {
    rng: ChaCha8Rng,
    gaps: Option<Exp<f64>>,
    next_due: f64,
    queue: VecDeque<PendingArrival>,
}

#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    streams: Vec<OriginStream>,
    num_exits: usize,
    aggressiveness: AggressivenessRange,
}

impl ArrivalProcess {
    /// `rates` in vehicles per hour, one per origin.
    pub fn new(seed: u64, rates: &[f64], num_exits: usize, aggressiveness: AggressivenessRange) -> Self {
        let streams = rates
            .iter()
            .enumerate()
            .map(|(origin, &rate)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(origin as u64 + 1);
                let gaps = (rate > 0.0).then(|| Exp::new(rate / 3600.0).expect("positive rate"));
                let next_due = gaps.map_or(f64::INFINITY, |g| g.sample(&mut rng));
                OriginStream {
                    rng,
                    gaps,
                    next_due,
                    queue: VecDeque::new(),
                }
            })
            .collect();
        Self {
            streams,
            num_exits,
            aggressiveness,
        }
    }

    pub fn num_origins(&self) -> usize {
        self.streams.len()
    }

    /// Queues every arrival due at or before `now` and strictly before `until`.
    pub fn generate(&mut self, now: f64, until: f64) {
        let (num_exits, aggr) = (self.num_exits, self.aggressiveness);
        for (origin, s) in self.streams.iter_mut().enumerate() {
            while s.next_due <= now && s.next_due < until {
                let exit = s.rng.gen_range(0..num_exits);
                let kind_draw: f64 = s.rng.gen();
                let unit: f64 = s.rng.gen();
                s.queue.push_back(PendingArrival {
                    due: s.next_due,
                    origin,
                    exit,
                    kind_draw,
                    aggressiveness: aggr.min + (aggr.max - aggr.min) * unit,
                });
                let gap = s.gaps.expect("stream with arrivals has a rate").sample(&mut s.rng);
                s.next_due += gap;
            }
        }
    }

    pub fn front(&self, origin: usize) -> Option<&PendingArrival> {
        self.streams[origin].queue.front()
    }

    pub fn pop(&mut self, origin: usize) -> Option<PendingArrival> {
        self.streams[origin].queue.pop_front()
    }

    pub fn queued(&self) -> usize {
        self.streams.iter().map(|s| s.queue.len()).sum()
    }

    pub fn queue_len(&self, origin: usize) -> usize {
        self.streams[origin].queue.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(p: &mut ArrivalProcess, origin: usize) -> Vec<PendingArrival> {
        std::iter::from_fn(|| p.pop(origin)).collect()
    }

    #[test]
    fn mean_interarrival_matches_rate() {
        let mut p = ArrivalProcess::new(3, &[396.0], 3, AggressivenessRange::default());
        let horizon = 200_000.0;
        p.generate(horizon, horizon);
        let arrivals = drain(&mut p, 0);
        let mean = arrivals.last().unwrap().due / arrivals.len() as f64;
        // 3600 / 396
        assert!((mean - 9.0909).abs() / 9.0909 < 0.03, "mean {mean}");
        let exits: Vec<usize> = (0..3).map(|e| arrivals.iter().filter(|a| a.exit == e).count()).collect();
        for count in exits {
            assert!((count as f64 / arrivals.len() as f64 - 1.0 / 3.0).abs() < 0.03);
        }
    }

    #[test]
    fn zero_rate_never_arrives() {
        let mut p = ArrivalProcess::new(1, &[0.0, 100.0], 2, AggressivenessRange::default());
        p.generate(1e6, 1e6);
        assert_eq!(p.queue_len(0), 0);
        assert!(p.queue_len(1) > 0);
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let mut a = ArrivalProcess::new(9, &[396.0, 396.0], 3, AggressivenessRange::default());
        let mut b = ArrivalProcess::new(9, &[396.0, 50.0], 3, AggressivenessRange::default());
        a.generate(2000.0, 2000.0);
        b.generate(2000.0, 2000.0);
        assert_eq!(drain(&mut a, 0), drain(&mut b, 0));
    }

    #[test]
    fn same_seed_same_arrivals() {
        let mut a = ArrivalProcess::new(4, &[396.0; 3], 3, AggressivenessRange::default());
        let mut b = ArrivalProcess::new(4, &[396.0; 3], 3, AggressivenessRange::default());
        a.generate(500.0, 500.0);
        b.generate(500.0, 500.0);
        for o in 0..3 {
            assert_eq!(drain(&mut a, o), drain(&mut b, o));
        }
    }

    #[test]
    fn nothing_after_cutoff() {
        let mut p = ArrivalProcess::new(5, &[3600.0], 3, AggressivenessRange::default());
        p.generate(100.0, 50.0);
        assert!(drain(&mut p, 0).iter().all(|a| a.due < 50.0));
    }
}
