//! Top parallel level: partitioning theta bins across weighted ranks,
//! predicting worker-thread waves, and exchanging partial moments among
//! in-process ranks with deterministic allreduce semantics.
//!
//! Apportionment is floor-then-largest-remainder with remainders measured
//! per unit weight and ties broken by lower rank id. Weights are exact
//! rationals so tie detection does not depend on floating-point rounding.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use num_traits::Signed;

use crate::hamiltonian::{GlobalMoments, MomentSet};
use crate::{Error, Result};

pub type Weight = Ratio<i64>;

/// Parse a decimal weight ("3", "1.5", "2/3") into an exact rational.
pub fn parse_weight(s: &str) -> Result<Weight> {
    let s = s.trim();
    let bad = || Error::Config(format!("invalid device weight '{s}'"));
    if let Some((num, den)) = s.split_once('/') {
        let num: i64 = num.trim().parse().map_err(|_| bad())?;
        let den: i64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(num, den));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let int: i64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        if frac.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let scale = 10i64.pow(frac.len() as u32);
        let frac_val: i64 = frac.parse().map_err(|_| bad())?;
        return Ok(Ratio::new(int * scale + frac_val, scale));
    }
    let int: i64 = s.parse().map_err(|_| bad())?;
    Ok(Ratio::from_integer(int))
}

/// One class of devices (e.g. "cpu" or "phi"): how many ranks of this
/// kind exist, their relative load share, and worker threads per rank.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub kind: String,
    pub count: usize,
    pub weight: Weight,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankAssignment {
    pub rank_id: usize,
    pub kind: String,
    pub theta_start: usize,
    pub theta_count: usize,
    pub threads: usize,
}

/// Contiguous, non-overlapping assignment of theta ranges to ranks,
/// covering [0, total_theta). Chunk boundaries are a property of the
/// problem, not of the plan, so reductions are independent of rank and
/// thread counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RankPlan {
    pub ranks: Vec<RankAssignment>,
    pub total_theta: usize,
    pub chunk_size: usize,
}

/// Weighted apportionment of `n_theta` bins. Device order is rank order
/// (list CPU kinds before accelerator kinds); ranges are laid out
/// contiguously in rank order.
pub fn make_plan(n_theta: usize, devices: &[DeviceSpec], chunk_size: usize) -> Result<RankPlan> {
    if chunk_size < 1 {
        return Err(Error::Config("chunk_size must be >= 1".into()));
    }
    let mut rank_weights: Vec<(Weight, String, usize)> = Vec::new();
    for dev in devices {
        if !dev.weight.is_positive() {
            return Err(Error::Config(format!(
                "device '{}' weight must be positive",
                dev.kind
            )));
        }
        if dev.count > 0 && dev.threads < 1 {
            return Err(Error::Config(format!(
                "device '{}' threads must be >= 1",
                dev.kind
            )));
        }
        for _ in 0..dev.count {
            rank_weights.push((dev.weight, dev.kind.clone(), dev.threads));
        }
    }
    let n_ranks = rank_weights.len();
    if n_ranks == 0 {
        return Err(Error::Config("no ranks: every device count is zero".into()));
    }
    if n_theta < n_ranks {
        return Err(Error::Config(format!(
            "n_theta = {n_theta} is smaller than the rank count {n_ranks}"
        )));
    }

    let total_weight: Weight = rank_weights.iter().map(|(w, _, _)| *w).sum();
    let mut counts = Vec::with_capacity(n_ranks);
    let mut remainders = Vec::with_capacity(n_ranks);
    let mut assigned = 0usize;
    for (w, _, _) in &rank_weights {
        let share = Ratio::from_integer(n_theta as i64) * *w / total_weight;
        let floor = share.floor().to_integer();
        counts.push(floor as usize);
        assigned += floor as usize;
        // remainder per unit weight; exact rational comparison
        remainders.push((share - share.floor()) / *w);
    }
    let mut order: Vec<usize> = (0..n_ranks).collect();
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
    for &rank in order.iter().take(n_theta - assigned) {
        counts[rank] += 1;
    }

    let mut ranks = Vec::with_capacity(n_ranks);
    let mut start = 0usize;
    for (rank_id, ((_, kind, threads), &count)) in
        rank_weights.iter().zip(counts.iter()).enumerate()
    {
        ranks.push(RankAssignment {
            rank_id,
            kind: kind.clone(),
            theta_start: start,
            theta_count: count,
            threads: *threads,
        });
        start += count;
    }
    debug_assert_eq!(start, n_theta);

    Ok(RankPlan {
        ranks,
        total_theta: n_theta,
        chunk_size,
    })
}

/// Number of sequential waves the worker pool needs for `local` theta
/// bins: ceil(local / threads).
pub fn thread_iterations(local_theta_count: usize, threads: usize) -> usize {
    debug_assert!(threads >= 1);
    local_theta_count.div_ceil(threads)
}

impl RankPlan {
    /// Dry-run table for the `partition` CLI command.
    pub fn table(&self) -> String {
        let mut out = String::from("rank_id  kind      theta_start  theta_count  waves\n");
        for r in &self.ranks {
            out.push_str(&format!(
                "{:>7}  {:<8}  {:>11}  {:>11}  {:>5}\n",
                r.rank_id,
                r.kind,
                r.theta_start,
                r.theta_count,
                thread_iterations(r.theta_count, r.threads)
            ));
        }
        out
    }
}

/// Merge per-rank moment contributions into the global set every rank
/// receives. The result is bitwise independent of the contribution order
/// because partial sums live in fixed global chunks and the fold order is
/// ascending chunk index.
pub fn exchange_moments(contributions: Vec<MomentSet>) -> Result<MomentSet> {
    let mut iter = contributions.into_iter();
    let mut merged = iter
        .next()
        .ok_or_else(|| Error::Integrity("exchange with zero rank contributions".into()))?;
    for set in iter {
        merged.merge(set)?;
    }
    Ok(merged)
}

/// In-process message exchange among simulated ranks: a barrier-style
/// moment allreduce plus point-to-point byte payloads (used by staged
/// snapshot I/O). All messages are immutable values.
/// Per-destination queue of (sender, payload) messages.
type Mailbox = VecDeque<(usize, Vec<u8>)>;

pub struct ExchangeHub {
    n_ranks: usize,
    timeout: Duration,
    reduce: Mutex<ReduceState>,
    reduce_cv: Condvar,
    mail: Mutex<Vec<Mailbox>>,
    mail_cv: Condvar,
}

struct ReduceState {
    slots: Vec<Option<MomentSet>>,
    arrived: usize,
    result: Option<std::result::Result<GlobalMoments, String>>,
    read: usize,
}

impl ExchangeHub {
    pub fn new(n_ranks: usize) -> Self {
        ExchangeHub {
            n_ranks,
            timeout: Duration::from_secs(30),
            reduce: Mutex::new(ReduceState {
                slots: vec![None; n_ranks],
                arrived: 0,
                result: None,
                read: 0,
            }),
            reduce_cv: Condvar::new(),
            mail: Mutex::new((0..n_ranks).map(|_| VecDeque::new()).collect()),
            mail_cv: Condvar::new(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn n_ranks(&self) -> usize {
        self.n_ranks
    }

    /// Deposit this rank's contribution and wait for the global reduction.
    /// Every rank receives a bitwise-identical result; the merge is
    /// performed once, by the last rank to arrive.
    pub fn allreduce(&self, rank: usize, local: MomentSet) -> Result<GlobalMoments> {
        let deadline = Instant::now() + self.timeout;
        let mut state = self.reduce.lock().unwrap();

        // wait for any previous round to drain
        while state.result.is_some() || state.slots[rank].is_some() {
            let (s, timed_out) = self
                .reduce_cv
                .wait_timeout(state, remaining(deadline)?)
                .unwrap();
            state = s;
            if timed_out.timed_out() {
                return Err(Error::Integrity(
                    "allreduce timeout waiting for previous round to drain".into(),
                ));
            }
        }

        state.slots[rank] = Some(local);
        state.arrived += 1;
        if state.arrived == self.n_ranks {
            let contributions: Vec<MomentSet> =
                state.slots.iter_mut().map(|s| s.take().unwrap()).collect();
            state.result = Some(
                exchange_moments(contributions)
                    .map(|set| set.resolve())
                    .map_err(|e| e.to_string()),
            );
            state.read = 0;
            self.reduce_cv.notify_all();
        }

        while state.result.is_none() {
            let (s, timed_out) = self
                .reduce_cv
                .wait_timeout(state, remaining(deadline)?)
                .unwrap();
            state = s;
            if timed_out.timed_out() {
                return Err(Error::Integrity(format!(
                    "allreduce timeout: missing rank contribution ({} of {} arrived)",
                    state.arrived, self.n_ranks
                )));
            }
        }
        let out = match state.result.as_ref().unwrap() {
            Ok(g) => Ok(g.clone()),
            Err(msg) => Err(Error::Integrity(msg.clone())),
        };
        state.read += 1;
        if state.read == self.n_ranks {
            state.result = None;
            state.arrived = 0;
            self.reduce_cv.notify_all();
        }
        out
    }

    /// Point-to-point payload delivery (staged snapshot path).
    pub fn send_bytes(&self, from: usize, to: usize, payload: Vec<u8>) -> Result<()> {
        if to >= self.n_ranks {
            return Err(Error::Integrity(format!(
                "send to unknown rank {to} (hub has {} ranks)",
                self.n_ranks
            )));
        }
        let mut mail = self.mail.lock().unwrap();
        mail[to].push_back((from, payload));
        self.mail_cv.notify_all();
        Ok(())
    }

    /// Receive `count` payloads addressed to `rank`, sorted by sender.
    pub fn recv_bytes(&self, rank: usize, count: usize) -> Result<Vec<(usize, Vec<u8>)>> {
        let deadline = Instant::now() + self.timeout;
        let mut mail = self.mail.lock().unwrap();
        while mail[rank].len() < count {
            let (m, timed_out) = self
                .mail_cv
                .wait_timeout(mail, remaining(deadline)?)
                .unwrap();
            mail = m;
            if timed_out.timed_out() {
                return Err(Error::Integrity(format!(
                    "timeout waiting for staged payloads: got {} of {count}",
                    mail[rank].len()
                )));
            }
        }
        let mut got: Vec<(usize, Vec<u8>)> = mail[rank].drain(..count).collect();
        got.sort_by_key(|(from, _)| *from);
        Ok(got)
    }
}

fn remaining(deadline: Instant) -> Result<Duration> {
    let now = Instant::now();
    if now >= deadline {
        return Err(Error::Integrity("exchange timeout".into()));
    }
    Ok(deadline - now)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equal_ranks(n: usize, threads: usize) -> Vec<DeviceSpec> {
        vec![DeviceSpec {
            kind: "cpu".into(),
            count: n,
            weight: Ratio::from_integer(1),
            threads,
        }]
    }

    fn hybrid(nodes: usize, acc_weight: Weight) -> Vec<DeviceSpec> {
        vec![
            DeviceSpec {
                kind: "cpu".into(),
                count: 2 * nodes,
                weight: Ratio::from_integer(1),
                threads: 8,
            },
            DeviceSpec {
                kind: "phi".into(),
                count: 2 * nodes,
                weight: acc_weight,
                threads: 244,
            },
        ]
    }

    #[test]
    fn forty_equal_ranks_get_250_each() {
        let plan = make_plan(10_000, &equal_ranks(40, 244), 8).unwrap();
        assert!(plan.ranks.iter().all(|r| r.theta_count == 250));
    }

    #[test]
    fn forty_four_equal_ranks_get_227_or_228() {
        let plan = make_plan(10_000, &equal_ranks(44, 244), 8).unwrap();
        let total: usize = plan.ranks.iter().map(|r| r.theta_count).sum();
        assert_eq!(total, 10_000);
        assert!(plan
            .ranks
            .iter()
            .all(|r| r.theta_count == 227 || r.theta_count == 228));
    }

    #[test]
    fn hybrid_three_to_one_accelerators_get_267_or_268() {
        let plan = make_plan(10_000, &hybrid(14, Ratio::from_integer(3)), 8).unwrap();
        let total: usize = plan.ranks.iter().map(|r| r.theta_count).sum();
        assert_eq!(total, 10_000);
        for r in plan.ranks.iter().filter(|r| r.kind == "phi") {
            assert!(
                r.theta_count == 267 || r.theta_count == 268,
                "phi rank got {}",
                r.theta_count
            );
        }
    }

    #[test]
    fn hybrid_two_to_one_accelerators_get_exactly_238() {
        let plan = make_plan(10_000, &hybrid(14, Ratio::from_integer(2)), 8).unwrap();
        let total: usize = plan.ranks.iter().map(|r| r.theta_count).sum();
        assert_eq!(total, 10_000);
        for r in plan.ranks.iter().filter(|r| r.kind == "phi") {
            assert_eq!(r.theta_count, 238);
        }
    }

    #[test]
    fn ranges_are_contiguous_and_cover_everything() {
        let plan = make_plan(10_000, &hybrid(3, Ratio::new(7, 2)), 8).unwrap();
        let mut next = 0;
        for r in &plan.ranks {
            assert_eq!(r.theta_start, next);
            next += r.theta_count;
        }
        assert_eq!(next, 10_000);
    }

    #[test]
    fn equal_weights_differ_by_at_most_one() {
        for n_theta in [100, 101, 997, 10_000] {
            for ranks in [1, 3, 7, 40, 44] {
                let plan = make_plan(n_theta, &equal_ranks(ranks, 8), 8).unwrap();
                let min = plan.ranks.iter().map(|r| r.theta_count).min().unwrap();
                let max = plan.ranks.iter().map(|r| r.theta_count).max().unwrap();
                assert!(max - min <= 1, "{n_theta} over {ranks}: {min}..{max}");
            }
        }
    }

    #[test]
    fn increasing_accelerator_weight_never_decreases_its_count() {
        let mut last = 0usize;
        for quarters in 4..=24 {
            let w = Ratio::new(quarters, 4);
            let plan = make_plan(10_000, &hybrid(5, w), 8).unwrap();
            let acc: usize = plan
                .ranks
                .iter()
                .filter(|r| r.kind == "phi")
                .map(|r| r.theta_count)
                .sum();
            assert!(acc >= last, "weight {w}: {acc} < {last}");
            last = acc;
        }
    }

    #[test]
    fn plan_rejects_degenerate_inputs() {
        assert!(make_plan(10, &equal_ranks(0, 8), 8).is_err());
        assert!(make_plan(3, &equal_ranks(4, 8), 8).is_err());
        let mut devs = equal_ranks(2, 8);
        devs[0].weight = Ratio::from_integer(0);
        assert!(make_plan(10, &devs, 8).is_err());
    }

    #[test]
    fn wave_cliff_pins() {
        assert_eq!(thread_iterations(250, 244), 2);
        assert_eq!(thread_iterations(227, 244), 1);
        assert_eq!(thread_iterations(228, 244), 1);
        assert_eq!(thread_iterations(0, 16), 0);
        assert_eq!(thread_iterations(16, 16), 1);
        assert_eq!(thread_iterations(17, 16), 2);
    }

    #[test]
    fn weight_parsing() {
        assert_eq!(parse_weight("3").unwrap(), Ratio::from_integer(3));
        assert_eq!(parse_weight("1.5").unwrap(), Ratio::new(3, 2));
        assert_eq!(parse_weight("2/3").unwrap(), Ratio::new(2, 3));
        assert!(parse_weight("x").is_err());
        assert!(parse_weight("1/0").is_err());
    }

    #[test]
    fn exchange_of_single_contribution_is_identity() {
        let set = MomentSet::empty(10.0, 8, 2);
        let out = exchange_moments(vec![set.clone()]).unwrap();
        assert_eq!(out, set);
    }
}
