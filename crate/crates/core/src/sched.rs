// SPDX-License-Identifier: Apache-2.0

//! Per-output-port schedulers: round robin, longest queue first and first
//! come first served.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernel::FLIT_BYTES;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    #[default]
    Rr,
    Lqf,
    Fcfs,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 3] =
        [SchedulerKind::Rr, SchedulerKind::Lqf, SchedulerKind::Fcfs];

    pub fn label(self) -> &'static str {
        match self {
            SchedulerKind::Rr => "rr",
            SchedulerKind::Lqf => "lqf",
            SchedulerKind::Fcfs => "fcfs",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rr" => Ok(SchedulerKind::Rr),
            "lqf" => Ok(SchedulerKind::Lqf),
            "fcfs" => Ok(SchedulerKind::Fcfs),
            other => Err(Error::Config(format!("unknown scheduler `{other}`"))),
        }
    }
}

/// Polls `last_served + 1, last_served + 2, ...` (mod N) and returns the first
/// occupied queue.
pub fn rr_select(last_served: usize, occupied: &[bool]) -> Option<usize> {
    let n = occupied.len();
    (1..=n)
        .map(|k| (last_served + k) % n)
        .find(|&q| occupied[q])
}

/// Fullest non-empty queue. Ties go to the lower index.
///
/// Evaluated as a binary comparator tree: each node forwards the larger of
/// its two children, preferring the left child on equality.
pub fn lqf_select(fills: &[u32]) -> Option<usize> {
    let mut level: Vec<(u32, usize)> = fills.iter().copied().zip(0..).collect();
    if level.is_empty() {
        return None;
    }
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [a, b] if b.0 > a.0 => *b,
                [a, ..] => *a,
                [] => unreachable!(),
            })
            .collect();
    }
    let (fill, q) = level[0];
    (fill > 0).then_some(q)
}

/// Index FIFO of an FCFS output port.
#[derive(Debug, Clone)]
pub struct FcfsQueue {
    order: VecDeque<usize>,
    capacity: usize,
}

impl FcfsQueue {
    /// Sized for the worst case: every queue of the row full of minimum-size
    /// packets.
    pub fn new(ports: usize, queue_bytes: u32) -> Self {
        let capacity = ports * queue_bytes as usize / FLIT_BYTES;
        FcfsQueue {
            order: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn enqueue(&mut self, queue: usize) {
        assert!(
            self.order.len() < self.capacity,
            "FCFS index FIFO overflow ({} entries)",
            self.capacity
        );
        self.order.push_back(queue);
    }

    pub fn head(&self) -> Option<usize> {
        self.order.front().copied()
    }

    pub fn select(&mut self) -> Option<usize> {
        self.order.pop_front()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Decision state of one output port.
#[derive(Debug, Clone)]
pub enum SchedulerState {
    Rr { last_served: usize },
    Lqf,
    Fcfs(FcfsQueue),
}

impl SchedulerState {
    pub fn new(kind: SchedulerKind, ports: usize, queue_bytes: u32) -> Self {
        match kind {
            // Starts at N - 1 so queue 0 is polled first.
            SchedulerKind::Rr => SchedulerState::Rr {
                last_served: ports - 1,
            },
            SchedulerKind::Lqf => SchedulerState::Lqf,
            SchedulerKind::Fcfs => SchedulerState::Fcfs(FcfsQueue::new(ports, queue_bytes)),
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        match self {
            SchedulerState::Rr { .. } => SchedulerKind::Rr,
            SchedulerState::Lqf => SchedulerKind::Lqf,
            SchedulerState::Fcfs(_) => SchedulerKind::Fcfs,
        }
    }

    /// Picks the queue to serve next. `eligible[q]` says whether queue `q`
    /// holds a servable packet head; `fills` are byte occupancies.
    pub fn select(&mut self, eligible: &[bool], fills: &[u32]) -> Option<usize> {
        match self {
            SchedulerState::Rr { last_served } => rr_select(*last_served, eligible),
            SchedulerState::Lqf => {
                let masked: Vec<u32> = fills
                    .iter()
                    .zip(eligible)
                    .map(|(&f, &e)| if e { f.max(1) } else { 0 })
                    .collect();
                lqf_select(&masked)
            }
            SchedulerState::Fcfs(fifo) => {
                let head = fifo.head()?;
                if eligible[head] {
                    fifo.select()
                } else {
                    None
                }
            }
        }
    }

    /// A packet head was written into queue `queue` of this output's row.
    pub fn on_arrival(&mut self, queue: usize) {
        if let SchedulerState::Fcfs(fifo) = self {
            fifo.enqueue(queue);
        }
    }

    /// The last flit of a packet from `queue` left the mux.
    pub fn on_complete(&mut self, queue: usize) {
        if let SchedulerState::Rr { last_served } = self {
            *last_served = queue;
        }
    }

    /// Number of indices in the FCFS FIFO, if FCFS.
    pub fn pending(&self) -> Option<usize> {
        match self {
            SchedulerState::Fcfs(f) => Some(f.len()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occ(set: &[usize]) -> Vec<bool> {
        (0..7).map(|q| set.contains(&q)).collect()
    }

    #[test]
    fn rr_select_examples() {
        assert_eq!(rr_select(2, &occ(&[5])), Some(5));
        assert_eq!(rr_select(2, &occ(&[0, 1])), Some(0));
        assert_eq!(rr_select(2, &occ(&[])), None);
        assert_eq!(rr_select(0, &occ(&[0, 1])), Some(1));
        assert_eq!(rr_select(6, &occ(&[6])), Some(6));
    }

    #[test]
    fn lqf_select_examples() {
        assert_eq!(lqf_select(&[0; 7]), None);
        assert_eq!(lqf_select(&[64, 128, 8192, 0, 0, 0, 0]), Some(2));
        assert_eq!(lqf_select(&[0, 4096, 4096, 0, 0, 0, 0]), Some(1));
        assert_eq!(lqf_select(&[0, 0, 0, 0, 0, 0, 5]), Some(6));
        assert_eq!(lqf_select(&[]), None);
    }

    #[test]
    fn fcfs_examples() {
        let mut s = SchedulerState::new(SchedulerKind::Fcfs, 7, 8192);
        let all = [true; 7];
        assert_eq!(s.select(&all, &[0; 7]), None);
        for q in [3, 0, 3] {
            s.on_arrival(q);
        }
        let picks: Vec<_> = (0..3).map(|_| s.select(&all, &[0; 7]).unwrap()).collect();
        assert_eq!(picks, vec![3, 0, 3]);
    }

    #[test]
    fn fcfs_waits_for_its_head() {
        let mut s = SchedulerState::new(SchedulerKind::Fcfs, 3, 8192);
        s.on_arrival(2);
        s.on_arrival(0);
        assert_eq!(s.select(&[true, false, false], &[64, 0, 0]), None);
        assert_eq!(s.select(&[true, false, true], &[64, 0, 64]), Some(2));
    }

    #[test]
    fn fcfs_capacity_is_worst_case() {
        assert_eq!(FcfsQueue::new(7, 8192).capacity(), 7 * 128);
    }

    #[test]
    #[should_panic(expected = "overflow")]
    fn fcfs_overflow_panics() {
        let mut f = FcfsQueue::new(1, 128);
        f.enqueue(0);
        f.enqueue(0);
        f.enqueue(0);
    }

    #[test]
    fn rr_rotates_after_completion() {
        let mut s = SchedulerState::new(SchedulerKind::Rr, 4, 8192);
        let all = [true; 4];
        let mut order = Vec::new();
        for _ in 0..6 {
            let q = s.select(&all, &[0; 4]).unwrap();
            s.on_complete(q);
            order.push(q);
        }
        assert_eq!(order, vec![0, 1, 2, 3, 0, 1]);
    }

    #[test]
    fn lqf_ignores_ineligible_fills() {
        let mut s = SchedulerState::new(SchedulerKind::Lqf, 3, 8192);
        assert_eq!(s.select(&[true, false, true], &[64, 8000, 128]), Some(2));
    }
}
