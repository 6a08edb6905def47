// SPDX-License-Identifier: Apache-2.0

//! Combined input/output-queued crossbar without virtual output queues and
//! without speedup. Only the packet at the head of each input FIFO can be
//! matched, so a head bound to a busy output blocks everything behind it.
//!
//! An uncontended flit entering at `t` is written into its input FIFO at
//! `t + 1`, matched and moved into the output FIFO at `t + 2`, drained at
//! `t + 3` and offered at `t + 4`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::crossbar::{admit, Admission, CrosspointQueue, Fabric};
use crate::kernel::{Block, Cycle, Exchange, Flit, PortId, Signals};

const OUT_PIPE_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CioqConfig {
    pub ports: usize,
    pub input_bytes: u32,
    pub output_bytes: u32,
}

impl Default for CioqConfig {
    fn default() -> Self {
        CioqConfig {
            ports: 7,
            input_bytes: 8192,
            output_bytes: 8192,
        }
    }
}

/// Greedy maximal matching over head-of-line targets.
///
/// `heads[i]` is the output wanted by input `i`'s head packet, if it can
/// move at all. Each free output grants the first contender at or after its
/// round-robin pointer, and the pointer moves past the winner. Returns the
/// output matched to each input.
pub fn match_heads(
    heads: &[Option<usize>],
    output_busy: &[bool],
    pointers: &mut [usize],
) -> Vec<Option<usize>> {
    let n = heads.len();
    let mut matched = vec![None; n];
    for j in 0..output_busy.len() {
        if output_busy[j] {
            continue;
        }
        let start = pointers[j];
        if let Some(i) = (0..n)
            .map(|k| (start + k) % n)
            .find(|&i| heads[i] == Some(j))
        {
            matched[i] = Some(j);
            pointers[j] = (i + 1) % n;
        }
    }
    matched
}

#[derive(Debug, Clone, Copy)]
struct Route {
    admitted: bool,
}

pub struct Cioq {
    name: String,
    cfg: CioqConfig,
    inputs: Vec<PortId>,
    outputs: Vec<PortId>,
    in_q: Vec<CrosspointQueue>,
    out_q: Vec<CrosspointQueue>,
    routes: Vec<Option<Route>>,
    stage: Vec<Option<Flit>>,
    /// Output each input is streaming to.
    conn: Vec<Option<usize>>,
    /// Input each output is receiving from.
    receiving: Vec<Option<usize>>,
    pointers: Vec<usize>,
    pipes: Vec<VecDeque<(Cycle, Flit)>>,
    drops: Vec<Vec<u64>>,
    dropped_ids: Vec<u64>,
}

impl Cioq {
    pub fn new(name: &str, cfg: CioqConfig, inputs: Vec<PortId>, outputs: Vec<PortId>) -> Self {
        let n = cfg.ports;
        assert!(n >= 2, "a crossbar needs at least two ports");
        assert_eq!(inputs.len(), n);
        assert_eq!(outputs.len(), n);
        Cioq {
            name: name.to_string(),
            inputs,
            outputs,
            in_q: (0..n)
                .map(|_| CrosspointQueue::new(cfg.input_bytes))
                .collect(),
            out_q: (0..n)
                .map(|_| CrosspointQueue::new(cfg.output_bytes))
                .collect(),
            routes: vec![None; n],
            stage: (0..n).map(|_| None).collect(),
            conn: vec![None; n],
            receiving: vec![None; n],
            pointers: vec![0; n],
            pipes: (0..n).map(|_| VecDeque::new()).collect(),
            drops: vec![vec![0; n]; n],
            dropped_ids: Vec::new(),
            cfg,
        }
    }

    pub fn input_queue(&self, i: usize) -> &CrosspointQueue {
        &self.in_q[i]
    }

    pub fn output_queue(&self, j: usize) -> &CrosspointQueue {
        &self.out_q[j]
    }

    /// Target of input `i`'s head packet if it is resident and fits into
    /// the target's output FIFO.
    fn movable_head(&self, i: usize) -> Option<usize> {
        if self.conn[i].is_some() || !self.in_q[i].has_head() {
            return None;
        }
        let meta = self.in_q[i].front()?.sideband()?;
        let j = meta.current_target();
        let q = &self.out_q[j];
        (admit(q.capacity(), q.reserved(), meta.packet_size) == Admission::Admit).then_some(j)
    }
}

impl Block for Cioq {
    fn name(&self) -> &str {
        &self.name
    }

    fn inputs(&self) -> Vec<PortId> {
        self.inputs.clone()
    }

    fn outputs(&self) -> Vec<PortId> {
        self.outputs.clone()
    }

    fn drive(&self, now: Cycle, sig: &mut Signals<'_>) {
        for &p in &self.inputs {
            sig.set_ready(p, true);
        }
        for (pipe, &p) in self.pipes.iter().zip(&self.outputs) {
            if let Some((at, flit)) = pipe.front() {
                if *at <= now {
                    sig.offer(p, flit.tag());
                }
            }
        }
    }

    fn emit(&mut self, _now: Cycle, port: PortId) -> Flit {
        let j = self
            .outputs
            .iter()
            .position(|&p| p == port)
            .expect("own port");
        self.pipes[j].pop_front().expect("offered flit").1
    }

    fn commit(&mut self, now: Cycle, io: &mut Exchange<'_>) {
        let n = self.cfg.ports;

        let mut arrivals = Vec::with_capacity(n);
        for i in 0..n {
            let a = io.take(self.inputs[i]).map(|flit| {
                let route = if flit.is_first() {
                    let meta = flit.sideband().unwrap_or_else(|| {
                        panic!("{}: packet {} has no sideband", self.name, flit.packet_id)
                    });
                    let target = meta.current_target();
                    let admitted = self.in_q[i].try_admit(meta.packet_size) == Admission::Admit;
                    if !admitted {
                        self.drops[i][target] += 1;
                        self.dropped_ids.push(flit.packet_id);
                    }
                    let r = Route { admitted };
                    self.routes[i] = Some(r);
                    r
                } else {
                    self.routes[i].expect("flit without packet head")
                };
                if flit.last {
                    self.routes[i] = None;
                }
                (route, flit)
            });
            arrivals.push(a);
        }

        for j in 0..n {
            if self.pipes[j].len() < OUT_PIPE_DEPTH {
                if let Some(flit) = self.out_q[j].pop() {
                    self.pipes[j].push_back((now + 1, flit));
                }
            }
        }

        let heads: Vec<Option<usize>> = (0..n).map(|i| self.movable_head(i)).collect();
        let busy: Vec<bool> = self.receiving.iter().map(Option::is_some).collect();
        let matched = match_heads(&heads, &busy, &mut self.pointers);
        for (i, m) in matched.into_iter().enumerate() {
            if let Some(j) = m {
                let size = self.in_q[i]
                    .front()
                    .and_then(Flit::sideband)
                    .expect("head")
                    .packet_size;
                let ok = self.out_q[j].try_admit(size);
                debug_assert_eq!(ok, Admission::Admit);
                self.conn[i] = Some(j);
                self.receiving[j] = Some(i);
            }
        }

        for i in 0..n {
            let Some(j) = self.conn[i] else { continue };
            if let Some(flit) = self.in_q[i].pop() {
                let last = flit.last;
                self.out_q[j].push(flit);
                if last {
                    self.conn[i] = None;
                    self.receiving[j] = None;
                }
            }
        }

        for i in 0..n {
            if let Some(flit) = self.stage[i].take() {
                self.in_q[i].push(flit);
            }
        }
        for (i, a) in arrivals.into_iter().enumerate() {
            if let Some((route, flit)) = a {
                if route.admitted {
                    self.stage[i] = Some(flit);
                }
            }
        }
    }

    fn check(&self) -> Result<(), String> {
        for (i, q) in self.in_q.iter().enumerate() {
            q.check().map_err(|e| format!("input {i}: {e}"))?;
        }
        for (j, q) in self.out_q.iter().enumerate() {
            q.check().map_err(|e| format!("output {j}: {e}"))?;
        }
        for (i, c) in self.conn.iter().enumerate() {
            if let Some(j) = *c {
                if self.receiving[j] != Some(i) {
                    return Err(format!(
                        "input {i} streams to {j}, which is not receiving it"
                    ));
                }
            }
        }
        Ok(())
    }

    fn retired(&self) -> u64 {
        self.dropped_ids.len() as u64
    }
}

impl Fabric for Cioq {
    fn drop_matrix(&self) -> Vec<Vec<u64>> {
        self.drops.clone()
    }

    fn dropped_ids(&self) -> &[u64] {
        &self.dropped_ids
    }
}
