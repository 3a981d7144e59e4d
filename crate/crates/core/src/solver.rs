//! Energy minimization for [`CrfProblem`]s: sequential tree-reweighted
//! message passing (TRW-S) with an explicit lower bound, and an exhaustive
//! oracle for small problems.
//!
//! The node order is the problem's node numbering (video-major,
//! frame-minor). The graph is covered by monotonic chains built by pairing,
//! at every node, its k-th edge from an earlier node with its k-th edge to a
//! later node, so node `i` lies on `n_i = max(#earlier, #later, 1)` chains
//! and is reweighted by `1 / n_i`. The bound reported after every iteration
//! is the sum over those chains of the chain minimum of the current
//! reparameterization, each node contributing `1 / n_i` of its
//! reparameterized unary to every chain through it.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::crf::{CrfProblem, Labeling};
use crate::error::{Error, Result};

pub const MAX_EXHAUSTIVE_LABELINGS: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrwsOptions {
    pub max_iters: usize,
    /// Stop once an iteration improves the bound by less than this.
    pub epsilon: f64,
}

impl Default for TrwsOptions {
    fn default() -> Self {
        TrwsOptions {
            max_iters: 100,
            epsilon: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub labeling: Labeling,
    pub lower_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
    /// Bound after each iteration.
    pub bound_history: Vec<f64>,
}

struct Chain {
    first: usize,
    edges: Vec<usize>,
}

struct Topology {
    sizes: Vec<usize>,
    node_offset: Vec<usize>,
    /// Edges to later nodes.
    later: Vec<Vec<usize>>,
    /// Edges from earlier nodes.
    earlier: Vec<Vec<usize>>,
    gamma: Vec<f64>,
    /// Offset of the a -> b message (indexed by states of b).
    fwd_offset: Vec<usize>,
    /// Offset of the b -> a message (indexed by states of a).
    bwd_offset: Vec<usize>,
    message_len: usize,
    chains: Vec<Chain>,
}

impl Topology {
    fn new(problem: &CrfProblem) -> Self {
        let n = problem.num_nodes();
        let sizes: Vec<usize> = (0..n).map(|i| problem.state_count(i)).collect();
        let mut node_offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for s in &sizes {
            node_offset.push(total);
            total += s;
        }
        node_offset.push(total);

        let mut later = vec![Vec::new(); n];
        let mut earlier = vec![Vec::new(); n];
        let mut slot_at_a = Vec::with_capacity(problem.edges.len());
        let mut slot_at_b = Vec::with_capacity(problem.edges.len());
        let mut fwd_offset = Vec::with_capacity(problem.edges.len());
        let mut bwd_offset = Vec::with_capacity(problem.edges.len());
        let mut off = 0;
        for (k, e) in problem.edges.iter().enumerate() {
            slot_at_a.push(later[e.a].len());
            slot_at_b.push(earlier[e.b].len());
            later[e.a].push(k);
            earlier[e.b].push(k);
            fwd_offset.push(off);
            off += sizes[e.b];
            bwd_offset.push(off);
            off += sizes[e.a];
        }
        let gamma = (0..n)
            .map(|i| 1.0 / later[i].len().max(earlier[i].len()).max(1) as f64)
            .collect();

        let mut chains: Vec<Chain> = (0..n)
            .filter(|&i| later[i].is_empty() && earlier[i].is_empty())
            .map(|i| Chain { first: i, edges: vec![] })
            .collect();
        for (k, e) in problem.edges.iter().enumerate() {
            // an edge whose slot at `a` pairs with an incoming edge continues that chain
            if slot_at_a[k] < earlier[e.a].len() {
                continue;
            }
            let mut edges = vec![k];
            let mut cur = k;
            while let Some(&next) = later[problem.edges[cur].b].get(slot_at_b[cur]) {
                edges.push(next);
                cur = next;
            }
            chains.push(Chain { first: e.a, edges });
        }

        Topology {
            sizes,
            node_offset,
            later,
            earlier,
            gamma,
            fwd_offset,
            bwd_offset,
            message_len: off,
            chains,
        }
    }

    fn chains_through(&self, node: usize) -> f64 {
        1.0 / self.gamma[node]
    }
}

struct Trws<'p> {
    problem: &'p CrfProblem,
    topo: Topology,
    messages: Vec<f64>,
    /// Per node state: sum of all messages into the node.
    incoming: Vec<f64>,
    hat: Vec<f64>,
    theta: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'p> Trws<'p> {
    fn new(problem: &'p CrfProblem) -> Self {
        let topo = Topology::new(problem);
        let width = topo.sizes.iter().copied().max().unwrap_or(1);
        Trws {
            problem,
            messages: vec![0.0; topo.message_len],
            incoming: vec![0.0; *topo.node_offset.last().unwrap()],
            hat: vec![0.0; width],
            theta: vec![0.0; width],
            scratch: vec![0.0; width],
            topo,
        }
    }

    fn stage_node(&mut self, node: usize) {
        let off = self.topo.node_offset[node];
        let n = self.topo.sizes[node];
        self.hat[..n].copy_from_slice(&self.incoming[off..off + n]);
    }

    /// Recomputes the message `from` sends along edge `k`, using the staged
    /// reparameterized unary of `from`.
    fn send(&mut self, k: usize, from: usize) {
        let edge = &self.problem.edges[k];
        let forward = edge.a == from;
        let (to, out_off, in_off) = if forward {
            (edge.b, self.topo.fwd_offset[k], self.topo.bwd_offset[k])
        } else {
            (edge.a, self.topo.bwd_offset[k], self.topo.fwd_offset[k])
        };
        let (ns, nt) = (self.topo.sizes[from], self.topo.sizes[to]);
        let gamma = self.topo.gamma[from];
        for xs in 0..ns {
            self.theta[xs] = gamma * self.hat[xs] - self.messages[in_off + xs];
        }
        let costs = &edge.costs;
        let mut lowest = f64::INFINITY;
        for xt in 0..nt {
            let mut best = f64::INFINITY;
            for xs in 0..ns {
                let pair = if forward { costs.get(xs, xt) } else { costs.get(xt, xs) };
                best = best.min(self.theta[xs] + pair);
            }
            self.scratch[xt] = best;
            lowest = lowest.min(best);
        }
        let to_off = self.topo.node_offset[to];
        for xt in 0..nt {
            let new = self.scratch[xt] - lowest;
            let old = std::mem::replace(&mut self.messages[out_off + xt], new);
            self.incoming[to_off + xt] += new - old;
        }
    }

    fn forward_pass(&mut self) {
        for i in 0..self.problem.num_nodes() {
            self.stage_node(i);
            for idx in 0..self.topo.later[i].len() {
                let k = self.topo.later[i][idx];
                self.send(k, i);
            }
        }
    }

    fn backward_pass(&mut self) {
        for i in (0..self.problem.num_nodes()).rev() {
            self.stage_node(i);
            for idx in 0..self.topo.earlier[i].len() {
                let k = self.topo.earlier[i][idx];
                self.send(k, i);
            }
        }
    }

    fn unary_share(&self, node: usize, x: usize) -> f64 {
        self.incoming[self.topo.node_offset[node] + x] / self.topo.chains_through(node)
    }

    /// Edge cost minus both messages crossing the edge.
    fn reparam_pair(&self, k: usize, xa: usize, xb: usize) -> f64 {
        let e = &self.problem.edges[k];
        e.costs.get(xa, xb) - self.messages[self.topo.fwd_offset[k] + xb] - self.messages[self.topo.bwd_offset[k] + xa]
    }

    fn lower_bound(&self) -> f64 {
        let mut bound = 0.0;
        let mut f = Vec::new();
        let mut g = Vec::new();
        for chain in &self.topo.chains {
            let first = chain.first;
            f.clear();
            f.extend((0..self.topo.sizes[first]).map(|x| self.unary_share(first, x)));
            for &k in &chain.edges {
                let b = self.problem.edges[k].b;
                g.clear();
                for xb in 0..self.topo.sizes[b] {
                    let best = f
                        .iter()
                        .enumerate()
                        .map(|(xa, fa)| fa + self.reparam_pair(k, xa, xb))
                        .fold(f64::INFINITY, f64::min);
                    g.push(best + self.unary_share(b, xb));
                }
                std::mem::swap(&mut f, &mut g);
            }
            bound += f.iter().copied().fold(f64::INFINITY, f64::min);
        }
        bound
    }

    /// Sequential conditioned argmin: each node minimizes its costs to the
    /// already-labeled earlier nodes plus the messages from later nodes.
    fn extract_labeling(&self) -> Vec<usize> {
        let n = self.problem.num_nodes();
        let mut states = vec![0usize; n];
        let mut score = Vec::new();
        for i in 0..n {
            score.clear();
            score.resize(self.topo.sizes[i], 0.0);
            for &k in &self.topo.earlier[i] {
                let e = &self.problem.edges[k];
                for (x, s) in score.iter_mut().enumerate() {
                    *s += e.costs.get(states[e.a], x);
                }
            }
            for &k in &self.topo.later[i] {
                let off = self.topo.bwd_offset[k];
                for (x, s) in score.iter_mut().enumerate() {
                    *s += self.messages[off + x];
                }
            }
            let mut best = 0;
            for x in 1..score.len() {
                if score[x] < score[best] {
                    best = x;
                }
            }
            states[i] = best;
        }
        states
    }
}

/// Iterated conditional modes: relabels one node at a time to its cheapest
/// state given its neighbors until a full sweep changes nothing.
fn polish(problem: &CrfProblem, topo: &Topology, states: &mut [usize]) {
    let mut score = Vec::new();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..states.len() {
            score.clear();
            score.resize(topo.sizes[i], 0.0);
            for &k in &topo.earlier[i] {
                let e = &problem.edges[k];
                for (x, s) in score.iter_mut().enumerate() {
                    *s += e.costs.get(states[e.a], x);
                }
            }
            for &k in &topo.later[i] {
                let e = &problem.edges[k];
                for (x, s) in score.iter_mut().enumerate() {
                    *s += e.costs.get(x, states[e.b]);
                }
            }
            let mut best = states[i];
            for x in 0..score.len() {
                if score[x] < score[best] - 1e-12 {
                    best = x;
                }
            }
            if best != states[i] {
                states[i] = best;
                changed = true;
            }
        }
    }
}

fn check_finite(problem: &CrfProblem) -> Result<()> {
    for (k, e) in problem.edges.iter().enumerate() {
        if e.costs.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCost { edge: k });
        }
    }
    Ok(())
}

pub fn solve_trws(problem: &CrfProblem, options: &TrwsOptions) -> Result<SolveReport> {
    if options.max_iters == 0 || !(options.epsilon > 0.0) {
        return Err(Error::Config("trws needs max_iters >= 1 and epsilon > 0".into()));
    }
    check_finite(problem)?;
    for (k, e) in problem.edges.iter().enumerate() {
        if e.costs.rows != problem.state_count(e.a) || e.costs.cols != problem.state_count(e.b) {
            return Err(Error::InvalidProblem(format!("edge {} table shape does not match its endpoints", k)));
        }
    }
    let started = Instant::now();
    let mut trws = Trws::new(problem);
    // zero-message bound, kept out of the history
    let initial = trws.lower_bound();
    let mut history: Vec<f64> = Vec::with_capacity(options.max_iters);
    let mut best: Option<Labeling> = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iters {
        iterations += 1;
        trws.forward_pass();
        trws.backward_pass();
        let bound = trws.lower_bound();
        let candidate = problem.labeling(trws.extract_labeling());
        if best.as_ref().is_none_or(|b| candidate.energy < b.energy) {
            best = Some(candidate);
        }
        let previous = history.last().copied();
        history.push(bound);
        let gap = best.as_ref().unwrap().energy - bound;
        if previous.is_some_and(|p| bound - p < options.epsilon) || gap <= 1e-9 {
            converged = true;
            break;
        }
    }
    let mut states = best.expect("at least one iteration ran").states;
    polish(problem, &trws.topo, &mut states);
    let labeling = problem.labeling(states);
    let lower_bound = history.iter().copied().fold(initial, f64::max);
    Ok(SolveReport {
        lower_bound: lower_bound.min(labeling.energy),
        labeling,
        iterations,
        converged,
        wall_time: started.elapsed().as_secs_f64(),
        bound_history: history,
    })
}

/// Exact minimum by enumeration. Among equal energies the lexicographically
/// smallest state vector wins.
pub fn solve_exhaustive(problem: &CrfProblem) -> Result<Labeling> {
    check_finite(problem)?;
    let n = problem.num_nodes();
    let mut product: u128 = 1;
    for i in 0..n {
        product = product.saturating_mul(problem.state_count(i) as u128);
    }
    if product > MAX_EXHAUSTIVE_LABELINGS {
        return Err(Error::StateSpaceTooLarge(product));
    }
    let mut states = vec![0usize; n];
    let mut best = problem.labeling(states.clone());
    'outer: loop {
        // odometer, last node fastest
        let mut i = n;
        loop {
            if i == 0 {
                break 'outer;
            }
            i -= 1;
            states[i] += 1;
            if states[i] < problem.state_count(i) {
                break;
            }
            states[i] = 0;
        }
        let e = problem.energy(&states);
        if e < best.energy {
            best = Labeling {
                states: states.clone(),
                energy: e,
            };
        }
    }
    Ok(best)
}
