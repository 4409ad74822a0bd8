//! Exact max-flow (Edmonds–Karp) over rational capacities.

use std::collections::VecDeque;

use num_traits::{Signed, Zero};

use crate::rational::Rational;

/// Residual graph with paired forward/backward edges (`e ^ 1` is the twin).
#[derive(Clone, Debug)]
pub(crate) struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    residual: Vec<Rational>,
    capacity: Vec<Rational>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        FlowGraph {
            adj: vec![Vec::new(); nodes],
            to: Vec::new(),
            residual: Vec::new(),
            capacity: Vec::new(),
        }
    }

    /// Adds `u -> v` with capacity `cap` and returns the edge handle.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: Rational) -> usize {
        let e = self.to.len();
        self.to.push(v);
        self.residual.push(cap.clone());
        self.capacity.push(cap);
        self.adj[u].push(e);
        self.to.push(u);
        self.residual.push(Rational::zero());
        self.capacity.push(Rational::zero());
        self.adj[v].push(e + 1);
        e
    }

    pub fn flow(&self, e: usize) -> Rational {
        &self.capacity[e] - &self.residual[e]
    }

    /// Pushes the maximum flow from `s` to `t` and returns its value.
    ///
    /// Augmenting paths are found by BFS in edge-insertion order, so the
    /// resulting flow is a deterministic function of how the graph was built.
    pub fn max_flow(&mut self, s: usize, t: usize) -> Rational {
        let mut total = Rational::zero();
        let n = self.adj.len();
        loop {
            let mut via: Vec<Option<usize>> = vec![None; n];
            let mut seen = vec![false; n];
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if !seen[v] && self.residual[e].is_positive() {
                        seen[v] = true;
                        via[v] = Some(e);
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let mut path = Vec::new();
            let mut v = t;
            while let Some(e) = via[v] {
                path.push(e);
                v = self.to[e ^ 1];
            }
            let push = path
                .iter()
                .map(|&e| &self.residual[e])
                .min()
                .cloned()
                .unwrap_or_else(Rational::zero);
            for &e in &path {
                self.residual[e] -= &push;
                self.residual[e ^ 1] += &push;
            }
            total += push;
        }
    }
}
