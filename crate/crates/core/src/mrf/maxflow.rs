//! Dinic max-flow on real capacities.

use std::collections::VecDeque;

pub(crate) struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
    eps: f64,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        FlowGraph { adj: vec![Vec::new(); nodes], to: Vec::new(), cap: Vec::new(), eps: 0.0 }
    }

    /// Adds arcs `u -> v` and `v -> u`, each the residual twin of the other.
    pub fn add_edge(&mut self, u: usize, v: usize, cap_uv: f64, cap_vu: f64) {
        let e = self.to.len();
        self.to.push(v);
        self.cap.push(cap_uv);
        self.adj[u].push(e);
        self.to.push(u);
        self.cap.push(cap_vu);
        self.adj[v].push(e + 1);
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let largest = self.cap.iter().fold(0.0f64, |m, &c| m.max(c));
        self.eps = largest * 1e-14;
        let n = self.adj.len();
        let mut total = 0.0;
        let mut level = vec![usize::MAX; n];
        let mut it = vec![0usize; n];
        while self.levels(s, t, &mut level) {
            it.iter_mut().for_each(|x| *x = 0);
            total += self.blocking_flow(s, t, &mut level, &mut it);
        }
        total
    }

    /// Nodes reachable from `s` in the residual graph.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if !seen[v] && self.cap[e] > self.eps {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    fn levels(&self, s: usize, t: usize, level: &mut [usize]) -> bool {
        level.iter_mut().for_each(|l| *l = usize::MAX);
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if level[v] == usize::MAX && self.cap[e] > self.eps {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        level[t] != usize::MAX
    }

    fn blocking_flow(&mut self, s: usize, t: usize, level: &mut [usize], it: &mut [usize]) -> f64 {
        let mut pushed = 0.0;
        let mut path: Vec<usize> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let f = path.iter().fold(f64::INFINITY, |m, &e| m.min(self.cap[e]));
                for &e in &path {
                    self.cap[e] -= f;
                    self.cap[e ^ 1] += f;
                }
                pushed += f;
                let k = path.iter().position(|&e| self.cap[e] <= self.eps).unwrap_or(0);
                path.truncate(k);
                u = path.last().map_or(s, |&e| self.to[e]);
                continue;
            }
            let mut advanced = false;
            while it[u] < self.adj[u].len() {
                let e = self.adj[u][it[u]];
                let v = self.to[e];
                if self.cap[e] > self.eps && level[v] == level[u].wrapping_add(1) {
                    path.push(e);
                    u = v;
                    advanced = true;
                    break;
                }
                it[u] += 1;
            }
            if !advanced {
                if u == s {
                    break;
                }
                level[u] = usize::MAX;
                let e = path.pop().expect("nonempty path away from source");
                u = self.to[e ^ 1];
                it[u] += 1;
            }
        }
        pushed
    }
}
