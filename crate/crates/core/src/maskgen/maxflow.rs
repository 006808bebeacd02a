//! Dinic max-flow / min-cut on a sparse graph with real capacities.

use std::collections::VecDeque;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MaxFlow {
    head: Vec<usize>,
    next: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<f64>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

const NIL: usize = usize::MAX;

impl MaxFlow {
    pub fn new(nodes: usize) -> Self {
        Self {
            head: vec![NIL; nodes],
            next: Vec::new(),
            to: Vec::new(),
            cap: Vec::new(),
            level: vec![-1; nodes],
            iter: vec![0; nodes],
        }
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        let mut g = Self::new(nodes);
        g.next.reserve(2 * edges);
        g.to.reserve(2 * edges);
        g.cap.reserve(2 * edges);
        g
    }

    fn push_arc(&mut self, from: usize, to: usize, cap: f64) {
        self.to.push(to);
        self.cap.push(cap);
        self.next.push(self.head[from]);
        self.head[from] = self.to.len() - 1;
    }

    /// Adds `a -> b` with capacity `forward` and `b -> a` with `backward`.
    pub fn add_edge(&mut self, a: usize, b: usize, forward: f64, backward: f64) {
        self.push_arc(a, b, forward);
        self.push_arc(b, a, backward);
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        let mut q = VecDeque::new();
        self.level[s] = 0;
        q.push_back(s);
        while let Some(u) = q.pop_front() {
            let mut e = self.head[u];
            while e != NIL {
                let v = self.to[e];
                if self.cap[e] > EPS && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    q.push_back(v);
                }
                e = self.next[e];
            }
        }
        self.level[t] >= 0
    }

    /// Iterative blocking-flow DFS from `s`.
    fn dfs(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        let mut path: Vec<usize> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let f = path.iter().map(|&e| self.cap[e]).fold(f64::INFINITY, f64::min);
                for &e in &path {
                    self.cap[e] -= f;
                    self.cap[e ^ 1] += f;
                }
                total += f;
                // retreat to the tail of the first saturated arc
                let cut = path.iter().position(|&e| self.cap[e] <= EPS).unwrap_or(0);
                path.truncate(cut);
                u = if cut == 0 { s } else { self.to[path[cut - 1]] };
                continue;
            }
            let mut advanced = false;
            while self.iter[u] != NIL {
                let e = self.iter[u];
                let v = self.to[e];
                if self.cap[e] > EPS && self.level[v] == self.level[u] + 1 {
                    path.push(e);
                    u = v;
                    advanced = true;
                    break;
                }
                self.iter[u] = self.next[e];
            }
            if advanced {
                continue;
            }
            // dead end
            self.level[u] = -1;
            match path.pop() {
                None => return total,
                Some(e) => {
                    u = self.to[e ^ 1];
                    self.iter[u] = self.next[self.iter[u]];
                }
            }
        }
    }

    pub fn solve(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        while self.bfs(s, t) {
            self.iter.copy_from_slice(&self.head);
            flow += self.dfs(s, t);
        }
        flow
    }

    /// Nodes reachable from `s` in the residual graph (the source side of a
    /// minimum cut, after `solve`).
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.head.len()];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            let mut e = self.head[u];
            while e != NIL {
                let v = self.to[e];
                if self.cap[e] > EPS && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
                e = self.next[e];
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_network() {
        // CLRS figure 26.1, max flow 23
        let mut g = MaxFlow::new(6);
        for (a, b, c) in [(0, 1, 16.), (0, 2, 13.), (2, 1, 4.), (1, 3, 12.), (3, 2, 9.), (2, 4, 14.), (4, 3, 7.), (3, 5, 20.), (4, 5, 4.)] {
            g.add_edge(a, b, c, 0.0);
        }
        assert!((g.solve(0, 5) - 23.0).abs() < 1e-9);
        let side = g.source_side(0);
        assert!(side[0] && !side[5]);
    }

    /// Brute-force min cut over all 2^(n-2) partitions.
    #[test]
    fn matches_enumerated_min_cut() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n = 7;
            let mut edges = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if a != b && rng.random::<f64>() < 0.4 {
                        edges.push((a, b, rng.random_range(0.0..5.0)));
                    }
                }
            }
            let mut g = MaxFlow::new(n);
            for &(a, b, c) in &edges {
                g.add_edge(a, b, c, 0.0);
            }
            let flow = g.solve(0, n - 1);
            let mut best = f64::INFINITY;
            for bits in 0..(1u32 << (n - 2)) {
                let side = |v: usize| v == 0 || (v != n - 1 && bits & (1 << (v - 1)) != 0);
                let cut: f64 = edges.iter().filter(|(a, b, _)| side(*a) && !side(*b)).map(|e| e.2).sum();
                best = best.min(cut);
            }
            assert!((flow - best).abs() < 1e-9, "flow {flow} vs cut {best}");
        }
    }
}
