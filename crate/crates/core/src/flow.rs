//! Bipartite matching and maximum flow on small graphs.

use std::collections::VecDeque;

/// Maximum matching between `left` and `right` vertices by augmenting paths.
///
/// `adj[l]` lists the right neighbours of `l`, tried in order. Returns
/// `match_of_left[l] = Some(r)`.
pub fn bipartite_matching(adj: &[Vec<usize>], right: usize) -> Vec<Option<usize>> {
    fn augment(l: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &r in &adj[l] {
            if seen[r] {
                continue;
            }
            seen[r] = true;
            if owner[r].is_none_or(|o| augment(o, adj, seen, owner)) {
                owner[r] = Some(l);
                return true;
            }
        }
        false
    }

    let mut owner = vec![None; right];
    for l in 0..adj.len() {
        let mut seen = vec![false; right];
        augment(l, adj, &mut seen, &mut owner);
    }
    let mut matched = vec![None; adj.len()];
    for (r, o) in owner.into_iter().enumerate() {
        if let Some(l) = o {
            matched[l] = Some(r);
        }
    }
    matched
}

#[derive(Clone, Debug)]
struct Arc {
    to: usize,
    cap: u64,
}

/// Dinic's algorithm with integer capacities.
#[derive(Clone, Debug)]
pub struct FlowNetwork {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            out: vec![Vec::new(); nodes],
        }
    }

    /// Adds `from → to` and returns its id (for [`FlowNetwork::flow_on`]).
    pub fn add_edge(&mut self, from: usize, to: usize, cap: u64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap });
        self.out[from].push(id);
        self.arcs.push(Arc { to: from, cap: 0 });
        self.out[to].push(id + 1);
        id
    }

    /// Flow currently routed over edge `id`.
    pub fn flow_on(&self, id: usize) -> u64 {
        self.arcs[id + 1].cap
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> u64 {
        let n = self.out.len();
        let mut total = 0;
        loop {
            let mut level = vec![usize::MAX; n];
            level[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &a in &self.out[u] {
                    let Arc { to, cap } = self.arcs[a];
                    if cap > 0 && level[to] == usize::MAX {
                        level[to] = level[u] + 1;
                        queue.push_back(to);
                    }
                }
            }
            if level[t] == usize::MAX {
                return total;
            }
            let mut next = vec![0usize; n];
            loop {
                let pushed = self.push(s, t, u64::MAX, &level, &mut next);
                if pushed == 0 {
                    break;
                }
                total += pushed;
            }
        }
    }

    fn push(&mut self, u: usize, t: usize, limit: u64, level: &[usize], next: &mut [usize]) -> u64 {
        if u == t {
            return limit;
        }
        while next[u] < self.out[u].len() {
            let a = self.out[u][next[u]];
            let Arc { to, cap } = self.arcs[a];
            if cap > 0 && level[to] == level[u] + 1 {
                let got = self.push(to, t, limit.min(cap), level, next);
                if got > 0 {
                    self.arcs[a].cap -= got;
                    self.arcs[a ^ 1].cap += got;
                    return got;
                }
            }
            next[u] += 1;
        }
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_needs_augmentation() {
        // 0 prefers 0, but 1 can only take 0.
        let adj = vec![vec![0, 1], vec![0]];
        assert_eq!(bipartite_matching(&adj, 2), vec![Some(1), Some(0)]);
    }

    #[test]
    fn matching_reports_unmatched() {
        let adj = vec![vec![0], vec![0], vec![]];
        let m = bipartite_matching(&adj, 1);
        assert_eq!(m.iter().filter(|x| x.is_some()).count(), 1);
        assert_eq!(m[2], None);
    }

    #[test]
    fn flow_on_a_diamond() {
        let mut g = FlowNetwork::new(4);
        let a = g.add_edge(0, 1, 3);
        g.add_edge(0, 2, 2);
        g.add_edge(1, 3, 2);
        g.add_edge(2, 3, 3);
        let cross = g.add_edge(1, 2, 1);
        assert_eq!(g.max_flow(0, 3), 5);
        assert_eq!(g.flow_on(a), 3);
        assert_eq!(g.flow_on(cross), 1);
    }
}
