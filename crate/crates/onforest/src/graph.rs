//! Weighted undirected graphs with positive integer costs, connected
//! component queries over edge subsets, and deterministic shortest paths
//! under substitutable rational edge weights.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt;

use num_traits::{ToPrimitive, Zero};

use crate::{rat_u, Rat};

pub type Vertex = u32;
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub u: Vertex,
    pub v: Vertex,
    pub cost: u64,
}

impl Edge {
    /// The endpoint opposite to `x`, which must be an endpoint.
    pub fn other(&self, x: Vertex) -> Vertex {
        if x == self.u {
            self.v
        } else {
            self.u
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    NonpositiveCost { edge: usize },
    EndpointOutOfRange { edge: usize, vertex: Vertex },
    SelfLoop { edge: usize, vertex: Vertex },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::NonpositiveCost { edge } => {
                write!(f, "edge {edge}: nonpositive cost")
            }
            GraphError::EndpointOutOfRange { edge, vertex } => {
                write!(f, "edge {edge}: endpoint {vertex} out of range")
            }
            GraphError::SelfLoop { edge, vertex } => {
                write!(f, "edge {edge}: self-loop at {vertex}")
            }
        }
    }
}

/// Immutable undirected multigraph. Edge ids are input positions; parallel
/// edges are allowed, self-loops and zero costs are not.
#[derive(Debug, Clone)]
pub struct Graph {
    vertex_count: u32,
    edges: Vec<Edge>,
    adj: Vec<Vec<(Vertex, EdgeId)>>,
}

impl Graph {
    pub fn new(vertex_count: u32, edge_list: &[(Vertex, Vertex, u64)]) -> Result<Self, GraphError> {
        let mut edges = Vec::with_capacity(edge_list.len());
        let mut adj = vec![Vec::new(); vertex_count as usize];
        for (i, &(u, v, cost)) in edge_list.iter().enumerate() {
            if cost == 0 {
                return Err(GraphError::NonpositiveCost { edge: i });
            }
            if u >= vertex_count {
                return Err(GraphError::EndpointOutOfRange { edge: i, vertex: u });
            }
            if v >= vertex_count {
                return Err(GraphError::EndpointOutOfRange { edge: i, vertex: v });
            }
            if u == v {
                return Err(GraphError::SelfLoop { edge: i, vertex: u });
            }
            adj[u as usize].push((v, i));
            adj[v as usize].push((u, i));
            edges.push(Edge { u, v, cost });
        }
        Ok(Graph {
            vertex_count,
            edges,
            adj,
        })
    }

    pub fn vertex_count(&self) -> u32 {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn cost(&self, id: EdgeId) -> u64 {
        self.edges[id].cost
    }

    /// Total cost of an edge set.
    pub fn total_cost<'a>(&self, ids: impl IntoIterator<Item = &'a EdgeId>) -> u64 {
        ids.into_iter().map(|&e| self.edges[e].cost).sum()
    }

    pub fn neighbors(&self, v: Vertex) -> &[(Vertex, EdgeId)] {
        &self.adj[v as usize]
    }

    /// Connected components of `(V, edge_subset)`.
    pub fn components<'a>(&self, edge_subset: impl IntoIterator<Item = &'a EdgeId>) -> ComponentIndex {
        let mut uf = UnionFind::new(self.vertex_count);
        for &e in edge_subset {
            let edge = &self.edges[e];
            uf.union(edge.u, edge.v);
        }
        ComponentIndex::from_union_find(&mut uf)
    }

    /// Maximum finite shortest-path distance under the base costs; 0 when no
    /// two distinct vertices are connected.
    pub fn max_finite_distance(&self) -> u64 {
        let weight = |e: EdgeId| rat_u(self.edges[e].cost);
        let mut best = 0u64;
        for src in 0..self.vertex_count {
            let dist = dijkstra(self, src, &weight, None, None);
            for d in dist.iter().flatten() {
                let v = d
                    .to_integer()
                    .to_u64()
                    .expect("integer costs stay in u64 range");
                best = best.max(v);
            }
        }
        best
    }
}

/// Simple path described by its edge ids in walk order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub edge_ids: Vec<EdgeId>,
    pub endpoints: (Vertex, Vertex),
}

impl Path {
    pub fn empty(at: Vertex) -> Self {
        Path {
            edge_ids: Vec::new(),
            endpoints: (at, at),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edge_ids.is_empty()
    }

    /// Vertex sequence of the walk, from `endpoints.0` to `endpoints.1`.
    pub fn vertices(&self, g: &Graph) -> Vec<Vertex> {
        let mut out = vec![self.endpoints.0];
        let mut cur = self.endpoints.0;
        for &e in &self.edge_ids {
            cur = g.edge(e).other(cur);
            out.push(cur);
        }
        out
    }
}

/// Partition of the vertices into connected components, each named by its
/// minimum vertex id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentIndex {
    rep: Vec<Vertex>,
}

impl ComponentIndex {
    fn from_union_find(uf: &mut UnionFind) -> Self {
        let n = uf.parent.len();
        let mut rep = vec![0; n];
        for v in 0..n {
            rep[v] = uf.min_of(v as Vertex);
        }
        ComponentIndex { rep }
    }

    pub fn rep(&self, v: Vertex) -> Vertex {
        self.rep[v as usize]
    }

    pub fn same(&self, u: Vertex, v: Vertex) -> bool {
        self.rep[u as usize] == self.rep[v as usize]
    }

    pub fn vertex_count(&self) -> u32 {
        self.rep.len() as u32
    }

    /// Members of each component, keyed by representative, in vertex order.
    pub fn groups(&self) -> Vec<(Vertex, Vec<Vertex>)> {
        let mut out: Vec<(Vertex, Vec<Vertex>)> = Vec::new();
        for v in 0..self.rep.len() as u32 {
            let r = self.rep(v);
            match out.binary_search_by_key(&r, |(k, _)| *k) {
                Ok(i) => out[i].1.push(v),
                Err(i) => out.insert(i, (r, vec![v])),
            }
        }
        out
    }

    pub fn members(&self, rep: Vertex) -> Vec<Vertex> {
        (0..self.rep.len() as u32)
            .filter(|&v| self.rep(v) == rep)
            .collect()
    }
}

/// Union-find over vertex ids that tracks the minimum member of every set.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
    min: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: u32) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n as usize],
            min: (0..n).collect(),
        }
    }

    pub fn find(&mut self, v: Vertex) -> Vertex {
        let mut root = v;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = v;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    /// Minimum vertex id in `v`'s set.
    pub fn min_of(&mut self, v: Vertex) -> Vertex {
        let r = self.find(v);
        self.min[r as usize]
    }

    pub fn same(&mut self, u: Vertex, v: Vertex) -> bool {
        self.find(u) == self.find(v)
    }

    pub fn union(&mut self, u: Vertex, v: Vertex) -> bool {
        let (mut a, mut b) = (self.find(u), self.find(v));
        if a == b {
            return false;
        }
        if self.rank[a as usize] < self.rank[b as usize] {
            core::mem::swap(&mut a, &mut b);
        }
        if self.rank[a as usize] == self.rank[b as usize] {
            self.rank[a as usize] += 1;
        }
        self.parent[b as usize] = a;
        let m = self.min[a as usize].min(self.min[b as usize]);
        self.min[a as usize] = m;
        true
    }
}

/// Single-source distances by Dijkstra. `allowed` restricts the usable edge
/// set, `forbidden` removes vertices entirely (the source included).
pub fn dijkstra(
    g: &Graph,
    src: Vertex,
    weight: &dyn Fn(EdgeId) -> Rat,
    allowed: Option<&BTreeSet<EdgeId>>,
    forbidden: Option<&[bool]>,
) -> Vec<Option<Rat>> {
    let n = g.vertex_count() as usize;
    let mut dist: Vec<Option<Rat>> = vec![None; n];
    let blocked = |v: Vertex| forbidden.is_some_and(|f| f[v as usize]);
    if blocked(src) {
        return dist;
    }
    let mut heap: BinaryHeap<(Reverse<Rat>, Vertex)> = BinaryHeap::new();
    dist[src as usize] = Some(Rat::zero());
    heap.push((Reverse(Rat::zero()), src));
    while let Some((Reverse(d), v)) = heap.pop() {
        if dist[v as usize].as_ref() != Some(&d) {
            continue;
        }
        for &(to, e) in g.neighbors(v) {
            if blocked(to) || allowed.is_some_and(|a| !a.contains(&e)) {
                continue;
            }
            let nd = &d + weight(e);
            if dist[to as usize].as_ref().is_none_or(|old| nd < *old) {
                dist[to as usize] = Some(nd.clone());
                heap.push((Reverse(nd), to));
            }
        }
    }
    dist
}

/// Minimum-weight simple path between `u` and `v` using only `allowed`
/// edges. Ties are broken toward the lexicographically smallest vertex
/// sequence, then by smallest edge id for parallel edges. Returns `None`
/// when `v` is unreachable from `u`.
pub fn shortest_path_in(
    g: &Graph,
    allowed: Option<&BTreeSet<EdgeId>>,
    u: Vertex,
    v: Vertex,
    weight: &dyn Fn(EdgeId) -> Rat,
) -> Option<(Rat, Path)> {
    if u == v {
        return Some((Rat::zero(), Path::empty(u)));
    }
    let total = dijkstra(g, v, weight, allowed, None)[u as usize].clone()?;

    // Walk from u, always taking the smallest next vertex that still admits
    // a minimum-weight completion avoiding everything already visited.
    let mut forbidden = vec![false; g.vertex_count() as usize];
    forbidden[u as usize] = true;
    let mut cur = u;
    let mut acc = Rat::zero();
    let mut edge_ids = Vec::new();
    while cur != v {
        let remaining = &total - &acc;
        let dist_back = dijkstra(g, v, weight, allowed, Some(&forbidden));
        let mut best: Option<(Vertex, EdgeId, Rat)> = None;
        for &(to, e) in g.neighbors(cur) {
            if forbidden[to as usize] || allowed.is_some_and(|a| !a.contains(&e)) {
                continue;
            }
            let w = weight(e);
            let Some(tail) = dist_back[to as usize].as_ref() else {
                continue;
            };
            if &w + tail != remaining {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bv, be, _)) => (to, e) < (*bv, *be),
            };
            if better {
                best = Some((to, e, w));
            }
        }
        let (to, e, w) = best.expect("a minimum-weight completion always exists");
        edge_ids.push(e);
        acc += w;
        forbidden[to as usize] = true;
        cur = to;
    }
    Some((
        total,
        Path {
            edge_ids,
            endpoints: (u, v),
        },
    ))
}

/// [`shortest_path_in`] over the whole edge set.
pub fn shortest_path(
    g: &Graph,
    u: Vertex,
    v: Vertex,
    weight: &dyn Fn(EdgeId) -> Rat,
) -> Option<(Rat, Path)> {
    shortest_path_in(g, None, u, v, weight)
}

/// Render a vertex set like `{0,2,5}`; used in error and audit messages.
pub fn format_vertex_set(set: &BTreeSet<Vertex>) -> String {
    use core::fmt::Write;
    let mut s = String::from("{");
    for (i, v) in set.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s.push('}');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;

    fn four_cycle() -> Graph {
        Graph::new(4, &[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, 1)]).unwrap()
    }

    fn unit_weight(g: &Graph) -> impl Fn(EdgeId) -> Rat + '_ {
        |e| rat_u(g.cost(e))
    }

    #[test]
    fn builds_four_cycle_with_positional_ids() {
        let g = four_cycle();
        assert_eq!(g.edge_count(), 4);
        assert_eq!(g.edge(2), &Edge { u: 2, v: 3, cost: 1 });
    }

    #[test]
    fn empty_edge_list_gives_isolated_vertices() {
        let g = Graph::new(3, &[]).unwrap();
        let comps = g.components(&BTreeSet::new());
        assert_eq!(comps.groups().len(), 3);
    }

    #[test]
    fn rejects_bad_edges() {
        assert_eq!(
            Graph::new(2, &[(0, 0, 1)]).unwrap_err(),
            GraphError::SelfLoop { edge: 0, vertex: 0 }
        );
        assert_eq!(
            Graph::new(2, &[(0, 1, 0)]).unwrap_err(),
            GraphError::NonpositiveCost { edge: 0 }
        );
        assert_eq!(
            Graph::new(2, &[(0, 2, 1)]).unwrap_err(),
            GraphError::EndpointOutOfRange { edge: 0, vertex: 2 }
        );
    }

    #[test]
    fn components_of_single_edge_subset() {
        let g = four_cycle();
        let comps = g.components(&BTreeSet::from([0]));
        assert_eq!(comps.rep(0), 0);
        assert_eq!(comps.rep(1), 0);
        assert_eq!(comps.rep(2), 2);
        assert_eq!(comps.rep(3), 3);
    }

    #[test]
    fn components_of_full_connected_graph() {
        let g = four_cycle();
        let all: BTreeSet<EdgeId> = (0..4).collect();
        assert_eq!(g.components(&all).groups().len(), 1);
    }

    #[test]
    fn shortest_path_breaks_tie_lexicographically() {
        let g = four_cycle();
        let w = unit_weight(&g);
        let (cost, path) = shortest_path(&g, 0, 2, &w).unwrap();
        assert_eq!(cost, rat_u(2));
        assert_eq!(path.vertices(&g), vec![0, 1, 2]);
    }

    #[test]
    fn shortest_path_identity_and_unreachable() {
        let g = Graph::new(3, &[(0, 1, 5)]).unwrap();
        let w = unit_weight(&g);
        let (cost, path) = shortest_path(&g, 1, 1, &w).unwrap();
        assert_eq!(cost, Rat::zero());
        assert!(path.is_empty());
        assert!(shortest_path(&g, 0, 2, &w).is_none());
    }

    #[test]
    fn lex_walk_survives_zero_weight_dead_ends() {
        // 1-0 and 1-2 free, 2 reaches 3 only back through 0. The greedy next
        // hop into 2 admits no simple completion, so the walk must take 0-3.
        let g = Graph::new(4, &[(1, 0, 1), (1, 2, 1), (2, 0, 1), (0, 3, 1)]).unwrap();
        let zero_on = BTreeMap::from([(0usize, ()), (1, ()), (2, ())]);
        let w = |e: EdgeId| {
            if zero_on.contains_key(&e) {
                Rat::zero()
            } else {
                rat_u(g.cost(e))
            }
        };
        let (cost, path) = shortest_path(&g, 1, 3, &w).unwrap();
        assert_eq!(cost, rat_u(1));
        assert_eq!(path.vertices(&g), vec![1, 0, 3]);
    }

    #[test]
    fn max_finite_distance_examples() {
        assert_eq!(four_cycle().max_finite_distance(), 2);
        assert_eq!(Graph::new(2, &[(0, 1, 7)]).unwrap().max_finite_distance(), 7);
        // Two disconnected unit edges: only finite pairs count.
        let g = Graph::new(4, &[(0, 1, 1), (2, 3, 1)]).unwrap();
        assert_eq!(g.max_finite_distance(), 1);
        assert_eq!(Graph::new(3, &[]).unwrap().max_finite_distance(), 0);
    }

    /// Brute-force oracle: enumerate every simple path by DFS and keep the
    /// best (weight, vertex sequence, edge ids) triple.
    fn brute_force_best(
        g: &Graph,
        u: Vertex,
        v: Vertex,
        weight: &dyn Fn(EdgeId) -> Rat,
    ) -> Option<(Rat, Vec<Vertex>, Vec<EdgeId>)> {
        fn dfs(
            g: &Graph,
            cur: Vertex,
            target: Vertex,
            weight: &dyn Fn(EdgeId) -> Rat,
            seen: &mut Vec<bool>,
            verts: &mut Vec<Vertex>,
            edges: &mut Vec<EdgeId>,
            acc: Rat,
            best: &mut Option<(Rat, Vec<Vertex>, Vec<EdgeId>)>,
        ) {
            if cur == target {
                let key = (acc.clone(), verts.clone(), edges.clone());
                let replace = match best {
                    None => true,
                    Some((bc, bv, be)) => {
                        (&key.0, &key.1, &key.2) < (&*bc, &*bv, &*be)
                    }
                };
                if replace {
                    *best = Some(key);
                }
                return;
            }
            for &(to, e) in g.neighbors(cur) {
                if seen[to as usize] {
                    continue;
                }
                seen[to as usize] = true;
                verts.push(to);
                edges.push(e);
                dfs(g, to, target, weight, seen, verts, edges, &acc + weight(e), best);
                edges.pop();
                verts.pop();
                seen[to as usize] = false;
            }
        }
        let mut seen = vec![false; g.vertex_count() as usize];
        seen[u as usize] = true;
        let mut best = None;
        dfs(
            g,
            u,
            v,
            weight,
            &mut seen,
            &mut vec![u],
            &mut Vec::new(),
            Rat::zero(),
            &mut best,
        );
        best
    }

    proptest::proptest! {
        #[test]
        fn matches_brute_force_on_small_graphs(
            n in 2u32..7,
            raw_edges in proptest::collection::vec((0u32..7, 0u32..7, 1u64..5), 0..12),
            zeroed in proptest::collection::vec(proptest::bool::ANY, 12),
        ) {
            let edges: alloc::vec::Vec<(u32, u32, u64)> = raw_edges
                .into_iter()
                .filter(|&(u, v, _)| u < n && v < n && u != v)
                .collect();
            let g = Graph::new(n, &edges).unwrap();
            let w = |e: EdgeId| {
                if zeroed[e] {
                    Rat::zero()
                } else {
                    rat_u(g.cost(e))
                }
            };
            for u in 0..n {
                for v in 0..n {
                    let got = shortest_path(&g, u, v, &w);
                    let want = brute_force_best(&g, u, v, &w);
                    match (got, want) {
                        (None, None) => {}
                        (Some((c, p)), Some((bc, bv, be))) => {
                            proptest::prop_assert_eq!(&c, &bc);
                            proptest::prop_assert_eq!(p.vertices(&g), bv);
                            proptest::prop_assert_eq!(p.edge_ids, be);
                        }
                        (got, want) => {
                            return Err(proptest::test_runner::TestCaseError::fail(
                                alloc::format!("mismatch: got {got:?}, want {want:?}")));
                        }
                    }
                }
            }
        }

        #[test]
        fn triangle_inequality_on_random_graphs(
            n in 2u32..7,
            raw_edges in proptest::collection::vec((0u32..7, 0u32..7, 1u64..9), 1..12),
        ) {
            let edges: alloc::vec::Vec<(u32, u32, u64)> = raw_edges
                .into_iter()
                .filter(|&(u, v, _)| u < n && v < n && u != v)
                .collect();
            let g = Graph::new(n, &edges).unwrap();
            let w = |e: EdgeId| rat_u(g.cost(e));
            let dist: alloc::vec::Vec<_> = (0..n).map(|s| dijkstra(&g, s, &w, None, None)).collect();
            for u in 0..n as usize {
                for v in 0..n as usize {
                    for x in 0..n as usize {
                        if let (Some(duv), Some(dvx)) = (&dist[u][v], &dist[v][x]) {
                            let dux = dist[u][x].as_ref().expect("connected through v");
                            proptest::prop_assert!(dux <= &(duv + dvx));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn component_union_refines() {
        // components(A ∪ B) never splits a component of A.
        let g = four_cycle();
        let a = BTreeSet::from([0]);
        let ab = BTreeSet::from([0, 2]);
        let ca = g.components(&a);
        let cab = g.components(&ab);
        for u in 0..4 {
            for v in 0..4 {
                if ca.same(u, v) {
                    assert!(cab.same(u, v));
                }
            }
        }
    }
}
