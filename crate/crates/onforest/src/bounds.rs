//! Reference solvers: exhaustive exact optimum (plain and prize-collecting)
//! by partition dynamic programming, the offline two-approximation by
//! synchronized moat growth with reverse delete, and the online greedy
//! baselines.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::{ToPrimitive, Zero};

use crate::demands::{DemandState, Request};
use crate::graph::{shortest_path, EdgeId, Graph, UnionFind, Vertex};
use crate::pc::PenaltyRequest;
use crate::{rat_u, Rat};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundsError {
    /// Instance exceeds the exhaustive-search caps.
    TooLarge { edges: usize, relevant_vertices: u32 },
    InfeasibleDemand,
    Unreachable { vertex: Vertex },
    BadStream(String),
}

impl fmt::Display for BoundsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundsError::TooLarge {
                edges,
                relevant_vertices,
            } => write!(
                f,
                "exhaustive OPT too large: {edges} edges over {relevant_vertices} relevant vertices"
            ),
            BoundsError::InfeasibleDemand => write!(f, "demand cannot be satisfied"),
            BoundsError::Unreachable { vertex } => write!(f, "vertex {vertex} unreachable"),
            BoundsError::BadStream(s) => write!(f, "bad request stream: {s}"),
        }
    }
}

/// Value of an exact optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptValue {
    Cost(u64),
    Infeasible,
}

impl OptValue {
    pub fn cost(&self) -> Option<u64> {
        match self {
            OptValue::Cost(c) => Some(*c),
            OptValue::Infeasible => None,
        }
    }
}

/// Everything the reference solvers can say about one instance state.
#[derive(Debug, Clone, Default)]
pub struct BoundsReport {
    pub exact_opt: Option<u64>,
    pub gw_cost: Option<u64>,
    pub dual_lower_bound: Option<Rat>,
    pub baseline_costs: BTreeMap<String, u64>,
}

const MAX_EDGES: usize = 20;
const MAX_RELEVANT: u32 = 12;

struct PartitionDp {
    /// Relevant (non-isolated) vertices in id order.
    verts: Vec<Vertex>,
    /// Edges with both endpoints relevant, as index pairs into `verts`.
    edges: Vec<(usize, usize, u64, EdgeId)>,
}

impl PartitionDp {
    fn new(g: &Graph) -> Result<Self, BoundsError> {
        let mut degree = vec![0u32; g.vertex_count() as usize];
        for e in g.edges() {
            degree[e.u as usize] += 1;
            degree[e.v as usize] += 1;
        }
        let verts: Vec<Vertex> = (0..g.vertex_count())
            .filter(|&v| degree[v as usize] > 0)
            .collect();
        if g.edge_count() > MAX_EDGES || verts.len() as u32 > MAX_RELEVANT {
            return Err(BoundsError::TooLarge {
                edges: g.edge_count(),
                relevant_vertices: verts.len() as u32,
            });
        }
        let index: BTreeMap<Vertex, usize> = verts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut edges: Vec<(usize, usize, u64, EdgeId)> = g
            .edges()
            .iter()
            .enumerate()
            .map(|(id, e)| (index[&e.u], index[&e.v], e.cost, id))
            .collect();
        edges.sort_by_key(|&(_, _, c, id)| (c, id));
        Ok(PartitionDp { verts, edges })
    }

    fn set_of(&self, mask: u32) -> BTreeSet<Vertex> {
        self.verts
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &v)| v)
            .collect()
    }

    /// Spanning-tree cost of the subgraph induced by `mask`, or None when
    /// it is disconnected.
    fn induced_mst(&self, mask: u32) -> Option<u64> {
        let k = mask.count_ones();
        if k == 0 {
            return Some(0);
        }
        let mut uf = UnionFind::new(self.verts.len() as u32);
        let mut joined = 1u32;
        let mut cost = 0u64;
        for &(a, b, c, _) in &self.edges {
            if mask & (1 << a) == 0 || mask & (1 << b) == 0 {
                continue;
            }
            if uf.union(a as u32, b as u32) {
                joined += 1;
                cost += c;
                if joined == k {
                    return Some(cost);
                }
            }
        }
        (joined == k).then_some(cost)
    }

    /// Minimize `Σ part_cost` over partitions of the relevant vertices into
    /// induced-connected parts, where `part_cost` returns None for
    /// inadmissible parts.
    fn solve(&self, part_cost: impl Fn(u32, &BTreeSet<Vertex>) -> Option<u64>) -> Option<u64> {
        let n = self.verts.len();
        let full: u32 = if n == 0 { 0 } else { (1 << n) - 1 };
        let size = 1usize << n;
        let mut admissible: Vec<Option<u64>> = vec![None; size];
        for mask in 1..size as u32 {
            if let Some(mst) = self.induced_mst(mask) {
                if let Some(extra) = part_cost(mask, &self.set_of(mask)) {
                    admissible[mask as usize] = Some(mst + extra);
                }
            }
        }
        let mut dp: Vec<Option<u64>> = vec![None; size];
        dp[0] = Some(0);
        for mask in 1..=full {
            let low = mask & mask.wrapping_neg();
            let mut best: Option<u64> = None;
            // Enumerate submasks of mask that contain its lowest bit.
            let rest = mask ^ low;
            let mut sub = rest;
            loop {
                let part = sub | low;
                if let (Some(pc), Some(prev)) = (admissible[part as usize], dp[(mask ^ part) as usize]) {
                    let total = pc + prev;
                    if best.is_none_or(|b| total < b) {
                        best = Some(total);
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
            dp[mask as usize] = best;
        }
        dp[full as usize]
    }
}

/// Exact minimum cost of satisfying every request, by exhaustive partition
/// search. Rejects instances beyond 20 edges or 12 non-isolated vertices.
pub fn exact_opt(g: &Graph, demands: &DemandState) -> Result<OptValue, BoundsError> {
    let dp = PartitionDp::new(g)?;
    // Isolated vertices must already satisfy every request alone.
    let relevant: BTreeSet<Vertex> = dp.verts.iter().copied().collect();
    for v in 0..g.vertex_count() {
        if !relevant.contains(&v) && demands.eval_g(&BTreeSet::from([v])) {
            return Ok(OptValue::Infeasible);
        }
    }
    let best = dp.solve(|_, set| (!demands.eval_g(set)).then_some(0));
    Ok(best.map_or(OptValue::Infeasible, OptValue::Cost))
}

/// Exact minimum of `edge cost + penalties` over all solutions, where every
/// step without a penalty must be satisfied and every penalized step may be
/// bought out per its closed-form separation rule.
pub fn exact_opt_pc(
    g: &Graph,
    steps: &[(Request, Option<PenaltyRequest>)],
) -> Result<OptValue, BoundsError> {
    let dp = PartitionDp::new(g)?;
    let relevant: BTreeSet<Vertex> = dp.verts.iter().copied().collect();
    let mut plain = DemandState::new();
    for (r, pr) in steps {
        if pr.is_none() {
            plain.push(r.clone());
        }
    }
    for v in 0..g.vertex_count() {
        if !relevant.contains(&v) && plain.eval_g(&BTreeSet::from([v])) {
            return Ok(OptValue::Infeasible);
        }
    }
    // Penalty charges that do not depend on the partition of the relevant
    // vertices: any separation forced through an isolated endpoint.
    let mut constant = 0u64;
    #[derive(Clone)]
    enum Charge {
        VertexSep { at: Vertex, from: Vertex, penalty: u64 },
        PairSep { at: Vertex, from: Vertex, penalty: u64 },
        Unspanned { root: Vertex, oracle: crate::pc::SubmodOracle },
    }
    let mut charges: Vec<Charge> = Vec::new();
    for (_, pr) in steps {
        match pr {
            None => {}
            Some(PenaltyRequest::Vertex { v, root, penalty }) => {
                if relevant.contains(v) && relevant.contains(root) {
                    charges.push(Charge::VertexSep {
                        at: *v,
                        from: *root,
                        penalty: *penalty,
                    });
                } else {
                    constant += penalty;
                }
            }
            Some(PenaltyRequest::Pair { s, t, penalty }) => {
                if relevant.contains(s) && relevant.contains(t) {
                    charges.push(Charge::PairSep {
                        at: *s.min(t),
                        from: *s.max(t),
                        penalty: *penalty,
                    });
                } else {
                    constant += penalty;
                }
            }
            Some(PenaltyRequest::Submodular(o)) => {
                if relevant.contains(&o.root()) {
                    charges.push(Charge::Unspanned {
                        root: o.root(),
                        oracle: o.clone(),
                    });
                } else {
                    let members: BTreeSet<Vertex> = o.members().iter().copied().collect();
                    constant += o.value_of_set(&members);
                }
            }
        }
    }
    let best = dp.solve(|_, set| {
        if plain.eval_g(set) {
            return None;
        }
        let mut pen = 0u64;
        for c in &charges {
            match c {
                Charge::VertexSep { at, from, penalty } | Charge::PairSep { at, from, penalty } => {
                    if set.contains(at) && !set.contains(from) {
                        pen += penalty;
                    }
                }
                Charge::Unspanned { root, oracle } => {
                    if set.contains(root) {
                        let unspanned: BTreeSet<Vertex> = oracle
                            .members()
                            .iter()
                            .copied()
                            .filter(|m| !set.contains(m))
                            .collect();
                        pen += oracle.value_of_set(&unspanned);
                    }
                }
            }
        }
        Some(pen)
    });
    Ok(best
        .map(|b| b + constant)
        .map_or(OptValue::Infeasible, OptValue::Cost))
}

/// Result of the offline moat-growing two-approximation.
#[derive(Debug, Clone)]
pub struct GwResult {
    pub edges: BTreeSet<EdgeId>,
    pub cost: u64,
    /// Total dual value raised; a lower bound on the exact optimum.
    pub dual_value: Rat,
}

/// Offline synchronized moat growing with reverse delete. The returned cost
/// is at most twice the optimum and at most twice the returned dual value.
pub fn gw_offline(g: &Graph, demands: &DemandState) -> Result<GwResult, BoundsError> {
    let all: BTreeSet<EdgeId> = (0..g.edge_count()).collect();
    for (_, members) in g.components(&all).groups() {
        let set: BTreeSet<Vertex> = members.into_iter().collect();
        if demands.eval_g(&set) {
            return Err(BoundsError::InfeasibleDemand);
        }
    }
    let mut added: Vec<EdgeId> = Vec::new();
    let mut fset: BTreeSet<EdgeId> = BTreeSet::new();
    let mut load: BTreeMap<EdgeId, Rat> = BTreeMap::new();
    let mut dual_value = Rat::zero();
    loop {
        let comps = g.components(&fset);
        let groups = comps.groups();
        let mut active: BTreeMap<Vertex, bool> = BTreeMap::new();
        let mut any_active = false;
        for (rep, members) in &groups {
            let set: BTreeSet<Vertex> = members.iter().copied().collect();
            let is_active = demands.eval_g(&set);
            any_active |= is_active;
            active.insert(*rep, is_active);
        }
        if !any_active {
            break;
        }
        let mut delta: Option<Rat> = None;
        let mut rates: Vec<(EdgeId, u64)> = Vec::new();
        for e in 0..g.edge_count() {
            if fset.contains(&e) {
                continue;
            }
            let edge = g.edge(e);
            let (ru, rv) = (comps.rep(edge.u), comps.rep(edge.v));
            if ru == rv {
                continue;
            }
            let rate = u64::from(active[&ru]) + u64::from(active[&rv]);
            if rate == 0 {
                continue;
            }
            let cur = load.get(&e).cloned().unwrap_or_else(Rat::zero);
            let d = (rat_u(edge.cost) - cur) / rat_u(rate);
            if delta.as_ref().is_none_or(|best| d < *best) {
                delta = Some(d);
            }
            rates.push((e, rate));
        }
        let delta = delta.expect("an active component always has an outgoing edge");
        let active_count = active.values().filter(|a| **a).count() as u64;
        dual_value += rat_u(active_count) * &delta;
        let mut first_tight: Option<EdgeId> = None;
        for (e, rate) in rates {
            let slot = load.entry(e).or_insert_with(Rat::zero);
            *slot += rat_u(rate) * &delta;
            if first_tight.is_none() && *slot == rat_u(g.cost(e)) {
                first_tight = Some(e);
            }
        }
        if let Some(e) = first_tight {
            fset.insert(e);
            added.push(e);
        }
    }
    // Reverse delete: drop any edge whose removal keeps the demands met.
    for &e in added.iter().rev() {
        fset.remove(&e);
        if !demands.violated_components(g, &fset).is_empty() {
            fset.insert(e);
        }
    }
    let cost = g.total_cost(&fset);
    Ok(GwResult {
        edges: fset,
        cost,
        dual_value,
    })
}

/// Shared surface of the online baselines, for adversarial harnesses.
pub trait OnlineSolver {
    /// Serve a connection request, returning the cost added this step.
    fn serve(&mut self, s: Vertex, t: Vertex) -> Result<u64, BoundsError>;
    fn built(&self) -> &BTreeSet<EdgeId>;
    fn total_cost(&self) -> u64;
}

/// Greedy online generalized Steiner: each arriving pair buys a cheapest
/// path with already-built edges priced at zero.
#[derive(Debug, Clone)]
pub struct GreedyGst {
    graph: Graph,
    built: BTreeSet<EdgeId>,
    cost: u64,
}

impl GreedyGst {
    pub fn new(graph: Graph) -> Self {
        GreedyGst {
            graph,
            built: BTreeSet::new(),
            cost: 0,
        }
    }
}

impl OnlineSolver for GreedyGst {
    fn serve(&mut self, s: Vertex, t: Vertex) -> Result<u64, BoundsError> {
        let weight = |e: EdgeId| {
            if self.built.contains(&e) {
                Rat::zero()
            } else {
                rat_u(self.graph.cost(e))
            }
        };
        let (cost, path) =
            shortest_path(&self.graph, s, t, &weight).ok_or(BoundsError::Unreachable { vertex: t })?;
        let added = cost
            .to_integer()
            .to_u64()
            .expect("path costs are small integers");
        self.built.extend(path.edge_ids.iter().copied());
        self.cost += added;
        Ok(added)
    }

    fn built(&self) -> &BTreeSet<EdgeId> {
        &self.built
    }

    fn total_cost(&self) -> u64 {
        self.cost
    }
}

/// Greedy online Steiner tree: terminals connect to the tree grown from a
/// fixed root by a cheapest path.
#[derive(Debug, Clone)]
pub struct GreedySteiner {
    inner: GreedyGst,
    root: Vertex,
}

impl GreedySteiner {
    pub fn new(graph: Graph, root: Vertex) -> Self {
        GreedySteiner {
            inner: GreedyGst::new(graph),
            root,
        }
    }

    /// Cost added to reach the tree; zero for the root itself.
    pub fn add_terminal(&mut self, t: Vertex) -> Result<u64, BoundsError> {
        if t == self.root {
            return Ok(0);
        }
        self.inner.serve(t, self.root)
    }

    pub fn built(&self) -> &BTreeSet<EdgeId> {
        self.inner.built()
    }

    pub fn total_cost(&self) -> u64 {
        self.inner.total_cost()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat;

    fn four_cycle() -> Graph {
        Graph::new(4, &[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, 1)]).unwrap()
    }

    fn demands_of(reqs: Vec<Request>) -> DemandState {
        let mut d = DemandState::new();
        for r in reqs {
            d.push(r);
        }
        d
    }

    /// Edge-subset enumeration oracle for cross-checking the partition DP.
    fn brute_force_opt(g: &Graph, demands: &DemandState) -> Option<u64> {
        let m = g.edge_count();
        let mut best: Option<u64> = None;
        for pick in 0u32..(1 << m) {
            let subset: BTreeSet<EdgeId> = (0..m).filter(|e| pick & (1 << e) != 0).collect();
            if demands.violated_components(g, &subset).is_empty() {
                let cost = g.total_cost(&subset);
                if best.is_none_or(|b| cost < b) {
                    best = Some(cost);
                }
            }
        }
        best
    }

    #[test]
    fn exact_opt_on_four_cycle_pairs() {
        let g = four_cycle();
        let d1 = demands_of(vec![Request::steiner_pair(0, 2).unwrap()]);
        assert_eq!(exact_opt(&g, &d1).unwrap(), OptValue::Cost(2));
        let d2 = demands_of(vec![
            Request::steiner_pair(0, 2).unwrap(),
            Request::steiner_pair(0, 3).unwrap(),
        ]);
        assert_eq!(exact_opt(&g, &d2).unwrap(), OptValue::Cost(2));
        let disconnected = Graph::new(3, &[(0, 1, 1)]).unwrap();
        let d3 = demands_of(vec![Request::steiner_pair(0, 2).unwrap()]);
        assert_eq!(exact_opt(&disconnected, &d3).unwrap(), OptValue::Infeasible);
    }

    #[test]
    fn exact_opt_matches_edge_enumeration() {
        let g = Graph::new(
            6,
            &[(0, 1, 3), (1, 2, 2), (2, 3, 4), (3, 4, 1), (4, 5, 2), (5, 0, 3), (1, 4, 2)],
        )
        .unwrap();
        for d in [
            demands_of(vec![Request::steiner_pair(0, 3).unwrap()]),
            demands_of(vec![
                Request::steiner_pair(0, 3).unwrap(),
                Request::parity(BTreeSet::from([1, 2, 4, 5]), 2).unwrap(),
            ]),
            demands_of(vec![Request::point_to_point(
                BTreeSet::from([0, 2]),
                BTreeSet::from([3, 5]),
            )
            .unwrap()]),
        ] {
            assert_eq!(exact_opt(&g, &d).unwrap().cost(), brute_force_opt(&g, &d));
        }
    }

    #[test]
    fn exact_opt_pc_prefers_cheap_side() {
        let g = Graph::new(2, &[(0, 1, 4)]).unwrap();
        let steps = vec![(
            Request::steiner_pair(1, 0).unwrap(),
            Some(PenaltyRequest::vertex(1, 0, 1).unwrap()),
        )];
        assert_eq!(exact_opt_pc(&g, &steps).unwrap(), OptValue::Cost(1));
        let g2 = Graph::new(2, &[(0, 1, 3)]).unwrap();
        let steps2 = vec![(
            Request::steiner_pair(1, 0).unwrap(),
            Some(PenaltyRequest::vertex(1, 0, 100).unwrap()),
        )];
        assert_eq!(exact_opt_pc(&g2, &steps2).unwrap(), OptValue::Cost(3));
        // No penalties: reduces to the plain optimum.
        let steps3 = vec![(Request::steiner_pair(1, 0).unwrap(), None)];
        assert_eq!(exact_opt_pc(&g2, &steps3).unwrap(), OptValue::Cost(3));
    }

    #[test]
    fn gw_offline_matches_opt_on_small_instances() {
        let g = four_cycle();
        let d = demands_of(vec![Request::steiner_pair(0, 2).unwrap()]);
        let gw = gw_offline(&g, &d).unwrap();
        assert_eq!(gw.cost, 2);
        assert!(rat_u(gw.cost) <= rat(2) * &gw.dual_value);
        assert!(gw.dual_value <= rat_u(2));

        // Star with three unit spokes.
        let star = Graph::new(4, &[(0, 1, 1), (0, 2, 1), (0, 3, 1)]).unwrap();
        let ds = demands_of(vec![
            Request::steiner_pair(1, 0).unwrap(),
            Request::steiner_pair(2, 0).unwrap(),
            Request::steiner_pair(3, 0).unwrap(),
        ]);
        assert_eq!(gw_offline(&star, &ds).unwrap().cost, 3);

        // Line 2,1,2 with the even-parity demand: two outer pairs suffice.
        let line = Graph::new(4, &[(0, 1, 2), (1, 2, 1), (2, 3, 2)]).unwrap();
        let dl = demands_of(vec![Request::parity(BTreeSet::from([0, 1, 2, 3]), 2).unwrap()]);
        let gwl = gw_offline(&line, &dl).unwrap();
        assert_eq!(gwl.cost, 4);
        assert!(gw_offline(&Graph::new(2, &[]).unwrap(), &demands_of(vec![Request::steiner_pair(0, 1).unwrap()])).is_err());
    }

    #[test]
    fn greedy_baselines_follow_hand_traces() {
        let g = four_cycle();
        let mut st = GreedySteiner::new(g.clone(), 0);
        assert_eq!(st.add_terminal(2).unwrap(), 2);
        assert_eq!(st.add_terminal(3).unwrap(), 1);
        assert_eq!(st.total_cost(), 3);
        assert_eq!(st.add_terminal(0).unwrap(), 0);

        let mut gst = GreedyGst::new(g);
        assert_eq!(gst.serve(0, 2).unwrap(), 2);
        assert_eq!(gst.serve(0, 3).unwrap(), 1);
        assert_eq!(gst.serve(0, 3).unwrap(), 0);
        assert_eq!(gst.total_cost(), 3);
        let mut lonely = GreedyGst::new(Graph::new(3, &[(0, 1, 1)]).unwrap());
        assert!(lonely.serve(0, 2).is_err());
    }

    #[test]
    fn dp_rejects_oversized_instances() {
        let mut edges = Vec::new();
        for i in 0..21 {
            edges.push((i, i + 1, 1));
        }
        let g = Graph::new(22, &edges).unwrap();
        assert!(matches!(
            exact_opt(&g, &DemandState::new()),
            Err(BoundsError::TooLarge { .. })
        ));
    }
}
