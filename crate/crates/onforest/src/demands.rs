//! Connectivity requests as 0-1 set functions, their running maximum, and a
//! brute-force properness verifier for small universes.
//!
//! Every built-in request is a proper function: symmetric under
//! complement, zero on the empty and full sets, and at most the maximum of
//! its values on the parts of any disjoint union. Those three facts are
//! what the solver relies on; [`check_proper`] verifies them exhaustively.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use crate::graph::{EdgeId, Graph, Vertex};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    /// Connect `s` and `t`: value 1 on sets containing exactly one of them.
    SteinerPair { s: Vertex, t: Vertex },
    /// Nonfixed point-to-point: value 1 on sets where source and sink
    /// counts differ. Requires `|sources| == |sinks|`.
    PointToPoint {
        sources: BTreeSet<Vertex>,
        sinks: BTreeSet<Vertex>,
    },
    /// Partition members so every component holds a multiple of `modulus`
    /// of them: value 1 when `|S ∩ members| mod modulus != 0`. Requires
    /// `|members|` divisible by `modulus`.
    Parity {
        members: BTreeSet<Vertex>,
        modulus: u32,
    },
    /// Span the whole active set: value 1 on sets splitting it nontrivially.
    Spanning { active_set: BTreeSet<Vertex> },
    /// Explicit truth table over a small universe, indexed by subset
    /// bitmask. Test oracle; the only variant that may be improper.
    TruthTable { n: u32, table: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestError {
    DegeneratePair,
    OverlappingSourcesAndSinks,
    UnbalancedPointToPoint { sources: usize, sinks: usize },
    EmptyMembers,
    BadModulus { modulus: u32 },
    IndivisibleMembers { members: usize, modulus: u32 },
    TableSizeMismatch { n: u32, len: usize },
    VertexOutOfRange { vertex: Vertex },
}

impl fmt::Display for RequestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestError::DegeneratePair => write!(f, "pair endpoints must differ"),
            RequestError::OverlappingSourcesAndSinks => {
                write!(f, "sources and sinks must be disjoint")
            }
            RequestError::UnbalancedPointToPoint { sources, sinks } => {
                write!(f, "point-to-point needs |sources| = |sinks|, got {sources} vs {sinks}")
            }
            RequestError::EmptyMembers => write!(f, "member set must be nonempty"),
            RequestError::BadModulus { modulus } => write!(f, "modulus {modulus} must be >= 2"),
            RequestError::IndivisibleMembers { members, modulus } => {
                write!(f, "{members} members not divisible by modulus {modulus}")
            }
            RequestError::TableSizeMismatch { n, len } => {
                write!(f, "truth table over {n} vertices needs 2^{n} entries, got {len}")
            }
            RequestError::VertexOutOfRange { vertex } => {
                write!(f, "vertex {vertex} out of range")
            }
        }
    }
}

impl Request {
    pub fn steiner_pair(s: Vertex, t: Vertex) -> Result<Self, RequestError> {
        if s == t {
            return Err(RequestError::DegeneratePair);
        }
        Ok(Request::SteinerPair { s, t })
    }

    pub fn point_to_point(
        sources: BTreeSet<Vertex>,
        sinks: BTreeSet<Vertex>,
    ) -> Result<Self, RequestError> {
        if !sources.is_disjoint(&sinks) {
            return Err(RequestError::OverlappingSourcesAndSinks);
        }
        if sources.len() != sinks.len() {
            return Err(RequestError::UnbalancedPointToPoint {
                sources: sources.len(),
                sinks: sinks.len(),
            });
        }
        Ok(Request::PointToPoint { sources, sinks })
    }

    /// `|members|` must be a positive multiple of `modulus`; anything else
    /// breaks symmetry under complement.
    pub fn parity(members: BTreeSet<Vertex>, modulus: u32) -> Result<Self, RequestError> {
        if members.is_empty() {
            return Err(RequestError::EmptyMembers);
        }
        if modulus < 2 {
            return Err(RequestError::BadModulus { modulus });
        }
        if members.len() as u32 % modulus != 0 {
            return Err(RequestError::IndivisibleMembers {
                members: members.len(),
                modulus,
            });
        }
        Ok(Request::Parity { members, modulus })
    }

    pub fn spanning(active_set: BTreeSet<Vertex>) -> Result<Self, RequestError> {
        if active_set.is_empty() {
            return Err(RequestError::EmptyMembers);
        }
        Ok(Request::Spanning { active_set })
    }

    pub fn truth_table(n: u32, table: Vec<bool>) -> Result<Self, RequestError> {
        if n > 16 || table.len() != 1usize << n {
            return Err(RequestError::TableSizeMismatch { n, len: table.len() });
        }
        Ok(Request::TruthTable { n, table })
    }

    /// Largest vertex id mentioned by the request, if any.
    pub fn max_vertex(&self) -> Option<Vertex> {
        match self {
            Request::SteinerPair { s, t } => Some(*s.max(t)),
            Request::PointToPoint { sources, sinks } => {
                sources.iter().chain(sinks).max().copied()
            }
            Request::Parity { members, .. } => members.iter().max().copied(),
            Request::Spanning { active_set } => active_set.iter().max().copied(),
            Request::TruthTable { n, .. } => n.checked_sub(1),
        }
    }

    /// Vertices that become terminals because of this request: exactly the
    /// singletons on which the function is 1.
    pub fn singleton_candidates(&self) -> Vec<Vertex> {
        match self {
            Request::SteinerPair { s, t } => alloc::vec![*s, *t],
            Request::PointToPoint { sources, sinks } => {
                sources.iter().chain(sinks).copied().collect()
            }
            Request::Parity { members, .. } => members.iter().copied().collect(),
            Request::Spanning { active_set } => {
                if active_set.len() >= 2 {
                    active_set.iter().copied().collect()
                } else {
                    Vec::new()
                }
            }
            Request::TruthTable { n, .. } => (0..*n).collect(),
        }
    }

    /// Evaluate the request's set function on `subset`.
    pub fn eval(&self, subset: &BTreeSet<Vertex>) -> bool {
        match self {
            Request::SteinerPair { s, t } => {
                subset.contains(s) != subset.contains(t)
            }
            Request::PointToPoint { sources, sinks } => {
                let cs = sources.iter().filter(|v| subset.contains(v)).count();
                let cd = sinks.iter().filter(|v| subset.contains(v)).count();
                cs != cd
            }
            Request::Parity { members, modulus } => {
                let c = members.iter().filter(|v| subset.contains(v)).count() as u32;
                c % modulus != 0
            }
            Request::Spanning { active_set } => {
                let c = active_set.iter().filter(|v| subset.contains(v)).count();
                c > 0 && c < active_set.len()
            }
            Request::TruthTable { n, table } => {
                let mut mask = 0usize;
                for v in subset {
                    if *v < *n {
                        mask |= 1 << *v;
                    }
                }
                table[mask]
            }
        }
    }
}

/// The request stream seen so far and the terminals it has produced.
#[derive(Debug, Clone, Default)]
pub struct DemandState {
    requests: Vec<Request>,
    terminals: BTreeSet<Vertex>,
}

impl DemandState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a request; the terminal cache picks up exactly the new
    /// singletons whose running maximum flips to 1.
    pub fn push(&mut self, r: Request) {
        for v in r.singleton_candidates() {
            if r.eval(&BTreeSet::from([v])) {
                self.terminals.insert(v);
            }
        }
        self.requests.push(r);
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn terminals(&self) -> &BTreeSet<Vertex> {
        &self.terminals
    }

    pub fn is_terminal(&self, v: Vertex) -> bool {
        self.terminals.contains(&v)
    }

    /// Running maximum of all requests on `subset`.
    pub fn eval_g(&self, subset: &BTreeSet<Vertex>) -> bool {
        self.requests.iter().any(|r| r.eval(subset))
    }

    /// Components of `(V, f_edges)` on which the running maximum is 1.
    /// Empty result means `f_edges` satisfies every request so far.
    pub fn violated_components(&self, g: &Graph, f_edges: &BTreeSet<EdgeId>) -> Vec<BTreeSet<Vertex>> {
        let comps = g.components(f_edges);
        comps
            .groups()
            .into_iter()
            .map(|(_, members)| members.into_iter().collect::<BTreeSet<_>>())
            .filter(|set| self.eval_g(set))
            .collect()
    }
}

/// Which properness requirement failed, with the offending set(s).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropernessViolation {
    NonzeroOnEmpty,
    NonzeroOnFull,
    Asymmetric { set: BTreeSet<Vertex> },
    DisjointUnion { a: BTreeSet<Vertex>, b: BTreeSet<Vertex> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropernessError {
    UniverseTooLarge { n: u32 },
}

impl fmt::Display for PropernessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropernessError::UniverseTooLarge { n } => {
                write!(f, "exhaustive check too large for universe {n}")
            }
        }
    }
}

fn mask_to_set(mask: u32, n: u32) -> BTreeSet<Vertex> {
    (0..n).filter(|v| mask & (1 << v) != 0).collect()
}

/// Exhaustively verify that `r` is proper over a universe of `n <= 12`
/// vertices, returning the first counterexample found.
pub fn check_proper(r: &Request, n: u32) -> Result<Result<(), PropernessViolation>, PropernessError> {
    if n > 12 {
        return Err(PropernessError::UniverseTooLarge { n });
    }
    let size = 1u32 << n;
    let full = size - 1;
    let mut val = Vec::with_capacity(size as usize);
    for mask in 0..size {
        val.push(r.eval(&mask_to_set(mask, n)));
    }
    if val[0] {
        return Ok(Err(PropernessViolation::NonzeroOnEmpty));
    }
    if val[full as usize] {
        return Ok(Err(PropernessViolation::NonzeroOnFull));
    }
    for mask in 0..size {
        if val[mask as usize] != val[(full ^ mask) as usize] {
            return Ok(Err(PropernessViolation::Asymmetric {
                set: mask_to_set(mask, n),
            }));
        }
    }
    // Disjoint-union maximality: iterate b over submasks of each complement.
    for a in 0..size {
        let free = full ^ a;
        let mut b = free;
        loop {
            if val[(a | b) as usize] && !val[a as usize] && !val[b as usize] {
                return Ok(Err(PropernessViolation::DisjointUnion {
                    a: mask_to_set(a, n),
                    b: mask_to_set(b, n),
                }));
            }
            if b == 0 {
                break;
            }
            b = (b - 1) & free;
        }
    }
    Ok(Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn steiner_pair_splits() {
        let r = Request::steiner_pair(0, 2).unwrap();
        assert!(r.eval(&BTreeSet::from([0])));
        assert!(!r.eval(&BTreeSet::new()));
        assert!(!r.eval(&BTreeSet::from([0, 1, 2, 3])));
    }

    #[test]
    fn parity_counts_mod_modulus() {
        let r = Request::parity(BTreeSet::from([0, 1, 2, 3]), 2).unwrap();
        assert!(!r.eval(&BTreeSet::from([0, 1])));
        assert!(r.eval(&BTreeSet::from([0])));
        assert!(Request::parity(BTreeSet::from([0, 1, 2]), 2).is_err());
    }

    #[test]
    fn eval_g_is_running_maximum() {
        let mut d = DemandState::new();
        d.push(Request::steiner_pair(0, 2).unwrap());
        d.push(Request::steiner_pair(1, 3).unwrap());
        assert!(d.eval_g(&BTreeSet::from([0, 1])));
        assert!(!DemandState::new().eval_g(&BTreeSet::from([0])));
        let mut p = DemandState::new();
        p.push(Request::parity(BTreeSet::from([0, 1]), 2).unwrap());
        assert!(!p.eval_g(&BTreeSet::from([0, 1])));
    }

    #[test]
    fn violated_components_on_four_cycle() {
        let g = Graph::new(4, &[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, 1)]).unwrap();
        let mut d = DemandState::new();
        d.push(Request::steiner_pair(0, 2).unwrap());
        let viol = d.violated_components(&g, &BTreeSet::new());
        assert_eq!(viol, vec![BTreeSet::from([0]), BTreeSet::from([2])]);
        let connected = BTreeSet::from([0usize, 1]);
        assert!(d.violated_components(&g, &connected).is_empty());
        assert!(DemandState::new().violated_components(&g, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn terminal_cache_tracks_singletons() {
        let mut d = DemandState::new();
        d.push(Request::parity(BTreeSet::from([1, 5]), 2).unwrap());
        assert_eq!(d.terminals(), &BTreeSet::from([1, 5]));
        d.push(Request::steiner_pair(0, 5).unwrap());
        assert_eq!(d.terminals(), &BTreeSet::from([0, 1, 5]));
    }

    #[test]
    fn builtin_requests_are_proper() {
        let builtins = vec![
            Request::steiner_pair(0, 1).unwrap(),
            Request::point_to_point(BTreeSet::from([0, 1]), BTreeSet::from([2, 3])).unwrap(),
            Request::parity(BTreeSet::from([0, 1, 2]), 3).unwrap(),
            Request::parity(BTreeSet::from([0, 1, 2, 3]), 2).unwrap(),
            Request::spanning(BTreeSet::from([0, 2, 4])).unwrap(),
            Request::spanning(BTreeSet::from([1])).unwrap(),
        ];
        for r in &builtins {
            for n in [5u32, 8] {
                assert_eq!(check_proper(r, n), Ok(Ok(())), "{r:?} on n={n}");
            }
        }
    }

    #[test]
    fn broken_function_fails_with_witness() {
        let mut table = vec![false; 16];
        table[0] = true; // f(∅) = 1
        let r = Request::truth_table(4, table).unwrap();
        assert_eq!(check_proper(&r, 4), Ok(Err(PropernessViolation::NonzeroOnEmpty)));
        assert!(matches!(
            check_proper(&Request::steiner_pair(0, 1).unwrap(), 13),
            Err(PropernessError::UniverseTooLarge { n: 13 })
        ));
    }

    #[test]
    fn violated_sets_contain_terminals_exhaustively() {
        // For n <= 8 and every built-in: any set with g = 1 holds a vertex
        // with g({v}) = 1.
        let n = 6u32;
        let reqs = vec![
            Request::steiner_pair(0, 3).unwrap(),
            Request::parity(BTreeSet::from([0, 2, 4]), 3).unwrap(),
            Request::point_to_point(BTreeSet::from([1]), BTreeSet::from([5])).unwrap(),
            Request::spanning(BTreeSet::from([2, 3])).unwrap(),
        ];
        let mut d = DemandState::new();
        for r in reqs {
            d.push(r);
        }
        for mask in 0u32..(1 << n) {
            let set = mask_to_set(mask, n);
            if d.eval_g(&set) {
                assert!(set.iter().any(|&v| d.eval_g(&BTreeSet::from([v]))));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn appending_requests_is_monotone(
            masks in proptest::collection::vec(1u32..63, 1..5),
        ) {
            // eval_g never flips a set from 1 to 0 as requests arrive.
            let n = 6u32;
            let mut d = DemandState::new();
            let mut previous: Vec<u32> = Vec::new();
            for m in masks {
                // Derive a pair request from the mask bits.
                let lo = m.trailing_zeros().min(n - 1);
                let hi = (31 - m.leading_zeros()).min(n - 1);
                if lo == hi {
                    continue;
                }
                let before: Vec<bool> = (0..1u32 << n)
                    .map(|k| d.eval_g(&mask_to_set(k, n)))
                    .collect();
                d.push(Request::steiner_pair(lo, hi).unwrap());
                for (k, was) in before.iter().enumerate() {
                    if *was {
                        proptest::prop_assert!(d.eval_g(&mask_to_set(k as u32, n)));
                    }
                }
                previous.push(m);
            }
        }
    }
}
