//! Penalty oracles, per-level tight-constraint detection, marking state,
//! and the penalty ledger for the prize-collecting extension.
//!
//! Penalty constraints are tracked per witness key: a vertex-to-root key, a
//! pair key, or (for submodular valuations) a vertex-subset key found by
//! brute-force minimization over unions of current moats. A key's
//! accumulated separated dual is frozen while it is marked: the marked
//! family is a fixed collection of sets and only larger, newer sets grow
//! afterwards.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Zero;

use crate::demands::DemandState;
use crate::graph::{EdgeId, Graph, Vertex};
use crate::{rat_u, Rat};

/// Monotone submodular valuation on subsets of a member set, given as an
/// explicit table indexed by member submask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmodOracle {
    root: Vertex,
    members: Vec<Vertex>,
    table: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PenaltyError {
    ZeroPenalty,
    RootInMembers { vertex: Vertex },
    TooManyMembers { count: usize },
    TableSizeMismatch { members: usize, len: usize },
    NonzeroOnEmpty,
    ZeroOnNonempty { mask: u64 },
    NotMonotone { small: u64, large: u64 },
    NotSubmodular { a: u64, b: u64 },
    InconsistentRequest(String),
    UniverseTooLarge { n: u32 },
}

impl fmt::Display for PenaltyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyError::ZeroPenalty => write!(f, "penalties must be positive integers"),
            PenaltyError::RootInMembers { vertex } => {
                write!(f, "root {vertex} cannot be a penalized member")
            }
            PenaltyError::TooManyMembers { count } => {
                write!(f, "{count} members exceed the brute-force cap of 10")
            }
            PenaltyError::TableSizeMismatch { members, len } => {
                write!(f, "table over {members} members needs 2^{members} entries, got {len}")
            }
            PenaltyError::NonzeroOnEmpty => write!(f, "valuation must be 0 on the empty set"),
            PenaltyError::ZeroOnNonempty { mask } => {
                write!(f, "valuation must be >= 1 on nonempty sets, zero at mask {mask:#b}")
            }
            PenaltyError::NotMonotone { small, large } => {
                write!(f, "valuation not monotone between masks {small:#b} and {large:#b}")
            }
            PenaltyError::NotSubmodular { a, b } => {
                write!(f, "valuation not submodular at masks {a:#b} and {b:#b}")
            }
            PenaltyError::InconsistentRequest(s) => write!(f, "penalty inconsistent with request: {s}"),
            PenaltyError::UniverseTooLarge { n } => {
                write!(f, "universe of {n} vertices too large for brute-force closure")
            }
        }
    }
}

impl SubmodOracle {
    /// Validates size, zero-on-empty, positivity on nonempty sets,
    /// monotonicity, and submodularity by exhaustive enumeration.
    pub fn new(root: Vertex, members: BTreeSet<Vertex>, table: Vec<u64>) -> Result<Self, PenaltyError> {
        if members.contains(&root) {
            return Err(PenaltyError::RootInMembers { vertex: root });
        }
        let m = members.len();
        if m > 10 {
            return Err(PenaltyError::TooManyMembers { count: m });
        }
        if table.len() != 1 << m {
            return Err(PenaltyError::TableSizeMismatch { members: m, len: table.len() });
        }
        if table[0] != 0 {
            return Err(PenaltyError::NonzeroOnEmpty);
        }
        let size = 1u64 << m;
        for mask in 1..size {
            if table[mask as usize] == 0 {
                return Err(PenaltyError::ZeroOnNonempty { mask });
            }
        }
        for mask in 0..size {
            for bit in 0..m {
                let with = mask | (1 << bit);
                if with != mask && table[mask as usize] > table[with as usize] {
                    return Err(PenaltyError::NotMonotone { small: mask, large: with });
                }
            }
        }
        for a in 0..size {
            for b in 0..size {
                let union = table[(a | b) as usize];
                let inter = table[(a & b) as usize];
                if table[a as usize] + table[b as usize] < union + inter {
                    return Err(PenaltyError::NotSubmodular { a, b });
                }
            }
        }
        Ok(SubmodOracle {
            root,
            members: members.into_iter().collect(),
            table,
        })
    }

    pub fn root(&self) -> Vertex {
        self.root
    }

    pub fn members(&self) -> &[Vertex] {
        &self.members
    }

    /// Valuation of the member vertices present in a graph-vertex bitmask.
    pub fn value_of_mask(&self, vertex_mask: u64) -> u64 {
        let mut sub = 0usize;
        for (i, v) in self.members.iter().enumerate() {
            if vertex_mask & (1u64 << v) != 0 {
                sub |= 1 << i;
            }
        }
        self.table[sub]
    }

    /// Valuation of an explicit vertex set.
    pub fn value_of_set(&self, set: &BTreeSet<Vertex>) -> u64 {
        let mut sub = 0usize;
        for (i, v) in self.members.iter().enumerate() {
            if set.contains(v) {
                sub |= 1 << i;
            }
        }
        self.table[sub]
    }

    pub fn full_value(&self) -> u64 {
        *self.table.last().expect("table nonempty")
    }
}

/// Per-step penalty request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PenaltyRequest {
    /// Pay `penalty` instead of connecting `v` to `root`.
    Vertex { v: Vertex, root: Vertex, penalty: u64 },
    /// Pay `penalty` instead of connecting `s` to `t`.
    Pair { s: Vertex, t: Vertex, penalty: u64 },
    /// Pay a monotone submodular valuation of the unspanned members.
    Submodular(SubmodOracle),
}

impl PenaltyRequest {
    pub fn vertex(v: Vertex, root: Vertex, penalty: u64) -> Result<Self, PenaltyError> {
        if penalty == 0 {
            return Err(PenaltyError::ZeroPenalty);
        }
        Ok(PenaltyRequest::Vertex { v, root, penalty })
    }

    pub fn pair(s: Vertex, t: Vertex, penalty: u64) -> Result<Self, PenaltyError> {
        if penalty == 0 {
            return Err(PenaltyError::ZeroPenalty);
        }
        Ok(PenaltyRequest::Pair { s, t, penalty })
    }

    /// Largest vertex id mentioned.
    pub fn max_vertex(&self) -> Vertex {
        match self {
            PenaltyRequest::Vertex { v, root, .. } => (*v).max(*root),
            PenaltyRequest::Pair { s, t, .. } => (*s).max(*t),
            PenaltyRequest::Submodular(o) => {
                o.members.iter().copied().max().unwrap_or(0).max(o.root)
            }
        }
    }
}

/// Identity of one tracked penalty constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PenaltyKey {
    Vertex(Vertex),
    Pair(Vertex, Vertex),
    /// Bitmask of the marked witness subset (submodular oracles only).
    Subset(u64),
}

impl PenaltyKey {
    pub fn pair(s: Vertex, t: Vertex) -> Self {
        PenaltyKey::Pair(s.min(t), s.max(t))
    }
}

#[derive(Debug, Clone)]
struct KeyState {
    /// Cumulative integer penalty for vertex and pair keys. Subset keys
    /// evaluate their right-hand side through the arrived oracles instead.
    cumulative: u64,
    root: Option<Vertex>,
    marked: bool,
    /// Level at which the key last went tight.
    marked_level: Option<i32>,
    /// Terminals deactivated by the marking.
    marked_terminals: Vec<Vertex>,
    /// Frozen left-hand side at marking time (subset keys).
    frozen_lhs: Rat,
}

impl KeyState {
    fn new(root: Option<Vertex>) -> Self {
        KeyState {
            cumulative: 0,
            root,
            marked: false,
            marked_level: None,
            marked_terminals: Vec::new(),
            frozen_lhs: Rat::zero(),
        }
    }
}

/// View of one current moat handed to the penalty machinery.
#[derive(Debug, Clone)]
pub struct MoatView {
    pub rep: Vertex,
    pub members: BTreeSet<Vertex>,
    pub active: bool,
    /// Vertex bitmask of the members when the graph fits in 64 bits.
    pub mask: Option<u64>,
}

impl MoatView {
    fn separates_vertex(&self, v: Vertex, root: Vertex) -> bool {
        self.members.contains(&v) && !self.members.contains(&root)
    }

    fn separates_pair(&self, s: Vertex, t: Vertex) -> bool {
        self.members.contains(&s) != self.members.contains(&t)
    }
}

/// A key that went tight together with the uniform-growth delta that gets
/// there.
#[derive(Debug, Clone)]
pub struct TightFamily {
    pub key: PenaltyKey,
    pub terminals: Vec<Vertex>,
}

/// Marking state, separated duals, and amounts paid per step.
#[derive(Debug, Clone, Default)]
pub struct PenaltyLedger {
    keys: BTreeMap<PenaltyKey, KeyState>,
    /// Separated dual per (level, key); accumulation pauses while marked.
    sep: BTreeMap<(i32, PenaltyKey), Rat>,
    oracles: Vec<SubmodOracle>,
    /// Dual mass grown at each level keyed by the growing moat's vertex
    /// bitmask; kept only while submodular oracles are present.
    grown_history: BTreeMap<i32, BTreeMap<u64, Rat>>,
    marked_terminals: BTreeSet<Vertex>,
    /// Keys marked per level across the run.
    pub marked_by_level: BTreeMap<i32, BTreeSet<PenaltyKey>>,
    pub paid_per_step: Vec<u64>,
    pub cumulative_paid: u64,
    /// Sum of all penalty magnitudes seen; drives the level cap.
    pub total_penalty: u64,
}

impl PenaltyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn has_submodular(&self) -> bool {
        !self.oracles.is_empty()
    }

    pub fn is_marked_terminal(&self, v: Vertex) -> bool {
        self.marked_terminals.contains(&v)
    }

    pub fn marked_keys(&self) -> impl Iterator<Item = &PenaltyKey> {
        self.keys.iter().filter(|(_, st)| st.marked).map(|(k, _)| k)
    }

    pub fn key_root(&self, key: &PenaltyKey) -> Option<Vertex> {
        self.keys.get(key).and_then(|st| st.root)
    }

    /// Record an arriving penalty.
    pub fn register(&mut self, pr: &PenaltyRequest) {
        match pr {
            PenaltyRequest::Vertex { v, root, penalty } => {
                let st = self
                    .keys
                    .entry(PenaltyKey::Vertex(*v))
                    .or_insert_with(|| KeyState::new(Some(*root)));
                st.cumulative += penalty;
                self.total_penalty += penalty;
            }
            PenaltyRequest::Pair { s, t, penalty } => {
                let st = self
                    .keys
                    .entry(PenaltyKey::pair(*s, *t))
                    .or_insert_with(|| KeyState::new(None));
                st.cumulative += penalty;
                self.total_penalty += penalty;
            }
            PenaltyRequest::Submodular(o) => {
                self.total_penalty += o.full_value();
                self.oracles.push(o.clone());
            }
        }
    }

    /// Cumulative right-hand side for a key.
    pub fn cumulative_penalty(&self, key: &PenaltyKey) -> u64 {
        match key {
            PenaltyKey::Subset(mask) => {
                self.oracles.iter().map(|o| o.value_of_mask(*mask)).sum()
            }
            _ => self.keys.get(key).map_or(0, |st| st.cumulative),
        }
    }

    pub fn sep_dual(&self, level: i32, key: &PenaltyKey) -> Rat {
        self.sep
            .get(&(level, *key))
            .cloned()
            .unwrap_or_else(Rat::zero)
    }

    fn unmarked_rate(&self, key: &PenaltyKey, st: &KeyState, moats: &[MoatView]) -> u64 {
        match key {
            PenaltyKey::Vertex(v) => {
                let root = st.root.expect("vertex keys carry their root");
                moats
                    .iter()
                    .filter(|m| m.active && m.separates_vertex(*v, root))
                    .count() as u64
            }
            PenaltyKey::Pair(s, t) => moats
                .iter()
                .filter(|m| m.active && m.separates_pair(*s, *t))
                .count() as u64,
            PenaltyKey::Subset(_) => 0,
        }
    }

    /// Minimum uniform-growth delta at which some unmarked constraint goes
    /// tight at `level`, over vertex keys, pair keys, and submodular
    /// candidate families.
    pub fn min_delta(&self, level: i32, moats: &[MoatView]) -> Option<Rat> {
        let mut best: Option<Rat> = None;
        let mut consider = |d: Rat| {
            if best.as_ref().is_none_or(|b| d < *b) {
                best = Some(d);
            }
        };
        for (key, st) in &self.keys {
            if st.marked {
                continue;
            }
            let rate = self.unmarked_rate(key, st, moats);
            if rate == 0 {
                continue;
            }
            let slack = rat_u(st.cumulative) - self.sep_dual(level, key);
            consider(slack / rat_u(rate));
        }
        for cand in self.submod_candidates(level, moats) {
            if cand.rate > 0 {
                consider((cand.rhs - cand.lhs) / rat_u(cand.rate));
            }
        }
        best
    }

    /// Apply a uniform growth of `delta` on the given active moats.
    pub fn apply_growth(&mut self, level: i32, moats: &[MoatView], delta: &Rat) {
        if delta.is_zero() {
            return;
        }
        let actives: Vec<&MoatView> = moats.iter().filter(|m| m.active).collect();
        let mut updates: Vec<(PenaltyKey, u64)> = Vec::new();
        for (key, st) in &self.keys {
            if st.marked {
                continue;
            }
            let rate = self.unmarked_rate(key, st, moats);
            if rate > 0 {
                updates.push((*key, rate));
            }
        }
        for (key, rate) in updates {
            let slot = self
                .sep
                .entry((level, key))
                .or_insert_with(Rat::zero);
            *slot += rat_u(rate) * delta;
        }
        if self.has_submodular() {
            let history = self.grown_history.entry(level).or_default();
            for m in actives {
                let mask = m.mask.expect("submodular mode requires masked graphs");
                let slot = history.entry(mask).or_insert_with(Rat::zero);
                *slot += delta;
            }
        }
    }

    /// Unmarked constraints that are exactly tight at `level` right now.
    pub fn tight_families(
        &self,
        level: i32,
        moats: &[MoatView],
        terminals: &BTreeSet<Vertex>,
    ) -> Vec<TightFamily> {
        let mut out = Vec::new();
        for (key, st) in &self.keys {
            if st.marked || st.cumulative == 0 {
                continue;
            }
            if self.sep_dual(level, key) == rat_u(st.cumulative) {
                let term: Vec<Vertex> = match key {
                    PenaltyKey::Vertex(v) => alloc::vec![*v],
                    PenaltyKey::Pair(s, t) => alloc::vec![*s, *t],
                    PenaltyKey::Subset(_) => Vec::new(),
                };
                out.push(TightFamily { key: *key, terminals: term });
            }
        }
        // Tight submodular families are merged into one subset key.
        let mut union_mask = 0u64;
        let mut any = false;
        for cand in self.submod_candidates(level, moats) {
            if cand.lhs == cand.rhs {
                union_mask |= cand.p_mask;
                any = true;
            }
        }
        if any {
            let members: Vec<Vertex> = terminals
                .iter()
                .copied()
                .filter(|v| union_mask & (1u64 << v) != 0)
                .collect();
            out.push(TightFamily {
                key: PenaltyKey::Subset(union_mask),
                terminals: members,
            });
        }
        out
    }

    /// Mark a tight family: its terminals become inactive and its
    /// separated dual freezes.
    pub fn mark(&mut self, fam: &TightFamily, level: i32, lhs_now: Rat) {
        let st = self
            .keys
            .entry(fam.key)
            .or_insert_with(|| KeyState::new(None));
        st.marked = true;
        st.marked_level = Some(level);
        st.marked_terminals = fam.terminals.clone();
        st.frozen_lhs = lhs_now;
        self.marked_by_level
            .entry(level)
            .or_default()
            .insert(fam.key);
        self.rebuild_marked_terminals();
    }

    fn rebuild_marked_terminals(&mut self) {
        self.marked_terminals = self
            .keys
            .values()
            .filter(|st| st.marked)
            .flat_map(|st| st.marked_terminals.iter().copied())
            .collect();
    }

    /// Unmark every marked key whose witness is violated again; returns the
    /// unmarked keys.
    pub fn unmark_violated(&mut self, violated: impl Fn(&PenaltyKey, Option<Vertex>) -> bool) -> Vec<PenaltyKey> {
        let mut unmarked = Vec::new();
        for (key, st) in self.keys.iter_mut() {
            if st.marked && violated(key, st.root) {
                st.marked = false;
                st.marked_level = None;
                st.marked_terminals.clear();
                unmarked.push(*key);
            }
        }
        if !unmarked.is_empty() {
            self.rebuild_marked_terminals();
        }
        unmarked
    }

    /// Evaluate this step's penalty on the currently marked collection and
    /// append it to the ledger.
    pub fn settle_step(&mut self, arrived: Option<&PenaltyRequest>) -> u64 {
        let paid = match arrived {
            None => 0,
            Some(PenaltyRequest::Vertex { v, penalty, .. }) => {
                let key = PenaltyKey::Vertex(*v);
                if self.keys.get(&key).is_some_and(|st| st.marked) {
                    *penalty
                } else {
                    0
                }
            }
            Some(PenaltyRequest::Pair { s, t, penalty }) => {
                let key = PenaltyKey::pair(*s, *t);
                if self.keys.get(&key).is_some_and(|st| st.marked) {
                    *penalty
                } else {
                    0
                }
            }
            Some(PenaltyRequest::Submodular(o)) => {
                let mut union_mask = 0u64;
                for (key, st) in &self.keys {
                    if let (PenaltyKey::Subset(mask), true) = (key, st.marked) {
                        union_mask |= mask;
                    }
                }
                o.value_of_mask(union_mask)
            }
        };
        self.paid_per_step.push(paid);
        self.cumulative_paid += paid;
        paid
    }

    /// Exact feasibility of every tracked penalty constraint: unmarked keys
    /// stay at or below their cumulative penalty, marked keys compare their
    /// frozen value.
    pub fn check_sep_feasible(&self) -> Result<(), String> {
        for ((level, key), sep) in &self.sep {
            let st = self.keys.get(key);
            let cum = rat_u(self.cumulative_penalty(key));
            let marked = st.is_some_and(|s| s.marked);
            let value = if marked {
                st.map(|s| s.frozen_lhs.clone()).unwrap_or_else(Rat::zero)
            } else {
                sep.clone()
            };
            if value > cum {
                return Err(format!(
                    "penalty constraint broken: key {key:?} level {level}: {value} > {cum}"
                ));
            }
        }
        for (key, st) in &self.keys {
            if let (PenaltyKey::Subset(mask), true) = (key, st.marked) {
                let rhs = rat_u(self.oracles.iter().map(|o| o.value_of_mask(*mask)).sum());
                if st.frozen_lhs > rhs {
                    return Err(format!(
                        "penalty constraint broken: subset {mask:#b}: {} > {rhs}",
                        st.frozen_lhs
                    ));
                }
            }
        }
        Ok(())
    }

    /// Frozen left-hand side recorded when a subset key went tight.
    pub fn submod_lhs(&self, level: i32, selection_mask: u64) -> Rat {
        let mut lhs = Rat::zero();
        if let Some(history) = self.grown_history.get(&level) {
            for (mask, mass) in history {
                if mask & !selection_mask == 0 {
                    lhs += mass;
                }
            }
        }
        lhs
    }

    fn submod_candidates(&self, level: i32, moats: &[MoatView]) -> Vec<SubmodCandidate> {
        if !self.has_submodular() {
            return Vec::new();
        }
        let roots: BTreeSet<Vertex> = self.oracles.iter().map(|o| o.root).collect();
        let root_mask: u64 = roots.iter().fold(0u64, |acc, r| acc | (1u64 << r));
        let history = self.grown_history.get(&level);
        let n = moats.len();
        debug_assert!(n <= 16, "submodular detection caps the moat count");
        let mut out = Vec::new();
        for pick in 1u32..(1u32 << n) {
            let mut union_mask = 0u64;
            let mut grow_mask = 0u64;
            let mut rate = 0u64;
            for (i, m) in moats.iter().enumerate() {
                if pick & (1 << i) == 0 {
                    continue;
                }
                let mask = m.mask.expect("submodular mode requires masked graphs");
                union_mask |= mask;
                if m.active && mask & root_mask == 0 {
                    rate += 1;
                    grow_mask |= mask;
                }
            }
            // Family: every root-free set grown within the selection, plus
            // the selected active root-free moats themselves once growth
            // resumes.
            let mut lhs = Rat::zero();
            let mut p_mask = grow_mask;
            if let Some(history) = history {
                for (mask, mass) in history {
                    if mask & !union_mask == 0 && mask & root_mask == 0 {
                        lhs += mass;
                        p_mask |= mask;
                    }
                }
            }
            if p_mask == 0 {
                continue;
            }
            let rhs = rat_u(self.oracles.iter().map(|o| o.value_of_mask(p_mask)).sum());
            out.push(SubmodCandidate { p_mask, lhs, rhs, rate });
        }
        out
    }
}

#[derive(Debug, Clone)]
struct SubmodCandidate {
    p_mask: u64,
    lhs: Rat,
    rhs: Rat,
    rate: u64,
}

/// Smallest superfamily of `family` closed under unions and complements,
/// over a universe of at most 10 vertices.
pub fn closure(family: &[BTreeSet<Vertex>], universe: u32) -> Result<Vec<BTreeSet<Vertex>>, PenaltyError> {
    let masks = closure_masks(
        family.iter().map(|s| set_to_mask(s)).collect(),
        universe,
    )?;
    Ok(masks
        .into_iter()
        .map(|m| mask_to_set(m, universe))
        .collect())
}

fn set_to_mask(s: &BTreeSet<Vertex>) -> u64 {
    s.iter().fold(0u64, |acc, v| acc | (1u64 << v))
}

fn mask_to_set(mask: u64, n: u32) -> BTreeSet<Vertex> {
    (0..n).filter(|v| mask & (1u64 << v) != 0).collect()
}

fn closure_masks(family: Vec<u64>, universe: u32) -> Result<BTreeSet<u64>, PenaltyError> {
    if universe > 10 {
        return Err(PenaltyError::UniverseTooLarge { n: universe });
    }
    let full = if universe == 0 { 0 } else { (1u64 << universe) - 1 };
    let mut set: BTreeSet<u64> = family.into_iter().collect();
    loop {
        let mut added = Vec::new();
        let items: Vec<u64> = set.iter().copied().collect();
        for &a in &items {
            let c = full & !a;
            if !set.contains(&c) {
                added.push(c);
            }
            for &b in &items {
                let u = a | b;
                if !set.contains(&u) {
                    added.push(u);
                }
            }
        }
        if added.is_empty() {
            return Ok(set);
        }
        set.extend(added);
    }
}

/// Verify that every component of the current solution lies in the closure
/// of the zero-requirement sets together with the marked witness sets.
/// Brute force; rejects universes above 10 vertices.
pub fn check_component_closure(
    g: &Graph,
    demands: &DemandState,
    solution: &BTreeSet<EdgeId>,
    witness_sets: &[BTreeSet<Vertex>],
) -> Result<Result<(), String>, PenaltyError> {
    let n = g.vertex_count();
    if n > 10 {
        return Err(PenaltyError::UniverseTooLarge { n });
    }
    let mut base: Vec<u64> = witness_sets.iter().map(|s| set_to_mask(s)).collect();
    for mask in 0..(1u64 << n) {
        if !demands.eval_g(&mask_to_set(mask, n)) {
            base.push(mask);
        }
    }
    let closed = closure_masks(base, n)?;
    for (_, members) in g.components(solution).groups() {
        let set: BTreeSet<Vertex> = members.into_iter().collect();
        let mask = set_to_mask(&set);
        if !closed.contains(&mask) {
            return Ok(Err(format!(
                "component {} outside the marked closure",
                crate::graph::format_vertex_set(&set)
            )));
        }
    }
    Ok(Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demands::Request;
    use alloc::vec;

    #[test]
    fn closure_of_singleton_on_two_vertices() {
        let got = closure(&[BTreeSet::from([0])], 2).unwrap();
        let want: Vec<BTreeSet<Vertex>> = vec![
            BTreeSet::new(),
            BTreeSet::from([0]),
            BTreeSet::from([1]),
            BTreeSet::from([0, 1]),
        ];
        assert_eq!(got, want);
        assert!(closure(&[], 3).unwrap().is_empty());
        assert!(closure(&[], 11).is_err());
    }

    #[test]
    fn closure_of_partition_contains_all_part_unions() {
        let parts = [BTreeSet::from([0, 1]), BTreeSet::from([2]), BTreeSet::from([3])];
        let got = closure(&parts, 4).unwrap();
        // All unions of parts and their complements: 2^3 unions.
        assert!(got.contains(&BTreeSet::from([0, 1, 2])));
        assert!(got.contains(&BTreeSet::from([2, 3])));
        assert!(got.contains(&BTreeSet::new()));
        assert_eq!(got.len(), 8);
    }

    #[test]
    fn oracle_validation_catches_bad_tables() {
        let members = BTreeSet::from([1, 2]);
        assert!(SubmodOracle::new(0, members.clone(), vec![0, 1, 1, 2]).is_ok());
        assert!(matches!(
            SubmodOracle::new(0, members.clone(), vec![1, 1, 1, 2]),
            Err(PenaltyError::NonzeroOnEmpty)
        ));
        assert!(matches!(
            SubmodOracle::new(0, members.clone(), vec![0, 2, 1, 1]),
            Err(PenaltyError::NotMonotone { .. })
        ));
        // 1 + 1 < 3 + 0 breaks submodularity.
        assert!(matches!(
            SubmodOracle::new(0, members, vec![0, 1, 1, 3]),
            Err(PenaltyError::NotSubmodular { .. })
        ));
    }

    #[test]
    fn ledger_tracks_sep_and_marks() {
        let mut led = PenaltyLedger::new();
        led.register(&PenaltyRequest::vertex(1, 0, 1).unwrap());
        let moats = [
            MoatView {
                rep: 0,
                members: BTreeSet::from([0]),
                active: true,
                mask: Some(0b01),
            },
            MoatView {
                rep: 1,
                members: BTreeSet::from([1]),
                active: true,
                mask: Some(0b10),
            },
        ];
        // Only the v-side moat separates vertex key 1 from root 0.
        assert_eq!(led.min_delta(0, &moats), Some(rat_u(1)));
        led.apply_growth(0, &moats, &rat_u(1));
        let tight = led.tight_families(0, &moats, &BTreeSet::from([0, 1]));
        assert_eq!(tight.len(), 1);
        assert_eq!(tight[0].key, PenaltyKey::Vertex(1));
        led.mark(&tight[0], 0, rat_u(1));
        assert!(led.is_marked_terminal(1));
        assert!(!led.is_marked_terminal(0));
        assert!(led.check_sep_feasible().is_ok());
        // Frozen while marked: further growth does not accumulate.
        led.apply_growth(0, &moats, &rat_u(5));
        assert!(led.check_sep_feasible().is_ok());
        assert_eq!(led.settle_step(Some(&PenaltyRequest::vertex(1, 0, 1).unwrap())), 1);
        assert_eq!(led.cumulative_paid, 1);
    }

    #[test]
    fn pair_key_rate_counts_both_sides() {
        let mut led = PenaltyLedger::new();
        led.register(&PenaltyRequest::pair(0, 3, 2).unwrap());
        let moats = [
            MoatView {
                rep: 0,
                members: BTreeSet::from([0, 1]),
                active: true,
                mask: None,
            },
            MoatView {
                rep: 3,
                members: BTreeSet::from([3]),
                active: true,
                mask: None,
            },
        ];
        // Both moats split the pair: rate 2, slack 2 → delta 1.
        assert_eq!(led.min_delta(2, &moats), Some(rat_u(1)));
        led.apply_growth(2, &moats, &rat_u(1));
        assert_eq!(led.sep_dual(2, &PenaltyKey::pair(0, 3)), rat_u(2));
    }

    #[test]
    fn component_closure_detects_corrupted_ledger() {
        let g = Graph::new(2, &[(0, 1, 4)]).unwrap();
        let mut d = DemandState::new();
        d.push(Request::steiner_pair(1, 0).unwrap());
        let none: BTreeSet<EdgeId> = BTreeSet::new();
        // With the witness {1} marked, both components sit in the closure.
        let ok = check_component_closure(&g, &d, &none, &[BTreeSet::from([1])]).unwrap();
        assert!(ok.is_ok());
        // Without it, component {1} is not coverable.
        let bad = check_component_closure(&g, &d, &none, &[]).unwrap();
        assert!(bad.is_err());
    }
}
