//! The online dual-ascent engine: per-step sweep over levels, consolidate
//! and dual-growth phases, event detection with exact rational arithmetic,
//! and a runtime audit of the solver's structural invariants.
//!
//! Levels are materialized lazily between a configurable floor and a cap
//! derived from the graph diameter (plus accumulated penalties in
//! prize-collecting mode). Each level keeps aggregated dual state only:
//! per-edge load, per-vertex accumulation, the engaged terminal set, and
//! the level's total dual value. Individual dual variables are never
//! stored; the growth log preserves per-moat attribution for the account
//! ledger.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::{ToPrimitive, Zero};

use crate::accounting::AccountLedger;
use crate::demands::{DemandState, Request, RequestError};
use crate::graph::{shortest_path_in, EdgeId, Graph, Path, UnionFind, Vertex};
use crate::pc::{MoatView, PenaltyError, PenaltyKey, PenaltyLedger, PenaltyRequest};
use crate::{pow2, rat_u, Rat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceLevel {
    #[default]
    Off,
    /// Every event except uniform growth records.
    Events,
    /// Everything, including one record per moat growth.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Grow,
    EdgeTight,
    Connect,
    Build,
    Limit,
    PenaltyMark,
    Unmark,
}

impl TraceKind {
    pub fn name(&self) -> &'static str {
        match self {
            TraceKind::Grow => "grow",
            TraceKind::EdgeTight => "edge_tight",
            TraceKind::Connect => "connect",
            TraceKind::Build => "build",
            TraceKind::Limit => "limit",
            TraceKind::PenaltyMark => "penalty_mark",
            TraceKind::Unmark => "unmark",
        }
    }
}

/// One engine event. `ids` depends on the kind: grow carries the moat
/// representative and the credited component, edge_tight the edge id,
/// connect the two terminals, build the terminals followed by the newly
/// bought edge ids, limit the moat representative, penalty records an
/// encoded key (0 v | 1 s t | 2 mask).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub step: u32,
    pub level: i32,
    pub kind: TraceKind,
    pub delta: Rat,
    pub ids: Vec<u64>,
}

/// Attribution of one uniform growth increment.
#[derive(Debug, Clone)]
pub struct GrowthRecord {
    pub step: u32,
    pub level: i32,
    pub moat: Vertex,
    pub credited_component: Vertex,
    pub delta: Rat,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Lowest simulated level; must be at most -1. Levels below it cannot
    /// fire events with integer costs and penalties, they only matter for
    /// account bookkeeping, so the account checks carry a matching deficit.
    pub j_floor: i32,
    pub trace: TraceLevel,
    /// Run the conservation/account/feasibility audit after every event.
    pub audit_per_event: bool,
    /// Additionally run recompute-equivalence cross-checks at step ends.
    pub audit_cross_check: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            j_floor: -41,
            trace: TraceLevel::Off,
            audit_per_event: true,
            audit_cross_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineError {
    Config(String),
    VertexOutOfRange { vertex: Vertex },
    Request(RequestError),
    Penalty(PenaltyError),
    InconsistentPenalty(String),
    /// A violated component cannot be connected in the graph (plain mode).
    InfeasibleDemand { component: BTreeSet<Vertex> },
    NotCoMoated { s1: Vertex, s2: Vertex, level: i32 },
    /// Active terminals survived past the level cap; indicates a bug.
    LevelCapExceeded { step: u32 },
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::Config(s) => write!(f, "bad config: {s}"),
            EngineError::VertexOutOfRange { vertex } => write!(f, "vertex {vertex} out of range"),
            EngineError::Request(e) => write!(f, "bad request: {e}"),
            EngineError::Penalty(e) => write!(f, "bad penalty: {e}"),
            EngineError::InconsistentPenalty(s) => write!(f, "inconsistent penalty: {s}"),
            EngineError::InfeasibleDemand { component } => write!(
                f,
                "infeasible demand: component {} cannot be satisfied",
                crate::graph::format_vertex_set(component)
            ),
            EngineError::NotCoMoated { s1, s2, level } => {
                write!(f, "{s1} and {s2} share no moat at level {level}")
            }
            EngineError::LevelCapExceeded { step } => {
                write!(f, "step {step}: active terminals beyond the level cap")
            }
        }
    }
}

impl From<RequestError> for EngineError {
    fn from(e: RequestError) -> Self {
        EngineError::Request(e)
    }
}

impl From<PenaltyError> for EngineError {
    fn from(e: PenaltyError) -> Self {
        EngineError::Penalty(e)
    }
}

/// Outcome of the per-event invariant audit for one step.
#[derive(Debug, Clone, Default)]
pub struct AuditSummary {
    pub events_checked: u64,
    pub ambiguity_incidents: u64,
    pub failures: Vec<String>,
}

impl AuditSummary {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Everything a caller learns about one completed time step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: u32,
    pub edges_built: Vec<(Path, u64)>,
    pub cumulative_cost: u64,
    pub max_level_used: Option<i32>,
    pub per_level_dual_totals: BTreeMap<i32, Rat>,
    pub y_max_total: Rat,
    pub audit: AuditSummary,
    /// Penalty paid this step (prize-collecting runs only).
    pub penalty_paid: Option<u64>,
    /// `cost(F) + Σ penalties` (prize-collecting runs only).
    pub objective: Option<u64>,
}

#[derive(Debug, Clone, Default)]
struct LevelState {
    /// Stored edges of the level: tight edges plus solution edges folded in
    /// by the consolidate phase.
    absorbed: BTreeSet<EdgeId>,
    edge_load: BTreeMap<EdgeId, Rat>,
    vertex_dual: BTreeMap<Vertex, Rat>,
    /// Terminals ever active while this level was being worked.
    engaged: BTreeSet<Vertex>,
    dual_total: Rat,
}

impl LevelState {
    fn load(&self, e: EdgeId) -> Rat {
        self.edge_load.get(&e).cloned().unwrap_or_else(Rat::zero)
    }

    fn dual(&self, v: Vertex) -> Rat {
        self.vertex_dual.get(&v).cloned().unwrap_or_else(Rat::zero)
    }
}

/// Snapshot of one moat during level work.
#[derive(Debug, Clone)]
struct Moat {
    rep: Vertex,
    members: BTreeSet<Vertex>,
    has_active: bool,
    /// Maximum dual accumulation over the terminals inside, if any.
    max_term_dual: Option<Rat>,
    mask: Option<u64>,
}

impl Moat {
    fn growable(&self, limit: &Rat) -> bool {
        self.has_active
            && self
                .max_term_dual
                .as_ref()
                .is_none_or(|d| d < limit)
    }
}

pub struct Engine {
    graph: Graph,
    cfg: EngineConfig,
    demands: DemandState,
    solution: BTreeSet<EdgeId>,
    solution_cost: u64,
    forest: UnionFind,
    active: BTreeSet<Vertex>,
    suppressed: BTreeSet<Vertex>,
    levels: BTreeMap<i32, LevelState>,
    ledger: AccountLedger,
    pc: Option<PenaltyLedger>,
    step: u32,
    growth_log: Vec<GrowthRecord>,
    trace: Vec<TraceRecord>,
    max_dist: u64,
    audit_events: u64,
    ambiguity_incidents: u64,
    audit_failures: Vec<String>,
}

impl Engine {
    pub fn new(graph: Graph, cfg: EngineConfig) -> Result<Self, EngineError> {
        if cfg.j_floor > -1 {
            return Err(EngineError::Config(format!(
                "j_floor must be <= -1, got {}",
                cfg.j_floor
            )));
        }
        let n = graph.vertex_count();
        let max_dist = graph.max_finite_distance();
        Ok(Engine {
            graph,
            cfg,
            demands: DemandState::new(),
            solution: BTreeSet::new(),
            solution_cost: 0,
            forest: UnionFind::new(n),
            active: BTreeSet::new(),
            suppressed: BTreeSet::new(),
            levels: BTreeMap::new(),
            ledger: AccountLedger::new(),
            pc: None,
            step: 0,
            growth_log: Vec::new(),
            trace: Vec::new(),
            max_dist,
            audit_events: 0,
            ambiguity_incidents: 0,
            audit_failures: Vec::new(),
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn demands(&self) -> &DemandState {
        &self.demands
    }

    pub fn solution(&self) -> &BTreeSet<EdgeId> {
        &self.solution
    }

    pub fn solution_cost(&self) -> u64 {
        self.solution_cost
    }

    pub fn ledger(&self) -> &AccountLedger {
        &self.ledger
    }

    pub fn penalties(&self) -> Option<&PenaltyLedger> {
        self.pc.as_ref()
    }

    pub fn growth_log(&self) -> &[GrowthRecord] {
        &self.growth_log
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn audit_failures(&self) -> &[String] {
        &self.audit_failures
    }

    pub fn ambiguity_incidents(&self) -> u64 {
        self.ambiguity_incidents
    }

    pub fn vertex_dual(&self, level: i32, v: Vertex) -> Rat {
        self.levels.get(&level).map_or_else(Rat::zero, |l| l.dual(v))
    }

    pub fn edge_load(&self, level: i32, e: EdgeId) -> Rat {
        self.levels.get(&level).map_or_else(Rat::zero, |l| l.load(e))
    }

    pub fn level_dual_total(&self, level: i32) -> Rat {
        self.levels
            .get(&level)
            .map_or_else(Rat::zero, |l| l.dual_total.clone())
    }

    pub fn engaged(&self, level: i32) -> BTreeSet<Vertex> {
        self.levels
            .get(&level)
            .map(|l| l.engaged.clone())
            .unwrap_or_default()
    }

    pub fn sum_all_duals(&self) -> Rat {
        let mut total = Rat::zero();
        for lvl in self.levels.values() {
            total += &lvl.dual_total;
        }
        total
    }

    pub fn y_max_total(&self) -> Rat {
        self.levels
            .values()
            .map(|l| l.dual_total.clone())
            .max()
            .unwrap_or_else(Rat::zero)
    }

    /// `cost(F)` plus cumulative penalties when prize collecting.
    pub fn objective(&self) -> u64 {
        self.solution_cost + self.pc.as_ref().map_or(0, |p| p.cumulative_paid)
    }

    /// Submit a plain connectivity request and run the step to completion.
    pub fn submit(&mut self, r: Request) -> Result<StepReport, EngineError> {
        self.run_step(r, None)
    }

    /// Submit a request together with its penalty; the step may leave the
    /// requirement unmet once the corresponding penalty constraint is tight.
    pub fn submit_pc(&mut self, r: Request, pr: PenaltyRequest) -> Result<StepReport, EngineError> {
        check_penalty_consistency(&r, &pr)?;
        if matches!(pr, PenaltyRequest::Submodular(_)) && self.graph.vertex_count() > 16 {
            return Err(EngineError::Penalty(PenaltyError::UniverseTooLarge {
                n: self.graph.vertex_count(),
            }));
        }
        self.run_step(r, Some(pr))
    }

    fn run_step(&mut self, r: Request, pr: Option<PenaltyRequest>) -> Result<StepReport, EngineError> {
        if let Some(v) = r.max_vertex() {
            if v >= self.graph.vertex_count() {
                return Err(EngineError::VertexOutOfRange { vertex: v });
            }
        }
        if let Some(pr) = &pr {
            let v = pr.max_vertex();
            if v >= self.graph.vertex_count() {
                return Err(EngineError::VertexOutOfRange { vertex: v });
            }
        }
        if self.pc.is_none() && pr.is_none() {
            // Plain mode: every component of the full graph must already
            // satisfy the new request, otherwise no edge set ever will.
            let all: BTreeSet<EdgeId> = (0..self.graph.edge_count()).collect();
            for (_, members) in self.graph.components(&all).groups() {
                let set: BTreeSet<Vertex> = members.into_iter().collect();
                if r.eval(&set) {
                    return Err(EngineError::InfeasibleDemand { component: set });
                }
            }
        }
        if pr.is_some() && self.pc.is_none() {
            self.pc = Some(PenaltyLedger::new());
        }

        self.step += 1;
        self.suppressed.clear();
        let failures_before = self.audit_failures.len();
        let incidents_before = self.ambiguity_incidents;
        let events_before = self.audit_events;

        let new_terminals: Vec<Vertex> = r
            .singleton_candidates()
            .into_iter()
            .filter(|&v| !self.demands.is_terminal(v) && r.eval(&BTreeSet::from([v])))
            .collect();
        self.demands.push(r);
        for t in new_terminals {
            let rep = self.forest.min_of(t);
            self.ledger.add_terminal(rep);
        }
        if let Some(pr) = &pr {
            self.pc
                .as_mut()
                .expect("penalty ledger present")
                .register(pr);
        }
        self.unmark_pass();
        self.recompute_active();

        let cap = self.level_cap();
        let mut builds: Vec<(Path, u64)> = Vec::new();
        let mut max_level_used = None;
        let mut j = self.cfg.j_floor;
        while !self.active.is_empty() {
            if j > cap {
                return Err(EngineError::LevelCapExceeded { step: self.step });
            }
            max_level_used = Some(j);
            self.work_level(j, &mut builds);
            j += 1;
        }

        let (penalty_paid, objective) = match (&pr, self.pc.as_mut()) {
            (_, Some(pc)) => {
                let paid = pc.settle_step(pr.as_ref());
                let obj = self.solution_cost + pc.cumulative_paid;
                (Some(paid), Some(obj))
            }
            _ => (None, None),
        };

        self.step_end_audit();

        let per_level_dual_totals: BTreeMap<i32, Rat> = self
            .levels
            .iter()
            .filter(|(_, l)| !l.dual_total.is_zero())
            .map(|(j, l)| (*j, l.dual_total.clone()))
            .collect();
        Ok(StepReport {
            step: self.step,
            edges_built: builds,
            cumulative_cost: self.solution_cost,
            max_level_used,
            y_max_total: per_level_dual_totals
                .values()
                .max()
                .cloned()
                .unwrap_or_else(Rat::zero),
            per_level_dual_totals,
            audit: AuditSummary {
                events_checked: self.audit_events - events_before,
                ambiguity_incidents: self.ambiguity_incidents - incidents_before,
                failures: self.audit_failures[failures_before..].to_vec(),
            },
            penalty_paid,
            objective,
        })
    }

    fn level_cap(&self) -> i32 {
        let dist_cap = ceil_log2(self.max_dist.max(1)) as i32;
        match &self.pc {
            None => dist_cap,
            Some(pc) => dist_cap.max(ceil_log2(pc.total_penalty.max(1)) as i32 + 1),
        }
    }

    fn comp_members(&mut self, v: Vertex) -> BTreeSet<Vertex> {
        let rep = self.forest.min_of(v);
        (0..self.graph.vertex_count())
            .filter(|&u| self.forest.min_of(u) == rep)
            .collect()
    }

    fn recompute_active(&mut self) {
        self.active.clear();
        let mut by_comp: BTreeMap<Vertex, BTreeSet<Vertex>> = BTreeMap::new();
        for v in 0..self.graph.vertex_count() {
            by_comp.entry(self.forest.min_of(v)).or_default().insert(v);
        }
        for members in by_comp.values() {
            if !self.demands.eval_g(members) {
                continue;
            }
            for &t in members {
                if self.demands.is_terminal(t)
                    && !self.pc.as_ref().is_some_and(|p| p.is_marked_terminal(t))
                {
                    self.active.insert(t);
                }
            }
        }
    }

    fn unmark_pass(&mut self) {
        let Some(pc) = &self.pc else { return };
        let mut to_unmark: Vec<(PenaltyKey, i32)> = Vec::new();
        let keys: Vec<(PenaltyKey, Option<Vertex>)> = pc
            .marked_keys()
            .map(|k| (*k, pc.key_root(k)))
            .collect();
        for (key, root) in keys {
            if self.key_witness_violated(&key, root) {
                to_unmark.push((key, 0));
            }
        }
        if to_unmark.is_empty() {
            return;
        }
        let keys: BTreeSet<PenaltyKey> = to_unmark.iter().map(|(k, _)| *k).collect();
        let pc = self.pc.as_mut().expect("checked above");
        let unmarked = pc.unmark_violated(|k, _| keys.contains(k));
        for key in unmarked {
            let ids = encode_key(&key);
            self.push_trace(TraceKind::Unmark, 0, Rat::zero(), ids);
        }
    }

    fn key_witness_violated(&mut self, key: &PenaltyKey, root: Option<Vertex>) -> bool {
        match key {
            PenaltyKey::Vertex(v) => {
                let comp = self.comp_members(*v);
                let root = root.expect("vertex keys carry a root");
                !comp.contains(&root) && self.demands.eval_g(&comp)
            }
            PenaltyKey::Pair(s, t) => {
                let comp_s = self.comp_members(*s);
                if comp_s.contains(t) {
                    return false;
                }
                let comp_t = self.comp_members(*t);
                self.demands.eval_g(&comp_s) || self.demands.eval_g(&comp_t)
            }
            PenaltyKey::Subset(mask) => {
                let mut by_comp: BTreeMap<Vertex, BTreeSet<Vertex>> = BTreeMap::new();
                for v in 0..self.graph.vertex_count() {
                    by_comp.entry(self.forest.min_of(v)).or_default().insert(v);
                }
                by_comp.values().any(|members| {
                    let cmask = members.iter().fold(0u64, |acc, v| acc | (1u64 << v));
                    cmask & !mask == 0 && self.demands.eval_g(members)
                })
            }
        }
    }

    fn work_level(&mut self, j: i32, builds: &mut Vec<(Path, u64)>) {
        self.levels.entry(j).or_default();
        let engaged_before = self.levels[&j].engaged.clone();
        let actives: Vec<Vertex> = self.active.iter().copied().collect();
        for s in actives {
            self.levels.get_mut(&j).expect("materialized").engaged.insert(s);
            let rep = self.forest.min_of(s);
            self.ledger.note_engagement(rep, j);
        }
        self.consolidate(j, &engaged_before, builds);
        self.dual_growth(j, builds);
    }

    /// Fold the current solution into the level, one edge at a time, and
    /// reconnect engaged terminals that share a moat but not a component
    /// after every fold.
    fn consolidate(&mut self, j: i32, engaged_before: &BTreeSet<Vertex>, builds: &mut Vec<(Path, u64)>) {
        let missing: Vec<EdgeId> = {
            let lvl = &self.levels[&j];
            self.solution
                .iter()
                .copied()
                .filter(|e| !lvl.absorbed.contains(e))
                .collect()
        };
        for e in missing {
            self.levels
                .get_mut(&j)
                .expect("materialized")
                .absorbed
                .insert(e);
            self.repair_pairs(j, engaged_before, builds);
        }
        // Also covers stale co-moated pairs when nothing needed folding.
        self.repair_pairs(j, engaged_before, builds);
    }

    fn repair_pairs(&mut self, j: i32, engaged_before: &BTreeSet<Vertex>, builds: &mut Vec<(Path, u64)>) {
        loop {
            let Some((s1, s2)) = self.find_repair_pair(j, engaged_before) else {
                break;
            };
            if !engaged_before.contains(&s2) {
                // Two same-step terminals were already joined by stale tight
                // edges; the loop normally pairs an active terminal with a
                // previously engaged one.
                self.ambiguity_incidents += 1;
            }
            self.build_connection(j, s1, s2, builds);
            if self.cfg.audit_per_event {
                self.audit_state(j);
            }
        }
    }

    /// Smallest active terminal sharing a moat with an engaged terminal of
    /// another component, preferring previously engaged partners.
    fn find_repair_pair(&mut self, j: i32, engaged_before: &BTreeSet<Vertex>) -> Option<(Vertex, Vertex)> {
        let lvl = &self.levels[&j];
        let engaged = lvl.engaged.clone();
        let comps = self.graph.components(&lvl.absorbed);
        let mut by_moat: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
        for &t in &engaged {
            by_moat.entry(comps.rep(t)).or_default().push(t);
        }
        for (_, members) in by_moat {
            let mut reps: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
            for &t in &members {
                reps.entry(self.forest.min_of(t)).or_default().push(t);
            }
            if reps.len() < 2 {
                continue;
            }
            let s1 = members
                .iter()
                .copied()
                .filter(|t| self.active.contains(t))
                .min();
            let Some(s1) = s1 else { continue };
            let rep1 = self.forest.min_of(s1);
            let s2 = members
                .iter()
                .copied()
                .filter(|&t| self.forest.min_of(t) != rep1)
                .min_by_key(|&t| (!engaged_before.contains(&t), t));
            if let Some(s2) = s2 {
                return Some((s1, s2));
            }
        }
        None
    }

    /// Cheapest path between two co-moated vertices through the level's
    /// stored edges, pricing solution edges at zero.
    pub fn min_extra_cost_path(&self, j: i32, s1: Vertex, s2: Vertex) -> Result<(Path, u64), EngineError> {
        let lvl = self
            .levels
            .get(&j)
            .ok_or(EngineError::NotCoMoated { s1, s2, level: j })?;
        let weight = |e: EdgeId| {
            if self.solution.contains(&e) {
                Rat::zero()
            } else {
                rat_u(self.graph.cost(e))
            }
        };
        let found = shortest_path_in(&self.graph, Some(&lvl.absorbed), s1, s2, &weight);
        match found {
            None => Err(EngineError::NotCoMoated { s1, s2, level: j }),
            Some((cost, path)) => {
                let extra = cost
                    .to_integer()
                    .to_u64()
                    .expect("path extra cost is a small nonnegative integer");
                Ok((path, extra))
            }
        }
    }

    fn build_connection(&mut self, j: i32, s1: Vertex, s2: Vertex, builds: &mut Vec<(Path, u64)>) {
        let (path, extra) = self
            .min_extra_cost_path(j, s1, s2)
            .expect("repair pairs are co-moated");
        // Merge-cost bound: the path is payable from the two endpoint
        // components' growth at this level.
        let g1 = self.ledger.growth(self.forest.min_of(s1), j);
        let g2 = self.ledger.growth(self.forest.min_of(s2), j);
        if rat_u(extra) > &g1 + &g2 {
            self.audit_failures.push(format!(
                "step {} level {j}: merge cost {extra} exceeds growth {g1} + {g2} for ({s1},{s2})",
                self.step
            ));
        }
        let new_edges: Vec<EdgeId> = path
            .edge_ids
            .iter()
            .copied()
            .filter(|e| !self.solution.contains(e))
            .collect();
        let verts = path.vertices(&self.graph);
        let involved: BTreeSet<Vertex> = verts.iter().map(|&v| self.forest.min_of(v)).collect();
        let new_rep = *involved.first().expect("path has vertices");
        self.ledger.merge_and_pay(&involved, new_rep, extra);
        for &e in &new_edges {
            let edge = self.graph.edge(e);
            self.forest.union(edge.u, edge.v);
            self.solution.insert(e);
            self.solution_cost += edge.cost;
        }
        let mut ids = vec![s1 as u64, s2 as u64];
        ids.extend(new_edges.iter().map(|&e| e as u64));
        self.push_trace(TraceKind::Build, j, Rat::zero(), ids);
        // Activity refresh for the merged component only.
        let comp = self.comp_members(new_rep);
        if !self.demands.eval_g(&comp) {
            for t in &comp {
                self.active.remove(t);
            }
        }
        builds.push((path, extra));
    }

    fn moat_views(&mut self, j: i32) -> Vec<Moat> {
        let lvl = &self.levels[&j];
        let comps = self.graph.components(&lvl.absorbed);
        let small = self.graph.vertex_count() <= 64;
        comps
            .groups()
            .into_iter()
            .map(|(rep, members)| {
                let members: BTreeSet<Vertex> = members.into_iter().collect();
                let has_active = members.iter().any(|v| self.active.contains(v));
                let max_term_dual = members
                    .iter()
                    .filter(|v| self.demands.is_terminal(**v))
                    .map(|v| lvl.dual(*v))
                    .max();
                let mask = small.then(|| members.iter().fold(0u64, |acc, v| acc | (1u64 << v)));
                Moat {
                    rep,
                    members,
                    has_active,
                    max_term_dual,
                    mask,
                }
            })
            .collect()
    }

    fn pc_views(moats: &[Moat], limit: &Rat) -> Vec<MoatView> {
        moats
            .iter()
            .map(|m| MoatView {
                rep: m.rep,
                members: m.members.clone(),
                active: m.growable(limit),
                mask: m.mask,
            })
            .collect()
    }

    fn dual_growth(&mut self, j: i32, builds: &mut Vec<(Path, u64)>) {
        let limit = pow2(j);
        loop {
            if self.active.is_empty() {
                return;
            }
            let moats = self.moat_views(j);
            // Deactivate moats whose requirement dropped to zero. In plain
            // mode this cannot happen for a moat holding an active terminal;
            // it is recorded as a violation if it ever does.
            let mut suppressed_any = false;
            for m in &moats {
                if m.has_active && !self.demands.eval_g(&m.members) {
                    if self.pc.is_none() {
                        self.audit_failures.push(format!(
                            "step {} level {j}: moat {} holds active terminals but no requirement",
                            self.step, m.rep
                        ));
                    }
                    for t in &m.members {
                        if self.active.remove(t) {
                            self.suppressed.insert(*t);
                            suppressed_any = true;
                        }
                    }
                }
            }
            if suppressed_any {
                continue;
            }
            if self.cfg.audit_per_event {
                self.audit_moat_structure(j, &moats);
            }
            let growable: Vec<usize> = moats
                .iter()
                .enumerate()
                .filter(|(_, m)| m.growable(&limit))
                .map(|(i, _)| i)
                .collect();
            if growable.is_empty() {
                // Remaining active terminals are stuck at this level's
                // limit; they continue on the next level.
                return;
            }

            // Minimum delta over limit, edge-tight, and penalty events.
            let mut delta: Option<Rat> = None;
            let mut consider = |d: Rat| {
                if delta.as_ref().is_none_or(|cur| d < *cur) {
                    delta = Some(d);
                }
            };
            for &i in &growable {
                let slack = &limit
                    - moats[i]
                        .max_term_dual
                        .as_ref()
                        .expect("active moats hold terminals");
                consider(slack);
            }
            let moat_of: BTreeMap<Vertex, usize> = moats
                .iter()
                .enumerate()
                .flat_map(|(i, m)| m.members.iter().map(move |&v| (v, i)))
                .collect();
            let growable_set: BTreeSet<usize> = growable.iter().copied().collect();
            let mut edge_rates: Vec<(EdgeId, u64)> = Vec::new();
            {
                let lvl = &self.levels[&j];
                for e in 0..self.graph.edge_count() {
                    if lvl.absorbed.contains(&e) {
                        continue;
                    }
                    let edge = self.graph.edge(e);
                    let (mu, mv) = (moat_of[&edge.u], moat_of[&edge.v]);
                    if mu == mv {
                        continue;
                    }
                    let rate = u64::from(growable_set.contains(&mu)) + u64::from(growable_set.contains(&mv));
                    if rate == 0 {
                        continue;
                    }
                    let slack = rat_u(edge.cost) - lvl.load(e);
                    consider(slack / rat_u(rate));
                    edge_rates.push((e, rate));
                }
            }
            let pc_views = Self::pc_views(&moats, &limit);
            if let Some(pc) = &self.pc {
                if let Some(d) = pc.min_delta(j, &pc_views) {
                    consider(d);
                }
            }
            let delta = delta.expect("growable moats imply a limit event");

            self.apply_delta(j, &moats, &growable, &edge_rates, &pc_views, &delta, &limit);

            // Events at the new time, in tie order: edge-tight, connect,
            // penalty-tight, limit. Each tight edge is absorbed one at a
            // time and followed by its own connect consequences, so chained
            // merges never pair terminals across more than one fresh edge.
            let tightened: Vec<EdgeId> = {
                let lvl = &self.levels[&j];
                edge_rates
                    .iter()
                    .map(|(e, _)| *e)
                    .filter(|&e| lvl.load(e) == rat_u(self.graph.cost(e)))
                    .collect()
            };
            for e in tightened {
                self.levels
                    .get_mut(&j)
                    .expect("materialized")
                    .absorbed
                    .insert(e);
                self.push_trace(TraceKind::EdgeTight, j, Rat::zero(), vec![e as u64]);
                loop {
                    let Some((s1, s2)) = self.find_connect_pair(j) else {
                        break;
                    };
                    self.push_trace(TraceKind::Connect, j, Rat::zero(), vec![s1 as u64, s2 as u64]);
                    self.build_connection(j, s1, s2, builds);
                }
            }
            if self.pc.is_some() {
                let fresh = self.moat_views(j);
                let fresh_views = Self::pc_views(&fresh, &limit);
                let terminals = self.demands.terminals().clone();
                let marked = {
                    let pc = self.pc.as_mut().expect("prize-collecting state");
                    let tight = pc.tight_families(j, &fresh_views, &terminals);
                    for fam in &tight {
                        let lhs = match &fam.key {
                            PenaltyKey::Subset(mask) => pc.submod_lhs(j, *mask),
                            key => pc.sep_dual(j, key),
                        };
                        pc.mark(fam, j, lhs);
                    }
                    tight
                };
                for fam in marked {
                    for t in &fam.terminals {
                        self.active.remove(t);
                    }
                    self.push_trace(TraceKind::PenaltyMark, j, Rat::zero(), encode_key(&fam.key));
                }
            }
            for &i in &growable {
                let reached = moats[i]
                    .max_term_dual
                    .as_ref()
                    .expect("active moats hold terminals")
                    + &delta;
                if reached == limit {
                    self.push_trace(TraceKind::Limit, j, Rat::zero(), vec![moats[i].rep as u64]);
                }
            }
            if self.cfg.audit_per_event {
                self.audit_state(j);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_delta(
        &mut self,
        j: i32,
        moats: &[Moat],
        growable: &[usize],
        edge_rates: &[(EdgeId, u64)],
        pc_views: &[MoatView],
        delta: &Rat,
        limit: &Rat,
    ) {
        if delta.is_zero() {
            return;
        }
        for &i in growable {
            let m = &moats[i];
            // The moat's engaged terminals live in one component; credit it.
            let engaged_member = {
                let lvl = &self.levels[&j];
                m.members
                    .iter()
                    .copied()
                    .find(|v| lvl.engaged.contains(v))
                    .expect("active moats hold engaged terminals")
            };
            let credited = self.forest.min_of(engaged_member);
            {
                let lvl = self.levels.get_mut(&j).expect("materialized");
                for &v in &m.members {
                    let slot = lvl.vertex_dual.entry(v).or_insert_with(Rat::zero);
                    *slot += delta;
                }
                lvl.dual_total += delta;
            }
            for &v in &m.members {
                let d = self.levels[&j].dual(v);
                if &d > limit {
                    self.audit_failures.push(format!(
                        "step {} level {j}: vertex {v} accumulation {d} beyond the limit",
                        self.step
                    ));
                }
            }
            self.ledger.credit_growth(credited, j, delta);
            self.growth_log.push(GrowthRecord {
                step: self.step,
                level: j,
                moat: m.rep,
                credited_component: credited,
                delta: delta.clone(),
            });
            if matches!(self.cfg.trace, TraceLevel::Full) {
                self.trace.push(TraceRecord {
                    step: self.step,
                    level: j,
                    kind: TraceKind::Grow,
                    delta: delta.clone(),
                    ids: vec![m.rep as u64, credited as u64],
                });
            }
        }
        {
            let lvl = self.levels.get_mut(&j).expect("materialized");
            for &(e, rate) in edge_rates {
                let slot = lvl.edge_load.entry(e).or_insert_with(Rat::zero);
                *slot += rat_u(rate) * delta;
            }
        }
        for &(e, _) in edge_rates {
            let load = self.levels[&j].load(e);
            if load > rat_u(self.graph.cost(e)) {
                self.audit_failures.push(format!(
                    "step {} level {j}: edge {e} load {load} beyond its cost",
                    self.step
                ));
            }
        }
        if let Some(pc) = &mut self.pc {
            pc.apply_growth(j, pc_views, delta);
        }
    }

    /// A newly connected pair in the growth loop: an active terminal and an
    /// engaged terminal sharing a moat but not a component.
    fn find_connect_pair(&mut self, j: i32) -> Option<(Vertex, Vertex)> {
        let lvl = &self.levels[&j];
        let engaged = lvl.engaged.clone();
        let comps = self.graph.components(&lvl.absorbed);
        let mut by_moat: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
        for &t in &engaged {
            by_moat.entry(comps.rep(t)).or_default().push(t);
        }
        for (_, members) in by_moat {
            let s1 = members
                .iter()
                .copied()
                .filter(|t| self.active.contains(t))
                .min();
            let Some(s1) = s1 else { continue };
            let rep1 = self.forest.min_of(s1);
            let s2 = members
                .iter()
                .copied()
                .filter(|&t| self.forest.min_of(t) != rep1)
                .min();
            if let Some(s2) = s2 {
                return Some((s1, s2));
            }
        }
        None
    }

    /// Structural assertions before a growth delta: engaged terminals of a
    /// moat in one component, active terminals inside growable or capped
    /// moats of positive requirement.
    fn audit_moat_structure(&mut self, j: i32, moats: &[Moat]) {
        let engaged = self.levels[&j].engaged.clone();
        for m in moats {
            let reps: BTreeSet<Vertex> = m
                .members
                .iter()
                .filter(|v| engaged.contains(v))
                .map(|&v| self.forest.min_of(v))
                .collect();
            if reps.len() > 1 {
                self.audit_failures.push(format!(
                    "step {} level {j}: moat {} spreads engaged terminals over {} components",
                    self.step,
                    m.rep,
                    reps.len()
                ));
            }
            if m.has_active && !self.demands.eval_g(&m.members) {
                self.audit_failures.push(format!(
                    "step {} level {j}: active terminal in a satisfied moat {}",
                    self.step, m.rep
                ));
            }
        }
    }

    /// Conservation, account bounds, growth limits, and penalty-constraint
    /// feasibility, after every event application.
    fn audit_state(&mut self, _j: i32) {
        self.audit_events += 1;
        let total = self.sum_all_duals();
        if let Err(e) = self.ledger.check_conservation(self.solution_cost, &total) {
            self.audit_failures.push(format!("step {}: {e}", self.step));
        }
        if let Err(e) = self.ledger.check_account_lower_bound(self.cfg.j_floor) {
            self.audit_failures.push(format!("step {}: {e}", self.step));
        }
        if let Err(e) = self.ledger.check_growth_limits() {
            self.audit_failures.push(format!("step {}: {e}", self.step));
        }
        if let Some(pc) = &self.pc {
            if let Err(e) = pc.check_sep_feasible() {
                self.audit_failures.push(format!("step {}: {e}", self.step));
            }
        }
    }

    fn step_end_audit(&mut self) {
        // Feasibility: no violated component may survive a completed step
        // unless its terminals are marked or were deactivated by a
        // requirement that vanished at moat scale (prize collecting).
        let viol = self.demands.violated_components(&self.graph, &self.solution);
        if self.pc.is_none() {
            if let Some(c) = viol.first() {
                self.audit_failures.push(format!(
                    "step {}: violated component {} after completion",
                    self.step,
                    crate::graph::format_vertex_set(c)
                ));
            }
        } else if self.graph.vertex_count() <= 10 {
            let witness = self.marked_witness_sets();
            match crate::pc::check_component_closure(&self.graph, &self.demands, &self.solution, &witness)
            {
                Ok(Ok(())) => {}
                Ok(Err(e)) => self.audit_failures.push(format!("step {}: {e}", self.step)),
                Err(e) => self.audit_failures.push(format!("step {}: {e}", self.step)),
            }
        }
        if self.cfg.audit_cross_check {
            self.cross_check();
        }
        if self.cfg.audit_per_event {
            self.audit_state(0);
        }
    }

    /// Witness sets of currently marked keys, as concrete vertex sets.
    pub fn marked_witness_sets(&mut self) -> Vec<BTreeSet<Vertex>> {
        let Some(pc) = &self.pc else {
            return Vec::new();
        };
        let keys: Vec<PenaltyKey> = pc.marked_keys().copied().collect();
        let mut out = Vec::new();
        for key in keys {
            match key {
                PenaltyKey::Vertex(v) => out.push(self.comp_members(v)),
                PenaltyKey::Pair(s, t) => {
                    out.push(self.comp_members(s));
                    out.push(self.comp_members(t));
                }
                PenaltyKey::Subset(mask) => {
                    out.push((0..self.graph.vertex_count()).filter(|v| mask & (1u64 << v) != 0).collect());
                }
            }
        }
        out
    }

    /// Recompute-equivalence checks: the incremental active set matches a
    /// from-scratch recomputation, and credited growth never exceeds the
    /// engaged terminals' dual accumulation.
    fn cross_check(&mut self) {
        let incremental = self.active.clone();
        let suppressed = self.suppressed.clone();
        self.recompute_active();
        let recomputed = self.active.clone();
        let expected: BTreeSet<Vertex> = recomputed
            .difference(&suppressed)
            .copied()
            .collect();
        if incremental != expected {
            self.audit_failures.push(format!(
                "step {}: incremental activity diverged from recomputation",
                self.step
            ));
        }
        self.active = incremental;
        let records: Vec<(Vertex, Vec<i32>)> = self
            .ledger
            .records()
            .map(|(rep, rec)| (*rep, rec.growth.keys().copied().collect()))
            .collect();
        for (rep, levels) in records {
            for j in levels {
                let engaged = self.engaged(j);
                let lvl = &self.levels[&j];
                let members: Vec<Vertex> = (0..self.graph.vertex_count())
                    .filter(|&v| self.forest.min_of(v) == rep)
                    .collect();
                let max_dual = members
                    .iter()
                    .filter(|v| engaged.contains(v))
                    .map(|&v| lvl.dual(v))
                    .max()
                    .unwrap_or_else(Rat::zero);
                if self.ledger.growth(rep, j) > max_dual {
                    self.audit_failures.push(format!(
                        "step {}: component {rep} level {j} credited growth beyond engaged duals",
                        self.step
                    ));
                }
            }
        }
    }

    fn push_trace(&mut self, kind: TraceKind, level: i32, delta: Rat, ids: Vec<u64>) {
        if matches!(self.cfg.trace, TraceLevel::Off) {
            return;
        }
        self.trace.push(TraceRecord {
            step: self.step,
            level,
            kind,
            delta,
            ids,
        });
    }
}

fn encode_key(key: &PenaltyKey) -> Vec<u64> {
    match key {
        PenaltyKey::Vertex(v) => vec![0, *v as u64],
        PenaltyKey::Pair(s, t) => vec![1, *s as u64, *t as u64],
        PenaltyKey::Subset(mask) => vec![2, *mask],
    }
}

fn check_penalty_consistency(r: &Request, pr: &PenaltyRequest) -> Result<(), EngineError> {
    let ok = match (r, pr) {
        (Request::SteinerPair { s, t }, PenaltyRequest::Vertex { v, root, .. }) => {
            (s, t) == (v, root) || (s, t) == (root, v)
        }
        (Request::SteinerPair { s, t }, PenaltyRequest::Pair { s: a, t: b, .. }) => {
            (s, t) == (a, b) || (s, t) == (b, a)
        }
        (Request::Spanning { active_set }, PenaltyRequest::Submodular(o)) => {
            let mut want: BTreeSet<Vertex> = o.members().iter().copied().collect();
            want.insert(o.root());
            *active_set == want
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(EngineError::InconsistentPenalty(format!(
            "request {r:?} does not match penalty {pr:?}"
        )))
    }
}

/// `ceil(log2 n)` for `n >= 1`.
pub fn ceil_log2(n: u64) -> u32 {
    debug_assert!(n >= 1);
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat;

    fn engine_on(edges: &[(u32, u32, u64)], n: u32) -> Engine {
        let g = Graph::new(n, edges).unwrap();
        Engine::new(
            g,
            EngineConfig {
                trace: TraceLevel::Full,
                audit_cross_check: true,
                ..EngineConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn fresh_engine_is_empty() {
        let eng = engine_on(&[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, 1)], 4);
        assert!(eng.solution().is_empty());
        assert_eq!(eng.sum_all_duals(), Rat::zero());
        let empty = engine_on(&[], 1);
        assert!(empty.solution().is_empty());
        let bad = Engine::new(
            Graph::new(1, &[]).unwrap(),
            EngineConfig {
                j_floor: 0,
                ..EngineConfig::default()
            },
        );
        assert!(matches!(bad, Err(EngineError::Config(_))));
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_log2(8), 3);
    }

    #[test]
    fn four_cycle_pair_buys_lexicographic_path() {
        let mut eng = engine_on(&[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, 1)], 4);
        let report = eng.submit(Request::steiner_pair(0, 2).unwrap()).unwrap();
        assert_eq!(report.cumulative_cost, 2);
        assert_eq!(eng.solution(), &BTreeSet::from([0, 1]));
        assert!(report.audit.pass(), "{:?}", report.audit.failures);
        // Second pair: one more unit edge.
        let report = eng.submit(Request::steiner_pair(0, 3).unwrap()).unwrap();
        assert_eq!(report.cumulative_cost, 3);
        assert!(report.audit.pass(), "{:?}", report.audit.failures);
        assert!(report.max_level_used.unwrap() <= 1);
    }

    #[test]
    fn line_instance_reproduces_level_narrative() {
        // Costs 2,1,2 on a path with an even-parity requirement over all
        // four vertices: middle edge at level -1, outer path at level 1.
        let mut eng = engine_on(&[(0, 1, 2), (1, 2, 1), (2, 3, 2)], 4);
        let members = BTreeSet::from([0, 1, 2, 3]);
        let report = eng.submit(Request::parity(members, 2).unwrap()).unwrap();
        assert_eq!(report.cumulative_cost, 5);
        assert!(report.audit.pass(), "{:?}", report.audit.failures);
        let builds: Vec<(i32, Vec<u64>)> = eng
            .trace()
            .iter()
            .filter(|t| t.kind == TraceKind::Build)
            .map(|t| (t.level, t.ids.clone()))
            .collect();
        assert_eq!(builds.len(), 2);
        assert_eq!(builds[0].0, -1);
        assert_eq!(builds[0].1[2..], [1]);
        assert_eq!(builds[1].0, 1);
        assert_eq!(builds[1].1[2..], [0, 2]);
        // Level 0 saw limits but no tightening.
        assert!(eng
            .trace()
            .iter()
            .all(|t| !(t.level == 0 && t.kind == TraceKind::EdgeTight)));
        assert!(eng
            .trace()
            .iter()
            .any(|t| t.level == 0 && t.kind == TraceKind::Limit));
        assert_eq!(report.max_level_used, Some(1));
    }

    #[test]
    fn infeasible_plain_demand_is_rejected_upfront() {
        let mut eng = engine_on(&[(0, 1, 1)], 3);
        let err = eng.submit(Request::steiner_pair(0, 2).unwrap()).unwrap_err();
        assert!(matches!(err, EngineError::InfeasibleDemand { .. }));
        // The engine stays usable.
        let report = eng.submit(Request::steiner_pair(0, 1).unwrap()).unwrap();
        assert_eq!(report.cumulative_cost, 1);
    }

    #[test]
    fn satisfied_request_costs_nothing() {
        let mut eng = engine_on(&[(0, 1, 1)], 2);
        eng.submit(Request::steiner_pair(0, 1).unwrap()).unwrap();
        let report = eng.submit(Request::steiner_pair(0, 1).unwrap()).unwrap();
        assert_eq!(report.cumulative_cost, 1);
        assert_eq!(report.max_level_used, None);
        assert!(report.edges_built.is_empty());
    }

    #[test]
    fn pcst_small_penalty_pays_instead_of_connecting() {
        let mut eng = engine_on(&[(0, 1, 4)], 2);
        let report = eng
            .submit_pc(
                Request::steiner_pair(1, 0).unwrap(),
                PenaltyRequest::vertex(1, 0, 1).unwrap(),
            )
            .unwrap();
        assert_eq!(report.cumulative_cost, 0);
        assert_eq!(report.penalty_paid, Some(1));
        assert_eq!(report.objective, Some(1));
        assert!(report.audit.pass(), "{:?}", report.audit.failures);
        // The constraint went tight at level 0.
        assert!(eng
            .trace()
            .iter()
            .any(|t| t.kind == TraceKind::PenaltyMark && t.level == 0));
    }

    #[test]
    fn pcst_large_penalty_connects() {
        let mut eng = engine_on(&[(0, 1, 3)], 2);
        let report = eng
            .submit_pc(
                Request::steiner_pair(1, 0).unwrap(),
                PenaltyRequest::vertex(1, 0, 100).unwrap(),
            )
            .unwrap();
        assert_eq!(report.cumulative_cost, 3);
        assert_eq!(report.penalty_paid, Some(0));
        assert_eq!(report.objective, Some(3));
        assert!(report.audit.pass(), "{:?}", report.audit.failures);
    }

    #[test]
    fn pc_pair_in_disconnected_graph_pays() {
        let mut eng = engine_on(&[(0, 1, 1)], 4);
        let report = eng
            .submit_pc(
                Request::steiner_pair(2, 3).unwrap(),
                PenaltyRequest::pair(2, 3, 5).unwrap(),
            )
            .unwrap();
        assert_eq!(report.cumulative_cost, 0);
        assert_eq!(report.penalty_paid, Some(5));
        assert!(report.audit.pass(), "{:?}", report.audit.failures);
    }

    #[test]
    fn penalty_is_paid_once_and_kept_after_reconnection() {
        // Step 1 marks the vertex for penalty 1; step 2 raises the stake
        // and connects. The step-1 payment stays in the objective.
        let mut eng = engine_on(&[(0, 1, 4)], 2);
        eng.submit_pc(
            Request::steiner_pair(1, 0).unwrap(),
            PenaltyRequest::vertex(1, 0, 1).unwrap(),
        )
        .unwrap();
        let report = eng
            .submit_pc(
                Request::steiner_pair(1, 0).unwrap(),
                PenaltyRequest::vertex(1, 0, 5).unwrap(),
            )
            .unwrap();
        assert_eq!(report.cumulative_cost, 4);
        assert_eq!(report.penalty_paid, Some(0));
        assert_eq!(report.objective, Some(5));
        assert!(report.audit.pass(), "{:?}", report.audit.failures);
        assert!(eng.trace().iter().any(|t| t.kind == TraceKind::Unmark));
    }

    #[test]
    fn traces_are_deterministic() {
        let build = || {
            let mut eng = engine_on(&[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, 1)], 4);
            eng.submit(Request::steiner_pair(0, 2).unwrap()).unwrap();
            eng.submit(Request::steiner_pair(0, 3).unwrap()).unwrap();
            eng.trace().to_vec()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn dual_state_matches_hand_computation_on_unit_edge() {
        let mut eng = engine_on(&[(0, 1, 1)], 2);
        eng.submit(Request::steiner_pair(0, 1).unwrap()).unwrap();
        // Both terminals grew to 1/2 at level -1 and the edge went tight.
        assert_eq!(eng.vertex_dual(-1, 0), pow2(-1));
        assert_eq!(eng.edge_load(-1, 0), rat(1));
        assert_eq!(eng.level_dual_total(-1), rat(1));
        assert_eq!(eng.solution_cost(), 1);
    }
}
