//! Shared runners: drive an instance through the engine, attach reference
//! bounds, format deterministic report rows, and run the full verification
//! battery used by the `verify` subcommand.

use std::fmt;
use std::fmt::Write as _;

use onforest::accounting::{check_competitive_bound, check_cost_vs_opt_exact, check_dual_sum_bound};
use onforest::bounds::{exact_opt, exact_opt_pc, gw_offline, BoundsError, OptValue};
use onforest::demands::{DemandState, Request};
use onforest::engine::{ceil_log2, Engine, EngineConfig, EngineError, StepReport};
use onforest::graph::GraphError;
use onforest::pc::PenaltyRequest;
use onforest::{rat_u, Rat};

use crate::instance::{InstanceFile, ParseError, StepBuildError};

#[derive(Debug)]
pub enum WorkbenchError {
    Io(std::io::Error),
    Parse(ParseError),
    Build(StepBuildError),
    Graph(GraphError),
    Engine(EngineError),
    Bounds(BoundsError),
    Usage(String),
    InvariantViolation(String),
}

impl fmt::Display for WorkbenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkbenchError::Io(e) => write!(f, "io error: {e}"),
            WorkbenchError::Parse(e) => write!(f, "parse error: {e}"),
            WorkbenchError::Build(e) => write!(f, "bad step: {e}"),
            WorkbenchError::Graph(e) => write!(f, "bad graph: {e}"),
            WorkbenchError::Engine(e) => write!(f, "engine error: {e}"),
            WorkbenchError::Bounds(e) => write!(f, "bounds error: {e}"),
            WorkbenchError::Usage(s) => write!(f, "usage error: {s}"),
            WorkbenchError::InvariantViolation(s) => write!(f, "invariant violation: {s}"),
        }
    }
}

impl WorkbenchError {
    /// Exit codes: 1 usage/parse, 2 infeasible, 3 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkbenchError::Engine(EngineError::InfeasibleDemand { .. })
            | WorkbenchError::Bounds(BoundsError::InfeasibleDemand)
            | WorkbenchError::Bounds(BoundsError::Unreachable { .. }) => 2,
            WorkbenchError::Engine(EngineError::LevelCapExceeded { .. })
            | WorkbenchError::InvariantViolation(_) => 3,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for WorkbenchError {
    fn from(e: std::io::Error) -> Self {
        WorkbenchError::Io(e)
    }
}

impl From<ParseError> for WorkbenchError {
    fn from(e: ParseError) -> Self {
        WorkbenchError::Parse(e)
    }
}

impl From<StepBuildError> for WorkbenchError {
    fn from(e: StepBuildError) -> Self {
        WorkbenchError::Build(e)
    }
}

impl From<GraphError> for WorkbenchError {
    fn from(e: GraphError) -> Self {
        WorkbenchError::Graph(e)
    }
}

impl From<EngineError> for WorkbenchError {
    fn from(e: EngineError) -> Self {
        WorkbenchError::Engine(e)
    }
}

impl From<BoundsError> for WorkbenchError {
    fn from(e: BoundsError) -> Self {
        WorkbenchError::Bounds(e)
    }
}

/// Exact rational as a bit-stable `num/den` string.
pub fn rat_str(r: &Rat) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Exact ratio of two integers in lowest terms.
pub fn ratio_str(num: u64, den: u64) -> String {
    rat_str(&(rat_u(num) / rat_u(den.max(1))))
}

#[derive(Debug, Clone)]
pub struct StepRow {
    pub step: u32,
    pub added_cost: u64,
    pub cumulative_cost: u64,
    pub penalty_paid: Option<u64>,
    pub objective: u64,
    pub y_max: Rat,
    /// Exact optimum when the instance is small enough.
    pub opt: Option<u64>,
    pub max_level: Option<i32>,
    pub audit_pass: bool,
}

impl StepRow {
    /// `objective / opt`, when the exact optimum is known.
    pub fn ratio(&self) -> Option<Rat> {
        let opt = self.opt?;
        if opt == 0 {
            return Some(rat_u(1));
        }
        Some(rat_u(self.objective) / rat_u(opt))
    }

    /// `objective / y_max`: an upper bound on the true ratio, reported when
    /// the exact optimum is out of reach.
    pub fn ratio_upper(&self) -> Option<Rat> {
        if self.y_max == rat_u(0) {
            return None;
        }
        Some(rat_u(self.objective) / self.y_max.clone())
    }
}

pub struct RunOutcome {
    pub rows: Vec<StepRow>,
    pub reports: Vec<StepReport>,
    pub engine: Engine,
    pub steps: Vec<(Request, Option<PenaltyRequest>)>,
}

/// Run every step of an instance through the engine, optionally attaching
/// the exact per-step optimum.
pub fn run_instance(
    inst: &InstanceFile,
    cfg: EngineConfig,
    with_opt: bool,
) -> Result<RunOutcome, WorkbenchError> {
    let graph = inst.graph()?;
    let mut engine = Engine::new(graph.clone(), cfg)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut steps: Vec<(Request, Option<PenaltyRequest>)> = Vec::new();
    let mut prev_cost = 0u64;
    let pc_instance = inst.is_prize_collecting();
    for spec in &inst.steps {
        let (request, penalty) = inst.build_step(spec)?;
        steps.push((request.clone(), penalty.clone()));
        let report = match penalty {
            Some(p) => engine.submit_pc(request, p)?,
            None => engine.submit(request)?,
        };
        let opt = if with_opt {
            let value = if pc_instance {
                exact_opt_pc(&graph, &steps)
            } else {
                let mut d = DemandState::new();
                for (r, _) in &steps {
                    d.push(r.clone());
                }
                exact_opt(&graph, &d)
            };
            match value {
                Ok(OptValue::Cost(c)) => Some(c),
                Ok(OptValue::Infeasible) => None,
                Err(BoundsError::TooLarge { .. }) => None,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        rows.push(StepRow {
            step: report.step,
            added_cost: report.cumulative_cost - prev_cost,
            cumulative_cost: report.cumulative_cost,
            penalty_paid: report.penalty_paid,
            objective: report.objective.unwrap_or(report.cumulative_cost),
            y_max: report.y_max_total.clone(),
            opt,
            max_level: report.max_level_used,
            audit_pass: report.audit.pass(),
        });
        prev_cost = report.cumulative_cost;
        reports.push(report);
    }
    Ok(RunOutcome {
        rows,
        reports,
        engine,
        steps,
    })
}

pub fn format_run_rows(rows: &[StepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# step\tadded\tcumulative\tpenalty\tobjective\ty_max\topt\tratio\tmax_level\taudit"
    );
    for r in rows {
        let penalty = r
            .penalty_paid
            .map_or_else(|| "-".to_string(), |p| p.to_string());
        let opt = r.opt.map_or_else(|| "-".to_string(), |o| o.to_string());
        let ratio = match (r.ratio(), r.ratio_upper()) {
            (Some(x), _) => rat_str(&x),
            (None, Some(up)) => format!("<={}", rat_str(&up)),
            (None, None) => "-".to_string(),
        };
        let level = r
            .max_level
            .map_or_else(|| "-".to_string(), |l| l.to_string());
        let audit = if r.audit_pass { "ok" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.step,
            r.added_cost,
            r.cumulative_cost,
            penalty,
            r.objective,
            rat_str(&r.y_max),
            opt,
            ratio,
            level,
            audit
        );
    }
    out
}

/// Aggregate ratio statistics over rows with an exact optimum.
pub fn summarize(rows: &[StepRow]) -> String {
    let mut count = 0u64;
    let mut sum = rat_u(0);
    let mut max: Option<Rat> = None;
    let mut audit_ok = true;
    for r in rows {
        audit_ok &= r.audit_pass;
        if let Some(ratio) = r.ratio() {
            count += 1;
            sum += &ratio;
            if max.as_ref().is_none_or(|m| ratio > *m) {
                max = Some(ratio);
            }
        }
    }
    let mean = if count > 0 {
        rat_str(&(sum / rat_u(count)))
    } else {
        "-".to_string()
    };
    let max = max.map_or_else(|| "-".to_string(), |m| rat_str(&m));
    format!(
        "# steps_with_opt={count} mean_ratio={mean} max_ratio={max} audit={}",
        if audit_ok { "ok" } else { "FAIL" }
    )
}

/// Serialize the engine trace, one event per line, exact deltas.
pub fn format_trace(engine: &Engine) -> String {
    let mut out = String::new();
    for t in engine.trace() {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}",
            t.step,
            t.level,
            t.kind.name(),
            rat_str(&t.delta)
        );
        for id in &t.ids {
            let _ = write!(out, "\t{id}");
        }
        let _ = writeln!(out);
    }
    out
}

/// Full verification battery, step by step: engine invariants, the level
/// cap, dual-sum and competitive bounds, and the reference-oracle ordering.
/// Returns the human-readable check lines and the first failure, if any.
pub fn verify_instance(inst: &InstanceFile) -> Result<(Vec<String>, Option<String>), WorkbenchError> {
    let cfg = EngineConfig {
        audit_per_event: true,
        audit_cross_check: true,
        ..EngineConfig::default()
    };
    let graph = inst.graph()?;
    let pc_instance = inst.is_prize_collecting();
    let mut engine = Engine::new(graph.clone(), cfg)?;
    let mut steps: Vec<(Request, Option<PenaltyRequest>)> = Vec::new();
    let mut demands = DemandState::new();
    let mut lines = Vec::new();
    let mut first_failure: Option<String> = None;
    let mut check = |name: String, ok: bool, lines: &mut Vec<String>| {
        lines.push(format!("{}\t{name}", if ok { "ok" } else { "FAIL" }));
        if !ok && first_failure.is_none() {
            first_failure = Some(name);
        }
    };
    let cap = ceil_log2(graph.max_finite_distance().max(1)) as i32;
    for spec in &inst.steps {
        let (request, penalty) = inst.build_step(spec)?;
        steps.push((request.clone(), penalty.clone()));
        demands.push(request.clone());
        let report = match penalty {
            Some(p) => engine.submit_pc(request, p)?,
            None => engine.submit(request)?,
        };
        let step = report.step;
        check(
            format!("step {step}: invariant audit ({} events)", report.audit.events_checked),
            report.audit.pass(),
            &mut lines,
        );
        if !pc_instance {
            if let Some(level) = report.max_level_used {
                check(
                    format!("step {step}: top level {level} within cap {cap}"),
                    level <= cap,
                    &mut lines,
                );
            }
        }
        let terminals = demands.terminals().len() as u64;
        if terminals == 0 {
            continue;
        }
        let sum = engine.sum_all_duals();
        let y_max = engine.y_max_total();
        check(
            format!("step {step}: dual sum within the level-count bound"),
            check_dual_sum_bound(&sum, &y_max, terminals).is_ok(),
            &mut lines,
        );
        let objective = engine.objective();
        check(
            format!("step {step}: objective within the competitive bound"),
            check_competitive_bound(&rat_u(objective), &y_max, terminals, pc_instance).is_ok(),
            &mut lines,
        );
        let opt_value = if pc_instance {
            exact_opt_pc(&graph, &steps)
        } else {
            exact_opt(&graph, &demands)
        };
        match opt_value {
            Ok(OptValue::Cost(opt)) => {
                if pc_instance {
                    check(
                        format!("step {step}: objective {objective} at least the optimum {opt}"),
                        objective >= opt,
                        &mut lines,
                    );
                } else {
                    check(
                        format!("step {step}: cost {} against optimum {opt}", engine.solution_cost()),
                        check_cost_vs_opt_exact(engine.solution_cost(), opt, terminals),
                        &mut lines,
                    );
                    check(
                        format!("step {step}: dual lower bound below optimum {opt}"),
                        y_max <= rat_u(opt),
                        &mut lines,
                    );
                    let gw = gw_offline(&graph, &demands)?;
                    check(
                        format!("step {step}: moat-growing cost {} within [opt, 2*opt]", gw.cost),
                        gw.cost >= opt && gw.cost <= 2 * opt,
                        &mut lines,
                    );
                    check(
                        format!("step {step}: moat-growing dual below optimum"),
                        gw.dual_value <= rat_u(opt),
                        &mut lines,
                    );
                }
            }
            Ok(OptValue::Infeasible) => {}
            Err(BoundsError::TooLarge { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok((lines, first_failure))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_cycle_instance() -> InstanceFile {
        InstanceFile::parse(
            "graph 4\nedge 0 1 1\nedge 1 2 1\nedge 2 3 1\nedge 3 0 1\nstep pair 0 2\nstep pair 0 3\n",
        )
        .unwrap()
    }

    #[test]
    fn four_cycle_rows_match_expected_costs() {
        let outcome = run_instance(&four_cycle_instance(), EngineConfig::default(), true).unwrap();
        assert_eq!(outcome.rows.len(), 2);
        assert_eq!(outcome.rows[0].cumulative_cost, 2);
        assert_eq!(outcome.rows[0].opt, Some(2));
        assert_eq!(outcome.rows[1].cumulative_cost, 3);
        assert_eq!(outcome.rows[1].opt, Some(2));
        assert_eq!(outcome.rows[1].ratio().unwrap(), rat_u(3) / rat_u(2));
        assert!(outcome.rows.iter().all(|r| r.audit_pass));
    }

    #[test]
    fn verify_passes_on_clean_instance() {
        let (lines, failure) = verify_instance(&four_cycle_instance()).unwrap();
        assert!(failure.is_none(), "{lines:?}");
        assert!(!lines.is_empty());
    }

    #[test]
    fn formatting_is_stable() {
        let outcome = run_instance(&four_cycle_instance(), EngineConfig::default(), true).unwrap();
        let a = format_run_rows(&outcome.rows) + &summarize(&outcome.rows);
        let outcome2 = run_instance(&four_cycle_instance(), EngineConfig::default(), true).unwrap();
        let b = format_run_rows(&outcome2.rows) + &summarize(&outcome2.rows);
        assert_eq!(a, b);
        assert!(a.contains("3/2"));
    }

    #[test]
    fn trace_serialization_uses_exact_fractions() {
        let cfg = EngineConfig {
            trace: onforest::engine::TraceLevel::Full,
            ..EngineConfig::default()
        };
        let outcome = run_instance(&four_cycle_instance(), cfg, false).unwrap();
        let text = format_trace(&outcome.engine);
        assert!(text.contains("grow"));
        assert!(text.contains("1/2"));
        assert!(!text.contains('.'));
    }
}
