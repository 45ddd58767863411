//! Command-line workbench for the online constrained-forest solver.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 infeasible demand,
//! 3 invariant violation.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use onforest::bounds::{exact_opt, exact_opt_pc, BoundsError, GreedyGst, OnlineSolver, OptValue};
use onforest::demands::DemandState;
use onforest::engine::{EngineConfig, TraceLevel};

use onforest_workbench::adversary::adversary_stream;
use onforest_workbench::bench::{
    format_run_rows, format_trace, ratio_str, run_instance, summarize, verify_instance, StepRow,
    WorkbenchError,
};
use onforest_workbench::gen::{gen_diamond, gen_random, GenMode};
use onforest_workbench::instance::InstanceFile;

#[derive(Parser)]
#[command(name = "onforest", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the online solver over an instance file, printing one row per
    /// step.
    Run {
        instance: PathBuf,
        /// Force the prize-collecting code path (implied by pc_* steps).
        #[arg(long)]
        pc: bool,
        /// Write the full event trace to this path.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Enable the expensive cross-checking audit.
        #[arg(long)]
        audit: bool,
    },
    /// Print the exact offline optimum after each step of an instance.
    Opt { instance: PathBuf },
    /// Generate instances and benchmark the solver against the oracles.
    Bench(BenchArgs),
    /// Generate an instance file.
    Gen(GenArgs),
    /// Run the full invariant and oracle battery over an instance.
    Verify { instance: PathBuf },
}

#[derive(Args)]
struct BenchArgs {
    /// Generator family: `diamond` or `random`.
    #[arg(long = "gen")]
    generator: String,
    /// Diamond: largest depth to play.
    #[arg(long, default_value_t = 4)]
    max_depth: u32,
    /// Random: number of seeded instances.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Random: first seed.
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long, default_value_t = 8)]
    n: u32,
    #[arg(long, default_value_t = 0.3)]
    density: f64,
    #[arg(long, default_value_t = 4)]
    steps: u32,
    /// Random: gst, parity, p2p, pcst, or pc_gst.
    #[arg(long, default_value = "gst")]
    mode: String,
    /// Also run the greedy online baselines where applicable.
    #[arg(long)]
    baselines: bool,
}

#[derive(Args)]
struct GenArgs {
    /// diamond, gst, parity, p2p, pcst, or pc_gst.
    #[arg(long)]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    n: u32,
    #[arg(long, default_value_t = 0.3)]
    density: f64,
    #[arg(long, default_value_t = 4)]
    steps: u32,
    /// Diamond depth (diamond mode only).
    #[arg(long, default_value_t = 1)]
    depth: u32,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli.cmd) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<String, WorkbenchError> {
    match cmd {
        Cmd::Run {
            instance,
            pc,
            trace,
            audit,
        } => cmd_run(&instance, pc, trace.as_deref(), audit),
        Cmd::Opt { instance } => cmd_opt(&instance),
        Cmd::Bench(args) => cmd_bench(&args),
        Cmd::Gen(args) => cmd_gen(&args),
        Cmd::Verify { instance } => cmd_verify(&instance),
    }
}

fn load(path: &std::path::Path) -> Result<InstanceFile, WorkbenchError> {
    let text = std::fs::read_to_string(path)?;
    Ok(InstanceFile::parse(&text)?)
}

fn cmd_run(
    path: &std::path::Path,
    force_pc: bool,
    trace: Option<&std::path::Path>,
    audit: bool,
) -> Result<String, WorkbenchError> {
    let inst = load(path)?;
    if inst.is_prize_collecting() && !force_pc {
        // pc steps imply the prize-collecting path; the flag is a no-op
        // safeguard for plain instances.
    }
    let cfg = EngineConfig {
        trace: if trace.is_some() {
            TraceLevel::Full
        } else {
            TraceLevel::Off
        },
        audit_cross_check: audit,
        ..EngineConfig::default()
    };
    let outcome = run_instance(&inst, cfg, true)?;
    if let Some(path) = trace {
        std::fs::write(path, format_trace(&outcome.engine))?;
    }
    let mut out = format_run_rows(&outcome.rows);
    out.push_str(&summarize(&outcome.rows));
    out.push('\n');
    if !outcome.engine.audit_failures().is_empty() {
        return Err(WorkbenchError::InvariantViolation(
            outcome.engine.audit_failures().join("; "),
        ));
    }
    Ok(out)
}

fn cmd_opt(path: &std::path::Path) -> Result<String, WorkbenchError> {
    let inst = load(path)?;
    let graph = inst.graph()?;
    let pc_instance = inst.is_prize_collecting();
    let mut steps = Vec::new();
    let mut demands = DemandState::new();
    let mut out = String::from("# step\topt\n");
    for (i, spec) in inst.steps.iter().enumerate() {
        let (request, penalty) = inst.build_step(spec)?;
        demands.push(request.clone());
        steps.push((request, penalty));
        let value = if pc_instance {
            exact_opt_pc(&graph, &steps)?
        } else {
            exact_opt(&graph, &demands)?
        };
        let shown = match value {
            OptValue::Cost(c) => c.to_string(),
            OptValue::Infeasible => "infeasible".to_string(),
        };
        let _ = writeln!(out, "{}\t{shown}", i + 1);
    }
    Ok(out)
}

fn cmd_bench(args: &BenchArgs) -> Result<String, WorkbenchError> {
    match args.generator.as_str() {
        "diamond" => bench_diamond(args),
        "random" => bench_random(args),
        other => Err(WorkbenchError::Usage(format!(
            "unknown generator `{other}` (expected diamond or random)"
        ))),
    }
}

fn bench_diamond(args: &BenchArgs) -> Result<String, WorkbenchError> {
    let mut out = String::from("# depth\tdemands\talgorithm_cost\topt\tratio\n");
    for depth in 0..=args.max_depth {
        let d = gen_diamond(depth).map_err(WorkbenchError::Usage)?;
        let mut target = GreedyGst::new(d.graph.clone());
        let outcome = adversary_stream(&d, &mut target)?;
        let _ = writeln!(
            out,
            "{depth}\t{}\t{}\t{}\t{}",
            outcome.demands.len(),
            outcome.algorithm_cost,
            outcome.opt_cost,
            ratio_str(outcome.algorithm_cost, outcome.opt_cost)
        );
    }
    Ok(out)
}

fn bench_random(args: &BenchArgs) -> Result<String, WorkbenchError> {
    let mode = GenMode::parse(&args.mode)
        .ok_or_else(|| WorkbenchError::Usage(format!("unknown mode `{}`", args.mode)))?;
    let mut out = String::from(
        "# seed\tstep\tadded\tcumulative\tpenalty\tobjective\topt\tratio\tgreedy\tmax_level\taudit\n",
    );
    let mut all_rows: Vec<StepRow> = Vec::new();
    let mut failures = Vec::new();
    for i in 0..args.seeds {
        let seed = args.seed_base + i;
        let inst = gen_random(seed, args.n, args.density, args.steps, mode);
        let outcome = run_instance(&inst, EngineConfig::default(), true)?;
        let greedy_costs: Option<Vec<u64>> = if args.baselines && matches!(mode, GenMode::Gst) {
            let mut greedy = GreedyGst::new(inst.graph()?);
            let mut cum = Vec::new();
            for spec in &inst.steps {
                if let onforest_workbench::StepSpec::Pair { s, t } = spec {
                    greedy.serve(*s, *t)?;
                    cum.push(greedy.total_cost());
                }
            }
            Some(cum)
        } else {
            None
        };
        for (k, row) in outcome.rows.iter().enumerate() {
            let penalty = row
                .penalty_paid
                .map_or_else(|| "-".to_string(), |p| p.to_string());
            let opt = row.opt.map_or_else(|| "-".to_string(), |o| o.to_string());
            let ratio = match (row.ratio(), row.ratio_upper()) {
                (Some(r), _) => onforest_workbench::bench::rat_str(&r),
                (None, Some(up)) => format!("<={}", onforest_workbench::bench::rat_str(&up)),
                (None, None) => "-".to_string(),
            };
            let greedy = greedy_costs
                .as_ref()
                .and_then(|g| g.get(k))
                .map_or_else(|| "-".to_string(), |c| c.to_string());
            let level = row
                .max_level
                .map_or_else(|| "-".to_string(), |l| l.to_string());
            let _ = writeln!(
                out,
                "{seed}\t{}\t{}\t{}\t{penalty}\t{}\t{opt}\t{ratio}\t{greedy}\t{level}\t{}",
                row.step,
                row.added_cost,
                row.cumulative_cost,
                row.objective,
                if row.audit_pass { "ok" } else { "FAIL" }
            );
        }
        if !outcome.engine.audit_failures().is_empty() {
            failures.extend_from_slice(outcome.engine.audit_failures());
        }
        all_rows.extend(outcome.rows);
    }
    out.push_str(&summarize(&all_rows));
    out.push('\n');
    if !failures.is_empty() {
        return Err(WorkbenchError::InvariantViolation(failures.join("; ")));
    }
    Ok(out)
}

fn cmd_gen(args: &GenArgs) -> Result<String, WorkbenchError> {
    let inst = if args.mode == "diamond" {
        let d = gen_diamond(args.depth).map_err(WorkbenchError::Usage)?;
        let edges: Vec<(u32, u32, u64)> = d
            .graph
            .edges()
            .iter()
            .map(|e| (e.u, e.v, e.cost))
            .collect();
        InstanceFile {
            vertex_count: d.graph.vertex_count(),
            edges,
            root: None,
            steps: vec![onforest_workbench::StepSpec::Pair {
                s: d.corners.0,
                t: d.corners.1,
            }],
        }
    } else {
        let mode = GenMode::parse(&args.mode)
            .ok_or_else(|| WorkbenchError::Usage(format!("unknown mode `{}`", args.mode)))?;
        gen_random(args.seed, args.n, args.density, args.steps, mode)
    };
    std::fs::write(&args.out, inst.serialize())?;
    Ok(format!(
        "wrote {} ({} vertices, {} edges, {} steps)\n",
        args.out.display(),
        inst.vertex_count,
        inst.edges.len(),
        inst.steps.len()
    ))
}

fn cmd_verify(path: &std::path::Path) -> Result<String, WorkbenchError> {
    let inst = load(path)?;
    let (lines, failure) = verify_instance(&inst)?;
    let mut out = String::new();
    for line in &lines {
        let _ = writeln!(out, "{line}");
    }
    match failure {
        None => {
            let _ = writeln!(out, "# verify ok ({} checks)", lines.len());
            Ok(out)
        }
        Some(reason) => {
            print!("{out}");
            Err(WorkbenchError::InvariantViolation(reason))
        }
    }
}

// Keep the unused import warning away when baselines are disabled.
#[allow(unused_imports)]
use BoundsError as _IgnoreBoundsError;
