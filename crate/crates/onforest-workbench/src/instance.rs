//! Line-oriented instance files.
//!
//! Grammar, one record per line; `#` starts a comment, blank lines are
//! skipped:
//!
//! ```text
//! instance   := graph-line record*
//! graph-line := "graph" N
//! record     := "edge" U V COST
//!             | "root" R
//!             | "step" step-body
//! step-body  := "pair" S T
//!             | "pc_pair" S T PENALTY
//!             | "pc_vertex" V PENALTY
//!             | "parity" "mod" L "members" V+
//!             | "p2p" "sources" V+ "sinks" V+
//!             | "spanning" "members" V+
//! ```
//!
//! Edge ids are assigned in file order. Costs and penalties are positive
//! integers; `pc_vertex` steps require a `root` record.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;

use onforest::demands::Request;
use onforest::graph::{Graph, GraphError, Vertex};
use onforest::pc::{PenaltyError, PenaltyRequest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepSpec {
    Pair { s: Vertex, t: Vertex },
    PcPair { s: Vertex, t: Vertex, penalty: u64 },
    PcVertex { v: Vertex, penalty: u64 },
    Parity { modulus: u32, members: Vec<Vertex> },
    P2p { sources: Vec<Vertex>, sinks: Vec<Vertex> },
    Spanning { members: Vec<Vertex> },
}

impl StepSpec {
    pub fn is_prize_collecting(&self) -> bool {
        matches!(self, StepSpec::PcPair { .. } | StepSpec::PcVertex { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceFile {
    pub vertex_count: u32,
    pub edges: Vec<(Vertex, Vertex, u64)>,
    pub root: Option<Vertex>,
    pub steps: Vec<StepSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl InstanceFile {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut vertex_count: Option<u32> = None;
        let mut edges = Vec::new();
        let mut root = None;
        let mut steps = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut tok = Tokens::new(content, line);
            let head = tok.word()?;
            match head {
                "graph" => {
                    if vertex_count.is_some() {
                        return Err(err(line, "duplicate graph record"));
                    }
                    vertex_count = Some(tok.number("vertex count")? as u32);
                }
                "edge" => {
                    if vertex_count.is_none() {
                        return Err(err(line, "edge before graph record"));
                    }
                    let u = tok.vertex()?;
                    let v = tok.vertex()?;
                    let cost = tok.number("cost")?;
                    if cost == 0 {
                        return Err(err(line, "nonpositive cost"));
                    }
                    edges.push((u, v, cost));
                }
                "root" => {
                    if root.is_some() {
                        return Err(err(line, "duplicate root record"));
                    }
                    root = Some(tok.vertex()?);
                }
                "step" => {
                    let kind = tok.word()?;
                    let step = match kind {
                        "pair" => StepSpec::Pair {
                            s: tok.vertex()?,
                            t: tok.vertex()?,
                        },
                        "pc_pair" => {
                            let s = tok.vertex()?;
                            let t = tok.vertex()?;
                            let penalty = tok.number("penalty")?;
                            if penalty == 0 {
                                return Err(err(line, "nonpositive penalty"));
                            }
                            StepSpec::PcPair { s, t, penalty }
                        }
                        "pc_vertex" => {
                            let v = tok.vertex()?;
                            let penalty = tok.number("penalty")?;
                            if penalty == 0 {
                                return Err(err(line, "nonpositive penalty"));
                            }
                            StepSpec::PcVertex { v, penalty }
                        }
                        "parity" => {
                            tok.keyword("mod")?;
                            let modulus = tok.number("modulus")? as u32;
                            tok.keyword("members")?;
                            StepSpec::Parity {
                                modulus,
                                members: tok.vertex_list()?,
                            }
                        }
                        "p2p" => {
                            tok.keyword("sources")?;
                            let sources = tok.vertices_until("sinks")?;
                            StepSpec::P2p {
                                sources,
                                sinks: tok.vertex_list()?,
                            }
                        }
                        "spanning" => {
                            tok.keyword("members")?;
                            StepSpec::Spanning {
                                members: tok.vertex_list()?,
                            }
                        }
                        other => return Err(err(line, &format!("unknown step kind `{other}`"))),
                    };
                    steps.push(step);
                }
                other => return Err(err(line, &format!("unknown record `{other}`"))),
            }
            tok.finish()?;
        }
        let Some(vertex_count) = vertex_count else {
            return Err(err(0, "missing graph record"));
        };
        let inst = InstanceFile {
            vertex_count,
            edges,
            root,
            steps,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<(), ParseError> {
        let check = |v: Vertex| -> Result<(), ParseError> {
            if v >= self.vertex_count {
                Err(err(0, &format!("vertex {v} out of range")))
            } else {
                Ok(())
            }
        };
        for &(u, v, _) in &self.edges {
            check(u)?;
            check(v)?;
            if u == v {
                return Err(err(0, &format!("self-loop at {u}")));
            }
        }
        if let Some(r) = self.root {
            check(r)?;
        }
        for s in &self.steps {
            match s {
                StepSpec::Pair { s, t } | StepSpec::PcPair { s, t, .. } => {
                    check(*s)?;
                    check(*t)?;
                }
                StepSpec::PcVertex { v, .. } => {
                    check(*v)?;
                    if self.root.is_none() {
                        return Err(err(0, "pc_vertex step requires a root record"));
                    }
                }
                StepSpec::Parity { members, .. } | StepSpec::Spanning { members } => {
                    for &m in members {
                        check(m)?;
                    }
                }
                StepSpec::P2p { sources, sinks } => {
                    for &m in sources.iter().chain(sinks) {
                        check(m)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "graph {}", self.vertex_count);
        for &(u, v, c) in &self.edges {
            let _ = writeln!(out, "edge {u} {v} {c}");
        }
        if let Some(r) = self.root {
            let _ = writeln!(out, "root {r}");
        }
        for s in &self.steps {
            match s {
                StepSpec::Pair { s, t } => {
                    let _ = writeln!(out, "step pair {s} {t}");
                }
                StepSpec::PcPair { s, t, penalty } => {
                    let _ = writeln!(out, "step pc_pair {s} {t} {penalty}");
                }
                StepSpec::PcVertex { v, penalty } => {
                    let _ = writeln!(out, "step pc_vertex {v} {penalty}");
                }
                StepSpec::Parity { modulus, members } => {
                    let _ = write!(out, "step parity mod {modulus} members");
                    for m in members {
                        let _ = write!(out, " {m}");
                    }
                    let _ = writeln!(out);
                }
                StepSpec::P2p { sources, sinks } => {
                    let _ = write!(out, "step p2p sources");
                    for m in sources {
                        let _ = write!(out, " {m}");
                    }
                    let _ = write!(out, " sinks");
                    for m in sinks {
                        let _ = write!(out, " {m}");
                    }
                    let _ = writeln!(out);
                }
                StepSpec::Spanning { members } => {
                    let _ = write!(out, "step spanning members");
                    for m in members {
                        let _ = write!(out, " {m}");
                    }
                    let _ = writeln!(out);
                }
            }
        }
        out
    }

    pub fn graph(&self) -> Result<Graph, GraphError> {
        Graph::new(self.vertex_count, &self.edges)
    }

    pub fn is_prize_collecting(&self) -> bool {
        self.steps.iter().any(StepSpec::is_prize_collecting)
    }

    /// Convert one step record into an engine request plus its penalty.
    pub fn build_step(&self, spec: &StepSpec) -> Result<(Request, Option<PenaltyRequest>), StepBuildError> {
        let step = match spec {
            StepSpec::Pair { s, t } => (Request::steiner_pair(*s, *t)?, None),
            StepSpec::PcPair { s, t, penalty } => (
                Request::steiner_pair(*s, *t)?,
                Some(PenaltyRequest::pair(*s, *t, *penalty)?),
            ),
            StepSpec::PcVertex { v, penalty } => {
                let root = self.root.expect("validated at parse time");
                (
                    Request::steiner_pair(*v, root)?,
                    Some(PenaltyRequest::vertex(*v, root, *penalty)?),
                )
            }
            StepSpec::Parity { modulus, members } => (
                Request::parity(members.iter().copied().collect::<BTreeSet<_>>(), *modulus)?,
                None,
            ),
            StepSpec::P2p { sources, sinks } => (
                Request::point_to_point(
                    sources.iter().copied().collect(),
                    sinks.iter().copied().collect(),
                )?,
                None,
            ),
            StepSpec::Spanning { members } => (
                Request::spanning(members.iter().copied().collect())?,
                None,
            ),
        };
        Ok(step)
    }
}

#[derive(Debug)]
pub enum StepBuildError {
    Request(onforest::demands::RequestError),
    Penalty(PenaltyError),
}

impl fmt::Display for StepBuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepBuildError::Request(e) => write!(f, "{e}"),
            StepBuildError::Penalty(e) => write!(f, "{e}"),
        }
    }
}

impl From<onforest::demands::RequestError> for StepBuildError {
    fn from(e: onforest::demands::RequestError) -> Self {
        StepBuildError::Request(e)
    }
}

impl From<PenaltyError> for StepBuildError {
    fn from(e: PenaltyError) -> Self {
        StepBuildError::Penalty(e)
    }
}

fn err(line: usize, message: &str) -> ParseError {
    ParseError {
        line,
        message: message.to_string(),
    }
}

struct Tokens<'a> {
    rest: std::iter::Peekable<std::str::SplitAsciiWhitespace<'a>>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn new(content: &'a str, line: usize) -> Self {
        Tokens {
            rest: content.split_ascii_whitespace().peekable(),
            line,
        }
    }

    fn word(&mut self) -> Result<&'a str, ParseError> {
        self.rest
            .next()
            .ok_or_else(|| err(self.line, "unexpected end of line"))
    }

    fn keyword(&mut self, want: &str) -> Result<(), ParseError> {
        let got = self.word()?;
        if got == want {
            Ok(())
        } else {
            Err(err(self.line, &format!("expected `{want}`, got `{got}`")))
        }
    }

    fn number(&mut self, what: &str) -> Result<u64, ParseError> {
        let w = self.word()?;
        w.parse()
            .map_err(|_| err(self.line, &format!("bad {what} `{w}`")))
    }

    fn vertex(&mut self) -> Result<Vertex, ParseError> {
        Ok(self.number("vertex id")? as Vertex)
    }

    fn vertex_list(&mut self) -> Result<Vec<Vertex>, ParseError> {
        let mut out = Vec::new();
        while self.rest.peek().is_some() {
            out.push(self.vertex()?);
        }
        if out.is_empty() {
            return Err(err(self.line, "expected at least one vertex"));
        }
        Ok(out)
    }

    fn vertices_until(&mut self, stop: &str) -> Result<Vec<Vertex>, ParseError> {
        let mut out = Vec::new();
        loop {
            match self.rest.peek() {
                None => return Err(err(self.line, &format!("expected `{stop}` section"))),
                Some(&w) if w == stop => {
                    self.rest.next();
                    break;
                }
                Some(_) => out.push(self.vertex()?),
            }
        }
        if out.is_empty() {
            return Err(err(self.line, "expected at least one vertex"));
        }
        Ok(out)
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        match self.rest.next() {
            None => Ok(()),
            Some(extra) => Err(err(self.line, &format!("trailing token `{extra}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_four_cycle_scenario() {
        let text = "# four cycle\ngraph 4\nedge 0 1 1\nedge 1 2 1\nedge 2 3 1\nedge 3 0 1\nstep pair 0 2\nstep pair 0 3\n";
        let inst = InstanceFile::parse(text).unwrap();
        assert_eq!(inst.vertex_count, 4);
        assert_eq!(inst.edges.len(), 4);
        assert_eq!(
            inst.steps,
            vec![StepSpec::Pair { s: 0, t: 2 }, StepSpec::Pair { s: 0, t: 3 }]
        );
        assert!(!inst.is_prize_collecting());
    }

    #[test]
    fn rejects_schema_violations() {
        assert!(InstanceFile::parse("graph 2\nedge 0 1 0\n").is_err());
        assert!(InstanceFile::parse("graph 2\nstep pc_vertex 1 5\n").is_err());
        assert!(InstanceFile::parse("graph 2\nstep pc_pair 0 1 0\n").is_err());
        assert!(InstanceFile::parse("edge 0 1 1\n").is_err());
        assert!(InstanceFile::parse("graph 2\nstep pair 0 2\n").is_err());
        assert!(InstanceFile::parse("graph 2\nstep pair 0 1 9\n").is_err());
    }

    #[test]
    fn round_trips_through_serialize() {
        let text = "graph 5\nedge 0 1 2\nedge 1 2 3\nroot 0\nstep pc_vertex 2 7\nstep parity mod 2 members 1 2\nstep p2p sources 0 1 sinks 2 3\nstep spanning members 0 2 4\n";
        let inst = InstanceFile::parse(text).unwrap();
        let again = InstanceFile::parse(&inst.serialize()).unwrap();
        assert_eq!(inst, again);
        assert!(inst.is_prize_collecting());
    }
}
