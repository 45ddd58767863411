//! Instance generators: seeded random instances per mode and the recursive
//! diamond family used for adversarial lower-bound runs.

use std::collections::BTreeSet;
use std::fmt;

use onforest::graph::{EdgeId, Graph, Vertex};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::instance::{InstanceFile, StepSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    Gst,
    Parity,
    P2p,
    Pcst,
    PcGst,
}

impl GenMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gst" => Some(GenMode::Gst),
            "parity" => Some(GenMode::Parity),
            "p2p" => Some(GenMode::P2p),
            "pcst" => Some(GenMode::Pcst),
            "pc_gst" => Some(GenMode::PcGst),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GenMode::Gst => "gst",
            GenMode::Parity => "parity",
            GenMode::P2p => "p2p",
            GenMode::Pcst => "pcst",
            GenMode::PcGst => "pc_gst",
        }
    }
}

impl fmt::Display for GenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Reproducible random instance: a random spanning tree keeps the graph
/// connected, extra edges arrive per the density, costs are uniform in
/// 1..=100, penalties in 1..=20. Identical seeds give identical instances.
pub fn gen_random(seed: u64, n: u32, density: f64, step_count: u32, mode: GenMode) -> InstanceFile {
    assert!(n >= 2, "need at least two vertices");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(Vertex, Vertex, u64)> = Vec::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        edges.push((u, v, rng.gen_range(1..=100)));
    }
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen_bool(density.clamp(0.0, 1.0)) {
                edges.push((u, v, rng.gen_range(1..=100)));
            }
        }
    }
    let root = matches!(mode, GenMode::Pcst).then_some(0);
    let mut steps = Vec::new();
    for _ in 0..step_count {
        steps.push(random_step(&mut rng, n, mode));
    }
    InstanceFile {
        vertex_count: n,
        edges,
        root,
        steps,
    }
}

fn distinct(rng: &mut ChaCha8Rng, n: u32, k: usize, exclude: Option<Vertex>) -> Vec<Vertex> {
    let mut pool: Vec<Vertex> = (0..n).filter(|v| Some(*v) != exclude).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let i = rng.gen_range(0..pool.len());
        out.push(pool.swap_remove(i));
    }
    out
}

fn random_step(rng: &mut ChaCha8Rng, n: u32, mode: GenMode) -> StepSpec {
    match mode {
        GenMode::Gst => {
            let pick = distinct(rng, n, 2, None);
            StepSpec::Pair {
                s: pick[0],
                t: pick[1],
            }
        }
        GenMode::Parity => {
            let modulus = if n >= 6 && rng.gen_bool(0.5) { 3 } else { 2 };
            let groups = if n as usize >= 2 * modulus as usize && rng.gen_bool(0.5) {
                2
            } else {
                1
            };
            let members = distinct(rng, n, (modulus * groups) as usize, None);
            StepSpec::Parity { modulus, members }
        }
        GenMode::P2p => {
            let k = if n >= 6 && rng.gen_bool(0.5) { 2 } else { 1 };
            let picked = distinct(rng, n, 2 * k, None);
            StepSpec::P2p {
                sources: picked[..k].to_vec(),
                sinks: picked[k..].to_vec(),
            }
        }
        GenMode::Pcst => {
            let v = distinct(rng, n, 1, Some(0))[0];
            StepSpec::PcVertex {
                v,
                penalty: rng.gen_range(1..=20),
            }
        }
        GenMode::PcGst => {
            let pick = distinct(rng, n, 2, None);
            StepSpec::PcPair {
                s: pick[0],
                t: pick[1],
                penalty: rng.gen_range(1..=20),
            }
        }
    }
}

/// One gadget of the diamond construction: either a single unit edge or a
/// four-cycle of half-depth gadgets joined at two middle vertices.
#[derive(Debug, Clone)]
pub enum GadgetKind {
    Edge(EdgeId),
    Split {
        middles: (Vertex, Vertex),
        /// Children in order u-m1, m1-v, u-m2, m2-v.
        children: [usize; 4],
    },
}

#[derive(Debug, Clone)]
pub struct Gadget {
    pub u: Vertex,
    pub v: Vertex,
    pub depth: u32,
    pub kind: GadgetKind,
}

/// The depth-`d` diamond: a unit edge with every edge recursively replaced
/// by a four-cycle, together with the replacement tree.
#[derive(Debug, Clone)]
pub struct DiamondInstance {
    pub graph: Graph,
    pub corners: (Vertex, Vertex),
    pub gadgets: Vec<Gadget>,
    pub root: usize,
}

pub const MAX_DIAMOND_DEPTH: u32 = 6;

pub fn gen_diamond(depth: u32) -> Result<DiamondInstance, String> {
    if depth > MAX_DIAMOND_DEPTH {
        return Err(format!(
            "diamond depth {depth} exceeds the cap of {MAX_DIAMOND_DEPTH}"
        ));
    }
    let mut edges: Vec<(Vertex, Vertex, u64)> = Vec::new();
    let mut next_vertex: Vertex = 2;
    let mut gadgets: Vec<Gadget> = Vec::new();
    let root = build_gadget(0, 1, depth, &mut edges, &mut next_vertex, &mut gadgets);
    let graph = Graph::new(next_vertex, &edges).expect("construction is valid");
    Ok(DiamondInstance {
        graph,
        corners: (0, 1),
        gadgets,
        root,
    })
}

fn build_gadget(
    u: Vertex,
    v: Vertex,
    depth: u32,
    edges: &mut Vec<(Vertex, Vertex, u64)>,
    next_vertex: &mut Vertex,
    gadgets: &mut Vec<Gadget>,
) -> usize {
    if depth == 0 {
        let id = edges.len();
        edges.push((u, v, 1));
        gadgets.push(Gadget {
            u,
            v,
            depth,
            kind: GadgetKind::Edge(id),
        });
        return gadgets.len() - 1;
    }
    let m1 = *next_vertex;
    let m2 = *next_vertex + 1;
    *next_vertex += 2;
    let c0 = build_gadget(u, m1, depth - 1, edges, next_vertex, gadgets);
    let c1 = build_gadget(m1, v, depth - 1, edges, next_vertex, gadgets);
    let c2 = build_gadget(u, m2, depth - 1, edges, next_vertex, gadgets);
    let c3 = build_gadget(m2, v, depth - 1, edges, next_vertex, gadgets);
    gadgets.push(Gadget {
        u,
        v,
        depth,
        kind: GadgetKind::Split {
            middles: (m1, m2),
            children: [c0, c1, c2, c3],
        },
    });
    gadgets.len() - 1
}

impl DiamondInstance {
    /// Edge ids inside a gadget's subtree.
    pub fn subtree_edges(&self, gadget: usize) -> BTreeSet<EdgeId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![gadget];
        while let Some(g) = stack.pop() {
            match &self.gadgets[g].kind {
                GadgetKind::Edge(e) => {
                    out.insert(*e);
                }
                GadgetKind::Split { children, .. } => stack.extend(children.iter().copied()),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diamond_shapes_match_expectations() {
        let d0 = gen_diamond(0).unwrap();
        assert_eq!(d0.graph.vertex_count(), 2);
        assert_eq!(d0.graph.edge_count(), 1);
        let d1 = gen_diamond(1).unwrap();
        assert_eq!(d1.graph.vertex_count(), 4);
        assert_eq!(d1.graph.edge_count(), 4);
        let d2 = gen_diamond(2).unwrap();
        assert_eq!(d2.graph.edge_count(), 16);
        assert_eq!(d2.graph.max_finite_distance(), 4);
        assert!(gen_diamond(7).is_err());
    }

    #[test]
    fn random_instances_are_reproducible_and_connected() {
        let a = gen_random(1, 8, 0.3, 4, GenMode::Gst);
        let b = gen_random(1, 8, 0.3, 4, GenMode::Gst);
        assert_eq!(a, b);
        let c = gen_random(2, 8, 0.3, 4, GenMode::Gst);
        assert_ne!(a, c);
        let g = a.graph().unwrap();
        let all: BTreeSet<EdgeId> = (0..g.edge_count()).collect();
        assert_eq!(g.components(&all).groups().len(), 1);
    }

    #[test]
    fn pcst_mode_emits_root_and_vertex_steps() {
        let inst = gen_random(5, 6, 0.2, 3, GenMode::Pcst);
        assert_eq!(inst.root, Some(0));
        assert!(inst
            .steps
            .iter()
            .all(|s| matches!(s, StepSpec::PcVertex { v, .. } if *v != 0)));
        assert!(inst.is_prize_collecting());
    }

    #[test]
    fn parity_members_divide_by_modulus() {
        for seed in 0..20 {
            let inst = gen_random(seed, 7, 0.3, 5, GenMode::Parity);
            for s in &inst.steps {
                if let StepSpec::Parity { modulus, members } = s {
                    assert_eq!(members.len() as u32 % modulus, 0);
                }
            }
            // Every generated step must build into a valid request.
            for s in &inst.steps {
                inst.build_step(s).unwrap();
            }
        }
    }
}
