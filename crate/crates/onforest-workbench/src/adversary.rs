//! Adaptive adversary over diamond instances: after the target commits to
//! one side of a gadget, the next demand crosses the unused side, and the
//! game recurses into the gadget halves along the adversary's own path.
//! Every demand lies on that path, so the offline optimum is exactly the
//! corner distance.

use onforest::bounds::{BoundsError, OnlineSolver};
use onforest::graph::{UnionFind, Vertex};

use crate::gen::{DiamondInstance, GadgetKind};

#[derive(Debug, Clone)]
pub struct AdversaryOutcome {
    pub demands: Vec<(Vertex, Vertex)>,
    pub algorithm_cost: u64,
    pub opt_cost: u64,
}

impl AdversaryOutcome {
    /// Competitive ratio as an exact pair (cost, opt).
    pub fn ratio(&self) -> (u64, u64) {
        (self.algorithm_cost, self.opt_cost)
    }
}

pub fn adversary_stream(
    d: &DiamondInstance,
    target: &mut dyn OnlineSolver,
) -> Result<AdversaryOutcome, BoundsError> {
    let mut demands = Vec::new();
    let (c0, c1) = d.corners;
    target.serve(c0, c1)?;
    demands.push((c0, c1));
    let mut stack = vec![d.root];
    while let Some(gi) = stack.pop() {
        let gadget = &d.gadgets[gi];
        let GadgetKind::Split { middles, children } = &gadget.kind else {
            continue;
        };
        let side_connects = |kids: [usize; 2]| -> bool {
            let mut uf = UnionFind::new(d.graph.vertex_count());
            for child in kids {
                for e in d.subtree_edges(child) {
                    if target.built().contains(&e) {
                        let edge = d.graph.edge(e);
                        uf.union(edge.u, edge.v);
                    }
                }
            }
            uf.same(gadget.u, gadget.v)
        };
        let side_a = side_connects([children[0], children[1]]);
        let side_b = side_connects([children[2], children[3]]);
        // Cross the unused side; when the target paid for both, either works.
        let (unused_middle, unused_children) = if side_a || !side_b {
            (middles.1, [children[2], children[3]])
        } else {
            (middles.0, [children[0], children[1]])
        };
        target.serve(gadget.u, unused_middle)?;
        demands.push((gadget.u, unused_middle));
        stack.push(unused_children[0]);
        stack.push(unused_children[1]);
    }
    let opt_cost = 1u64 << d.gadgets[d.root].depth;
    Ok(AdversaryOutcome {
        demands,
        algorithm_cost: target.total_cost(),
        opt_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::gen_diamond;
    use onforest::bounds::GreedyGst;

    #[test]
    fn depth_zero_is_trivial() {
        let d = gen_diamond(0).unwrap();
        let mut target = GreedyGst::new(d.graph.clone());
        let out = adversary_stream(&d, &mut target).unwrap();
        assert_eq!(out.algorithm_cost, 1);
        assert_eq!(out.opt_cost, 1);
        assert_eq!(out.demands.len(), 1);
    }

    #[test]
    fn depth_one_forces_ratio_three_halves() {
        let d = gen_diamond(1).unwrap();
        let mut target = GreedyGst::new(d.graph.clone());
        let out = adversary_stream(&d, &mut target).unwrap();
        assert_eq!(out.algorithm_cost, 3);
        assert_eq!(out.opt_cost, 2);
        assert_eq!(out.demands.len(), 2);
    }

    #[test]
    fn greedy_cost_follows_the_level_formula() {
        // The greedy target pays 2^d for the corners plus 2^(k-1) per
        // gadget processed at depth k, giving cost (1 + d/2) * 2^d.
        for depth in 0..=4u32 {
            let d = gen_diamond(depth).unwrap();
            let mut target = GreedyGst::new(d.graph.clone());
            let out = adversary_stream(&d, &mut target).unwrap();
            let opt = 1u64 << depth;
            assert_eq!(out.opt_cost, opt);
            assert_eq!(
                2 * out.algorithm_cost,
                2 * opt + u64::from(depth) * opt,
                "depth {depth}"
            );
        }
    }
}
