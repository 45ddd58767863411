//! Per-component potential accounts: the charging scheme that pays for
//! every purchased path out of credited dual growth.
//!
//! Credits arrive whenever an active moat grows (the unique component
//! holding the moat's engaged terminals is credited), debits happen when a
//! path is bought. Two invariants are checkable at any moment: exact
//! conservation (solution cost plus all account balances equals the sum of
//! all dual variables over all levels) and a per-component lower bound of
//! `2^class + top growth` adjusted for the finite level floor.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;

use num_traits::Zero;

use crate::graph::Vertex;
use crate::{pow2, rat_u, Rat};

/// Balance, per-level growth maxima, class, and terminal count for one
/// component of the current solution.
#[derive(Debug, Clone, Default)]
pub struct ComponentRecord {
    pub account: Rat,
    /// Credited growth per level, maintained additively within a component
    /// and by maximum across merges.
    pub growth: BTreeMap<i32, Rat>,
    /// Highest level at which the component ever held an engaged terminal.
    pub class: Option<i32>,
    /// Terminals currently inside the component.
    pub terminals: u32,
}

impl ComponentRecord {
    pub fn growth_at(&self, level: i32) -> Rat {
        self.growth.get(&level).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn top_growth(&self) -> Rat {
        match self.class {
            Some(c) => self.growth_at(c),
            None => Rat::zero(),
        }
    }
}

/// Account ledger keyed by component representative (minimum vertex id).
#[derive(Debug, Clone, Default)]
pub struct AccountLedger {
    comps: BTreeMap<Vertex, ComponentRecord>,
    /// Set when a merge ever drove a balance negative; recorded, not clamped.
    pub negative_balance_seen: bool,
}

impl AccountLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn entry(&mut self, rep: Vertex) -> &mut ComponentRecord {
        self.comps.entry(rep).or_default()
    }

    pub fn record(&self, rep: Vertex) -> Option<&ComponentRecord> {
        self.comps.get(&rep)
    }

    pub fn account(&self, rep: Vertex) -> Rat {
        self.comps
            .get(&rep)
            .map(|c| c.account.clone())
            .unwrap_or_else(Rat::zero)
    }

    pub fn growth(&self, rep: Vertex, level: i32) -> Rat {
        self.comps
            .get(&rep)
            .map(|c| c.growth_at(level))
            .unwrap_or_else(Rat::zero)
    }

    pub fn records(&self) -> impl Iterator<Item = (&Vertex, &ComponentRecord)> {
        self.comps.iter()
    }

    /// A terminal joined the component (arrival or first sighting).
    pub fn add_terminal(&mut self, rep: Vertex) {
        self.entry(rep).terminals += 1;
    }

    /// The component holds a terminal engaged at `level`; its class can
    /// only rise.
    pub fn note_engagement(&mut self, rep: Vertex, level: i32) {
        let rec = self.entry(rep);
        rec.class = Some(rec.class.map_or(level, |c| c.max(level)));
    }

    /// Credit `delta` of dual growth at `level` to the component.
    pub fn credit_growth(&mut self, rep: Vertex, level: i32, delta: &Rat) {
        if delta.is_zero() {
            return;
        }
        let rec = self.entry(rep);
        rec.account += delta;
        let slot = rec.growth.entry(level).or_insert_with(Rat::zero);
        *slot += delta;
    }

    /// Merge the listed components into `new_rep`, paying `extra_cost` for
    /// newly built edges. Balances add, growth and class take maxima,
    /// terminal counts add. A resulting negative balance is recorded.
    pub fn merge_and_pay(&mut self, reps: &BTreeSet<Vertex>, new_rep: Vertex, extra_cost: u64) {
        let mut account = Rat::zero();
        let mut growth: BTreeMap<i32, Rat> = BTreeMap::new();
        let mut class: Option<i32> = None;
        let mut terminals = 0u32;
        for rep in reps {
            let Some(rec) = self.comps.remove(rep) else {
                continue;
            };
            account += rec.account;
            for (j, g) in rec.growth {
                let slot = growth.entry(j).or_insert_with(Rat::zero);
                if g > *slot {
                    *slot = g;
                }
            }
            class = match (class, rec.class) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            terminals += rec.terminals;
        }
        account -= rat_u(extra_cost);
        if account < Rat::zero() {
            self.negative_balance_seen = true;
        }
        self.comps.insert(
            new_rep,
            ComponentRecord {
                account,
                growth,
                class,
                terminals,
            },
        );
    }

    /// Exact conservation: `cost(F) + Σ accounts = Σ_j Σ_S y^j_S`.
    pub fn check_conservation(&self, solution_cost: u64, all_level_dual_total: &Rat) -> Result<(), String> {
        let mut lhs = rat_u(solution_cost);
        for rec in self.comps.values() {
            lhs += &rec.account;
        }
        if &lhs == all_level_dual_total {
            Ok(())
        } else {
            Err(format!(
                "conservation broken: cost+accounts = {lhs}, dual total = {all_level_dual_total}"
            ))
        }
    }

    /// Deficit-adjusted lower bound: every component with a class satisfies
    /// `account >= 2^class + top_growth - terminals * 2^(j_floor + 1)`.
    pub fn check_account_lower_bound(&self, j_floor: i32) -> Result<(), String> {
        for (rep, rec) in &self.comps {
            let Some(class) = rec.class else {
                continue;
            };
            let deficit = rat_u(u64::from(rec.terminals)) * pow2(j_floor + 1);
            let bound = pow2(class) + rec.top_growth() - deficit;
            if rec.account < bound {
                return Err(format!(
                    "account bound broken at component {rep}: balance {} < {bound}",
                    rec.account
                ));
            }
        }
        Ok(())
    }

    /// Limit property of credited growth: `growth(X, j) <= 2^j` exactly.
    pub fn check_growth_limits(&self) -> Result<(), String> {
        for (rep, rec) in &self.comps {
            for (j, g) in &rec.growth {
                if *g > pow2(*j) {
                    return Err(format!(
                        "growth limit broken at component {rep} level {j}: {g} > 2^{j}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `floor(log2 n)` for `n >= 1`, and 0 for `n = 0`.
pub fn floor_log2(n: u64) -> u32 {
    if n == 0 {
        0
    } else {
        n.ilog2()
    }
}

/// Bound factor `2 * (log2 |R| + 3)` with the logarithm floored, which only
/// tightens the inequality; the analysis guarantees the `ceil(log2)+2` form.
pub fn dual_sum_bound_factor(terminal_count: u64) -> Rat {
    rat_u(2 * (u64::from(floor_log2(terminal_count)) + 3))
}

/// Check `Σ_j Σ_S y^j_S <= 2(log2 |R| + 3) * y_max_total` and report the
/// realized ratio next to the allowed factor.
pub fn check_dual_sum_bound(
    all_level_dual_total: &Rat,
    y_max_total: &Rat,
    terminal_count: u64,
) -> Result<(), String> {
    if y_max_total.is_zero() {
        return if all_level_dual_total.is_zero() {
            Ok(())
        } else {
            Err(format!(
                "dual sum {all_level_dual_total} positive while best level is zero"
            ))
        };
    }
    let bound = dual_sum_bound_factor(terminal_count) * y_max_total;
    if all_level_dual_total <= &bound {
        Ok(())
    } else {
        Err(format!(
            "dual sum bound broken: {all_level_dual_total} > {bound} (|R| = {terminal_count})"
        ))
    }
}

/// Competitive bound against the best dual level: plain mode compares the
/// solution cost with factor 2, prize-collecting mode compares cost plus
/// penalties with factor 4. The level-floor slack is omitted, which only
/// tightens the check.
pub fn check_competitive_bound(
    objective: &Rat,
    y_max_total: &Rat,
    terminal_count: u64,
    prize_collecting: bool,
) -> Result<(), String> {
    if y_max_total.is_zero() {
        return if objective.is_zero() {
            Ok(())
        } else {
            Err(format!("objective {objective} positive with zero dual bound"))
        };
    }
    let factor = if prize_collecting { 2u64 } else { 1 };
    let bound = rat_u(factor) * dual_sum_bound_factor(terminal_count) * y_max_total;
    if objective <= &bound {
        Ok(())
    } else {
        Err(format!(
            "competitive bound broken: {objective} > {bound} (|R| = {terminal_count})"
        ))
    }
}

/// Exact integer form of `cost <= 2(log2 |R| + 3) * opt` without the floored
/// logarithm: `2^cost <= 2^(6 opt) * |R|^(2 opt)`. Used against the
/// exhaustive optimum where both sides are integers.
pub fn check_cost_vs_opt_exact(cost: u64, opt: u64, terminal_count: u64) -> bool {
    use num_bigint::BigUint;
    if cost == 0 {
        return true;
    }
    if opt == 0 {
        return false;
    }
    let lhs = BigUint::from(1u8) << cost;
    let rhs = (BigUint::from(1u8) << (6 * opt))
        * BigUint::from(terminal_count.max(1)).pow(2 * opt as u32);
    lhs <= rhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat;

    #[test]
    fn credit_and_growth_accumulate() {
        let mut l = AccountLedger::new();
        let half = pow2(-1);
        l.credit_growth(1, -1, &half);
        assert_eq!(l.account(1), half);
        assert_eq!(l.growth(1, -1), pow2(-1));
        l.credit_growth(3, -1, &pow2(-1));
        assert_eq!(l.account(3), pow2(-1));
        l.credit_growth(1, -1, &Rat::zero());
        assert_eq!(l.account(1), pow2(-1));
    }

    #[test]
    fn merge_pays_and_takes_maxima() {
        let mut l = AccountLedger::new();
        l.note_engagement(0, -1);
        l.note_engagement(2, 0);
        l.credit_growth(0, -1, &rat(1));
        l.credit_growth(2, -1, &pow2(-1));
        l.credit_growth(2, 0, &rat(1));
        l.merge_and_pay(&BTreeSet::from([0, 2]), 0, 2);
        let rec = l.record(0).unwrap();
        assert_eq!(rec.account, rat(1) + pow2(-1) + rat(1) - rat(2));
        assert_eq!(rec.growth_at(-1), rat(1));
        assert_eq!(rec.growth_at(0), rat(1));
        assert_eq!(rec.class, Some(0));
        assert!(!l.negative_balance_seen);
    }

    #[test]
    fn equal_singleton_accounts_merge_to_zero() {
        // Unit edge bought at level -1: each side grew 1/2, pay 1.
        let mut l = AccountLedger::new();
        l.credit_growth(0, -1, &pow2(-1));
        l.credit_growth(1, -1, &pow2(-1));
        l.merge_and_pay(&BTreeSet::from([0, 1]), 0, 1);
        assert_eq!(l.account(0), Rat::zero());
        assert!(!l.negative_balance_seen);
        // Overpayment is flagged, never clamped.
        l.merge_and_pay(&BTreeSet::from([0]), 0, 1);
        assert_eq!(l.account(0), rat(-1));
        assert!(l.negative_balance_seen);
    }

    #[test]
    fn conservation_checks_exact_equality() {
        let mut l = AccountLedger::new();
        assert!(l.check_conservation(0, &Rat::zero()).is_ok());
        l.credit_growth(0, -1, &pow2(-1));
        assert!(l.check_conservation(0, &pow2(-1)).is_ok());
        l.merge_and_pay(&BTreeSet::from([0]), 0, 1);
        // Fault injection: debit without matching edge cost.
        assert!(l.check_conservation(0, &pow2(-1)).is_err());
        assert!(l.check_conservation(1, &pow2(-1)).is_ok());
    }

    #[test]
    fn account_lower_bound_respects_deficit() {
        let mut l = AccountLedger::new();
        let floor = -41;
        // A terminal that reached its limit on every level up to class 0.
        l.add_terminal(4);
        l.note_engagement(4, 0);
        for j in floor..=0 {
            l.credit_growth(4, j, &pow2(j));
        }
        assert!(l.check_account_lower_bound(floor).is_ok());
        assert!(l.check_growth_limits().is_ok());
        // Fault injection: remove potential.
        l.merge_and_pay(&BTreeSet::from([4]), 4, 1);
        assert!(l.check_account_lower_bound(floor).is_err());
    }

    #[test]
    fn bound_factors_and_exact_cost_test() {
        assert_eq!(floor_log2(1), 0);
        assert_eq!(floor_log2(4), 2);
        assert_eq!(floor_log2(5), 2);
        assert_eq!(dual_sum_bound_factor(4), rat(10));
        assert!(check_cost_vs_opt_exact(3, 2, 4));
        assert!(check_cost_vs_opt_exact(0, 0, 1));
        assert!(!check_cost_vs_opt_exact(100, 1, 2));
        assert!(check_dual_sum_bound(&rat(10), &rat(4), 4).is_ok());
        assert!(check_dual_sum_bound(&rat(100), &rat(4), 4).is_err());
        assert!(check_competitive_bound(&rat(3), &rat(2), 4, false).is_ok());
    }
}
