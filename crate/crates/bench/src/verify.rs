//! Exact checks behind the `verify` subcommand: the subgraph
//! characterization of PCTSP and OP optima, the node-splitting reduction and
//! the time-expanded TSP-TW graph. The reference enumerations here share no
//! code with the oracles they check.

use std::collections::BTreeSet;

use anyhow::Result;
use rayon::prelude::*;

use difuada_core::instances::{
    distance_matrix, gen_op, gen_pctsp, gen_tsp, gen_tsptw, GenConfig, OpInstance, PctspInstance, TspTwInstance,
};
use difuada_core::matrix::DistanceMatrix;
use difuada_core::oracles::{
    brute_force_atsp, contract_split_tour, node_weighted_reduction, tsptw_expand, verify_theorem_op, verify_theorem_pctsp,
    OpTheoremReport, TheoremReport, EXACT_TOL,
};

use crate::{derive_seed, stream};

/// Every ordering of `items`.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let rest: Vec<usize> = items.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
        for mut p in permutations(&rest) {
            p.insert(0, first);
            out.push(p);
        }
    }
    out
}

/// Closed-tour length summed edge by edge.
pub fn cycle_length(w: &DistanceMatrix, order: &[usize]) -> f64 {
    (0..order.len()).map(|k| w.get(order[k], order[(k + 1) % order.len()])).sum()
}

/// Uniform value in `[lo, hi)` from a seed.
pub fn unit_draw(seed: u64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * ((seed >> 11) as f64 / (1u64 << 53) as f64)
}

pub struct TheoremSuite {
    pub pctsp: Vec<(PctspInstance, TheoremReport)>,
    pub op: Vec<(OpInstance, OpTheoremReport)>,
}

impl TheoremSuite {
    pub fn pctsp_passed(&self) -> usize {
        self.pctsp.iter().filter(|(_, r)| r.passed).count()
    }

    pub fn op_literal_passed(&self) -> usize {
        self.op.iter().filter(|(_, r)| r.literal.passed).count()
    }

    pub fn op_cardinality_passed(&self) -> usize {
        self.op.iter().filter(|(_, r)| r.cardinality.passed).count()
    }
}

/// OP instance with every non-depot score equal to 1.
pub fn uniform_score_op(n: usize, seed: u64) -> Result<OpInstance> {
    let o = gen_op(n, seed, &GenConfig::default())?;
    let scores = (0..n).map(|v| if v == 0 { 0.0 } else { 1.0 }).collect();
    Ok(OpInstance::new(o.base, scores, o.budget)?)
}

/// Runs both characterization checks on `count` random instances of size
/// `n`. PCTSP instances have their prize threshold set to 0 by the check.
pub fn run_theorem_suite(seed: u64, count: usize, n: usize) -> Result<TheoremSuite> {
    let gen = GenConfig::default();
    let pctsp = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let inst = gen_pctsp(n, derive_seed(seed, stream::THEOREM, i), &gen)?;
            let r = verify_theorem_pctsp(&inst)?;
            Ok((inst, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let op = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let inst = uniform_score_op(n, derive_seed(seed, stream::THEOREM, 1_000_000 + i))?;
            let r = verify_theorem_op(&inst)?;
            Ok((inst, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TheoremSuite { pctsp, op })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureCheck {
    pub fixtures: usize,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl FixtureCheck {
    pub fn all_passed(&self) -> bool {
        self.passed == self.fixtures
    }
}

/// Node-splitting reduction: the optimal directed cycle on the split graph
/// costs the optimal tour plus the sum of node weights, and contracts to a
/// tour attaining it. Sizes cycle through 3..=5.
pub fn check_reduction(seed: u64, count: usize) -> Result<FixtureCheck> {
    let mut failures = Vec::new();
    for i in 0..count as u64 {
        let n = 3 + (i as usize % 3);
        let tsp = gen_tsp(n, derive_seed(seed, stream::FIXTURE, i))?;
        let w = distance_matrix(&tsp);
        let scores: Vec<f64> =
            (0..n as u64).map(|v| unit_draw(derive_seed(seed, stream::FIXTURE, 1000 * (i + 1) + v), -1.0, 1.0)).collect();
        let rest: Vec<usize> = (1..n).collect();
        let best_tour = permutations(&rest)
            .into_iter()
            .map(|p| {
                let order: Vec<usize> = std::iter::once(0).chain(p).collect();
                cycle_length(&w, &order)
            })
            .fold(f64::INFINITY, f64::min);
        let expected = best_tour + scores.iter().sum::<f64>();
        let split = node_weighted_reduction(&scores, &w)?;
        let (value, cycle) = brute_force_atsp(&split)?;
        let contracted = contract_split_tour(&cycle);
        let contracted_value = cycle_length(&w, &contracted) + scores.iter().sum::<f64>();
        let ok = (value - expected).abs() <= EXACT_TOL
            && (contracted_value - expected).abs() <= EXACT_TOL
            && contracted.len() == n
            && contracted.iter().collect::<BTreeSet<_>>().len() == n;
        if !ok {
            failures.push(format!("reduction fixture {i} (n = {n}): split optimum {value:.12}, expected {expected:.12}"));
        }
    }
    Ok(FixtureCheck { fixtures: count, passed: count - failures.len(), failures })
}

/// Depot-first orders meeting every window under unit travel time without
/// waiting: the k-th node is reached at time k and the depot again at time n.
pub fn feasible_window_orders(inst: &TspTwInstance) -> BTreeSet<Vec<usize>> {
    let n = inst.base.n();
    let rest: Vec<usize> = (1..n).collect();
    let within = |v: usize, t: u32| inst.windows[v].0 <= t && t <= inst.windows[v].1;
    permutations(&rest)
        .into_iter()
        .filter(|p| p.iter().enumerate().all(|(k, &v)| within(v, k as u32 + 1)) && within(0, n as u32))
        .map(|p| std::iter::once(0).chain(p).collect())
        .collect()
}

/// Time-expanded graph: zero-energy depot-to-depot replica paths are exactly
/// the window-feasible orders, and every such path has zero energy.
pub fn check_time_expansion(seed: u64, count: usize) -> Result<FixtureCheck> {
    let mut failures = Vec::new();
    for i in 0..count as u64 {
        let n = 3 + (i as usize % 3);
        let gen = GenConfig { tw_slack: (i % 3) as u32, ..GenConfig::default() };
        let (inst, _) = gen_tsptw(n, derive_seed(seed, stream::FIXTURE, 50_000 + i), &gen)?;
        let expected = feasible_window_orders(&inst);
        let g = tsptw_expand(&inst)?;
        let found: BTreeSet<Vec<usize>> = g.feasible_orders().into_iter().collect();
        if found != expected {
            failures.push(format!(
                "time-expansion fixture {i} (n = {n}): {} orders found, {} expected",
                found.len(),
                expected.len()
            ));
        }
    }
    Ok(FixtureCheck { fixtures: count, passed: count - failures.len(), failures })
}
