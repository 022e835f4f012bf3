//! Exact and reference solvers, and executable checks of the structural
//! results relating PCTSP/OP optima to TSP optima on subgraphs.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decode::{cheapest_insertion, prune_pctsp, two_opt};
use crate::energy::DiscreteSolution;
use crate::error::{Error, Result};
use crate::instances::{distance_matrix, Instance, OpInstance, PctspInstance, TspTwInstance, DEPOT};
use crate::matrix::{DistanceMatrix, SquareMatrix};

pub const HELD_KARP_MAX_N: usize = 16;
pub const SUBSET_ENUM_MAX_N: usize = 12;
pub const THEOREM_MAX_N: usize = 10;
/// Equality tolerance of the theorem and equivalence checks.
pub const EXACT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMethod {
    HeldKarp,
    SubsetEnum,
    Ils,
}

impl fmt::Display for OracleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HeldKarp => "held-karp",
            Self::SubsetEnum => "subset-enum",
            Self::Ils => "ils",
        })
    }
}

/// `optimal_value` is the natural objective: tour cost for TSP and PCTSP,
/// collected score for OP.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub optimal_value: f64,
    pub optimal_solution: DiscreteSolution,
    pub method: OracleMethod,
    pub exact: bool,
}

/// Held–Karp over every subset of non-depot nodes at once: `best[S][j]` is
/// the shortest path leaving node 0, visiting exactly `S` and ending at
/// `j ∈ S`. Closing each entry back to node 0 gives `TSP({0} ∪ S)` for all
/// `S` in one pass.
pub struct SubsetTours {
    n: usize,
    parent: Vec<u8>,
    closed: Vec<f64>,
    closing_end: Vec<u8>,
}

impl SubsetTours {
    pub fn new(w: &DistanceMatrix) -> Result<Self> {
        let n = w.n();
        if n == 0 || n > HELD_KARP_MAX_N {
            return Err(Error::InvalidSize(format!("Held-Karp supports 1..={HELD_KARP_MAX_N} nodes, got {n}")));
        }
        let m = n - 1;
        let full = 1usize << m;
        let mut best = vec![f64::INFINITY; full * m.max(1)];
        let mut parent = vec![u8::MAX; full * m.max(1)];
        for j in 0..m {
            best[(1 << j) * m + j] = w.get(0, j + 1);
        }
        for s in 1..full {
            for j in 0..m {
                if s & (1 << j) == 0 {
                    continue;
                }
                let cur = best[s * m + j];
                if !cur.is_finite() {
                    continue;
                }
                for k in 0..m {
                    if s & (1 << k) != 0 {
                        continue;
                    }
                    let t = s | (1 << k);
                    let cand = cur + w.get(j + 1, k + 1);
                    if cand < best[t * m + k] {
                        best[t * m + k] = cand;
                        parent[t * m + k] = j as u8;
                    }
                }
            }
        }
        let mut closed = vec![0.0; full];
        let mut closing_end = vec![u8::MAX; full];
        for s in 1..full {
            if s.count_ones() == 1 {
                let j = s.trailing_zeros() as usize;
                closed[s] = 2.0 * w.get(0, j + 1);
                closing_end[s] = j as u8;
                continue;
            }
            let mut b = f64::INFINITY;
            for j in 0..m {
                if s & (1 << j) != 0 {
                    let c = best[s * m + j] + w.get(j + 1, 0);
                    if c < b {
                        b = c;
                        closing_end[s] = j as u8;
                    }
                }
            }
            closed[s] = b;
        }
        Ok(Self { n, parent, closed, closing_end })
    }

    /// Length of the optimal closed tour through node 0 and the non-depot
    /// nodes of `mask` (bit `v - 1` for node `v`).
    pub fn length(&self, mask: usize) -> f64 {
        self.closed[mask]
    }

    /// The optimal tour for `mask`, starting at node 0.
    pub fn tour(&self, mask: usize) -> Vec<usize> {
        let m = self.n - 1;
        let mut rev = Vec::new();
        let mut s = mask;
        let mut j = self.closing_end[mask];
        while s != 0 {
            rev.push(j as usize + 1);
            let p = self.parent[s * m + j as usize];
            s &= !(1 << j);
            j = p;
        }
        let mut tour = vec![0];
        tour.extend(rev.into_iter().rev());
        tour
    }

    pub fn subsets(&self) -> usize {
        1 << (self.n - 1)
    }
}

fn mask_nodes(mask: usize, n: usize) -> Vec<usize> {
    std::iter::once(DEPOT).chain((1..n).filter(|v| mask & (1 << (v - 1)) != 0)).collect()
}

pub fn held_karp_tsp(w: &DistanceMatrix) -> Result<OracleResult> {
    let n = w.n();
    if n < 3 {
        return Err(Error::InvalidSize(format!("Held-Karp needs at least 3 nodes, got {n}")));
    }
    let table = SubsetTours::new(w)?;
    let full = table.subsets() - 1;
    Ok(OracleResult {
        optimal_value: table.length(full),
        optimal_solution: DiscreteSolution::new(n, table.tour(full))?,
        method: OracleMethod::HeldKarp,
        exact: true,
    })
}

/// Optimal closed-tour length through `nodes`, with the degenerate cases
/// `TSP({v}) = 0` and `TSP({u, v}) = 2 w(u, v)`.
pub fn tsp_of_nodes(w: &DistanceMatrix, nodes: &[usize]) -> Result<f64> {
    match nodes.len() {
        0 | 1 => Ok(0.0),
        2 => Ok(2.0 * w.get(nodes[0], nodes[1])),
        _ => Ok(held_karp_tsp(&w.submatrix(nodes))?.optimal_value),
    }
}

fn check_enum_size(n: usize) -> Result<()> {
    if n > SUBSET_ENUM_MAX_N {
        return Err(Error::InvalidSize(format!("subset enumeration limited to n <= {SUBSET_ENUM_MAX_N}, got {n}")));
    }
    Ok(())
}

/// Exact PCTSP by enumerating depot-containing subsets that meet the prize
/// threshold. Ties go to the lowest subset mask.
pub fn brute_pctsp(inst: &PctspInstance) -> Result<OracleResult> {
    let n = inst.base.n();
    check_enum_size(n)?;
    let table = SubsetTours::new(&distance_matrix(&inst.base))?;
    let mut best: Option<(f64, usize)> = None;
    for mask in 0..table.subsets() {
        let nodes = mask_nodes(mask, n);
        let prize: f64 = nodes.iter().map(|&v| inst.prizes[v]).sum();
        if prize < inst.prize_threshold {
            continue;
        }
        let penalty: f64 = (1..n).filter(|v| mask & (1 << (v - 1)) == 0).map(|v| inst.penalties[v]).sum();
        let value = table.length(mask) + penalty;
        if best.is_none_or(|b| value < b.0) {
            best = Some((value, mask));
        }
    }
    let (value, mask) = best.ok_or_else(|| Error::InfeasibleInstance("no subset meets the prize threshold".into()))?;
    Ok(OracleResult {
        optimal_value: value,
        optimal_solution: DiscreteSolution::new(n, table.tour(mask))?,
        method: OracleMethod::SubsetEnum,
        exact: true,
    })
}

/// Exact OP: the highest-score depot-containing subset whose optimal tour
/// fits the budget. Ties go to the shorter tour, then the lowest mask.
pub fn brute_op(inst: &OpInstance) -> Result<OracleResult> {
    let n = inst.base.n();
    check_enum_size(n)?;
    let table = SubsetTours::new(&distance_matrix(&inst.base))?;
    let mut best: Option<(f64, f64, usize)> = None;
    for mask in 0..table.subsets() {
        let len = table.length(mask);
        if len > inst.budget {
            continue;
        }
        let score: f64 = mask_nodes(mask, n).iter().map(|&v| inst.scores[v]).sum();
        if best.is_none_or(|b| score > b.0 || (score == b.0 && len < b.1)) {
            best = Some((score, len, mask));
        }
    }
    let (score, _, mask) = best.expect("the depot-only tour always fits");
    Ok(OracleResult {
        optimal_value: score,
        optimal_solution: DiscreteSolution::new(n, table.tour(mask))?,
        method: OracleMethod::SubsetEnum,
        exact: true,
    })
}

/// Exact solve of a PCTSP or OP instance (TSP via Held–Karp).
pub fn solve_exact(inst: &Instance) -> Result<OracleResult> {
    match inst {
        Instance::Tsp(t) => held_karp_tsp(&distance_matrix(t)),
        Instance::Pctsp(p) => brute_pctsp(p),
        Instance::Op(o) => brute_op(o),
        Instance::TspTw(tw) => brute_tsptw(tw),
    }
}

/// Exact TSP-TW by enumerating depot-first orders.
pub fn brute_tsptw(inst: &TspTwInstance) -> Result<OracleResult> {
    let n = inst.base.n();
    if n > 10 {
        return Err(Error::InvalidSize(format!("TSP-TW enumeration limited to n <= 10, got {n}")));
    }
    let w = distance_matrix(&inst.base);
    let all: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    crate::energy::for_each_cycle(&all, true, |t| {
        if crate::decode::tsptw_arrival_violation(t, inst) == 0 {
            let len = w.tour_length(t);
            if best.as_ref().is_none_or(|b| len < b.0) {
                best = Some((len, t.to_vec()));
            }
        }
    });
    let (value, tour) = best.ok_or_else(|| Error::InfeasibleInstance("no order meets every window".into()))?;
    Ok(OracleResult {
        optimal_value: value,
        optimal_solution: DiscreteSolution::new(n, tour)?,
        method: OracleMethod::SubsetEnum,
        exact: true,
    })
}

/// `Δ(S) = TSP(V) − TSP(V \ S)`.
pub fn marginal_decrease(w: &DistanceMatrix, s: &[usize]) -> Result<f64> {
    let n = w.n();
    if s.iter().any(|&v| v >= n) {
        return Err(Error::InvalidParam("subset node out of range".into()));
    }
    let rest: Vec<usize> = (0..n).filter(|v| !s.contains(v)).collect();
    if rest.is_empty() {
        return Err(Error::InvalidSize("marginal decrease needs a proper subset".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    Ok(tsp_of_nodes(w, &all)? - tsp_of_nodes(w, &rest)?)
}

/// `Δ(S)` for every subset `S` of non-depot nodes, indexed by mask (bit
/// `v - 1` for node `v`).
#[derive(Clone, Debug)]
pub struct MarginalDecreaseTable {
    pub n: usize,
    pub tsp_all: f64,
    pub delta: Vec<f64>,
}

impl MarginalDecreaseTable {
    /// Each `TSP(V \ S)` solved by its own Held–Karp call on the submatrix.
    pub fn new(w: &DistanceMatrix) -> Result<Self> {
        let n = w.n();
        if n > THEOREM_MAX_N {
            return Err(Error::InvalidSize(format!("marginal decrease table limited to n <= {THEOREM_MAX_N}")));
        }
        let full = (1usize << (n - 1)) - 1;
        let tsp_all = tsp_of_nodes(w, &mask_nodes(full, n))?;
        let delta =
            (0..=full).map(|s| Ok(tsp_all - tsp_of_nodes(w, &mask_nodes(full & !s, n))?)).collect::<Result<Vec<f64>>>()?;
        Ok(Self { n, tsp_all, delta })
    }

    pub fn get(&self, mask: usize) -> f64 {
        self.delta[mask]
    }

    pub fn nodes(&self, mask: usize) -> Vec<usize> {
        (1..self.n).filter(|v| mask & (1 << (v - 1)) != 0).collect()
    }

    /// Count of subset pairs `S ⊂ S'` with `Δ(S) > Δ(S')` beyond tolerance.
    pub fn monotonicity_violations(&self) -> usize {
        let mut bad = 0;
        for s in 0..self.delta.len() {
            for v in 0..(self.n - 1) {
                if s & (1 << v) == 0 && self.delta[s] > self.delta[s | (1 << v)] + EXACT_TOL {
                    bad += 1;
                }
            }
        }
        bad
    }
}

#[derive(Clone, Debug)]
pub struct TheoremReport {
    pub passed: bool,
    /// Value of the exact optimum from subset enumeration.
    pub brute_value: f64,
    /// Value predicted from the marginal-decrease characterization.
    pub predicted_value: f64,
    /// Non-depot nodes skipped by the characterization's optimal subset.
    pub skipped: Vec<usize>,
    pub details: String,
}

impl TheoremReport {
    fn counterexample(&self, inst: &Instance) -> String {
        format!("{}\n--- instance ---\n{}", self.details, crate::instances::format_instance(inst))
    }
}

/// PCTSP without the prize constraint: the optimum equals
/// `TSP(V) + min_S [p(S) − Δ(S)]`, and the optimal tour is an optimal TSP
/// tour on `V \ S*`. The instance's threshold is replaced by 0.
pub fn verify_theorem_pctsp(inst: &PctspInstance) -> Result<TheoremReport> {
    let n = inst.base.n();
    if n > THEOREM_MAX_N {
        return Err(Error::InvalidSize(format!("theorem check limited to n <= {THEOREM_MAX_N}")));
    }
    let mut free = inst.clone();
    free.prize_threshold = 0.0;
    let w = distance_matrix(&inst.base);
    let brute = brute_pctsp(&free)?;
    let table = MarginalDecreaseTable::new(&w)?;

    let mut argmin = (f64::INFINITY, 0usize);
    for mask in 0..table.delta.len() {
        let p: f64 = table.nodes(mask).iter().map(|&v| inst.penalties[v]).sum();
        let value = p - table.get(mask);
        if value < argmin.0 {
            argmin = (value, mask);
        }
    }
    let predicted = table.tsp_all + argmin.0;
    let value_ok = (brute.optimal_value - predicted).abs() <= EXACT_TOL;

    let visited: Vec<usize> = brute.optimal_solution.tour().to_vec();
    let skipped_by_brute: Vec<usize> = (1..n).filter(|&v| !brute.optimal_solution.is_visited(v)).collect();
    let brute_mask: usize = skipped_by_brute.iter().map(|v| 1 << (v - 1)).sum();
    let p_brute: f64 = skipped_by_brute.iter().map(|&v| inst.penalties[v]).sum();
    let attains = (p_brute - table.get(brute_mask) - argmin.0).abs() <= EXACT_TOL;
    let tour_len = w.tour_length(&visited);
    let tour_ok = (tour_len - tsp_of_nodes(&w, &visited)?).abs() <= EXACT_TOL;

    let passed = value_ok && attains && tour_ok;
    Ok(TheoremReport {
        passed,
        brute_value: brute.optimal_value,
        predicted_value: predicted,
        skipped: table.nodes(argmin.1),
        details: format!(
            "pctsp {}: brute {:.12} predicted {:.12} (value {}), skipped set attains argmin: {}, tour optimal on its nodes: {}",
            inst.base.id, brute.optimal_value, predicted, value_ok, attains, tour_ok
        ),
    })
}

#[derive(Clone, Debug)]
pub struct OpTheoremReport {
    /// The characterization as stated: `S* = argmin Δ(S)` subject to
    /// `Δ(S) ≥ TSP(V) − B`, and the optimum visits `N − |S*|` nodes on a
    /// tour of length `TSP(V \ S*)`.
    pub literal: TheoremReport,
    /// Cardinality-first reading: `S*` of minimum size among subsets with
    /// `Δ(S) ≥ TSP(V) − B`, and the optimum visits `N − |S*|` nodes on an
    /// optimal TSP tour of its node set.
    pub cardinality: TheoremReport,
}

impl OpTheoremReport {
    pub fn passed(&self) -> bool {
        self.literal.passed && self.cardinality.passed
    }
}

/// OP with identical scores. Both readings of the characterization are
/// checked; see [`OpTheoremReport`].
pub fn verify_theorem_op(inst: &OpInstance) -> Result<OpTheoremReport> {
    let n = inst.base.n();
    if n > THEOREM_MAX_N {
        return Err(Error::InvalidSize(format!("theorem check limited to n <= {THEOREM_MAX_N}")));
    }
    let s0 = inst.scores.get(1).copied().unwrap_or(0.0);
    if inst.scores[1..].iter().any(|&s| s != s0) {
        return Err(Error::InvalidParam("OP theorem check needs identical non-depot scores".into()));
    }
    let w = distance_matrix(&inst.base);
    let brute = brute_op(inst)?;
    let table = MarginalDecreaseTable::new(&w)?;
    let bound = table.tsp_all - inst.budget;
    let brute_count = brute.optimal_solution.visit_count();
    let brute_len = brute.optimal_solution.length(&w);
    let brute_tour_ok = (brute_len - tsp_of_nodes(&w, brute.optimal_solution.tour())?).abs() <= EXACT_TOL;

    let feasible = |mask: usize| table.get(mask) >= bound - EXACT_TOL;
    let pick = |key: &dyn Fn(usize) -> (usize, f64)| {
        (0..table.delta.len()).filter(|&m| feasible(m)).min_by(|&a, &b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
        })
    };

    let lit = pick(&|m| (0, table.get(m))).expect("skipping every non-depot node is always feasible");
    let lit_count = n - lit.count_ones() as usize;
    let lit_len = table.tsp_all - table.get(lit);
    let lit_ok = lit_count == brute_count && (lit_len - brute_len).abs() <= EXACT_TOL;

    let card = pick(&|m| (m.count_ones() as usize, table.get(m))).unwrap();
    let card_count = n - card.count_ones() as usize;
    let card_ok = card_count == brute_count && brute_tour_ok && brute_len <= inst.budget;

    let value = |count: usize| s0 * (count - 1) as f64;
    Ok(OpTheoremReport {
        literal: TheoremReport {
            passed: lit_ok,
            brute_value: brute.optimal_value,
            predicted_value: value(lit_count),
            skipped: table.nodes(lit),
            details: format!(
                "op {} literal: brute visits {brute_count} (length {brute_len:.12}), characterization visits {lit_count} (length {lit_len:.12})",
                inst.base.id
            ),
        },
        cardinality: TheoremReport {
            passed: card_ok,
            brute_value: brute.optimal_value,
            predicted_value: value(card_count),
            skipped: table.nodes(card),
            details: format!(
                "op {} cardinality: brute visits {brute_count}, characterization visits {card_count}, brute tour optimal on its nodes: {brute_tour_ok}",
                inst.base.id
            ),
        },
    })
}

/// Renders a counterexample for a failed check.
pub fn counterexample_dump(report: &TheoremReport, inst: &Instance) -> String {
    report.counterexample(inst)
}

// ---------------------------------------------------------------------------
// Node-splitting reduction
// ---------------------------------------------------------------------------

/// Directed matrix on `2n` nodes: node `i` becomes `i_in = 2i` and
/// `i_out = 2i + 1`, with arc `i_in → i_out` of weight `score_i` and arcs
/// `i_out → j_in` of weight `w(i, j)`. All other arcs are absent (infinite).
/// A Hamiltonian cycle of finite length alternates in/out pairs and costs
/// the original tour length plus the sum of all scores.
pub fn node_weighted_reduction(scores: &[f64], w: &DistanceMatrix) -> Result<DistanceMatrix> {
    let n = w.n();
    if scores.len() != n {
        return Err(Error::DimMismatch { expected: n, got: scores.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParam("node scores must be finite".into()));
    }
    let m = SquareMatrix::from_fn(2 * n, |a, b| {
        let (i, a_out) = (a / 2, a % 2 == 1);
        let (j, b_out) = (b / 2, b % 2 == 1);
        match (a_out, b_out) {
            (false, true) if i == j => scores[i],
            (true, false) if i != j => w.get(i, j),
            _ => f64::INFINITY,
        }
    });
    Ok(DistanceMatrix::asymmetric(m))
}

/// Optimal directed Hamiltonian cycle by enumerating orders (node 0 fixed
/// first). Intended for the small expanded graphs of the reduction.
pub fn brute_force_atsp(w: &DistanceMatrix) -> Result<(f64, Vec<usize>)> {
    let n = w.n();
    if !(2..=12).contains(&n) {
        return Err(Error::InvalidSize(format!("directed enumeration supports 2..=12 nodes, got {n}")));
    }
    let mut best = (f64::INFINITY, Vec::new());
    let mut path = vec![0];
    let mut used = vec![false; n];
    used[0] = true;
    // Partial-length pruning needs a lower bound on the remaining arcs, which
    // is below zero once negative node weights enter the split graph.
    let floor =
        (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| w.get(a, b)).filter(|x| x.is_finite()).fold(0.0, f64::min);
    atsp_dfs(w, floor, &mut path, &mut used, 0.0, &mut best);
    if !best.0.is_finite() {
        return Err(Error::InfeasibleInstance("no finite directed cycle".into()));
    }
    Ok(best)
}

fn atsp_dfs(w: &DistanceMatrix, floor: f64, path: &mut Vec<usize>, used: &mut [bool], len: f64, best: &mut (f64, Vec<usize>)) {
    let n = used.len();
    let cur = *path.last().unwrap();
    if path.len() == n {
        let total = len + w.get(cur, 0);
        if total < best.0 {
            *best = (total, path.clone());
        }
        return;
    }
    for v in 0..n {
        let step = w.get(cur, v);
        let remaining = (n - path.len()) as f64;
        if used[v] || !step.is_finite() || len + step + remaining * floor >= best.0 {
            continue;
        }
        used[v] = true;
        path.push(v);
        atsp_dfs(w, floor, path, used, len + step, best);
        path.pop();
        used[v] = false;
    }
}

/// Maps an expanded-graph cycle back to original nodes (the `in` copies in
/// visiting order).
pub fn contract_split_tour(tour: &[usize]) -> Vec<usize> {
    tour.iter().filter(|&&a| a % 2 == 0).map(|&a| a / 2).collect()
}

// ---------------------------------------------------------------------------
// Time-expanded graph
// ---------------------------------------------------------------------------

pub const TSPTW_EXPAND_MAX_N: usize = 5;
pub const TSPTW_EXPAND_MAX_H: u32 = 12;

/// Replica `(node, time)` for every time inside the node's window, and arcs
/// `i_t → j_{t+1}` between distinct original nodes. A TSP-TW tour is a path
/// from the depot replica at time 0 that enters exactly one replica of each
/// non-depot node and ends in a depot replica.
#[derive(Clone, Debug)]
pub struct TimeExpandedGraph {
    pub replicas: Vec<(usize, u32)>,
    pub arcs: Vec<(usize, usize)>,
    pub out_arcs: Vec<Vec<usize>>,
    pub n_original: usize,
}

pub fn tsptw_expand(inst: &TspTwInstance) -> Result<TimeExpandedGraph> {
    let n = inst.base.n();
    if n > TSPTW_EXPAND_MAX_N || inst.horizon > TSPTW_EXPAND_MAX_H {
        return Err(Error::InvalidSize(format!(
            "time expansion limited to n <= {TSPTW_EXPAND_MAX_N}, horizon <= {TSPTW_EXPAND_MAX_H}"
        )));
    }
    let mut replicas = Vec::new();
    for (i, &(e, l)) in inst.windows.iter().enumerate() {
        for t in e..=l {
            replicas.push((i, t));
        }
    }
    let mut arcs = Vec::new();
    let mut out_arcs = vec![Vec::new(); replicas.len()];
    for (a, &(i, t)) in replicas.iter().enumerate() {
        for (b, &(j, u)) in replicas.iter().enumerate() {
            if i != j && u == t + 1 {
                out_arcs[a].push(arcs.len());
                arcs.push((a, b));
            }
        }
    }
    Ok(TimeExpandedGraph { replicas, arcs, out_arcs, n_original: n })
}

impl TimeExpandedGraph {
    /// Entries into each original node: `c_i = Σ_t Σ_{arcs into i_t} x_a`.
    fn entries(&self, x: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_original];
        for (a, &(_, head)) in self.arcs.iter().enumerate() {
            c[self.replicas[head].0] += x[a];
        }
        c
    }

    /// Replica constraint energy `Σ_i (c_i − 1)²` over an arc selection
    /// (binary or relaxed).
    pub fn replica_energy(&self, x: &[f64]) -> f64 {
        self.entries(x).iter().map(|c| (c - 1.0) * (c - 1.0)).sum()
    }

    /// Gradient of [`Self::replica_energy`] per arc: `2 (c_head − 1)`.
    pub fn replica_energy_grad(&self, x: &[f64]) -> Vec<f64> {
        let c = self.entries(x);
        self.arcs.iter().map(|&(_, head)| 2.0 * (c[self.replicas[head].0] - 1.0)).collect()
    }

    /// Every arc path of length `n` from the depot replica at time 0 that
    /// ends in a depot replica and has zero replica energy, as original-node
    /// orders (depot first).
    pub fn feasible_orders(&self) -> Vec<Vec<usize>> {
        let start = self.replicas.iter().position(|&(i, t)| i == DEPOT && t == 0);
        let mut out = Vec::new();
        let Some(start) = start else { return out };
        let mut chosen = Vec::new();
        self.walk(start, &mut chosen, &mut out);
        out
    }

    fn walk(&self, at: usize, chosen: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if chosen.len() == self.n_original {
            let mut x = vec![0.0; self.arcs.len()];
            for &a in chosen.iter() {
                x[a] = 1.0;
            }
            if self.replicas[at].0 == DEPOT && self.replica_energy(&x) == 0.0 {
                let order = std::iter::once(DEPOT)
                    .chain(chosen[..chosen.len() - 1].iter().map(|&a| self.replicas[self.arcs[a].1].0))
                    .collect();
                out.push(order);
            }
            return;
        }
        for &a in &self.out_arcs[at] {
            chosen.push(a);
            self.walk(self.arcs[a].1, chosen, out);
            chosen.pop();
        }
    }
}

// ---------------------------------------------------------------------------
// Iterated local search
// ---------------------------------------------------------------------------

fn pctsp_cost(tour: &[usize], inst: &PctspInstance, w: &DistanceMatrix) -> f64 {
    let mut visited = vec![false; inst.base.n()];
    for &v in tour {
        visited[v] = true;
    }
    w.tour_length(tour) + (0..visited.len()).filter(|&v| !visited[v]).map(|v| inst.penalties[v]).sum::<f64>()
}

/// Insert any node whose penalty exceeds its cheapest detour, most
/// profitable first; returns whether anything changed.
fn add_profitable(tour: &mut Vec<usize>, inst: &PctspInstance, w: &DistanceMatrix) -> bool {
    let n = inst.base.n();
    let mut changed = false;
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for v in 1..n {
            if tour.contains(&v) {
                continue;
            }
            let (k, cost) = cheapest_insertion(tour, v, w);
            let gain = inst.penalties[v] - cost;
            if gain > 1e-12 && best.is_none_or(|b| gain > b.2) {
                best = Some((v, k, gain));
            }
        }
        let Some((v, k, _)) = best else { return changed };
        tour.insert(k + 1, v);
        changed = true;
    }
}

fn local_search(tour: &mut Vec<usize>, inst: &PctspInstance, w: &DistanceMatrix) {
    loop {
        *tour = two_opt(tour, w, 100);
        let added = add_profitable(tour, inst, w);
        let dropped = prune_pctsp(tour, inst, w) > 0;
        if !added && !dropped {
            *tour = two_opt(tour, w, 100);
            return;
        }
    }
}

/// Cheapest-ratio construction until the threshold holds.
fn construct_pctsp(inst: &PctspInstance, w: &DistanceMatrix) -> Vec<usize> {
    let n = inst.base.n();
    let mut tour = vec![DEPOT];
    let mut prize = 0.0;
    while prize < inst.prize_threshold {
        let best = (1..n)
            .filter(|v| !tour.contains(v))
            .map(|v| {
                let (k, c) = cheapest_insertion(&tour, v, w);
                (v, k, inst.prizes[v] / c.max(1e-12))
            })
            .max_by(|a, b| a.2.total_cmp(&b.2).then(b.0.cmp(&a.0)));
        let Some((v, k, _)) = best else { break };
        tour.insert(k + 1, v);
        prize += inst.prizes[v];
    }
    tour
}

fn perturb(tour: &[usize], inst: &PctspInstance, w: &DistanceMatrix, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = inst.base.n();
    let mut t = tour.to_vec();
    let m = t.len();
    if m >= 8 {
        // Double bridge on the non-depot segment.
        let mut cuts: Vec<usize> = (1..m).collect::<Vec<_>>().choose_multiple(rng, 3).copied().collect();
        cuts.sort_unstable();
        let (a, b, c) = (cuts[0], cuts[1], cuts[2]);
        let mut next = t[..a].to_vec();
        next.extend_from_slice(&t[c..]);
        next.extend_from_slice(&t[b..c]);
        next.extend_from_slice(&t[a..b]);
        t = next;
    } else if m >= 4 {
        let i = rng.gen_range(1..m - 1);
        let j = rng.gen_range(i + 1..m);
        t[i..=j].reverse();
    }
    for _ in 0..rng.gen_range(1..=2) {
        let v = rng.gen_range(1..n);
        if let Some(k) = t.iter().position(|&u| u == v) {
            let prize: f64 = t.iter().map(|&u| inst.prizes[u]).sum();
            if prize - inst.prizes[v] >= inst.prize_threshold {
                t.remove(k);
            }
        } else {
            let (k, _) = cheapest_insertion(&t, v, w);
            t.insert(k + 1, v);
        }
    }
    t
}

/// Iterated local search for PCTSP: construction, then repeated
/// perturbation and local search with accept-if-better.
pub fn ils_pctsp(inst: &PctspInstance, iterations: usize, seed: u64) -> Result<OracleResult> {
    let n = inst.base.n();
    let w = distance_matrix(&inst.base);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = construct_pctsp(inst, &w);
    if iterations > 0 {
        local_search(&mut best, inst, &w);
    }
    let mut best_cost = pctsp_cost(&best, inst, &w);
    for _ in 0..iterations {
        let mut cand = perturb(&best, inst, &w, &mut rng);
        local_search(&mut cand, inst, &w);
        let cost = pctsp_cost(&cand, inst, &w);
        if cost < best_cost - 1e-12 {
            best = cand;
            best_cost = cost;
        }
    }
    Ok(OracleResult {
        optimal_value: best_cost,
        optimal_solution: DiscreteSolution::new(n, best)?,
        method: OracleMethod::Ils,
        exact: false,
    })
}
