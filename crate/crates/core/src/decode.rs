//! Heatmap → discrete solution, one decoder per problem kind. Every decoder
//! returns a solution that satisfies the hard constraints of its kind (the
//! TSP-TW decoder reports infeasibility instead when its search budget runs
//! out).
//!
//! Objectives are reported in each kind's natural sense: tour cost for TSP,
//! TSP-TW and PCTSP, collected score for OP.

use crate::energy::DiscreteSolution;
use crate::error::Result;
use crate::instances::{Instance, OpInstance, PctspInstance, TspTwInstance, DEPOT};
use crate::matrix::{DistanceMatrix, Heatmap};

/// Improvement threshold for local-search moves.
const EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedTour {
    pub solution: DiscreteSolution,
    pub objective: f64,
    pub feasible: bool,
    /// Nodes inserted or removed by the repair and prune phases.
    pub repair_ops: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeOptions {
    pub two_opt: bool,
    pub max_two_opt_passes: usize,
    /// Probability an edge needs for the PCTSP walk to follow it.
    pub pctsp_follow_threshold: f64,
    /// Added to the heatmap support of an OP insertion so zero-support nodes
    /// remain insertable.
    pub op_support_floor: f64,
    /// Node expansions allowed to the TSP-TW backtracking search.
    pub tsptw_max_expansions: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            two_opt: false,
            max_two_opt_passes: 50,
            pctsp_follow_threshold: 0.5,
            op_support_floor: 0.05,
            tsptw_max_expansions: 200_000,
        }
    }
}

/// Upper-triangle edges sorted by probability descending; ties keep the
/// lexicographic `(i, j)` order.
fn ranked_edges(h: &Heatmap) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize, f64)> = h.upper().collect();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2));
    edges.into_iter().map(|(i, j, _)| (i, j)).collect()
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Greedy edge selection into a Hamiltonian cycle, returned as a node order
/// starting at node 0.
pub fn greedy_cycle(h: &Heatmap) -> Vec<usize> {
    let n = h.n();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut deg = vec![0usize; n];
    let mut adj = vec![Vec::with_capacity(2); n];
    let mut ds = DisjointSet::new(n);
    let mut accepted = 0;
    for (i, j) in ranked_edges(h) {
        if deg[i] >= 2 || deg[j] >= 2 {
            continue;
        }
        let closes = accepted == n - 1;
        if !closes && !ds.union(i, j) {
            continue;
        }
        deg[i] += 1;
        deg[j] += 1;
        adj[i].push(j);
        adj[j].push(i);
        accepted += 1;
        if accepted == n {
            break;
        }
    }
    debug_assert_eq!(accepted, n);
    let mut tour = Vec::with_capacity(n);
    let mut prev = 0;
    let mut cur = *adj[0].iter().min().unwrap();
    tour.push(0);
    while cur != 0 {
        tour.push(cur);
        let next = if adj[cur][0] == prev { adj[cur][1] } else { adj[cur][0] };
        prev = cur;
        cur = next;
    }
    tour
}

pub fn greedy_tsp(h: &Heatmap, w: &DistanceMatrix) -> Result<DecodedTour> {
    h.check_dim(w.n())?;
    let tour = greedy_cycle(h);
    let objective = w.tour_length(&tour);
    Ok(DecodedTour { solution: DiscreteSolution::new(w.n(), tour)?, objective, feasible: true, repair_ops: 0 })
}

/// Cost of inserting `v` between tour positions `k` and `k + 1` (cyclic).
fn insertion_cost(tour: &[usize], k: usize, v: usize, w: &DistanceMatrix) -> f64 {
    match tour.len() {
        0 => 0.0,
        1 => 2.0 * w.get(tour[0], v),
        m => {
            let (a, b) = (tour[k], tour[(k + 1) % m]);
            w.get(a, v) + w.get(v, b) - w.get(a, b)
        }
    }
}

/// Cheapest insertion position (insert after index `k`) and its detour.
pub fn cheapest_insertion(tour: &[usize], v: usize, w: &DistanceMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..tour.len().max(1) {
        let c = insertion_cost(tour, k, v, w);
        if c < best.1 {
            best = (k, c);
        }
    }
    best
}

/// Length saved by removing the node at position `k`.
fn removal_saving(tour: &[usize], k: usize, w: &DistanceMatrix) -> f64 {
    let m = tour.len();
    match m {
        0 | 1 => 0.0,
        2 => 2.0 * w.get(tour[0], tour[1]),
        _ => {
            let (a, v, b) = (tour[(k + m - 1) % m], tour[k], tour[(k + 1) % m]);
            w.get(a, v) + w.get(v, b) - w.get(a, b)
        }
    }
}

fn collected_prize(tour: &[usize], inst: &PctspInstance) -> f64 {
    tour.iter().map(|&v| inst.prizes[v]).sum()
}

/// PCTSP: walk from the depot along high-probability edges, insert nodes by
/// prize per detour until the threshold holds, then drop nodes whose detour
/// exceeds their penalty.
pub fn greedy_pctsp(h: &Heatmap, inst: &PctspInstance, w: &DistanceMatrix, opts: &DecodeOptions) -> Result<DecodedTour> {
    let n = inst.base.n();
    h.check_dim(n)?;
    let mut in_tour = vec![false; n];
    let mut tour = vec![DEPOT];
    in_tour[DEPOT] = true;
    let mut cur = DEPOT;
    loop {
        let next = (0..n).filter(|&v| !in_tour[v]).fold(None, |best: Option<(usize, f64)>, v| match best {
            Some((_, p)) if p >= h.get(cur, v) => best,
            _ => Some((v, h.get(cur, v))),
        });
        match next {
            Some((v, p)) if p >= opts.pctsp_follow_threshold && (tour.len() < 2 || p >= h.get(cur, DEPOT)) => {
                tour.push(v);
                in_tour[v] = true;
                cur = v;
            }
            _ => break,
        }
    }

    let mut repair_ops = 0;
    let mut prize = collected_prize(&tour, inst);
    while prize < inst.prize_threshold {
        let mut best: Option<(usize, usize, f64)> = None;
        for v in (0..n).filter(|&v| !in_tour[v]) {
            let (k, cost) = cheapest_insertion(&tour, v, w);
            let ratio = inst.prizes[v] / cost.max(EPS);
            if best.is_none_or(|b| ratio > b.2) {
                best = Some((v, k, ratio));
            }
        }
        let Some((v, k, _)) = best else { break };
        tour.insert(k + 1, v);
        in_tour[v] = true;
        prize += inst.prizes[v];
        repair_ops += 1;
    }

    repair_ops += prune_pctsp(&mut tour, inst, w);
    if opts.two_opt {
        tour = two_opt(&tour, w, opts.max_two_opt_passes);
    }
    finish(Instance::Pctsp(inst.clone()), tour, repair_ops)
}

/// Removes, one at a time, the node whose saving most exceeds its penalty
/// while the prize threshold still holds. Returns the number of removals.
pub fn prune_pctsp(tour: &mut Vec<usize>, inst: &PctspInstance, w: &DistanceMatrix) -> usize {
    let mut removed = 0;
    let mut prize = collected_prize(tour, inst);
    loop {
        let mut best: Option<(usize, f64)> = None;
        for k in 1..tour.len() {
            let v = tour[k];
            if prize - inst.prizes[v] < inst.prize_threshold {
                continue;
            }
            let gain = removal_saving(tour, k, w) - inst.penalties[v];
            if gain > EPS && best.is_none_or(|b| gain > b.1) {
                best = Some((k, gain));
            }
        }
        let Some((k, _)) = best else { break };
        prize -= inst.prizes[tour[k]];
        tour.remove(k);
        removed += 1;
    }
    removed
}

/// OP: grow from the depot, repeatedly inserting the node with the best
/// `score * support / detour` whose insertion keeps the length within the
/// budget. Support is the mean heatmap probability of the two edges the
/// insertion creates.
pub fn greedy_op(h: &Heatmap, inst: &OpInstance, w: &DistanceMatrix, opts: &DecodeOptions) -> Result<DecodedTour> {
    let n = inst.base.n();
    h.check_dim(n)?;
    let mut tour = vec![DEPOT];
    let mut in_tour = vec![false; n];
    in_tour[DEPOT] = true;
    let mut length = 0.0;
    loop {
        let mut best: Option<(usize, usize, f64, f64)> = None;
        for v in (0..n).filter(|&v| !in_tour[v]) {
            for k in 0..tour.len() {
                let cost = insertion_cost(&tour, k, v, w);
                if length + cost > inst.budget {
                    continue;
                }
                let (a, b) = (tour[k], tour[(k + 1) % tour.len()]);
                let support = 0.5 * (h.get(a, v) + h.get(v, b)) + opts.op_support_floor;
                let ratio = inst.scores[v] * support / cost.max(EPS);
                if best.is_none_or(|bb| ratio > bb.2) {
                    best = Some((v, k, ratio, cost));
                }
            }
        }
        let Some((v, k, _, cost)) = best else { break };
        tour.insert(k + 1, v);
        in_tour[v] = true;
        length += cost;
    }
    if opts.two_opt {
        tour = two_opt(&tour, w, opts.max_two_opt_passes);
    }
    // Accumulated insertion costs can drift from the recomputed length by a
    // few ulps; drop the cheapest-scoring node if that pushes it over.
    while tour.len() > 1 && w.tour_length(&tour) > inst.budget {
        let k = (1..tour.len()).min_by(|&a, &b| inst.scores[tour[a]].total_cmp(&inst.scores[tour[b]])).unwrap();
        tour.remove(k);
    }
    finish(Instance::Op(inst.clone()), tour, 0)
}

/// Arrival-time violations of a depot-first tour under unit travel time
/// without waiting: the node at position `k` is reached at time `k` and the
/// return to the depot happens at time `len`. Counts nodes (and the return)
/// outside their windows.
pub fn tsptw_arrival_violation(tour: &[usize], inst: &TspTwInstance) -> usize {
    let within = |v: usize, t: usize| {
        let (e, l) = inst.windows[v];
        (e as usize..=l as usize).contains(&t)
    };
    let mut bad = tour.iter().enumerate().skip(1).filter(|&(k, &v)| !within(v, k)).count();
    if let Some(&first) = tour.first() {
        if !within(first, 0) {
            bad += 1;
        }
        if !within(first, tour.len()) {
            bad += 1;
        }
    }
    bad
}

/// TSP-TW: depth-first search over depot-first orders, trying successors in
/// descending heatmap probability and pruning any prefix that misses a
/// window (including windows that have already closed for unvisited nodes).
/// Falls back to the greedy cycle, reported infeasible, if the budget runs
/// out.
pub fn greedy_tsptw(h: &Heatmap, inst: &TspTwInstance, opts: &DecodeOptions) -> Result<DecodedTour> {
    let n = inst.base.n();
    h.check_dim(n)?;
    let mut path = vec![DEPOT];
    let mut used = vec![false; n];
    used[DEPOT] = true;
    let mut budget = opts.tsptw_max_expansions;
    let found = tsptw_dfs(h, inst, &mut path, &mut used, &mut budget);
    let tour = if found {
        path
    } else {
        let cyc = greedy_cycle(h);
        let start = cyc.iter().position(|&v| v == DEPOT).unwrap();
        cyc[start..].iter().chain(&cyc[..start]).copied().collect()
    };
    finish(Instance::TspTw(inst.clone()), tour, 0)
}

fn tsptw_dfs(h: &Heatmap, inst: &TspTwInstance, path: &mut Vec<usize>, used: &mut [bool], budget: &mut usize) -> bool {
    let n = used.len();
    let t = path.len();
    if t == n {
        let (e, l) = inst.windows[DEPOT];
        return (e as usize..=l as usize).contains(&n);
    }
    // Every unvisited node must still be reachable inside its window.
    if (0..n).any(|v| !used[v] && (inst.windows[v].1 as usize) < t) {
        return false;
    }
    let cur = *path.last().unwrap();
    let mut cands: Vec<usize> =
        (0..n).filter(|&v| !used[v] && (inst.windows[v].0 as usize..=inst.windows[v].1 as usize).contains(&t)).collect();
    cands.sort_by(|&a, &b| h.get(cur, b).total_cmp(&h.get(cur, a)).then(a.cmp(&b)));
    for v in cands {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        path.push(v);
        used[v] = true;
        if tsptw_dfs(h, inst, path, used, budget) {
            return true;
        }
        path.pop();
        used[v] = false;
    }
    false
}

fn finish(inst: Instance, tour: Vec<usize>, repair_ops: usize) -> Result<DecodedTour> {
    let solution = DiscreteSolution::new(inst.n(), tour)?;
    let report = check_feasible(&solution, &inst);
    let objective = natural_objective(&solution, &inst);
    Ok(DecodedTour { solution, objective, feasible: report.feasible, repair_ops })
}

/// Tour cost for minimization kinds, collected score for OP.
pub fn natural_objective(sol: &DiscreteSolution, inst: &Instance) -> f64 {
    let w = inst.distances();
    match inst {
        Instance::Tsp(_) | Instance::TspTw(_) => sol.length(&w),
        Instance::Pctsp(p) => sol.length(&w) + (0..inst.n()).filter(|&v| !sol.is_visited(v)).map(|v| p.penalties[v]).sum::<f64>(),
        Instance::Op(o) => sol.tour().iter().map(|&v| o.scores[v]).sum(),
    }
}

/// Decodes with the decoder matching the instance kind.
pub fn decode(h: &Heatmap, inst: &Instance, opts: &DecodeOptions) -> Result<DecodedTour> {
    let w = inst.distances();
    match inst {
        Instance::Tsp(_) => {
            let mut d = greedy_tsp(h, &w)?;
            if opts.two_opt {
                let tour = two_opt(d.solution.tour(), &w, opts.max_two_opt_passes);
                d.objective = w.tour_length(&tour);
                d.solution = DiscreteSolution::new(w.n(), tour)?;
            }
            Ok(d)
        }
        Instance::Pctsp(p) => greedy_pctsp(h, p, &w, opts),
        Instance::Op(o) => greedy_op(h, o, &w, opts),
        Instance::TspTw(tw) => greedy_tsptw(h, tw, opts),
    }
}

/// First-improvement 2-opt. Position 0 never moves, so depot-first tours
/// stay depot-first.
pub fn two_opt(tour: &[usize], w: &DistanceMatrix, max_passes: usize) -> Vec<usize> {
    let mut t = tour.to_vec();
    let m = t.len();
    if m < 4 {
        return t;
    }
    for _ in 0..max_passes {
        let mut improved = false;
        'scan: for i in 0..m - 2 {
            for j in (i + 2)..m {
                if i == 0 && j == m - 1 {
                    continue;
                }
                let (a, b, c, d) = (t[i], t[i + 1], t[j], t[(j + 1) % m]);
                let delta = w.get(a, c) + w.get(b, d) - w.get(a, b) - w.get(c, d);
                if delta < -EPS {
                    t[i + 1..=j].reverse();
                    improved = true;
                    break 'scan;
                }
            }
        }
        if !improved {
            break;
        }
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Magnitude of the violated constraint: missing prize, budget
    /// overshoot, count of window misses or unvisited nodes.
    pub violation: f64,
    pub message: String,
}

pub fn check_feasible(sol: &DiscreteSolution, inst: &Instance) -> FeasibilityReport {
    let ok = |msg: &str| FeasibilityReport { feasible: true, violation: 0.0, message: msg.into() };
    let bad = |v: f64, msg: String| FeasibilityReport { feasible: false, violation: v, message: msg };
    let n = inst.n();
    if sol.n() != n {
        return bad(f64::INFINITY, format!("solution sized for {} nodes, instance has {n}", sol.n()));
    }
    let missing = n - sol.visit_count();
    match inst {
        Instance::Tsp(_) => {
            if missing > 0 {
                return bad(missing as f64, format!("{missing} nodes unvisited"));
            }
            ok("hamiltonian cycle")
        }
        Instance::Pctsp(p) => {
            if sol.tour()[0] != DEPOT {
                return bad(f64::INFINITY, "tour does not start at the depot".into());
            }
            let prize = collected_prize(sol.tour(), p);
            if prize < p.prize_threshold {
                return bad(p.prize_threshold - prize, format!("prize {prize} below threshold {}", p.prize_threshold));
            }
            ok("prize threshold met")
        }
        Instance::Op(o) => {
            if sol.tour()[0] != DEPOT {
                return bad(f64::INFINITY, "tour does not start at the depot".into());
            }
            let len = sol.length(&inst.distances());
            if len > o.budget {
                return bad(len - o.budget, format!("length {len} exceeds budget {}", o.budget));
            }
            ok("within budget")
        }
        Instance::TspTw(tw) => {
            if missing > 0 {
                return bad(missing as f64, format!("{missing} nodes unvisited"));
            }
            if sol.tour()[0] != DEPOT {
                return bad(f64::INFINITY, "tour does not start at the depot".into());
            }
            let misses = tsptw_arrival_violation(sol.tour(), tw);
            if misses > 0 {
                return bad(misses as f64, format!("{misses} arrivals outside their windows"));
            }
            ok("all windows met")
        }
    }
}
