//! Problem objectives on relaxed heatmaps and on discrete tours.
//!
//! The relaxed objectives replace each hard constraint `g <= 0` by the
//! quadratic hinge `mu * max(0, g)^2`, which is zero exactly on the feasible
//! set and differentiable everywhere. Node visits are relaxed to
//! `y_v = clamp(deg_h(v) / 2, 0, 1)`, exact for tours of three or more nodes.

use crate::error::{Error, Result};
use crate::instances::{Instance, OpInstance, PctspInstance, TspTwInstance, DEPOT};
use crate::matrix::{DistanceMatrix, Heatmap, SquareMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyParams {
    /// Constraint coefficient of the hinge barrier.
    pub mu: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self { mu: 1.0 }
    }
}

impl EnergyParams {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParam(format!("mu must be positive, got {mu}")));
        }
        Ok(Self { mu })
    }
}

/// A closed tour (depot first for the variants) plus its visit mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DiscreteSolution {
    tour: Vec<usize>,
    visited: Vec<bool>,
}

impl DiscreteSolution {
    pub fn new(n: usize, tour: Vec<usize>) -> Result<Self> {
        if tour.is_empty() {
            return Err(Error::InvalidTour("empty tour".into()));
        }
        let mut visited = vec![false; n];
        for &v in &tour {
            if v >= n {
                return Err(Error::InvalidTour(format!("node {v} out of range for n = {n}")));
            }
            if visited[v] {
                return Err(Error::InvalidTour(format!("node {v} visited twice")));
            }
            visited[v] = true;
        }
        Ok(Self { tour, visited })
    }

    pub fn tour(&self) -> &[usize] {
        &self.tour
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    pub fn n(&self) -> usize {
        self.visited.len()
    }

    pub fn is_visited(&self, v: usize) -> bool {
        self.visited[v]
    }

    pub fn visit_count(&self) -> usize {
        self.tour.len()
    }

    pub fn length(&self, w: &DistanceMatrix) -> f64 {
        w.tour_length(&self.tour)
    }

    pub fn adjacency(&self) -> Heatmap {
        Heatmap::from_tour(self.n(), &self.tour)
    }
}

/// `y_v = clamp(sum_u h[u][v] / 2, 0, 1)`.
pub fn node_visit_relaxation(h: &Heatmap) -> Vec<f64> {
    (0..h.n()).map(|v| (0.5 * h.row(v).iter().sum::<f64>()).clamp(0.0, 1.0)).collect()
}

/// Derivative of `y_v` with respect to any incident edge entry: `1/2` while
/// unsaturated, zero once the half-degree reaches 1.
fn relaxation_slope(h: &Heatmap) -> Vec<f64> {
    (0..h.n()).map(|v| if 0.5 * h.row(v).iter().sum::<f64>() < 1.0 { 0.5 } else { 0.0 }).collect()
}

/// `sum_{u<v} w[u][v] h[u][v]`.
pub fn phi_tsp(h: &Heatmap, w: &DistanceMatrix) -> Result<f64> {
    h.check_dim(w.n())?;
    Ok(h.upper().map(|(i, j, p)| w.get(i, j) * p).sum())
}

pub fn phi_pctsp(h: &Heatmap, inst: &PctspInstance, params: &EnergyParams) -> Result<f64> {
    let w = crate::instances::distance_matrix(&inst.base);
    let length = phi_tsp(h, &w)?;
    let y = node_visit_relaxation(h);
    let penalty: f64 = inst.penalties.iter().zip(&y).map(|(p, y)| p * (1.0 - y)).sum();
    let collected: f64 = inst.prizes.iter().zip(&y).map(|(r, y)| r * y).sum();
    let g = (inst.prize_threshold - collected).max(0.0);
    Ok(length + penalty + params.mu * g * g)
}

pub fn phi_op(h: &Heatmap, inst: &OpInstance, params: &EnergyParams) -> Result<f64> {
    let w = crate::instances::distance_matrix(&inst.base);
    let length = phi_tsp(h, &w)?;
    let y = node_visit_relaxation(h);
    let score: f64 = inst.scores.iter().zip(&y).map(|(s, y)| s * y).sum();
    let g = (length - inst.budget).max(0.0);
    Ok(-score + params.mu * g * g)
}

/// Relaxed objective for any instance. TSP-TW uses the tour-length term;
/// its window structure is handled by the decoder and by the time-expanded
/// replica energy in [`crate::oracles::TimeExpandedGraph`].
pub fn phi(h: &Heatmap, inst: &Instance, params: &EnergyParams) -> Result<f64> {
    match inst {
        Instance::Tsp(b) | Instance::TspTw(TspTwInstance { base: b, .. }) => phi_tsp(h, &crate::instances::distance_matrix(b)),
        Instance::Pctsp(p) => phi_pctsp(h, p, params),
        Instance::Op(o) => phi_op(h, o, params),
    }
}

/// Analytic gradient of [`phi`] with respect to each symmetric edge entry
/// `h[u][v] = h[v][u]` (one variable per undirected edge). Symmetric with
/// zero diagonal.
pub fn grad_phi(h: &Heatmap, inst: &Instance, params: &EnergyParams) -> Result<SquareMatrix> {
    let w = inst.distances();
    h.check_dim(w.n())?;
    let n = w.n();
    let grad = match inst {
        Instance::Tsp(_) | Instance::TspTw(_) => SquareMatrix::symmetric_from_fn(n, |i, j| w.get(i, j)),
        Instance::Pctsp(p) => {
            let y = node_visit_relaxation(h);
            let slope = relaxation_slope(h);
            let collected: f64 = p.prizes.iter().zip(&y).map(|(r, y)| r * y).sum();
            let g = (p.prize_threshold - collected).max(0.0);
            // d/dy_v of [p_v (1 - y_v) + mu g^2] = -p_v - 2 mu g r_v
            let node_grad: Vec<f64> = (0..n).map(|v| -p.penalties[v] - 2.0 * params.mu * g * p.prizes[v]).collect();
            SquareMatrix::symmetric_from_fn(n, |i, j| w.get(i, j) + node_grad[i] * slope[i] + node_grad[j] * slope[j])
        }
        Instance::Op(o) => {
            let slope = relaxation_slope(h);
            let length = phi_tsp(h, &w)?;
            let g = (length - o.budget).max(0.0);
            SquareMatrix::symmetric_from_fn(n, |i, j| {
                2.0 * params.mu * g * w.get(i, j) - o.scores[i] * slope[i] - o.scores[j] * slope[j]
            })
        }
    };
    Ok(grad)
}

/// Exact objective of a discrete solution: tour length for TSP and TSP-TW,
/// length plus unvisited penalties for PCTSP, negated collected score for
/// OP. Hard constraints are checked separately (see `decode::check_feasible`).
pub fn phi_discrete(sol: &DiscreteSolution, inst: &Instance) -> Result<f64> {
    let n = inst.n();
    if sol.n() != n {
        return Err(Error::DimMismatch { expected: n, got: sol.n() });
    }
    let w = inst.distances();
    match inst {
        Instance::Tsp(_) | Instance::TspTw(_) => {
            if sol.visit_count() != n {
                return Err(Error::InvalidTour(format!("tour visits {} of {n} nodes", sol.visit_count())));
            }
            if matches!(inst, Instance::TspTw(_)) && sol.tour()[0] != DEPOT {
                return Err(Error::InvalidTour("TSP-TW tour must start at the depot".into()));
            }
            Ok(sol.length(&w))
        }
        Instance::Pctsp(p) => {
            check_depot_first(sol)?;
            let unvisited: f64 = (0..n).filter(|&v| !sol.is_visited(v)).map(|v| p.penalties[v]).sum();
            Ok(sol.length(&w) + unvisited)
        }
        Instance::Op(o) => {
            check_depot_first(sol)?;
            Ok(-sol.tour().iter().map(|&v| o.scores[v]).sum::<f64>())
        }
    }
}

fn check_depot_first(sol: &DiscreteSolution) -> Result<()> {
    if sol.tour()[0] != DEPOT {
        return Err(Error::InvalidTour(format!("tour must start at depot, starts at {}", sol.tour()[0])));
    }
    Ok(())
}

pub const BOLTZMANN_MAX_N: usize = 8;

/// Exact Boltzmann distribution `p(x) ∝ exp(-phi(x) / tau)` over every
/// feasible solution of a tiny instance.
#[derive(Clone, Debug)]
pub struct BoltzmannDistribution {
    pub solutions: Vec<DiscreteSolution>,
    pub energies: Vec<f64>,
    pub probs: Vec<f64>,
}

impl BoltzmannDistribution {
    pub fn mode(&self) -> (&DiscreteSolution, f64) {
        let (k, p) =
            self.probs.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best });
        (&self.solutions[k], p)
    }
}

pub fn boltzmann(inst: &Instance, tau: f64) -> Result<BoltzmannDistribution> {
    let n = inst.n();
    if n > BOLTZMANN_MAX_N {
        return Err(Error::InvalidSize(format!("Boltzmann enumeration limited to n <= {BOLTZMANN_MAX_N}, got {n}")));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParam(format!("temperature must be positive, got {tau}")));
    }
    let solutions = enumerate_feasible(inst);
    let energies = solutions.iter().map(|s| phi_discrete(s, inst)).collect::<Result<Vec<f64>>>()?;
    let e_min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = energies.iter().map(|e| (-(e - e_min) / tau).exp()).collect();
    let z: f64 = weights.iter().sum();
    let probs = weights.into_iter().map(|w| w / z).collect();
    Ok(BoltzmannDistribution { solutions, energies, probs })
}

/// Every feasible solution, each undirected cycle listed once (TSP-TW keeps
/// both directions since arrival times depend on direction).
pub fn enumerate_feasible(inst: &Instance) -> Vec<DiscreteSolution> {
    let n = inst.n();
    let w = inst.distances();
    let mut out = Vec::new();
    match inst {
        Instance::Tsp(_) => {
            let all: Vec<usize> = (0..n).collect();
            for_each_cycle(&all, false, |t| out.push(DiscreteSolution::new(n, t.to_vec()).unwrap()));
        }
        Instance::TspTw(tw) => {
            let all: Vec<usize> = (0..n).collect();
            for_each_cycle(&all, true, |t| {
                if crate::decode::tsptw_arrival_violation(t, tw) == 0 {
                    out.push(DiscreteSolution::new(n, t.to_vec()).unwrap());
                }
            });
        }
        Instance::Pctsp(_) | Instance::Op(_) => {
            for mask in 0u32..(1 << (n - 1)) {
                let nodes: Vec<usize> = std::iter::once(DEPOT).chain((1..n).filter(|v| mask & (1 << (v - 1)) != 0)).collect();
                let keep_subset = match inst {
                    Instance::Pctsp(p) => nodes.iter().map(|&v| p.prizes[v]).sum::<f64>() >= p.prize_threshold,
                    _ => true,
                };
                if !keep_subset {
                    continue;
                }
                for_each_cycle(&nodes, false, |t| {
                    let ok = match inst {
                        Instance::Op(o) => w.tour_length(t) <= o.budget,
                        _ => true,
                    };
                    if ok {
                        out.push(DiscreteSolution::new(n, t.to_vec()).unwrap());
                    }
                });
            }
        }
    }
    out
}

/// Calls `f` on each closed tour through `nodes` that starts at `nodes[0]`.
/// Undirected mode lists each cycle once (first interior node below the last).
pub fn for_each_cycle(nodes: &[usize], directed: bool, mut f: impl FnMut(&[usize])) {
    if nodes.len() <= 2 {
        f(nodes);
        return;
    }
    let mut rest: Vec<usize> = nodes[1..].to_vec();
    let mut tour = Vec::with_capacity(nodes.len());
    tour.push(nodes[0]);
    permute(&mut rest, 0, &mut |perm| {
        if directed || perm[0] < perm[perm.len() - 1] {
            tour.truncate(1);
            tour.extend_from_slice(perm);
            f(&tour);
        }
    });
}

fn permute(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, f);
        items.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_op, gen_pctsp, gen_tsp, GenConfig, Point, TspInstance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> TspInstance {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        TspInstance::new("square", pts.iter().map(|&(x, y)| Point { x, y }).collect()).unwrap()
    }

    fn random_heatmap(n: usize, rng: &mut ChaCha8Rng, hi: f64) -> Heatmap {
        Heatmap::from_upper(n, |_, _| rng.gen::<f64>() * hi)
    }

    #[test]
    fn relaxation_examples() {
        let h = Heatmap::from_tour(5, &[0, 2, 4, 1, 3]);
        assert_eq!(node_visit_relaxation(&h), vec![1.0; 5]);
        assert_eq!(node_visit_relaxation(&Heatmap::uniform(4, 0.0)), vec![0.0; 4]);
        // Node 0 has row sum 1, node 1 row sum 3 (saturates).
        let mut m = SquareMatrix::zeros(4);
        for j in [0, 2, 3] {
            m.set(1, j, 1.0);
            m.set(j, 1, 1.0);
        }
        let y = node_visit_relaxation(&Heatmap::new(m).unwrap());
        assert_eq!((y[0], y[1]), (0.5, 1.0));
    }

    #[test]
    fn phi_tsp_examples() {
        let w = crate::instances::distance_matrix(&square());
        let h = Heatmap::from_tour(4, &[0, 1, 2, 3]);
        assert_eq!(phi_tsp(&h, &w).unwrap(), 4.0);
        assert_eq!(phi_tsp(&Heatmap::uniform(4, 0.0), &w).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_heatmap(4, &mut rng, 1.0);
        let mut direct = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i < j {
                    direct += w.get(i, j) * h.get(i, j);
                }
            }
        }
        assert!((phi_tsp(&h, &w).unwrap() - direct).abs() < 1e-15);
        assert!(phi_tsp(&Heatmap::uniform(3, 0.1), &w).is_err());
    }

    fn small_pctsp() -> PctspInstance {
        PctspInstance::new(square(), vec![0.0, 0.4, 0.5, 0.3], vec![0.0, 0.2, 0.1, 0.6], 0.7).unwrap()
    }

    #[test]
    fn phi_pctsp_examples() {
        let inst = small_pctsp();
        let params = EnergyParams::default();
        let full = Heatmap::from_tour(4, &[0, 1, 2, 3]);
        assert_eq!(phi_pctsp(&full, &inst, &params).unwrap(), 4.0);
        let empty = Heatmap::uniform(4, 0.0);
        let expected = 0.9 + 1.0 * 0.7 * 0.7;
        assert!((phi_pctsp(&empty, &inst, &params).unwrap() - expected).abs() < 1e-12);

        // Independent scalar evaluation on a hand-set heatmap.
        let mut m = SquareMatrix::zeros(4);
        for (i, j, v) in [(0, 1, 0.9), (1, 2, 0.3), (2, 3, 0.2), (0, 3, 0.6), (0, 2, 0.1), (1, 3, 0.05)] {
            m.set(i, j, v);
            m.set(j, i, v);
        }
        let h = Heatmap::new(m).unwrap();
        let s2 = 2f64.sqrt();
        let length = 0.9 + 0.3 + 0.2 + 0.6 + 0.1 * s2 + 0.05 * s2;
        let y = [(0.9 + 0.6 + 0.1) / 2.0, (0.9 + 0.3 + 0.05) / 2.0, (0.3 + 0.2 + 0.1) / 2.0, (0.2 + 0.6 + 0.05) / 2.0];
        let pen = 0.2 * (1.0 - y[1]) + 0.1 * (1.0 - y[2]) + 0.6 * (1.0 - y[3]);
        let got_prize = 0.4 * y[1] + 0.5 * y[2] + 0.3 * y[3];
        let g = (0.7f64 - got_prize).max(0.0);
        let expected = length + pen + g * g;
        assert!((phi_pctsp(&h, &inst, &params).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn phi_op_examples() {
        // Five nodes: depot plus four; a short tour over three of them.
        let pts = [(0.5, 0.5), (0.6, 0.5), (0.6, 0.6), (0.5, 0.6), (0.0, 0.0)];
        let base = TspInstance::new("op5", pts.iter().map(|&(x, y)| Point { x, y }).collect()).unwrap();
        let inst = OpInstance::new(base, vec![0.0, 0.5, 0.7, 0.5, 0.9], 0.5).unwrap();
        let params = EnergyParams::default();
        assert_eq!(phi_op(&Heatmap::uniform(5, 0.0), &inst, &params).unwrap(), 0.0);

        let h = Heatmap::from_tour(5, &[0, 1, 2, 3]);
        let v = phi_op(&h, &inst, &params).unwrap();
        assert!((v + 1.7).abs() < 1e-12, "{v}");
        // Enumeration: the best feasible collected score is exactly 1.7.
        let best = enumerate_feasible(&Instance::Op(inst.clone()))
            .iter()
            .map(|s| phi_discrete(s, &Instance::Op(inst.clone())).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!((best + 1.7).abs() < 1e-12);

        // Overshooting the budget yields a positive, growing barrier.
        let far = Heatmap::from_tour(5, &[0, 1, 4, 3]);
        let tighter = OpInstance { budget: 0.5, ..inst.clone() };
        let a = phi_op(&far, &tighter, &params).unwrap() + 0.5 + 0.9 + 0.5;
        let looser = OpInstance { budget: 1.0, ..inst };
        let b = phi_op(&far, &looser, &params).unwrap() + 0.5 + 0.9 + 0.5;
        assert!(a > b && b > 0.0);
    }

    #[test]
    fn grad_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tsp = Instance::Tsp(gen_tsp(6, 1).unwrap());
        let h = random_heatmap(6, &mut rng, 1.0);
        let g = grad_phi(&h, &tsp, &EnergyParams::default()).unwrap();
        assert_eq!(&g, tsp.distances().matrix());

        // PCTSP with small heatmap (clamps inactive) and satisfied threshold.
        let mut p = gen_pctsp(6, 2, &GenConfig::default()).unwrap();
        p.prize_threshold = 0.0;
        let h = random_heatmap(6, &mut rng, 0.3);
        let inst = Instance::Pctsp(p.clone());
        let g = grad_phi(&h, &inst, &EnergyParams::default()).unwrap();
        let w = inst.distances();
        for (u, v, gv) in g.upper() {
            let expect = w.get(u, v) - 0.5 * (p.penalties[u] + p.penalties[v]);
            assert!((gv - expect).abs() < 1e-14);
        }
        assert!(g.is_symmetric());
    }

    /// Central differences over the symmetric edge variable, skipping
    /// entries too close to a clamp kink for the step used.
    fn fd_check(inst: &Instance, h: &Heatmap, params: &EnergyParams) {
        let g = grad_phi(h, inst, params).unwrap();
        let eps = 1e-6;
        for (u, v, gv) in g.upper() {
            let mut plus = h.matrix().clone();
            let mut minus = h.matrix().clone();
            let base = h.get(u, v);
            plus.set(u, v, base + eps);
            plus.set(v, u, base + eps);
            minus.set(u, v, base - eps);
            minus.set(v, u, base - eps);
            let f = |m: SquareMatrix| phi(&Heatmap::from_upper(m.n(), |i, j| m.get(i, j)), inst, params).unwrap();
            let fd = (f(plus) - f(minus)) / (2.0 * eps);
            let rel = (fd - gv).abs() / fd.abs().max(gv.abs()).max(1e-3);
            assert!(rel <= 1e-5, "edge ({u},{v}): fd {fd} vs analytic {gv}");
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = GenConfig::default();
        for case in 0..10 {
            let params = EnergyParams::new(0.5 + case as f64 * 0.3).unwrap();
            let insts = [
                Instance::Tsp(gen_tsp(5, case).unwrap()),
                Instance::Pctsp(gen_pctsp(5, case, &cfg).unwrap()),
                Instance::Op(gen_op(5, case, &cfg).unwrap()),
            ];
            for inst in &insts {
                let h = random_heatmap(5, &mut rng, 0.45);
                fd_check(inst, &h, &params);
            }
        }
    }

    #[test]
    fn relaxed_equals_discrete_on_feasible_tours() {
        let cfg = GenConfig::default();
        let params = EnergyParams::default();
        for seed in 0..20 {
            let p = gen_pctsp(7, seed, &cfg).unwrap();
            let inst = Instance::Pctsp(p.clone());
            let sol = DiscreteSolution::new(7, (0..7).collect()).unwrap();
            let relaxed = phi(&sol.adjacency(), &inst, &params).unwrap();
            assert!((relaxed - phi_discrete(&sol, &inst).unwrap()).abs() < 1e-12);

            let o = gen_op(7, seed, &GenConfig { op_budget: crate::instances::OpBudget::Fixed(10.0), ..cfg.clone() }).unwrap();
            let inst = Instance::Op(o);
            let sol = DiscreteSolution::new(7, vec![0, 3, 5, 2]).unwrap();
            let relaxed = phi(&sol.adjacency(), &inst, &params).unwrap();
            assert!((relaxed - phi_discrete(&sol, &inst).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_examples() {
        let sq = Instance::Tsp(square());
        let sol = DiscreteSolution::new(4, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(phi_discrete(&sol, &sq).unwrap(), 4.0);
        let pc = Instance::Pctsp(small_pctsp());
        assert_eq!(phi_discrete(&sol, &pc).unwrap(), 4.0);
        let op = Instance::Op(OpInstance::new(square(), vec![0.0, 0.3, 0.3, 0.3], 4.0).unwrap());
        assert_eq!(phi_discrete(&DiscreteSolution::new(4, vec![0]).unwrap(), &op).unwrap(), 0.0);
        assert!(DiscreteSolution::new(4, vec![0, 1, 1]).is_err());
        assert!(phi_discrete(&DiscreteSolution::new(4, vec![0, 1]).unwrap(), &sq).is_err());
    }

    #[test]
    fn boltzmann_properties() {
        let tri = Instance::Tsp(gen_tsp(3, 0).unwrap());
        let d = boltzmann(&tri, 1.0).unwrap();
        assert_eq!(d.solutions.len(), 1);
        assert_eq!(d.probs[0], 1.0);

        for seed in 0..5 {
            let inst = Instance::Tsp(gen_tsp(5, seed).unwrap());
            let d = boltzmann(&inst, 1e-3).unwrap();
            assert_eq!(d.solutions.len(), 12);
            assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let (mode, _) = d.mode();
            let opt = crate::oracles::held_karp_tsp(&inst.distances()).unwrap();
            assert!((phi_discrete(mode, &inst).unwrap() - opt.optimal_value).abs() < 1e-12);
        }
        let cfg = GenConfig::default();
        let pc = Instance::Pctsp(gen_pctsp(8, 1, &cfg).unwrap());
        let d = boltzmann(&pc, 0.5).unwrap();
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(boltzmann(&Instance::Tsp(gen_tsp(9, 0).unwrap()), 1.0).is_err());
    }
}
