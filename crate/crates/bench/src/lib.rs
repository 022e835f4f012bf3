//! Benchmark harness and CLI plumbing around `difuada-core`.

pub mod config;
pub mod harness;
pub mod report;
pub mod verify;

use anyhow::Result;
use rayon::prelude::*;

use difuada_core::adapt::{run_adaptation, AdaptConfig};
use difuada_core::denoiser::{DenoiserParams, TrainSample};
use difuada_core::diffusion::NoiseSchedule;
use difuada_core::instances::{distance_matrix, gen_op, gen_pctsp, gen_tsp, gen_tsptw, GenConfig, Instance, ProblemKind};
use difuada_core::oracles::{held_karp_tsp, solve_exact};

/// Seed streams, so that training, evaluation and solver randomness never
/// share draws.
pub mod stream {
    pub const TRAIN: u64 = 1;
    pub const HELDOUT: u64 = 2;
    pub const BENCH: u64 = 3;
    pub const SOLVER: u64 = 4;
    pub const THEOREM: u64 = 5;
    pub const FIXTURE: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of `stream` under a global seed.
pub fn derive_seed(global: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(global ^ splitmix64(stream)) ^ index)
}

/// Random instance of the given kind with the default generator settings.
pub fn make_instance(kind: ProblemKind, n: usize, seed: u64, gen: &GenConfig) -> Result<Instance> {
    Ok(match kind {
        ProblemKind::Tsp => Instance::Tsp(gen_tsp(n, seed)?),
        ProblemKind::Pctsp => Instance::Pctsp(gen_pctsp(n, seed, gen)?),
        ProblemKind::Op => Instance::Op(gen_op(n, seed, gen)?),
        ProblemKind::TspTw => Instance::TspTw(gen_tsptw(n, seed, gen)?.0),
    })
}

/// `count` random TSP instances labelled with Held–Karp tours.
pub fn tsp_training_set(n: usize, count: usize, seed: u64) -> Result<Vec<TrainSample>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let inst = gen_tsp(n, derive_seed(seed, stream::TRAIN, i))?;
            let opt = held_karp_tsp(&distance_matrix(&inst))?;
            Ok(TrainSample::new(inst, opt.optimal_solution.tour())?)
        })
        .collect()
}

/// Held-out TSP instances, disjoint in seed stream from the training set.
pub fn tsp_heldout_set(n: usize, count: usize, seed: u64) -> Result<Vec<Instance>> {
    (0..count as u64).map(|i| Ok(Instance::Tsp(gen_tsp(n, derive_seed(seed, stream::HELDOUT, i))?))).collect()
}

/// Unguided greedy-decoded gaps on the held-out TSP set, against Held–Karp.
pub fn tsp_heldout_gaps(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let insts = tsp_heldout_set(n, count, seed)?;
    insts
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let (d, _) =
                run_adaptation(params, inst, schedule, &AdaptConfig::unguided(), derive_seed(seed, stream::SOLVER, i as u64))?;
            Ok(gap_percent(ProblemKind::Tsp, d.objective, solve_exact(inst)?.optimal_value))
        })
        .collect()
}

pub fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Percentage optimality gap. Costs: `(cost / opt - 1) * 100`; OP scores:
/// `(opt / score - 1) * 100`.
pub fn gap_percent(kind: ProblemKind, value: f64, optimum: f64) -> f64 {
    if kind.is_maximization() {
        if value == optimum {
            0.0
        } else {
            (optimum / value - 1.0) * 100.0
        }
    } else {
        (value / optimum - 1.0) * 100.0
    }
}
