//! Recursive renoising and guided denoising: the inference-time adaptation
//! loop that moves a TSP-trained sampler onto a target problem.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decode::{decode, DecodeOptions, DecodedTour};
use crate::denoiser::{Denoiser, DenoiserParams};
use crate::diffusion::{renoise, timestep_pairs, BinaryState, NoiseSchedule};
use crate::energy::{phi, EnergyParams};
use crate::error::{Error, Result};
use crate::guidance::{guided_reverse_jump, GuidanceConfig};
use crate::instances::Instance;
use crate::matrix::Heatmap;

/// Inner loop of one travel iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TravelMode {
    /// `i` guided single steps back to 0.
    Full,
    /// One guided skip step `i -> 0`.
    Jump,
}

impl FromStr for TravelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "jump" => Ok(Self::Jump),
            _ => Err(Error::InvalidParam(format!("unknown travel mode '{s}' (expected full or jump)"))),
        }
    }
}

impl fmt::Display for TravelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Jump => "jump",
        })
    }
}

/// What gets re-noised at the start of an iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenoiseSource {
    /// The sampled clean state of the previous iteration.
    Sample,
    /// The adjacency of the previous iteration's decoded solution.
    Decoded,
}

/// What the decoder reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeSource {
    /// The guided clean-state probabilities of the last denoising step.
    Probs,
    /// The sampled binary clean state.
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptConfig {
    /// Number of travel iterations after the initial pass.
    pub k: usize,
    /// Re-noising level `i`.
    pub renoise_level: usize,
    pub guidance: GuidanceConfig,
    pub energy: EnergyParams,
    /// Steps of the initial reverse pass from pure noise.
    pub infer_steps: usize,
    pub track_best: bool,
    pub mode: TravelMode,
    pub renoise_from: RenoiseSource,
    pub decode_from: DecodeSource,
    pub decode: DecodeOptions,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            k: 20,
            renoise_level: 5,
            guidance: GuidanceConfig::default(),
            energy: EnergyParams::default(),
            infer_steps: 10,
            track_best: true,
            mode: TravelMode::Jump,
            renoise_from: RenoiseSource::Decoded,
            decode_from: DecodeSource::Probs,
            decode: DecodeOptions::default(),
        }
    }
}

impl AdaptConfig {
    /// Guidance off and no travel: a plain diffusion solve.
    pub fn unguided() -> Self {
        Self { k: 0, guidance: GuidanceConfig::disabled(), ..Self::default() }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        self.guidance.validate()?;
        if self.renoise_level == 0 || self.renoise_level > schedule.steps() {
            return Err(Error::InvalidParam(format!("renoise level {} outside 1..={}", self.renoise_level, schedule.steps())));
        }
        if self.infer_steps == 0 || self.infer_steps > schedule.steps() {
            return Err(Error::InvalidParam(format!("inference steps {} outside 1..={}", self.infer_steps, schedule.steps())));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptRecord {
    /// 0 is the initial pass.
    pub iteration: usize,
    /// Natural units: cost, or collected score for OP.
    pub objective: f64,
    pub feasible: bool,
    /// Smoothed energy of the guided clean-state prediction.
    pub energy: f64,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdaptTrace {
    pub records: Vec<AdaptRecord>,
}

impl AdaptTrace {
    /// Best feasible objective among iterations `0..=k`.
    pub fn best_through(&self, k: usize, maximize: bool) -> Option<f64> {
        self.records.iter().take(k + 1).filter(|r| r.feasible).map(|r| r.objective).reduce(|a, b| {
            if better(b, a, maximize) {
                b
            } else {
                a
            }
        })
    }

    pub fn to_csv(&self, with_time: bool) -> String {
        let mut out = String::from(if with_time {
            "iteration,objective,feasible,energy,wall_time\n"
        } else {
            "iteration,objective,feasible,energy\n"
        });
        for r in &self.records {
            out.push_str(&format!("{},{:.6},{},{:.6}", r.iteration, r.objective, r.feasible as u8, r.energy));
            if with_time {
                out.push_str(&format!(",{:.6}", r.wall_time));
            }
            out.push('\n');
        }
        out
    }
}

fn better(a: f64, b: f64, maximize: bool) -> bool {
    if maximize {
        a > b
    } else {
        a < b
    }
}

/// One iterate of the loop: the sampled clean state and the guided
/// prediction it was drawn from.
#[derive(Clone, Debug)]
pub struct Iterate {
    pub x0: BinaryState,
    pub probs: Heatmap,
}

/// Full guided reverse pass from uniform noise over the inference grid.
pub fn initial_denoise(
    model: &Denoiser,
    inst: &Instance,
    schedule: &NoiseSchedule,
    cfg: &AdaptConfig,
    rng: &mut impl Rng,
) -> Result<Iterate> {
    let mut x = BinaryState::uniform_noise(inst.n(), schedule.steps(), rng);
    let mut probs = None;
    for (_, s) in timestep_pairs(schedule.steps(), cfg.infer_steps)? {
        let (next, guided) = guided_reverse_jump(model, &x, s, inst, schedule, &cfg.energy, &cfg.guidance, rng)?;
        x = next;
        probs = Some(guided);
    }
    Ok(Iterate { x0: x, probs: probs.expect("at least one step") })
}

/// Re-noise a clean state to level `i`, then denoise back to 0 under
/// guidance.
pub fn travel_iteration(
    x0: &BinaryState,
    model: &Denoiser,
    inst: &Instance,
    schedule: &NoiseSchedule,
    cfg: &AdaptConfig,
    rng: &mut impl Rng,
) -> Result<Iterate> {
    let i = cfg.renoise_level;
    let mut x = renoise(x0, i, schedule, rng)?;
    let targets: Vec<usize> = match cfg.mode {
        TravelMode::Full => (0..i).rev().collect(),
        TravelMode::Jump => vec![0],
    };
    let mut probs = None;
    for s in targets {
        let (next, guided) = guided_reverse_jump(model, &x, s, inst, schedule, &cfg.energy, &cfg.guidance, rng)?;
        x = next;
        probs = Some(guided);
    }
    Ok(Iterate { x0: x, probs: probs.expect("at least one step") })
}

fn decode_iterate(it: &Iterate, inst: &Instance, cfg: &AdaptConfig) -> Result<DecodedTour> {
    match cfg.decode_from {
        DecodeSource::Probs => decode(&it.probs, inst, &cfg.decode),
        DecodeSource::Sample => decode(&it.x0.to_heatmap(), inst, &cfg.decode),
    }
}

/// Initial pass plus `k` travel iterations. Returns the best feasible
/// decoded solution (or the last feasible one with `track_best` off) and
/// the per-iteration trace.
pub fn run_adaptation(
    params: &DenoiserParams,
    inst: &Instance,
    schedule: &NoiseSchedule,
    cfg: &AdaptConfig,
    seed: u64,
) -> Result<(DecodedTour, AdaptTrace)> {
    cfg.validate(schedule)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Denoiser::new(params, inst.base());
    let maximize = inst.kind().is_maximization();
    let mut trace = AdaptTrace::default();
    let mut chosen: Option<DecodedTour> = None;

    let mut it = initial_denoise(&model, inst, schedule, cfg, &mut rng)?;
    let mut last: Option<DecodedTour> = None;
    for k in 0..=cfg.k {
        if let Some(prev) = &last {
            let source = match cfg.renoise_from {
                RenoiseSource::Sample => it.x0.clone(),
                RenoiseSource::Decoded => {
                    let from = if cfg.track_best { chosen.as_ref().unwrap_or(prev) } else { prev };
                    BinaryState::from_tour(inst.n(), from.solution.tour())
                }
            };
            it = travel_iteration(&source, &model, inst, schedule, cfg, &mut rng)?;
        }
        let d = decode_iterate(&it, inst, cfg)?;
        trace.records.push(AdaptRecord {
            iteration: k,
            objective: d.objective,
            feasible: d.feasible,
            energy: phi(&it.probs, inst, &cfg.energy)?,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if d.feasible {
            let replace = match &chosen {
                None => true,
                Some(c) => !cfg.track_best || better(d.objective, c.objective, maximize),
            };
            if replace {
                chosen = Some(d.clone());
            }
        }
        last = Some(d);
    }
    match chosen {
        Some(d) => Ok((d, trace)),
        None => Err(Error::NoFeasibleSolution { trace: Box::new(trace) }),
    }
}
