//! Energy guidance as a logit shift on the denoiser's clean-state
//! prediction.

use rand::Rng;

use crate::denoiser::Denoiser;
use crate::diffusion::{posterior_between, sample_bernoulli, BinaryState, NoiseSchedule};
use crate::energy::{grad_phi, EnergyParams};
use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::matrix::Heatmap;

/// Probabilities are kept this far from 0 and 1 before taking the logit.
const PROB_EPS: f64 = 1e-12;
/// Shifted logits are clamped here so the logistic never rounds to 0 or 1.
const LOGIT_MAX: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceConfig {
    pub tau: f64,
    /// Per-edge bound on `|dphi/dh|`.
    pub grad_clip: f64,
    pub enabled: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { tau: 0.1, grad_clip: 10.0, enabled: true }
    }
}

impl GuidanceConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn with_tau(tau: f64) -> Self {
        Self { tau, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParam(format!("guidance tau must be >= 0, got {}", self.tau)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::InvalidParam(format!("grad_clip must be > 0, got {}", self.grad_clip)));
        }
        Ok(())
    }

    /// True when guidance leaves the prediction untouched.
    pub fn is_identity(&self) -> bool {
        !self.enabled || self.tau == 0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (p / (1.0 - p)).ln()
}

/// `sigmoid(logit(p) - tau * clip(dphi/dh))` per edge. Returns the input
/// unchanged when guidance is disabled or `tau = 0`.
pub fn guided_x0_probs(x0_probs: &Heatmap, inst: &Instance, params: &EnergyParams, gcfg: &GuidanceConfig) -> Result<Heatmap> {
    gcfg.validate()?;
    x0_probs.check_dim(inst.n())?;
    if gcfg.is_identity() {
        return Ok(x0_probs.clone());
    }
    let grad = grad_phi(x0_probs, inst, params)?;
    let clip = gcfg.grad_clip;
    Ok(Heatmap::from_upper(inst.n(), |i, j| {
        let shifted = logit(x0_probs.get(i, j)) - gcfg.tau * grad.get(i, j).clamp(-clip, clip);
        sigmoid(shifted.clamp(-LOGIT_MAX, LOGIT_MAX))
    }))
}

/// Guided skip step `x_t -> x_s`. Also returns the guided clean-state
/// prediction used for the posterior.
#[allow(clippy::too_many_arguments)]
pub fn guided_reverse_jump(
    model: &Denoiser,
    xt: &BinaryState,
    s: usize,
    inst: &Instance,
    schedule: &NoiseSchedule,
    params: &EnergyParams,
    gcfg: &GuidanceConfig,
    rng: &mut impl Rng,
) -> Result<(BinaryState, Heatmap)> {
    let t = xt.t;
    let prior = model.predict(xt)?;
    let guided = guided_x0_probs(&prior, inst, params, gcfg)?;
    let post = posterior_between(xt, &guided, t, s, schedule)?;
    Ok((sample_bernoulli(&post, s, rng), guided))
}

/// Guided single step `x_t -> x_{t-1}`.
pub fn guided_reverse_step(
    model: &Denoiser,
    xt: &BinaryState,
    inst: &Instance,
    schedule: &NoiseSchedule,
    params: &EnergyParams,
    gcfg: &GuidanceConfig,
    rng: &mut impl Rng,
) -> Result<BinaryState> {
    if xt.t == 0 {
        return Err(Error::InvalidParam("guided_reverse_step needs t >= 1".into()));
    }
    Ok(guided_reverse_jump(model, xt, xt.t - 1, inst, schedule, params, gcfg, rng)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserParams, ModelConfig};
    use crate::diffusion::{posterior_probs, reverse_step};
    use crate::instances::{gen_pctsp, gen_tsp, GenConfig, PctspInstance, Point, TspInstance};
    use crate::matrix::SquareMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square() -> TspInstance {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        TspInstance::new("sq", pts.iter().map(|&(x, y)| Point { x, y }).collect()).unwrap()
    }

    #[test]
    fn zero_tau_is_identity() {
        let inst = Instance::Tsp(gen_tsp(6, 3).unwrap());
        let h = Heatmap::from_upper(6, |i, j| 0.1 + 0.05 * ((i * 7 + j) % 9) as f64);
        for g in [GuidanceConfig::with_tau(0.0), GuidanceConfig::disabled()] {
            assert_eq!(guided_x0_probs(&h, &inst, &EnergyParams::default(), &g).unwrap(), h);
        }
    }

    #[test]
    fn tsp_guidance_orders_by_length() {
        let base = gen_tsp(7, 11).unwrap();
        let w = crate::instances::distance_matrix(&base);
        let inst = Instance::Tsp(base);
        let h = Heatmap::uniform(7, 0.5);
        let out = guided_x0_probs(&h, &inst, &EnergyParams::default(), &GuidanceConfig::with_tau(0.5)).unwrap();
        let edges: Vec<(usize, usize)> = (0..7).flat_map(|i| (i + 1..7).map(move |j| (i, j))).collect();
        for &(a, b) in &edges {
            for &(c, d) in &edges {
                if w.get(a, b) < w.get(c, d) {
                    assert!(out.get(a, b) > out.get(c, d));
                }
            }
        }
        assert!(out.is_symmetric());
    }

    #[test]
    fn pctsp_matches_hand_arithmetic() {
        // Unit square, depot 0; prizes and penalties chosen so the barrier
        // is active.
        let inst = PctspInstance::new(square(), vec![0.0, 0.4, 0.3, 0.2], vec![0.0, 0.5, 0.1, 0.3], 0.6).unwrap();
        let vals = [[0.0, 0.2, 0.4, 0.1], [0.2, 0.0, 0.3, 0.5], [0.4, 0.3, 0.0, 0.2], [0.1, 0.5, 0.2, 0.0]];
        let h = Heatmap::new(SquareMatrix::from_fn(4, |i, j| vals[i][j])).unwrap();
        let params = EnergyParams { mu: 1.0 };
        let gcfg = GuidanceConfig::with_tau(0.1);
        let out = guided_x0_probs(&h, &Instance::Pctsp(inst.clone()), &params, &gcfg).unwrap();
        // y_v = half row sums: 0.35, 0.5, 0.45, 0.4 (none clamped).
        let y = [0.35, 0.5, 0.45, 0.4];
        let collected: f64 = (0..4).map(|v| inst.prizes[v] * y[v]).sum();
        let g = (0.6 - collected).max(0.0);
        assert!(g > 0.0);
        let d = std::f64::consts::SQRT_2;
        let w = [[0.0, 1.0, d, 1.0], [1.0, 0.0, 1.0, d], [d, 1.0, 0.0, 1.0], [1.0, d, 1.0, 0.0]];
        for i in 0..4 {
            for j in (i + 1)..4 {
                let node = |v: usize| 0.5 * (-inst.penalties[v] - 2.0 * g * inst.prizes[v]);
                let grad = w[i][j] + node(i) + node(j);
                let p = vals[i][j];
                let z = (p / (1.0 - p)).ln() - 0.1 * grad;
                let expect = 1.0 / (1.0 + (-z).exp());
                assert!((out.get(i, j) - expect).abs() < 1e-12, "({i},{j}) {} vs {expect}", out.get(i, j));
            }
        }
    }

    #[test]
    fn clipping_keeps_probabilities_open() {
        let inst = Instance::Tsp(gen_tsp(5, 1).unwrap());
        let h = Heatmap::from_upper(5, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let out = guided_x0_probs(&h, &inst, &EnergyParams::default(), &GuidanceConfig::with_tau(1000.0)).unwrap();
        for (_, _, p) in out.upper() {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn larger_tau_lowers_smoothed_energy() {
        let cfg = GenConfig::default();
        for seed in 0..5 {
            let inst = Instance::Pctsp(gen_pctsp(8, seed, &cfg).unwrap());
            let h = Heatmap::from_upper(8, |i, j| 0.2 + 0.6 * (((i * 31 + j * 17 + seed as usize) % 10) as f64 / 10.0));
            let params = EnergyParams::default();
            let base = crate::energy::phi(&h, &inst, &params).unwrap();
            for tau in [0.0, 0.05, 0.1, 0.5, 1.0] {
                let g = guided_x0_probs(&h, &inst, &params, &GuidanceConfig::with_tau(tau)).unwrap();
                let e = crate::energy::phi(&g, &inst, &params).unwrap();
                assert!(e <= base + 1e-12, "seed {seed} tau {tau}: {e} > {base}");
            }
        }
    }

    #[test]
    fn disabled_step_matches_plain_reverse_step() {
        let params = DenoiserParams::init(ModelConfig { layers: 2, hidden: 8, embed_dim: 8 }, 5).unwrap();
        let tsp = gen_tsp(6, 2).unwrap();
        let model = Denoiser::new(&params, &tsp);
        let inst = Instance::Tsp(tsp);
        let sched = NoiseSchedule::default();
        let mut r0 = ChaCha8Rng::seed_from_u64(9);
        let xt = BinaryState::uniform_noise(6, 20, &mut r0);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let a = guided_reverse_step(&model, &xt, &inst, &sched, &EnergyParams::default(), &GuidanceConfig::disabled(), &mut r1)
            .unwrap();
        let probs = model.predict(&xt).unwrap();
        let b = reverse_step(&xt, &probs, 20, &sched, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.t, 19);
    }

    #[test]
    fn guided_step_marginals_match_posterior() {
        let params = DenoiserParams::init(ModelConfig { layers: 2, hidden: 8, embed_dim: 8 }, 5).unwrap();
        let base = gen_pctsp(5, 4, &GenConfig::default()).unwrap();
        let model = Denoiser::new(&params, &base.base);
        let inst = Instance::Pctsp(base);
        let sched = NoiseSchedule::default();
        let gcfg = GuidanceConfig::with_tau(0.5);
        let energy = EnergyParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let xt = BinaryState::uniform_noise(5, 10, &mut rng);
        let guided = guided_x0_probs(&model.predict(&xt).unwrap(), &inst, &energy, &gcfg).unwrap();
        let post = posterior_probs(&xt, &guided, 10, &sched).unwrap();
        let draws = 10_000;
        let mut counts = SquareMatrix::zeros(5);
        for _ in 0..draws {
            let x = guided_reverse_step(&model, &xt, &inst, &sched, &energy, &gcfg, &mut rng).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    counts.set(i, j, counts.get(i, j) + x.get(i, j) as f64);
                }
            }
        }
        for (i, j, p) in post.upper() {
            let freq = counts.get(i, j) / draws as f64;
            let sigma = (p * (1.0 - p) / draws as f64).sqrt().max(1e-9);
            assert!((freq - p).abs() <= 3.0 * sigma + 1e-12, "({i},{j}) {freq} vs {p}");
        }
    }
}
