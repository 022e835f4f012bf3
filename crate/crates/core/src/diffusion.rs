//! Binary discrete diffusion over symmetric edge matrices.
//!
//! Each undirected edge is an independent two-state chain with per-step
//! transition `Q_t = [[1-b, b], [b, 1-b]]`. Flip probabilities compose in
//! closed form: over steps `s+1..=t` the chain flips with probability
//! `(1 - prod(1 - 2 b_r)) / 2`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{Heatmap, SquareMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    /// `betas[t - 1]` is the flip probability of step `t`.
    betas: Vec<f64>,
    /// `gammas[t]` is the cumulative flip probability after `t` steps;
    /// `gammas[0] = 0`.
    gammas: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_MIN: f64 = 0.005;
pub const DEFAULT_BETA_MAX: f64 = 0.15;

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("default schedule is valid")
    }
}

/// Linear `beta_t` from `beta_min` (t = 1) to `beta_max` (t = T).
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidParam("schedule needs at least one step".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 0.5) {
        return Err(Error::InvalidParam(format!("need 0 < beta_min <= beta_max < 1/2, got ({beta_min}, {beta_max})")));
    }
    let betas = (0..steps)
        .map(|k| if steps == 1 { beta_min } else { beta_min + (beta_max - beta_min) * k as f64 / (steps - 1) as f64 })
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    /// Arbitrary per-step flip probabilities in `[0, 1/2]`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidParam("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..=0.5).contains(*b)) {
            return Err(Error::InvalidParam(format!("beta {b} outside [0, 1/2]")));
        }
        let mut gammas = Vec::with_capacity(betas.len() + 1);
        gammas.push(0.0);
        let mut keep = 1.0;
        for b in &betas {
            keep *= 1.0 - 2.0 * b;
            gammas.push(0.5 * (1.0 - keep));
        }
        Ok(Self { betas, gammas })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gammas[t]
    }

    /// Flip probability of the composed kernel over steps `s+1..=t`.
    pub fn flip_between(&self, s: usize, t: usize) -> f64 {
        debug_assert!(s <= t && t <= self.steps());
        let keep: f64 = self.betas[s..t].iter().map(|b| 1.0 - 2.0 * b).product();
        0.5 * (1.0 - keep)
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidParam(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

/// Symmetric `{0,1}` edge matrix with zero diagonal, tagged with its
/// diffusion timestep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryState {
    n: usize,
    bits: Vec<u8>,
    pub t: usize,
}

impl BinaryState {
    pub fn zeros(n: usize, t: usize) -> Self {
        Self { n, bits: vec![0; n * n], t }
    }

    pub fn from_tour(n: usize, tour: &[usize]) -> Self {
        let h = Heatmap::from_tour(n, tour);
        Self::from_upper(n, 0, |i, j| h.get(i, j) > 0.5)
    }

    pub fn from_upper(n: usize, t: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut s = Self::zeros(n, t);
        for i in 0..n {
            for j in (i + 1)..n {
                if f(i, j) {
                    s.bits[i * n + j] = 1;
                    s.bits[j * n + i] = 1;
                }
            }
        }
        s
    }

    /// Independent Bernoulli(1/2) bits on the upper triangle: the diffusion
    /// prior at `t = T`.
    pub fn uniform_noise(n: usize, t: usize, rng: &mut impl Rng) -> Self {
        Self::from_upper(n, t, |_, _| rng.gen::<bool>())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bits[i * self.n + j]
    }

    pub fn to_heatmap(&self) -> Heatmap {
        Heatmap::from_upper(self.n, |i, j| self.get(i, j) as f64)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 0 && (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn degree(&self, v: usize) -> usize {
        (0..self.n).map(|u| self.get(v, u) as usize).sum()
    }
}

fn flip_state(x: &BinaryState, p: f64, t: usize, rng: &mut impl Rng) -> BinaryState {
    BinaryState::from_upper(x.n, t, |i, j| {
        let bit = x.get(i, j) == 1;
        let flip = rng.gen::<f64>() < p;
        bit ^ flip
    })
}

/// Draws `x_t ~ q(x_t | x_0)`: every upper-triangle bit flips independently
/// with probability `gamma_t`.
pub fn q_sample(x0: &BinaryState, t: usize, schedule: &NoiseSchedule, rng: &mut impl Rng) -> Result<BinaryState> {
    schedule.check_t(t)?;
    if x0.t != 0 {
        return Err(Error::InvalidParam(format!("q_sample expects a clean state, got t = {}", x0.t)));
    }
    Ok(flip_state(x0, schedule.gamma(t), t, rng))
}

/// Re-noises a clean solution to level `i`; identical in law to [`q_sample`].
pub fn renoise(x0: &BinaryState, i: usize, schedule: &NoiseSchedule, rng: &mut impl Rng) -> Result<BinaryState> {
    q_sample(x0, i, schedule, rng)
}

/// Probability that `x_s = 1` given `x_t = b` and a clean-state
/// distribution `P(x_0 = 1) = p1`, for `0 <= s < t`:
///
/// `sum_c P(x_0 = c) q(x_s = 1 | x_t = b, x_0 = c)` with
/// `q(a | b, c) ∝ K_{s→t}[a, b] · Qbar_s[c, a]`.
pub fn edge_posterior(b: u8, p1: f64, s: usize, t: usize, schedule: &NoiseSchedule) -> f64 {
    let f_st = schedule.flip_between(s, t);
    let f_s = schedule.gamma(s);
    let k = |a: u8| if a == b { 1.0 - f_st } else { f_st };
    let qbar = |c: u8, a: u8| if a == c { 1.0 - f_s } else { f_s };
    let given = |c: u8| {
        let one = k(1) * qbar(c, 1);
        let zero = k(0) * qbar(c, 0);
        let z = one + zero;
        if z > 0.0 {
            one / z
        } else {
            // x_t is unreachable from this x_0; the weight of this branch is
            // irrelevant unless p(c) = 1, in which case fall back on x_0.
            c as f64
        }
    };
    (1.0 - p1) * given(0) + p1 * given(1)
}

/// One-step posterior `p(x_{t-1} = 1 | x_t)` for every edge.
pub fn posterior_probs(xt: &BinaryState, x0_probs: &Heatmap, t: usize, schedule: &NoiseSchedule) -> Result<Heatmap> {
    posterior_between(xt, x0_probs, t, t.saturating_sub(1), schedule)
}

/// Skip-step posterior `p(x_s = 1 | x_t)` using the composed kernel over
/// `s+1..=t`.
pub fn posterior_between(xt: &BinaryState, x0_probs: &Heatmap, t: usize, s: usize, schedule: &NoiseSchedule) -> Result<Heatmap> {
    schedule.check_t(t)?;
    if s >= t {
        return Err(Error::InvalidParam(format!("target step {s} must precede {t}")));
    }
    x0_probs.check_dim(xt.n())?;
    Ok(Heatmap::from_upper(xt.n(), |i, j| edge_posterior(xt.get(i, j), x0_probs.get(i, j), s, t, schedule).clamp(0.0, 1.0)))
}

/// Samples each upper-triangle edge from `probs` and mirrors.
pub fn sample_bernoulli(probs: &Heatmap, t: usize, rng: &mut impl Rng) -> BinaryState {
    BinaryState::from_upper(probs.n(), t, |i, j| rng.gen::<f64>() < probs.get(i, j))
}

/// Samples `x_{t-1}` from the one-step posterior.
pub fn reverse_step(
    xt: &BinaryState,
    x0_probs: &Heatmap,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<BinaryState> {
    reverse_jump(xt, x0_probs, t, t.saturating_sub(1), schedule, rng)
}

/// Samples `x_s` from the skip-step posterior.
pub fn reverse_jump(
    xt: &BinaryState,
    x0_probs: &Heatmap,
    t: usize,
    s: usize,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<BinaryState> {
    let probs = posterior_between(xt, x0_probs, t, s, schedule)?;
    Ok(sample_bernoulli(&probs, s, rng))
}

/// Evenly spaced descending timesteps `t_k = T - floor(k T / steps)`,
/// `k = 0..steps`. The sampler moves from each entry to the next, and from
/// the last entry to 0.
pub fn inference_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::InvalidParam(format!("inference steps {steps} outside 1..={total}")));
    }
    Ok((0..steps).map(|k| total - k * total / steps).collect())
}

/// `(t, s)` pairs for the sampler loop built from [`inference_timesteps`].
pub fn timestep_pairs(total: usize, steps: usize) -> Result<Vec<(usize, usize)>> {
    let ts = inference_timesteps(total, steps)?;
    Ok(ts.iter().enumerate().map(|(k, &t)| (t, ts.get(k + 1).copied().unwrap_or(0))).collect())
}

/// Explicit 2x2 product `Q_1 Q_2 ... Q_t` (row-major), used to cross-check
/// the closed-form cumulative flip probability.
pub fn cumulative_transition(schedule: &NoiseSchedule, t: usize) -> [[f64; 2]; 2] {
    let mut acc = [[1.0, 0.0], [0.0, 1.0]];
    for step in 1..=t {
        let b = schedule.beta(step);
        let q = [[1.0 - b, b], [b, 1.0 - b]];
        let mut next = [[0.0; 2]; 2];
        for (r, row) in next.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = acc[r][0] * q[0][c] + acc[r][1] * q[1][c];
            }
        }
        acc = next;
    }
    acc
}

/// Matrix of empirical frequencies, convenient for Monte Carlo tests.
pub fn mean_state(states: &[BinaryState]) -> SquareMatrix {
    let n = states[0].n();
    let k = states.len() as f64;
    SquareMatrix::from_fn(n, |i, j| states.iter().map(|s| s.get(i, j) as f64).sum::<f64>() / k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_gamma() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        assert!((s.gamma(2) - 0.26).abs() < 1e-15);
        let q = cumulative_transition(&s, 2);
        assert!((q[0][1] - 0.26).abs() < 1e-15);

        let zero = NoiseSchedule::from_betas(vec![0.0; 5]).unwrap();
        assert!((0..=5).all(|t| zero.gamma(t) == 0.0));

        let half = NoiseSchedule::from_betas(vec![0.1, 0.5, 0.2, 0.3]).unwrap();
        assert!((2..=4).all(|t| half.gamma(t) == 0.5));
    }

    #[test]
    fn default_schedule_invariants() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 50);
        assert!(s.gamma(50) >= 0.499);
        for t in 1..=50 {
            assert!(s.gamma(t) > s.gamma(t - 1));
            let q = cumulative_transition(&s, t);
            assert!((q[0][1] - s.gamma(t)).abs() < 1e-12);
            assert!((q[1][1] - (1.0 - s.gamma(t))).abs() < 1e-12);
        }
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 0.5).is_err());
    }

    #[test]
    fn q_sample_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = BinaryState::from_tour(8, &[0, 3, 5, 1, 7, 2, 6, 4]);
        let zero = NoiseSchedule::from_betas(vec![0.0; 3]).unwrap();
        let xt = q_sample(&x0, 2, &zero, &mut rng).unwrap();
        assert_eq!(xt.bits, x0.bits);
        assert_eq!(xt.t, 2);
        assert!(q_sample(&x0, 0, &zero, &mut rng).is_err());
        assert!(q_sample(&x0, 4, &zero, &mut rng).is_err());
        let half = NoiseSchedule::from_betas(vec![0.5]).unwrap();
        let xt = q_sample(&x0, 1, &half, &mut rng).unwrap();
        assert!(xt.is_symmetric());
    }

    #[test]
    fn posterior_limits() {
        let noiseless = NoiseSchedule::from_betas(vec![0.0, 0.0, 0.0]).unwrap();
        let x0 = BinaryState::from_tour(5, &[0, 1, 2, 3, 4]);
        let probs = x0.to_heatmap();
        let xt = x0.clone();
        let post = posterior_probs(&xt, &probs, 2, &noiseless).unwrap();
        assert_eq!(post, probs);

        let s = NoiseSchedule::from_betas(vec![0.5, 0.5]).unwrap();
        let post = posterior_probs(&xt, &Heatmap::uniform(5, 0.5), 2, &s).unwrap();
        assert!(post.upper().all(|(_, _, p)| (p - 0.5).abs() < 1e-15));
        assert!(posterior_probs(&xt, &probs, 0, &s).is_err());
    }

    #[test]
    fn jump_to_zero_returns_x0_probs() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xt = BinaryState::uniform_noise(6, 5, &mut rng);
        let probs = Heatmap::from_upper(6, |i, j| ((i * 7 + j * 3) % 10) as f64 / 10.0);
        let post = posterior_between(&xt, &probs, 5, 0, &s).unwrap();
        for (i, j, p) in post.upper() {
            assert!((p - probs.get(i, j)).abs() < 1e-15);
        }
    }

    #[test]
    fn timesteps() {
        assert_eq!(inference_timesteps(50, 50).unwrap(), (1..=50).rev().collect::<Vec<_>>());
        assert_eq!(inference_timesteps(50, 1).unwrap(), vec![50]);
        assert_eq!(inference_timesteps(50, 2).unwrap(), vec![50, 25]);
        assert_eq!(timestep_pairs(50, 2).unwrap(), vec![(50, 25), (25, 0)]);
        assert!(inference_timesteps(50, 0).is_err());
        assert!(inference_timesteps(50, 51).is_err());
    }

    #[test]
    fn reverse_step_is_deterministic_for_point_mass_and_seed() {
        let s = NoiseSchedule::from_betas(vec![0.0, 0.0]).unwrap();
        let x0 = BinaryState::from_tour(6, &[0, 2, 4, 1, 3, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = reverse_step(&x0, &x0.to_heatmap(), 2, &s, &mut rng).unwrap();
        assert_eq!(out.bits, x0.bits);
        assert_eq!(out.t, 1);

        let s = NoiseSchedule::default();
        let probs = Heatmap::uniform(6, 0.3);
        let a = reverse_step(&x0, &probs, 10, &s, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = reverse_step(&x0, &probs, 10, &s, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.is_symmetric());
    }
}
