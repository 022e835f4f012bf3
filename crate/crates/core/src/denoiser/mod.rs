//! Edge-gated graph network predicting `p(x0 | x_t, G)` for every edge,
//! trained by per-edge cross-entropy against optimal TSP tours.
//!
//! Layer update, with `h` node and `e` edge features:
//!
//! ```text
//! e~   = C e + A h_i + B h_j
//! h   += relu(LN(U h_i + sum_{j != i} sigmoid(e~_ij) * V h_j))
//! e   += relu(LN(e~)) + time_proj(t)
//! ```
//!
//! The head maps `LN(e)` to two logits per edge; their difference is
//! symmetrized over `(i, j)` and `(j, i)`.

pub mod autograd;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffusion::{q_sample, BinaryState, NoiseSchedule};
use crate::error::{Error, Result};
use crate::instances::{Point, TspInstance};
use crate::matrix::Heatmap;
use autograd::{Tape, Var};

pub const CHECKPOINT_MAGIC: &str = "DIFUADA-CKPT";
pub const CHECKPOINT_VERSION: &str = "v1";

/// Nearest neighbours flagged in the edge input features.
pub const KNN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Width of the sinusoidal coordinate and timestep embeddings; a
    /// multiple of 4.
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { layers: 4, hidden: 32, embed_dim: 32 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(4) {
            return Err(Error::InvalidParam(format!(
                "model needs layers, hidden >= 1 and embed_dim a positive multiple of 4, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Edge input: distance sinusoids (`embed_dim / 2`), raw distance, the
    /// noisy bit as ±1, and two nearest-neighbour flags.
    pub fn edge_input_dim(&self) -> usize {
        self.embed_dim / 2 + 4
    }

    fn shapes(&self) -> Vec<(String, usize, usize)> {
        let (h, d) = (self.hidden, self.embed_dim);
        let mut s = vec![
            ("node_in.w".to_string(), d, h),
            ("node_in.b".into(), 1, h),
            ("edge_in.w".into(), self.edge_input_dim(), h),
            ("edge_in.b".into(), 1, h),
            ("time.w".into(), d, h),
            ("time.b".into(), 1, h),
        ];
        for l in 0..self.layers {
            for m in ["a", "b", "c", "u", "v", "time"] {
                s.push((format!("layer{l}.{m}.w"), h, h));
                s.push((format!("layer{l}.{m}.b"), 1, h));
            }
            for m in ["norm_h", "norm_e"] {
                s.push((format!("layer{l}.{m}.gain"), 1, h));
                s.push((format!("layer{l}.{m}.bias"), 1, h));
            }
        }
        s.push(("head.norm.gain".into(), 1, h));
        s.push(("head.norm.bias".into(), 1, h));
        s.push(("head.w".into(), h, 2));
        s.push(("head.b".into(), 1, 2));
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
}

impl DenoiserParams {
    /// Glorot-uniform weights, unit norm gains, zero biases and a zero head
    /// (so an untrained model predicts 1/2 everywhere).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .shapes()
            .into_iter()
            .map(|(name, rows, cols)| {
                let data = if name.ends_with(".gain") {
                    vec![1.0; rows * cols]
                } else if name.ends_with(".w") && !name.starts_with("head") {
                    let a = (6.0 / (rows + cols) as f64).sqrt();
                    (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect()
                } else {
                    vec![0.0; rows * cols]
                };
                Tensor { name, rows, cols, data }
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

// ---------------------------------------------------------------------------
// Input features
// ---------------------------------------------------------------------------

fn coord_frequencies(count: usize) -> impl Iterator<Item = f64> {
    (0..count).map(|k| std::f64::consts::PI * 2f64.powf(k as f64 / 2.0))
}

/// Sinusoidal node features: `sin/cos(f_k x)`, `sin/cos(f_k y)`.
pub fn node_embedding(p: &Point, embed_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(embed_dim);
    for f in coord_frequencies(embed_dim / 4) {
        out.push((f * p.x).sin());
        out.push((f * p.x).cos());
    }
    for f in coord_frequencies(embed_dim / 4) {
        out.push((f * p.y).sin());
        out.push((f * p.y).cos());
    }
    out
}

/// Transformer-style sinusoid of the diffusion timestep.
pub fn timestep_embedding(t: usize, embed_dim: usize) -> Vec<f64> {
    let half = embed_dim / 2;
    let mut out = Vec::with_capacity(embed_dim);
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out.push((t as f64 * freq).sin());
        out.push((t as f64 * freq).cos());
    }
    out
}

#[derive(Clone, Debug)]
pub struct InputFeatures {
    pub n: usize,
    /// `n x embed_dim`, row-major.
    pub nodes: Vec<f64>,
    /// `n^2 x edge_input_dim`, row-major, row `i * n + j`.
    pub edges: Vec<f64>,
    /// `1 x embed_dim`.
    pub time: Vec<f64>,
}

/// Features that depend only on the instance, reusable across timesteps.
#[derive(Clone, Debug)]
pub struct StaticFeatures {
    n: usize,
    nodes: Vec<f64>,
    edges_base: Vec<f64>,
    edge_dim: usize,
}

pub fn static_features(points: &[Point], config: &ModelConfig) -> StaticFeatures {
    let n = points.len();
    let d = config.embed_dim;
    let nodes = points.iter().flat_map(|p| node_embedding(p, d)).collect();
    let dist = |i: usize, j: usize| points[i].dist(&points[j]);
    let mut near = vec![false; n * n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)).then(a.cmp(&b)));
        for &j in order.iter().take(KNN) {
            near[i * n + j] = true;
        }
    }
    let edge_dim = config.edge_input_dim();
    let mut edges_base = vec![0.0; n * n * edge_dim];
    for i in 0..n {
        for j in 0..n {
            let row = &mut edges_base[(i * n + j) * edge_dim..(i * n + j + 1) * edge_dim];
            let w = dist(i, j);
            for (k, f) in coord_frequencies(d / 4).enumerate() {
                row[2 * k] = (f * w).sin();
                row[2 * k + 1] = (f * w).cos();
            }
            row[d / 2] = w;
            // row[d / 2 + 1] holds the noisy bit, filled per call.
            row[d / 2 + 2] = near[i * n + j] as u8 as f64;
            row[d / 2 + 3] = near[j * n + i] as u8 as f64;
        }
    }
    StaticFeatures { n, nodes, edges_base, edge_dim }
}

impl StaticFeatures {
    pub fn with_state(&self, xt: &BinaryState, t: usize, embed_dim: usize) -> Result<InputFeatures> {
        if xt.n() != self.n {
            return Err(Error::DimMismatch { expected: self.n, got: xt.n() });
        }
        let n = self.n;
        let bit_col = embed_dim / 2 + 1;
        let mut edges = self.edges_base.clone();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    edges[(i * n + j) * self.edge_dim + bit_col] = if xt.get(i, j) == 1 { 1.0 } else { -1.0 };
                }
            }
        }
        Ok(InputFeatures { n, nodes: self.nodes.clone(), edges, time: timestep_embedding(t, embed_dim) })
    }
}

pub fn embed_inputs(inst: &TspInstance, xt: &BinaryState, t: usize, config: &ModelConfig) -> Result<InputFeatures> {
    static_features(&inst.points, config).with_state(xt, t, config.embed_dim)
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Tape built from one forward pass; `params[k]` is the leaf of tensor `k`.
struct Graph {
    tape: Tape,
    params: Vec<Var>,
    /// `n^2 x 1` symmetrized edge log-odds.
    logits: Var,
}

fn build_graph(params: &DenoiserParams, f: &InputFeatures) -> Graph {
    let cfg = &params.config;
    let n = f.n;
    let mut tape = Tape::new();
    let ids: Vec<Var> = params.tensors.iter().map(|t| tape.leaf(t.rows, t.cols, t.data.clone())).collect();
    let mut k = 0;
    let mut next = || {
        k += 1;
        ids[k - 1]
    };
    let (node_w, node_b, edge_w, edge_b, time_w, time_b) = (next(), next(), next(), next(), next(), next());

    let x = tape.leaf(n, cfg.embed_dim, f.nodes.clone());
    let ein = tape.leaf(n * n, cfg.edge_input_dim(), f.edges.clone());
    let tin = tape.leaf(1, cfg.embed_dim, f.time.clone());

    let h0 = tape.matmul(x, node_w);
    let mut h = tape.add_row(h0, node_b);
    let e0 = tape.matmul(ein, edge_w);
    let mut e = tape.add_row(e0, edge_b);
    let t0 = tape.matmul(tin, time_w);
    let t1 = tape.add_row(t0, time_b);
    let temb = tape.relu(t1);

    for _ in 0..cfg.layers {
        let (aw, ab, bw, bb, cw, cb) = (next(), next(), next(), next(), next(), next());
        let (uw, ub, vw, vb, tw, tb) = (next(), next(), next(), next(), next(), next());
        let (nhg, nhb, neg, neb) = (next(), next(), next(), next());

        let lin = |tape: &mut Tape, x: Var, w: Var, b: Var| {
            let y = tape.matmul(x, w);
            tape.add_row(y, b)
        };
        let ah = lin(&mut tape, h, aw, ab);
        let bh = lin(&mut tape, h, bw, bb);
        let uh = lin(&mut tape, h, uw, ub);
        let vh = lin(&mut tape, h, vw, vb);
        let ce = lin(&mut tape, e, cw, cb);

        let ai = tape.expand_i(ah, n);
        let bj = tape.expand_j(bh, n);
        let e_new = tape.add(ce, ai);
        let e_new = tape.add(e_new, bj);

        let gates = tape.sigmoid(e_new);
        let vj = tape.expand_j(vh, n);
        let msg = tape.mul(gates, vj);
        let agg = tape.sum_j(msg, n);
        let hu = tape.add(uh, agg);
        let hn = tape.layer_norm(hu, nhg, nhb);
        let hn = tape.relu(hn);
        h = tape.add(h, hn);

        let en = tape.layer_norm(e_new, neg, neb);
        let en = tape.relu(en);
        let tp = lin(&mut tape, temb, tw, tb);
        let en = tape.add_row(en, tp);
        e = tape.add(e, en);
    }

    let (hg, hb, hw, hbias) = (next(), next(), next(), next());
    debug_assert_eq!(k, ids.len());
    let en = tape.layer_norm(e, hg, hb);
    let out = tape.matmul(en, hw);
    let out = tape.add_row(out, hbias);
    let z = tape.logit_diff(out);
    let zt = tape.swap_ij(z, n);
    let zs = tape.add(z, zt);
    let logits = tape.scale(zs, 0.5);
    Graph { tape, params: ids, logits }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn heatmap_from_logits(z: &[f64], n: usize) -> Heatmap {
    Heatmap::from_upper(n, |i, j| sigmoid(z[i * n + j]))
}

pub fn forward_features(params: &DenoiserParams, f: &InputFeatures) -> Heatmap {
    let g = build_graph(params, f);
    heatmap_from_logits(g.tape.value(g.logits), f.n)
}

/// `p(x0 = 1 | x_t)` for every edge.
pub fn forward(params: &DenoiserParams, inst: &TspInstance, xt: &BinaryState, t: usize) -> Result<Heatmap> {
    if xt.t != t {
        return Err(Error::InvalidParam(format!("state is at t = {}, forward called with t = {t}", xt.t)));
    }
    Ok(forward_features(params, &embed_inputs(inst, xt, t, &params.config)?))
}

/// Forward pass reusing instance features across calls.
pub struct Denoiser<'a> {
    pub params: &'a DenoiserParams,
    features: StaticFeatures,
}

impl<'a> Denoiser<'a> {
    pub fn new(params: &'a DenoiserParams, inst: &TspInstance) -> Self {
        Self { params, features: static_features(&inst.points, &params.config) }
    }

    pub fn predict(&self, xt: &BinaryState) -> Result<Heatmap> {
        let f = self.features.with_state(xt, xt.t, self.params.config.embed_dim)?;
        Ok(forward_features(self.params, &f))
    }
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TrainSample {
    pub instance: TspInstance,
    pub label: BinaryState,
}

impl TrainSample {
    pub fn new(instance: TspInstance, tour: &[usize]) -> Result<Self> {
        let n = instance.n();
        let mut seen = vec![false; n];
        if tour.len() != n || tour.iter().any(|&v| v >= n || std::mem::replace(&mut seen[v], true)) {
            return Err(Error::InvalidTour(format!("label for {} is not a Hamiltonian cycle", instance.id)));
        }
        let label = BinaryState::from_tour(n, tour);
        Ok(Self { instance, label })
    }
}

/// Per-edge cross-entropy of the prediction at `(x_t, t)` against the clean
/// label, with its parameter gradients (flattened in tensor order).
pub fn sample_loss_and_grads(params: &DenoiserParams, f: &InputFeatures, label: &BinaryState) -> (f64, Vec<Vec<f64>>) {
    let n = f.n;
    let mut g = build_graph(params, f);
    let labels: Vec<f64> = (0..n * n).map(|k| label.get(k / n, k % n) as f64).collect();
    let mask: Vec<bool> = (0..n * n).map(|k| k / n != k % n).collect();
    let loss = g.tape.bce_with_logits(g.logits, labels, mask);
    let value = g.tape.value(loss)[0];
    let mut grads = g.tape.backward(loss);
    let out = g
        .params
        .iter()
        .zip(&params.tensors)
        .map(|(v, t)| {
            let gr = std::mem::take(&mut grads[v.index()]);
            if gr.is_empty() {
                vec![0.0; t.data.len()]
            } else {
                gr
            }
        })
        .collect();
    (value, out)
}

/// Mean loss and mean gradients over a batch. Each sample draws its own
/// timestep uniformly from `1..=T` and its own corruption from `rng`;
/// per-sample seeds are drawn sequentially so the result does not depend on
/// thread scheduling.
pub fn loss_and_grads(
    params: &DenoiserParams,
    batch: &[TrainSample],
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
    let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(s, &seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let t = r.gen_range(1..=schedule.steps());
            let x0 = BinaryState::from_upper(s.label.n(), 0, |i, j| s.label.get(i, j) == 1);
            let xt = q_sample(&x0, t, schedule, &mut r)?;
            let f = embed_inputs(&s.instance, &xt, t, &params.config)?;
            let (loss, grads) = sample_loss_and_grads(params, &f, &s.label);
            if !loss.is_finite() {
                return Err(Error::Numeric { sample: s.instance.id.clone(), msg: format!("loss {loss} at t = {t}") });
            }
            Ok((loss, grads))
        })
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut acc: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
    for r in results {
        let (loss, grads) = r?;
        total += loss;
        for (a, g) in acc.iter_mut().zip(&grads) {
            for (x, y) in a.iter_mut().zip(g) {
                *x += y;
            }
        }
    }
    for a in acc.iter_mut() {
        a.iter_mut().for_each(|x| *x *= scale);
    }
    Ok((total * scale, acc))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Apply a random symmetry of the unit square to each sample.
    pub augment: bool,
    /// Cosine decay of the learning rate to `lr * min_lr_frac`.
    pub min_lr_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 2e-3, batch_size: 16, seed: 0, augment: true, min_lr_frac: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    /// Loss of the initial parameters on an evaluation draw.
    pub initial_loss: f64,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(params: &DenoiserParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn update(&mut self, params: &mut DenoiserParams, grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_B1.powi(self.step);
        let c2 = 1.0 - ADAM_B2.powi(self.step);
        for (k, t) in params.tensors.iter_mut().enumerate() {
            for (i, p) in t.data.iter_mut().enumerate() {
                let g = grads[k][i];
                self.m[k][i] = ADAM_B1 * self.m[k][i] + (1.0 - ADAM_B1) * g;
                self.v[k][i] = ADAM_B2 * self.v[k][i] + (1.0 - ADAM_B2) * g * g;
                let mh = self.m[k][i] / c1;
                let vh = self.v[k][i] / c2;
                *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// One of the eight symmetries of the unit square.
pub fn dihedral(p: &Point, k: u8) -> Point {
    let (x, y) = match k % 4 {
        0 => (p.x, p.y),
        1 => (1.0 - p.y, p.x),
        2 => (1.0 - p.x, 1.0 - p.y),
        _ => (p.y, 1.0 - p.x),
    };
    if k >= 4 {
        Point { x: y, y: x }
    } else {
        Point { x, y }
    }
}

fn augmented(s: &TrainSample, k: u8) -> TrainSample {
    let mut inst = s.instance.clone();
    inst.points = inst.points.iter().map(|p| dihedral(p, k)).collect();
    TrainSample { instance: inst, label: s.label.clone() }
}

/// Adam over shuffled minibatches. Fails if the epoch loss stays above 10x
/// the initial loss for three consecutive epochs.
pub fn train(
    config: ModelConfig,
    dataset: &[TrainSample],
    schedule: &NoiseSchedule,
    tc: &TrainConfig,
) -> Result<(DenoiserParams, TrainLog)> {
    let mut params = DenoiserParams::init(config, tc.seed)?;
    train_from(&mut params, dataset, schedule, tc).map(|log| (params, log))
}

pub fn train_from(
    params: &mut DenoiserParams,
    dataset: &[TrainSample],
    schedule: &NoiseSchedule,
    tc: &TrainConfig,
) -> Result<TrainLog> {
    if dataset.is_empty() {
        return Err(Error::InvalidParam("empty training set".into()));
    }
    if tc.batch_size == 0 {
        return Err(Error::InvalidParam("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x7472_6169_6e);
    let eval: Vec<TrainSample> = dataset.iter().take(256).cloned().collect();
    let (initial_loss, _) = loss_and_grads(params, &eval, schedule, &mut ChaCha8Rng::seed_from_u64(tc.seed))?;
    let mut adam = Adam::new(params);
    let steps_per_epoch = dataset.len().div_ceil(tc.batch_size);
    let total_steps = (steps_per_epoch * tc.epochs).max(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(tc.epochs);
    let mut over = 0;
    let mut step = 0;
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<TrainSample> = chunk
                .iter()
                .map(|&i| if tc.augment { augmented(&dataset[i], rng.gen_range(0..8)) } else { dataset[i].clone() })
                .collect();
            let (loss, grads) = loss_and_grads(params, &batch, schedule, &mut rng)?;
            let progress = step as f64 / total_steps as f64;
            let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            let lr = tc.lr * (tc.min_lr_frac + (1.0 - tc.min_lr_frac) * cosine);
            adam.update(params, &grads, lr);
            sum += loss * batch.len() as f64;
            step += 1;
        }
        let mean = sum / dataset.len() as f64;
        epoch_losses.push(mean);
        over = if mean > 10.0 * initial_loss { over + 1 } else { 0 };
        if over >= 3 || !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean, initial: initial_loss });
        }
    }
    Ok(TrainLog { initial_loss, epoch_losses })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub fn format_checkpoint(params: &DenoiserParams) -> String {
    let c = &params.config;
    let mut s = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
    let _ = writeln!(s, "layers {}\nhidden {}\nembed_dim {}", c.layers, c.hidden, c.embed_dim);
    let _ = writeln!(s, "tensors {}", params.tensors.len());
    for t in &params.tensors {
        let _ = writeln!(s, "tensor {} {} {}", t.name, t.rows, t.cols);
        let vals: Vec<String> = t.data.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", vals.join(" "));
    }
    s.push_str("end\n");
    s
}

pub fn save_checkpoint(params: &DenoiserParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_checkpoint(params))?;
    Ok(())
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn parse_checkpoint(text: &str) -> Result<DenoiserParams> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| ckpt_err("empty file"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(ckpt_err(format!("bad header {header:?}")));
    }
    match parts.next() {
        Some(CHECKPOINT_VERSION) => {}
        other => return Err(Error::Version(format!("checkpoint version {other:?}, expected {CHECKPOINT_VERSION}"))),
    }
    let mut field = |name: &str| -> Result<usize> {
        let line = lines.next().ok_or_else(|| ckpt_err(format!("missing {name}")))?;
        let mut p = line.split_whitespace();
        if p.next() != Some(name) {
            return Err(ckpt_err(format!("expected {name}, got {line:?}")));
        }
        p.next().and_then(|v| v.parse().ok()).ok_or_else(|| ckpt_err(format!("bad {name} value")))
    };
    let config = ModelConfig { layers: field("layers")?, hidden: field("hidden")?, embed_dim: field("embed_dim")? };
    config.validate().map_err(|e| ckpt_err(e.to_string()))?;
    let count = field("tensors")?;
    let expected = config.shapes();
    if count != expected.len() {
        return Err(ckpt_err(format!("{count} tensors, config implies {}", expected.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, rows, cols) in expected {
        let head = lines.next().ok_or_else(|| ckpt_err("truncated tensor list"))?;
        let p: Vec<&str> = head.split_whitespace().collect();
        if p.len() != 4 || p[0] != "tensor" || p[1] != name || p[2].parse() != Ok(rows) || p[3].parse() != Ok(cols) {
            return Err(ckpt_err(format!("expected tensor {name} {rows}x{cols}, got {head:?}")));
        }
        let body = lines.next().ok_or_else(|| ckpt_err(format!("missing values of {name}")))?;
        let data = body
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| ckpt_err(format!("bad value {v:?} in {name}"))))
            .collect::<Result<Vec<f64>>>()?;
        if data.len() != rows * cols || data.iter().any(|v| !v.is_finite()) {
            return Err(ckpt_err(format!("tensor {name} has {} finite values, expected {}", data.len(), rows * cols)));
        }
        tensors.push(Tensor { name, rows, cols, data });
    }
    if lines.next() != Some("end") {
        return Err(ckpt_err("missing end marker"));
    }
    Ok(DenoiserParams { config, tensors })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DenoiserParams> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

/// Loads a checkpoint and checks it against the expected architecture.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<DenoiserParams> {
    let p = load_checkpoint(path)?;
    if &p.config != expected {
        return Err(ckpt_err(format!("checkpoint config {:?} differs from requested {expected:?}", p.config)));
    }
    Ok(p)
}
