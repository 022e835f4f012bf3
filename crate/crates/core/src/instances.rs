//! Problem instances for TSP, PCTSP, OP and TSP-TW: generation from an
//! explicit seed, Euclidean distances, and the line-oriented text format.
//!
//! File layout (one record per line, `#` starts a comment):
//!
//! ```text
//! DIFUADA-INST v1
//! kind pctsp
//! id pctsp-10-3
//! n 10
//! prize_threshold 1
//! optimum 2.71                 (optional)
//! node 0 0.12 0.98 0 0         (x y, then per-kind fields)
//! ...
//! end
//! ```
//!
//! Per-kind node fields: `tsp` none, `pctsp` prize penalty, `op` score,
//! `tsptw` earliest latest. Header fields: `pctsp` prize_threshold, `op`
//! budget, `tsptw` horizon.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{parse_err, Error, Result};
use crate::matrix::{DistanceMatrix, SquareMatrix};

pub const INSTANCE_MAGIC: &str = "DIFUADA-INST";
pub const INSTANCE_VERSION: &str = "v1";

pub const DEPOT: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProblemKind {
    Tsp,
    Pctsp,
    Op,
    TspTw,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [Self::Tsp, Self::Pctsp, Self::Op, Self::TspTw];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Tsp => "tsp",
            Self::Pctsp => "pctsp",
            Self::Op => "op",
            Self::TspTw => "tsptw",
        }
    }

    /// True for problems whose objective is a collected score (reported as a
    /// positive prize, optimized as its negation).
    pub fn is_maximization(&self) -> bool {
        matches!(self, Self::Op)
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsp" => Ok(Self::Tsp),
            "pctsp" => Ok(Self::Pctsp),
            "op" => Ok(Self::Op),
            "tsptw" => Ok(Self::TspTw),
            other => Err(Error::InvalidParam(format!("unknown problem kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TspInstance {
    pub id: String,
    pub points: Vec<Point>,
    /// Known optimal objective (for oracle-solved instances). Never needed by
    /// the solver itself.
    pub known_optimum: Option<f64>,
}

impl TspInstance {
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        let inst = Self { id: id.into(), points, known_optimum: None };
        inst.validate()?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    fn validate(&self) -> Result<()> {
        if self.points.len() < 3 {
            return Err(Error::InvalidSize(format!("need at least 3 nodes, got {}", self.points.len())));
        }
        if self.points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidParam("non-finite coordinate".into()));
        }
        for i in 0..self.points.len() {
            for j in 0..i {
                if self.points[i] == self.points[j] {
                    return Err(Error::InvalidParam(format!("nodes {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PctspInstance {
    pub base: TspInstance,
    pub prizes: Vec<f64>,
    pub penalties: Vec<f64>,
    pub prize_threshold: f64,
}

impl PctspInstance {
    pub fn new(base: TspInstance, prizes: Vec<f64>, penalties: Vec<f64>, prize_threshold: f64) -> Result<Self> {
        let inst = Self { base, prizes, penalties, prize_threshold };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        let n = self.base.n();
        check_len("prizes", &self.prizes, n)?;
        check_len("penalties", &self.penalties, n)?;
        check_nonneg("prize", &self.prizes)?;
        check_nonneg("penalty", &self.penalties)?;
        if !(self.prize_threshold >= 0.0 && self.prize_threshold.is_finite()) {
            return Err(Error::InvalidParam(format!("prize threshold {} must be nonnegative", self.prize_threshold)));
        }
        let total: f64 = self.prizes.iter().sum();
        if total < self.prize_threshold {
            return Err(Error::InfeasibleInstance(format!("total prize {total} below threshold {}", self.prize_threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpInstance {
    pub base: TspInstance,
    pub scores: Vec<f64>,
    pub budget: f64,
}

impl OpInstance {
    pub fn new(base: TspInstance, scores: Vec<f64>, budget: f64) -> Result<Self> {
        let inst = Self { base, scores, budget };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        check_len("scores", &self.scores, self.base.n())?;
        check_nonneg("score", &self.scores)?;
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::InvalidParam(format!("budget {} must be positive", self.budget)));
        }
        let depot = &self.base.points[DEPOT];
        let nearest = self.base.points[1..].iter().map(|p| depot.dist(p)).fold(f64::INFINITY, f64::min);
        if self.budget < 2.0 * nearest {
            return Err(Error::InfeasibleInstance(format!(
                "budget {} cannot reach any node (nearest round trip {})",
                self.budget,
                2.0 * nearest
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TspTwInstance {
    pub base: TspInstance,
    /// Inclusive `(earliest, latest)` visit times per node.
    pub windows: Vec<(u32, u32)>,
    pub horizon: u32,
}

impl TspTwInstance {
    pub fn new(base: TspInstance, windows: Vec<(u32, u32)>, horizon: u32) -> Result<Self> {
        let inst = Self { base, windows, horizon };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        if self.windows.len() != self.base.n() {
            return Err(Error::DimMismatch { expected: self.base.n(), got: self.windows.len() });
        }
        for (i, &(e, l)) in self.windows.iter().enumerate() {
            if e > l || l > self.horizon {
                return Err(Error::InvalidParam(format!("window [{e}, {l}] of node {i} outside [0, {}]", self.horizon)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Instance {
    Tsp(TspInstance),
    Pctsp(PctspInstance),
    Op(OpInstance),
    TspTw(TspTwInstance),
}

impl Instance {
    pub fn kind(&self) -> ProblemKind {
        match self {
            Self::Tsp(_) => ProblemKind::Tsp,
            Self::Pctsp(_) => ProblemKind::Pctsp,
            Self::Op(_) => ProblemKind::Op,
            Self::TspTw(_) => ProblemKind::TspTw,
        }
    }

    pub fn base(&self) -> &TspInstance {
        match self {
            Self::Tsp(b) => b,
            Self::Pctsp(i) => &i.base,
            Self::Op(i) => &i.base,
            Self::TspTw(i) => &i.base,
        }
    }

    pub fn base_mut(&mut self) -> &mut TspInstance {
        match self {
            Self::Tsp(b) => b,
            Self::Pctsp(i) => &mut i.base,
            Self::Op(i) => &mut i.base,
            Self::TspTw(i) => &mut i.base,
        }
    }

    pub fn n(&self) -> usize {
        self.base().n()
    }

    pub fn id(&self) -> &str {
        &self.base().id
    }

    pub fn distances(&self) -> DistanceMatrix {
        distance_matrix(self.base())
    }
}

/// Generator knobs for the variant data. Coordinates are always uniform on
/// the unit square.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    /// Penalties are drawn from U(0, penalty_scale / n).
    pub penalty_scale: f64,
    pub prize_threshold: f64,
    pub op_budget: OpBudget,
    /// TSP-TW horizon; `None` uses `2 n`.
    pub tw_horizon: Option<u32>,
    pub tw_slack: u32,
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            penalty_scale: 6.0,
            prize_threshold: 1.0,
            op_budget: OpBudget::Fixed(2.0),
            tw_horizon: None,
            tw_slack: 2,
            max_retries: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpBudget {
    Fixed(f64),
    /// Budget of `n / 2`.
    HalfNodes,
}

impl OpBudget {
    pub fn resolve(&self, n: usize) -> f64 {
        match *self {
            Self::Fixed(b) => b,
            Self::HalfNodes => n as f64 / 2.0,
        }
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sample_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut points: Vec<Point> = Vec::with_capacity(n);
    while points.len() < n {
        let p = Point { x: rng.gen::<f64>(), y: rng.gen::<f64>() };
        if !points.contains(&p) {
            points.push(p);
        }
    }
    points
}

pub fn gen_tsp(n: usize, seed: u64) -> Result<TspInstance> {
    if n < 3 {
        return Err(Error::InvalidSize(format!("TSP needs n >= 3, got {n}")));
    }
    let mut rng = rng_for(seed);
    TspInstance::new(format!("tsp-{n}-{seed}"), sample_points(n, &mut rng))
}

/// Open-interval uniform draw on (0, hi).
fn open_uniform(rng: &mut ChaCha8Rng, hi: f64) -> f64 {
    loop {
        let v = rng.gen::<f64>();
        if v > 0.0 {
            return v * hi;
        }
    }
}

pub fn gen_pctsp(n: usize, seed: u64, cfg: &GenConfig) -> Result<PctspInstance> {
    if n < 4 {
        return Err(Error::InvalidSize(format!("PCTSP needs n >= 4, got {n}")));
    }
    let mut rng = rng_for(seed);
    let base = TspInstance::new(format!("pctsp-{n}-{seed}"), sample_points(n, &mut rng))?;
    let prize_hi = 4.0 / n as f64;
    let mut prizes = None;
    for _ in 0..cfg.max_retries.max(1) {
        let mut r = vec![0.0; n];
        for v in r.iter_mut().skip(1) {
            *v = open_uniform(&mut rng, prize_hi);
        }
        if r.iter().sum::<f64>() >= cfg.prize_threshold {
            prizes = Some(r);
            break;
        }
    }
    let prizes = prizes.ok_or_else(|| {
        Error::InfeasibleInstance(format!("total prize stayed below {} after {} draws", cfg.prize_threshold, cfg.max_retries))
    })?;
    let pen_hi = cfg.penalty_scale / n as f64;
    let mut penalties = vec![0.0; n];
    for v in penalties.iter_mut().skip(1) {
        *v = open_uniform(&mut rng, pen_hi);
    }
    PctspInstance::new(base, prizes, penalties, cfg.prize_threshold)
}

pub fn gen_op(n: usize, seed: u64, cfg: &GenConfig) -> Result<OpInstance> {
    if n < 4 {
        return Err(Error::InvalidSize(format!("OP needs n >= 4, got {n}")));
    }
    let mut rng = rng_for(seed);
    let base = TspInstance::new(format!("op-{n}-{seed}"), sample_points(n, &mut rng))?;
    let mut scores = vec![0.0; n];
    for v in scores.iter_mut().skip(1) {
        *v = open_uniform(&mut rng, 1.0);
    }
    OpInstance::new(base, scores, cfg.op_budget.resolve(n))
}

/// Windows come from a random reference tour visited at unit speed without
/// waiting (the k-th visited node is reached at time k), widened by
/// `±slack` and clipped to the horizon, so the reference tour is feasible.
pub fn gen_tsptw(n: usize, seed: u64, cfg: &GenConfig) -> Result<(TspTwInstance, Vec<usize>)> {
    if n < 3 {
        return Err(Error::InvalidSize(format!("TSP-TW needs n >= 3, got {n}")));
    }
    let horizon = cfg.tw_horizon.unwrap_or(2 * n as u32);
    if (horizon as usize) < n {
        return Err(Error::InvalidParam(format!("horizon {horizon} shorter than node count {n}")));
    }
    let mut rng = rng_for(seed);
    let base = TspInstance::new(format!("tsptw-{n}-{seed}"), sample_points(n, &mut rng))?;
    let mut order: Vec<usize> = (1..n).collect();
    order.shuffle(&mut rng);
    let mut reference = vec![DEPOT];
    reference.extend(order);
    let mut windows = vec![(0, horizon); n];
    for (k, &v) in reference.iter().enumerate().skip(1) {
        let k = k as u32;
        windows[v] = (k.saturating_sub(cfg.tw_slack), (k + cfg.tw_slack).min(horizon));
    }
    Ok((TspTwInstance::new(base, windows, horizon)?, reference))
}

pub fn distance_matrix(inst: &TspInstance) -> DistanceMatrix {
    let pts = &inst.points;
    DistanceMatrix::new(SquareMatrix::symmetric_from_fn(pts.len(), |i, j| pts[i].dist(&pts[j])))
        .expect("euclidean distances are symmetric and nonnegative")
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::InvalidParam(format!("{name} has length {} for {n} nodes", v.len())));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: &[f64]) -> Result<()> {
    if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidParam(format!("{name} of node {i} is {x}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Renders an instance in the text format. `f64` values use the shortest
/// representation that parses back to the same bits.
pub fn format_instance(inst: &Instance) -> String {
    let base = inst.base();
    let mut s = String::new();
    writeln!(s, "{INSTANCE_MAGIC} {INSTANCE_VERSION}").unwrap();
    writeln!(s, "kind {}", inst.kind()).unwrap();
    writeln!(s, "id {}", base.id).unwrap();
    writeln!(s, "n {}", base.n()).unwrap();
    match inst {
        Instance::Tsp(_) => {}
        Instance::Pctsp(p) => writeln!(s, "prize_threshold {}", p.prize_threshold).unwrap(),
        Instance::Op(o) => writeln!(s, "budget {}", o.budget).unwrap(),
        Instance::TspTw(t) => writeln!(s, "horizon {}", t.horizon).unwrap(),
    }
    if let Some(opt) = base.known_optimum {
        writeln!(s, "optimum {opt}").unwrap();
    }
    for (i, p) in base.points.iter().enumerate() {
        write!(s, "node {i} {} {}", p.x, p.y).unwrap();
        match inst {
            Instance::Tsp(_) => {}
            Instance::Pctsp(pc) => write!(s, " {} {}", pc.prizes[i], pc.penalties[i]).unwrap(),
            Instance::Op(o) => write!(s, " {}", o.scores[i]).unwrap(),
            Instance::TspTw(t) => write!(s, " {} {}", t.windows[i].0, t.windows[i].1).unwrap(),
        }
        s.push('\n');
    }
    s.push_str("end\n");
    s
}

pub fn write_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_instance(inst))?;
    Ok(())
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance> {
    parse_instance(&std::fs::read_to_string(path)?)
}

fn field<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing field '{what}'")))?;
    tok.parse().map_err(|_| parse_err(line, format!("bad value '{tok}' for field '{what}'")))
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let mut lines =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim())).filter(|(_, l)| !l.is_empty());

    let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut head = header.split_whitespace();
    if head.next() != Some(INSTANCE_MAGIC) {
        return Err(parse_err(ln, format!("expected magic '{INSTANCE_MAGIC}'")));
    }
    match head.next() {
        Some(INSTANCE_VERSION) => {}
        Some(v) => return Err(Error::Version(format!("instance file version {v}, expected {INSTANCE_VERSION}"))),
        None => return Err(parse_err(ln, "missing version")),
    }

    let mut kind: Option<ProblemKind> = None;
    let mut id: Option<String> = None;
    let mut n: Option<usize> = None;
    let mut scalar: Option<f64> = None;
    let mut horizon: Option<u32> = None;
    let mut optimum: Option<f64> = None;
    let mut nodes: Vec<(Point, [f64; 2])> = Vec::new();
    let mut ended = false;
    let mut last_line = ln;

    for (ln, line) in lines.by_ref() {
        last_line = ln;
        let mut tok = line.split_whitespace();
        let key = tok.next().unwrap();
        match key {
            "kind" => {
                kind = Some(field::<String>(tok.next(), ln, "kind")?.parse().map_err(|e: Error| parse_err(ln, e.to_string()))?)
            }
            "id" => id = Some(field(tok.next(), ln, "id")?),
            "n" => n = Some(field(tok.next(), ln, "n")?),
            "prize_threshold" | "budget" => scalar = Some(field(tok.next(), ln, key)?),
            "horizon" => horizon = Some(field(tok.next(), ln, "horizon")?),
            "optimum" => optimum = Some(field(tok.next(), ln, "optimum")?),
            "node" => {
                let kind = kind.ok_or_else(|| parse_err(ln, "node record before 'kind'"))?;
                let idx: usize = field(tok.next(), ln, "node index")?;
                if idx != nodes.len() {
                    return Err(parse_err(ln, format!("node index {idx} out of order (expected {})", nodes.len())));
                }
                let x = field(tok.next(), ln, "x")?;
                let y = field(tok.next(), ln, "y")?;
                let mut extra = [0.0; 2];
                let names: &[&str] = match kind {
                    ProblemKind::Tsp => &[],
                    ProblemKind::Pctsp => &["prize", "penalty"],
                    ProblemKind::Op => &["score"],
                    ProblemKind::TspTw => &["earliest", "latest"],
                };
                for (k, name) in names.iter().enumerate() {
                    let v: f64 = field(tok.next(), ln, name)?;
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(parse_err(ln, format!("{name} must be finite and nonnegative, got {v}")));
                    }
                    extra[k] = v;
                }
                if tok.next().is_some() {
                    return Err(parse_err(ln, "trailing fields in node record"));
                }
                nodes.push((Point { x, y }, extra));
            }
            "end" => {
                ended = true;
                break;
            }
            other => return Err(parse_err(ln, format!("unknown record '{other}'"))),
        }
    }
    if !ended {
        return Err(parse_err(last_line, "truncated file: missing 'end'"));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "content after 'end'"));
    }
    let kind = kind.ok_or_else(|| parse_err(last_line, "missing 'kind'"))?;
    let id = id.ok_or_else(|| parse_err(last_line, "missing 'id'"))?;
    let n = n.ok_or_else(|| parse_err(last_line, "missing 'n'"))?;
    if nodes.len() != n {
        return Err(parse_err(last_line, format!("expected {n} nodes, found {}", nodes.len())));
    }
    let invalid = |e: Error| parse_err(last_line, e.to_string());
    let mut base = TspInstance::new(id, nodes.iter().map(|(p, _)| *p).collect()).map_err(invalid)?;
    base.known_optimum = optimum;
    let col = |k: usize| nodes.iter().map(|(_, e)| e[k]).collect::<Vec<f64>>();
    let need_scalar = |name: &str| scalar.ok_or_else(|| parse_err(last_line, format!("missing '{name}'")));
    let inst = match kind {
        ProblemKind::Tsp => Instance::Tsp(base),
        ProblemKind::Pctsp => {
            Instance::Pctsp(PctspInstance::new(base, col(0), col(1), need_scalar("prize_threshold")?).map_err(invalid)?)
        }
        ProblemKind::Op => Instance::Op(OpInstance::new(base, col(0), need_scalar("budget")?).map_err(invalid)?),
        ProblemKind::TspTw => {
            let horizon = horizon.ok_or_else(|| parse_err(last_line, "missing 'horizon'"))?;
            let windows = nodes.iter().map(|(_, e)| (e[0] as u32, e[1] as u32)).collect();
            Instance::TspTw(TspTwInstance::new(base, windows, horizon).map_err(invalid)?)
        }
    };
    Ok(inst)
}
