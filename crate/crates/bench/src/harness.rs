//! Benchmark and ablation runners.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;

use difuada_core::adapt::{run_adaptation, AdaptConfig};
use difuada_core::decode::check_feasible;
use difuada_core::denoiser::DenoiserParams;
use difuada_core::diffusion::NoiseSchedule;
use difuada_core::energy::EnergyParams;
use difuada_core::guidance::GuidanceConfig;
use difuada_core::instances::{GenConfig, Instance, ProblemKind};
use difuada_core::oracles::{ils_pctsp, solve_exact, SUBSET_ENUM_MAX_N};

use crate::report::{fmt_f, Report, Table};
use crate::{derive_seed, gap_percent, make_instance, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Plain diffusion solve, no guidance, no travel.
    Unguided,
    /// Guided initial pass only.
    GuidanceOnly,
    /// Guided initial pass plus K travel iterations.
    FullAdapt,
}

impl Method {
    pub const ALL: [Method; 3] = [Self::Unguided, Self::GuidanceOnly, Self::FullAdapt];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Unguided => "unguided",
            Self::GuidanceOnly => "guidance-only",
            Self::FullAdapt => "full-adapt",
        }
    }

    /// Adaptation settings for this method, starting from `base`.
    pub fn adapt_config(&self, base: &AdaptConfig) -> AdaptConfig {
        match self {
            Self::Unguided => AdaptConfig { k: 0, guidance: GuidanceConfig { enabled: false, ..base.guidance }, ..*base },
            Self::GuidanceOnly => AdaptConfig { k: 0, ..*base },
            Self::FullAdapt => *base,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).with_context(|| format!("unknown method '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleKind {
    Exact,
    /// Iterated local search; PCTSP only.
    Ils,
}

impl FromStr for OracleKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "ils" => Ok(Self::Ils),
            _ => bail!("unknown oracle '{s}' (expected exact or ils)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub kind: ProblemKind,
    pub sizes: Vec<usize>,
    pub n_instances: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub oracle: OracleKind,
    pub ils_iterations: usize,
    /// Settings for the full-adapt method; the other methods derive from it.
    pub adapt: AdaptConfig,
    pub gen: GenConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Pctsp,
            sizes: vec![10, 12],
            n_instances: 50,
            methods: Method::ALL.to_vec(),
            seed: 0,
            oracle: OracleKind::Exact,
            ils_iterations: 200,
            adapt: AdaptConfig::default(),
            gen: GenConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.methods.is_empty(), "config error: empty method list");
        ensure!(!self.sizes.is_empty(), "config error: empty size list");
        ensure!(self.n_instances > 0, "config error: n_instances must be positive");
        match self.oracle {
            OracleKind::Exact => {
                let limit = if self.kind == ProblemKind::TspTw { 10 } else { SUBSET_ENUM_MAX_N };
                if let Some(&n) = self.sizes.iter().find(|&&n| n > limit) {
                    bail!("config error: exact oracle for {} supports n <= {limit}, got {n}", self.kind);
                }
            }
            OracleKind::Ils => ensure!(self.kind == ProblemKind::Pctsp, "config error: ils oracle is PCTSP only"),
        }
        Ok(())
    }

    /// `key value` pairs echoed into reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        let a = &self.adapt;
        vec![
            ("problem".into(), self.kind.to_string()),
            ("sizes".into(), self.sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")),
            ("instances".into(), self.n_instances.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("oracle".into(), format!("{:?}", self.oracle).to_lowercase()),
            ("K".into(), a.k.to_string()),
            ("renoise_i".into(), a.renoise_level.to_string()),
            ("mode".into(), a.mode.to_string()),
            ("infer_steps".into(), a.infer_steps.to_string()),
            ("tau".into(), a.guidance.tau.to_string()),
            ("mu".into(), a.energy.mu.to_string()),
            ("grad_clip".into(), a.guidance.grad_clip.to_string()),
            ("guidance".into(), a.guidance.enabled.to_string()),
            ("track_best".into(), a.track_best.to_string()),
            ("two_opt".into(), a.decode.two_opt.to_string()),
        ]
    }
}

/// One solved instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub size: usize,
    pub index: usize,
    pub objective: f64,
    pub optimum: f64,
    pub gap: f64,
    pub feasible: bool,
    /// Solve time only.
    pub seconds: f64,
}

/// A fixed instance suite with reference values.
pub struct Suite {
    pub kind: ProblemKind,
    pub size: usize,
    pub instances: Vec<Instance>,
    pub optima: Vec<f64>,
}

impl Suite {
    pub fn build(cfg: &BenchConfig, size: usize) -> Result<Self> {
        let instances: Vec<Instance> = (0..cfg.n_instances as u64)
            .map(|i| make_instance(cfg.kind, size, derive_seed(cfg.seed, stream::BENCH + 16 * size as u64, i), &cfg.gen))
            .collect::<Result<_>>()?;
        let optima: Vec<f64> = instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| -> Result<f64> {
                Ok(match (cfg.oracle, inst) {
                    (OracleKind::Ils, Instance::Pctsp(p)) => {
                        ils_pctsp(p, cfg.ils_iterations, derive_seed(cfg.seed, stream::SOLVER, i as u64))?.optimal_value
                    }
                    _ => solve_exact(inst)?.optimal_value,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { kind: cfg.kind, size, instances, optima })
    }

    /// Solves every instance with `adapt`. The solver seed of instance `i`
    /// depends only on the global seed and `i`, so different settings see
    /// the same random streams.
    pub fn solve(
        &self,
        params: &DenoiserParams,
        schedule: &NoiseSchedule,
        adapt: &AdaptConfig,
        seed: u64,
    ) -> Result<Vec<Outcome>> {
        self.instances
            .par_iter()
            .zip(self.optima.par_iter())
            .enumerate()
            .map(|(i, (inst, &optimum))| {
                let start = Instant::now();
                let (best, _) = run_adaptation(params, inst, schedule, adapt, derive_seed(seed, stream::SOLVER, i as u64))
                    .with_context(|| format!("solving {}", inst.id()))?;
                let seconds = start.elapsed().as_secs_f64();
                let report = check_feasible(&best.solution, inst);
                if matches!(self.kind, ProblemKind::Pctsp | ProblemKind::Op) && !report.feasible {
                    bail!("infeasible {} solution on {}: {}", self.kind, inst.id(), report.message);
                }
                Ok(Outcome {
                    size: self.size,
                    index: i,
                    objective: best.objective,
                    optimum,
                    gap: gap_percent(self.kind, best.objective, optimum),
                    feasible: report.feasible,
                    seconds,
                })
            })
            .collect()
    }
}

/// Sample mean and standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub size: usize,
    pub n: usize,
    /// Mean cost, or mean collected score for OP.
    pub mean_objective: f64,
    pub mean_gap: f64,
    pub stderr_gap: f64,
    pub mean_time: f64,
    pub feasible_rate: f64,
}

impl BenchRow {
    pub fn from_outcomes(method: Method, size: usize, outs: &[Outcome]) -> Self {
        let n = outs.len();
        let gaps: Vec<f64> = outs.iter().map(|o| o.gap).collect();
        let (mean_gap, stderr_gap) = mean_stderr(&gaps);
        Self {
            method,
            size,
            n,
            mean_objective: outs.iter().map(|o| o.objective).sum::<f64>() / n as f64,
            mean_gap,
            stderr_gap,
            mean_time: outs.iter().map(|o| o.seconds).sum::<f64>() / n as f64,
            feasible_rate: outs.iter().filter(|o| o.feasible).count() as f64 / n as f64,
        }
    }
}

pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    /// Per method, in row order.
    pub outcomes: Vec<Vec<Outcome>>,
}

pub fn run_benchmark(cfg: &BenchConfig, params: &DenoiserParams, schedule: &NoiseSchedule) -> Result<BenchResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for &size in &cfg.sizes {
        let suite = Suite::build(cfg, size)?;
        for &method in &cfg.methods {
            let outs = suite.solve(params, schedule, &method.adapt_config(&cfg.adapt), cfg.seed)?;
            rows.push(BenchRow::from_outcomes(method, size, &outs));
            outcomes.push(outs);
        }
    }
    Ok(BenchResult { rows, outcomes })
}

pub fn bench_report(cfg: &BenchConfig, rows: &[BenchRow]) -> Report {
    let objective = if cfg.kind.is_maximization() { "mean_score" } else { "mean_cost" };
    Report {
        title: format!("{} benchmark", cfg.kind),
        config: cfg.echo(),
        table: Table {
            columns: vec!["method", "size", "n", objective, "mean_gap_pct", "stderr_gap_pct", "feasible_rate"]
                .into_iter()
                .map(String::from)
                .collect(),
            rows: rows
                .iter()
                .map(|r| {
                    vec![
                        r.method.to_string(),
                        r.size.to_string(),
                        r.n.to_string(),
                        fmt_f(r.mean_objective, 6),
                        fmt_f(r.mean_gap, 4),
                        fmt_f(r.stderr_gap, 4),
                        fmt_f(r.feasible_rate, 4),
                    ]
                })
                .collect(),
        },
        timing: Table {
            columns: vec!["method".into(), "size".into(), "mean_time_s".into()],
            rows: rows.iter().map(|r| vec![r.method.to_string(), r.size.to_string(), fmt_f(r.mean_time, 6)]).collect(),
        },
        notes: Vec::new(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    KSweep,
    TauSweep,
    MuSweep,
    GuidanceOnOff,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Self::KSweep, Self::TauSweep, Self::MuSweep, Self::GuidanceOnOff];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::KSweep => "k-sweep",
            Self::TauSweep => "tau-sweep",
            Self::MuSweep => "mu-sweep",
            Self::GuidanceOnOff => "guidance-onoff",
        }
    }

    /// Swept values. For guidance on/off, 0 is off and 1 is on.
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::KSweep => vec![1.0, 5.0, 10.0, 20.0, 50.0],
            Self::TauSweep => vec![0.0, 0.01, 0.05, 0.1, 0.5, 1.0],
            Self::MuSweep => vec![0.1, 1.0, 10.0],
            Self::GuidanceOnOff => vec![0.0, 1.0],
        }
    }

    pub fn apply(&self, base: &AdaptConfig, x: f64) -> AdaptConfig {
        let mut c = *base;
        match self {
            Self::KSweep => c.k = x as usize,
            Self::TauSweep => c.guidance.tau = x,
            Self::MuSweep => c.energy = EnergyParams { mu: x },
            Self::GuidanceOnOff => c.guidance.enabled = x != 0.0,
        }
        c
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s).with_context(|| format!("unknown ablation '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub size: usize,
    pub x: f64,
    pub n: usize,
    pub mean_gap: f64,
    pub stderr_gap: f64,
    pub mean_time: f64,
    pub feasible_rate: f64,
}

pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub outcomes: Vec<Vec<Outcome>>,
}

/// Full-adapt runs with one setting varied; every other setting comes from
/// `cfg.adapt`.
pub fn run_ablation(
    ablation: Ablation,
    cfg: &BenchConfig,
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
) -> Result<AblationResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for &size in &cfg.sizes {
        let suite = Suite::build(cfg, size)?;
        for x in ablation.values() {
            let outs = suite.solve(params, schedule, &ablation.apply(&cfg.adapt, x), cfg.seed)?;
            let row = BenchRow::from_outcomes(Method::FullAdapt, size, &outs);
            rows.push(AblationRow {
                ablation,
                size,
                x,
                n: row.n,
                mean_gap: row.mean_gap,
                stderr_gap: row.stderr_gap,
                mean_time: row.mean_time,
                feasible_rate: row.feasible_rate,
            });
            outcomes.push(outs);
        }
    }
    Ok(AblationResult { rows, outcomes })
}

pub fn ablation_report(ablation: Ablation, cfg: &BenchConfig, rows: &[AblationRow]) -> Report {
    let mut columns: Vec<String> = vec!["ablation".into(), "size".into(), "x".into()];
    if ablation == Ablation::TauSweep {
        // The same sweep on the negated axis.
        columns.push("minus_lambda".into());
    }
    columns.extend(["n", "mean_gap_pct", "stderr_gap_pct", "feasible_rate"].map(String::from));
    let body = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.ablation.to_string(), r.size.to_string(), fmt_f(r.x, 4)];
            if ablation == Ablation::TauSweep {
                cells.push(fmt_f(-r.x, 4));
            }
            cells.extend([r.n.to_string(), fmt_f(r.mean_gap, 4), fmt_f(r.stderr_gap, 4), fmt_f(r.feasible_rate, 4)]);
            cells
        })
        .collect();
    let mut notes = Vec::new();
    if ablation == Ablation::MuSweep {
        for &size in &cfg.sizes {
            let gaps: Vec<f64> = rows.iter().filter(|r| r.size == size).map(|r| r.mean_gap).collect();
            let spread =
                gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - gaps.iter().cloned().fold(f64::INFINITY, f64::min);
            notes.push(format!("size {size}: mean-gap spread across mu = {}", fmt_f(spread, 4)));
        }
    }
    Report {
        title: format!("{} {} ablation", cfg.kind, ablation),
        config: cfg.echo(),
        table: Table { columns, rows: body },
        timing: Table {
            columns: vec!["ablation".into(), "size".into(), "x".into(), "mean_time_s".into()],
            rows: rows
                .iter()
                .map(|r| vec![r.ablation.to_string(), r.size.to_string(), fmt_f(r.x, 4), fmt_f(r.mean_time, 6)])
                .collect(),
        },
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_methods_is_config_error() {
        let cfg = BenchConfig { methods: vec![], ..BenchConfig::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("empty method list"));
    }

    #[test]
    fn exact_oracle_size_limit() {
        let cfg = BenchConfig { sizes: vec![13], ..BenchConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = BenchConfig { sizes: vec![13], oracle: OracleKind::Ils, ..BenchConfig::default() };
        assert!(cfg.validate().is_ok());
        let cfg = BenchConfig { kind: ProblemKind::Op, oracle: OracleKind::Ils, ..BenchConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn method_configs() {
        let base = AdaptConfig::default();
        let u = Method::Unguided.adapt_config(&base);
        assert_eq!((u.k, u.guidance.enabled), (0, false));
        let g = Method::GuidanceOnly.adapt_config(&base);
        assert_eq!((g.k, g.guidance.enabled), (0, true));
        assert_eq!(Method::FullAdapt.adapt_config(&base), base);
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn ablation_values_and_apply() {
        let base = AdaptConfig::default();
        assert_eq!(Ablation::KSweep.apply(&base, 50.0).k, 50);
        assert_eq!(Ablation::TauSweep.apply(&base, 0.5).guidance.tau, 0.5);
        assert_eq!(Ablation::MuSweep.apply(&base, 10.0).energy.mu, 10.0);
        assert!(!Ablation::GuidanceOnOff.apply(&base, 0.0).guidance.enabled);
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
    }

    #[test]
    fn mean_stderr_known_values() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (1.666_666_666_666_666_7f64 / 4.0).sqrt()).abs() < 1e-12);
    }
}
