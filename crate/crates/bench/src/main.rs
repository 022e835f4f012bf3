use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use difuada_bench::config::{load_config, resolve_threads, Settings, THREADS_ENV};
use difuada_bench::harness::{
    ablation_report, bench_report, run_ablation, run_benchmark, Ablation, BenchConfig, Method, OracleKind,
};
use difuada_bench::report::{emit_report, fmt_f};
use difuada_bench::verify::{check_reduction, check_time_expansion, run_theorem_suite};
use difuada_bench::{derive_seed, make_instance, stream, tsp_heldout_gaps, tsp_training_set};
use difuada_core::adapt::run_adaptation;
use difuada_core::denoiser::{load_checkpoint, save_checkpoint, train, DenoiserParams, ModelConfig, TrainConfig};
use difuada_core::diffusion::NoiseSchedule;
use difuada_core::energy::EnergyParams;
use difuada_core::instances::{read_instance, write_instance, GenConfig, Instance, ProblemKind};
use difuada_core::oracles::{counterexample_dump, ils_pctsp, solve_exact};

#[derive(Parser, Debug)]
#[command(name = "difuada", version, about = "Zero-shot routing-variant solving with a TSP-trained diffusion model")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to DIFUADA_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Settings file; its entries override flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct AdaptArgs {
    /// Travel iterations.
    #[arg(long = "K", alias = "k")]
    k: Option<usize>,
    #[arg(long)]
    renoise_i: Option<usize>,
    /// `full` or `jump`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    infer_steps: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    no_guidance: bool,
    #[arg(long)]
    two_opt: bool,
    /// Return the last iterate instead of the best one.
    #[arg(long)]
    last_iterate: bool,
}

#[derive(Args, Debug)]
struct InstanceArgs {
    /// Instance file; otherwise one is generated from --problem/--n/--index.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value = "pctsp")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    index: u64,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[arg(long, default_value = "pctsp")]
    problem: ProblemKind,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long, default_value = "exact")]
    oracle: OracleKind,
    #[arg(long, default_value_t = 200)]
    ils_iterations: usize,
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write random instances to <out-dir>/instances.
    Gen {
        #[arg(long, default_value = "pctsp")]
        problem: ProblemKind,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        count: u64,
    },
    /// Train the denoiser on Held–Karp-labelled TSP instances.
    Train {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 2e-3)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 32)]
        embed_dim: usize,
        /// Held-out TSP instances for a greedy-decode gap check (0 skips).
        #[arg(long, default_value_t = 200)]
        eval: usize,
        /// Output path (default <out-dir>/model.ckpt).
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Solve one instance with the adaptation loop.
    Solve {
        #[command(flatten)]
        inst: InstanceArgs,
        #[command(flatten)]
        adapt: AdaptArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// Per-iteration trace CSV.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Exact (or ILS for PCTSP) reference solution of one instance.
    Oracle {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long)]
        ils: bool,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
    },
    /// Gap table against the oracle for each method and size.
    Bench {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        adapt: AdaptArgs,
        /// Comma-separated subset of unguided, guidance-only, full-adapt.
        #[arg(long, default_value = "unguided,guidance-only,full-adapt")]
        methods: String,
    },
    /// One-parameter sweep of the full adaptation method.
    Ablate {
        #[arg(long)]
        ablation: Ablation,
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        adapt: AdaptArgs,
    },
    /// Exact checks of the optimal-subgraph characterization and of the
    /// graph transformations.
    Verify {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        n: usize,
        #[arg(long, default_value_t = 25)]
        fixtures: usize,
    },
}

fn apply_adapt(s: &mut Settings, a: &AdaptArgs) -> Result<()> {
    let c = &mut s.adapt;
    if let Some(k) = a.k {
        c.k = k;
    }
    if let Some(i) = a.renoise_i {
        c.renoise_level = i;
    }
    if let Some(m) = &a.mode {
        c.mode = m.parse()?;
    }
    if let Some(t) = a.infer_steps {
        c.infer_steps = t;
    }
    if let Some(t) = a.tau {
        c.guidance.tau = t;
    }
    if let Some(m) = a.mu {
        c.energy = EnergyParams::new(m)?;
    }
    if let Some(g) = a.grad_clip {
        c.guidance.grad_clip = g;
    }
    if a.no_guidance {
        c.guidance.enabled = false;
    }
    if a.two_opt {
        c.decode.two_opt = true;
    }
    if a.last_iterate {
        c.track_best = false;
    }
    Ok(())
}

fn settings(cli: &Cli) -> Result<Settings> {
    let mut s = Settings::default();
    let g = &cli.global;
    if let Some(seed) = g.seed {
        s.seed = seed;
    }
    s.threads = g.threads;
    if let Some(d) = &g.out_dir {
        s.out_dir = d.clone();
    }
    match &cli.command {
        Command::Solve { adapt, .. } | Command::Bench { adapt, .. } | Command::Ablate { adapt, .. } => {
            apply_adapt(&mut s, adapt)?
        }
        _ => {}
    }
    if let Command::Bench { suite, .. } | Command::Ablate { suite, .. } = &cli.command {
        if let Some(sizes) = &suite.sizes {
            s.sizes = sizes.clone();
        }
        if let Some(n) = suite.instances {
            s.n_instances = n;
        }
    }
    if let Some(path) = &g.config {
        s.apply(&load_config(path)?)?;
    }
    Ok(s)
}

fn load_model(path: &Path) -> Result<DenoiserParams> {
    load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn pick_instance(a: &InstanceArgs, seed: u64) -> Result<Instance> {
    match &a.instance {
        Some(p) => read_instance(p).with_context(|| format!("cannot read instance {}", p.display())),
        None => make_instance(a.problem, a.n, derive_seed(seed, stream::BENCH + 16 * a.n as u64, a.index), &GenConfig::default()),
    }
}

fn bench_config(s: &Settings, suite: &SuiteArgs, methods: Vec<Method>) -> BenchConfig {
    BenchConfig {
        kind: suite.problem,
        sizes: s.sizes.clone(),
        n_instances: s.n_instances,
        methods,
        seed: s.seed,
        oracle: suite.oracle,
        ils_iterations: suite.ils_iterations,
        adapt: s.adapt,
        gen: GenConfig::default(),
    }
}

fn run(cli: Cli) -> Result<bool> {
    let s = settings(&cli)?;
    let env = std::env::var(THREADS_ENV).ok();
    if let Some(n) = resolve_threads(s.threads, env.as_deref())? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let schedule = NoiseSchedule::default();
    match &cli.command {
        Command::Gen { problem, n, count } => {
            let dir = s.out_dir.join("instances");
            std::fs::create_dir_all(&dir)?;
            for i in 0..*count {
                let inst =
                    make_instance(*problem, *n, derive_seed(s.seed, stream::BENCH + 16 * *n as u64, i), &GenConfig::default())?;
                let path = dir.join(format!("{problem}_{n}_{i}.txt"));
                write_instance(&inst, &path)?;
                println!("{}", path.display());
            }
        }
        Command::Train { n, samples, epochs, lr, batch_size, layers, hidden, embed_dim, eval, ckpt } => {
            let start = Instant::now();
            let data = tsp_training_set(*n, *samples, s.seed)?;
            let config = ModelConfig { layers: *layers, hidden: *hidden, embed_dim: *embed_dim };
            let tc = TrainConfig { epochs: *epochs, lr: *lr, batch_size: *batch_size, seed: s.seed, ..TrainConfig::default() };
            let (params, log) = train(config, &data, &schedule, &tc)?;
            std::fs::create_dir_all(&s.out_dir)?;
            let path = ckpt.clone().unwrap_or_else(|| s.out_dir.join("model.ckpt"));
            save_checkpoint(&params, &path)?;
            let mut csv = String::from("epoch,loss\n");
            csv.push_str(&format!("0,{}\n", fmt_f(log.initial_loss, 6)));
            for (e, l) in log.epoch_losses.iter().enumerate() {
                csv.push_str(&format!("{},{}\n", e + 1, fmt_f(*l, 6)));
            }
            std::fs::write(s.out_dir.join("train_log.csv"), csv)?;
            println!("initial loss {:.4}, final loss {:.4}", log.initial_loss, log.final_loss());
            if *eval > 0 {
                let gaps = tsp_heldout_gaps(&params, &schedule, *n, *eval, s.seed)?;
                println!(
                    "held-out greedy gap {:.3}% over {} instances",
                    gaps.iter().sum::<f64>() / gaps.len() as f64,
                    gaps.len()
                );
            }
            println!("saved {} ({:.1}s)", path.display(), start.elapsed().as_secs_f64());
        }
        Command::Solve { inst, ckpt, trace_out, .. } => {
            let params = load_model(ckpt)?;
            let instance = pick_instance(inst, s.seed)?;
            let (best, trace) = run_adaptation(&params, &instance, &schedule, &s.adapt, s.seed)?;
            println!("instance {} ({})", instance.id(), instance.kind());
            println!("objective {:.6}", best.objective);
            println!("feasible {}", best.feasible);
            println!("tour {:?}", best.solution.tour());
            if let Some(p) = trace_out {
                std::fs::write(p, trace.to_csv(true)).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Oracle { inst, ils, iterations } => {
            let instance = pick_instance(inst, s.seed)?;
            let r = match (&instance, ils) {
                (Instance::Pctsp(p), true) => ils_pctsp(p, *iterations, s.seed)?,
                (_, true) => bail!("--ils is only available for PCTSP"),
                _ => solve_exact(&instance)?,
            };
            println!("instance {} ({})", instance.id(), instance.kind());
            println!("method {} exact {}", r.method, r.exact);
            println!("optimum {:.9}", r.optimal_value);
            println!("tour {:?}", r.optimal_solution.tour());
        }
        Command::Bench { suite, methods, .. } => {
            let params = load_model(&suite.ckpt)?;
            let methods =
                methods.split(',').filter(|m| !m.trim().is_empty()).map(|m| m.trim().parse()).collect::<Result<Vec<Method>>>()?;
            let cfg = bench_config(&s, suite, methods);
            let res = run_benchmark(&cfg, &params, &schedule)?;
            let report = bench_report(&cfg, &res.rows);
            let paths = emit_report(&report, &s.out_dir, &format!("bench_{}", cfg.kind))?;
            print!("{}", report.table.to_csv()?);
            println!("wrote {}", paths.csv.display());
        }
        Command::Ablate { ablation, suite, .. } => {
            let params = load_model(&suite.ckpt)?;
            let cfg = bench_config(&s, suite, vec![Method::FullAdapt]);
            let res = run_ablation(*ablation, &cfg, &params, &schedule)?;
            let report = ablation_report(*ablation, &cfg, &res.rows);
            let paths = emit_report(&report, &s.out_dir, &format!("ablate_{}_{}", cfg.kind, ablation))?;
            print!("{}", report.table.to_csv()?);
            for n in &report.notes {
                println!("{n}");
            }
            println!("wrote {}", paths.csv.display());
        }
        Command::Verify { instances, n, fixtures } => return verify(&s, *instances, *n, *fixtures),
    }
    Ok(true)
}

fn verify(s: &Settings, instances: usize, n: usize, fixtures: usize) -> Result<bool> {
    let start = Instant::now();
    let suite = run_theorem_suite(s.seed, instances, n)?;
    let red = check_reduction(s.seed, fixtures)?;
    let tw = check_time_expansion(s.seed, fixtures)?;
    let lines = [
        ("pctsp characterization", suite.pctsp_passed(), suite.pctsp.len()),
        ("op characterization (as stated)", suite.op_literal_passed(), suite.op.len()),
        ("op characterization (max cardinality)", suite.op_cardinality_passed(), suite.op.len()),
        ("node-splitting reduction", red.passed, red.fixtures),
        ("time-expanded graph", tw.passed, tw.fixtures),
    ];
    let mut all = true;
    for (name, passed, total) in lines {
        let ok = passed == total;
        all &= ok;
        println!("{} {name}: {passed}/{total}", if ok { "PASS" } else { "FAIL" });
    }
    let mut dump = String::new();
    for (inst, r) in &suite.pctsp {
        if !r.passed {
            dump.push_str(&counterexample_dump(r, &Instance::Pctsp(inst.clone())));
        }
    }
    for (inst, r) in &suite.op {
        for part in [&r.literal, &r.cardinality] {
            if !part.passed {
                dump.push_str(&counterexample_dump(part, &Instance::Op(inst.clone())));
                dump.push('\n');
            }
        }
    }
    for f in red.failures.iter().chain(&tw.failures) {
        dump.push_str(f);
        dump.push('\n');
    }
    if !dump.is_empty() {
        std::fs::create_dir_all(&s.out_dir)?;
        let path = s.out_dir.join("counterexamples.txt");
        std::fs::write(&path, dump)?;
        println!("counterexamples written to {}", path.display());
    }
    println!("verify finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
