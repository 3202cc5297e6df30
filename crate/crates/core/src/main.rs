use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Matrix4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hlmc::bench::{
    emit_table, run_case, BenchTask, Controller, HybridController, LqrController, Provenance,
    ZeroController,
};
use hlmc::checkpoint::{self, Checkpoint};
use hlmc::config::Config;
use hlmc::dynamics::PlantState;
use hlmc::fusion::Ensemble;
use hlmc::lqr::{linearize, solve_care};
use hlmc::tasks::{load_trace, TrajectoryProfile, WipEnv, OBS_DIM};
use hlmc::train::{epoch_csv_row, train, EPOCH_CSV_HEADER};
use hlmc::{Error, Result};

#[derive(Parser)]
#[command(name = "hlmc", version, about = "Hybrid LQR + ensemble SAC control of a wheeled inverted pendulum")]
struct Cli {
    /// TOML config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `paths.out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Lqr,
    Hybrid,
    Zero,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimTask {
    Balance,
    Velocity,
    Position,
    Trace,
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble and write checkpoints plus per-epoch statistics.
    Train,
    /// Sweep tasks × cases × seeds and write result tables.
    Bench {
        #[arg(long, value_enum, default_value = "all")]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// One rollout, written as a per-step trace.
    Simulate {
        #[arg(long, value_enum, default_value = "balance")]
        task: SimTask,
        #[arg(long, value_enum, default_value = "lqr")]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Trace CSV for `--task trace`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        theta0: f64,
        /// Index into the configured case list.
        #[arg(long, default_value_t = 0)]
        case: usize,
    },
    /// Solve the Riccati equation for the configured plant and weights.
    LqrSynth,
    /// Hybrid metrics of one checkpoint on every task and case.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn load_ensemble(path: &Path, cfg: &Config) -> Result<(Arc<Ensemble>, Checkpoint)> {
    let ck = checkpoint::load(path)?;
    for m in &ck.members {
        if m.obs_dim() != OBS_DIM || m.cfg.hidden != cfg.sac.hidden {
            return Err(Error::Shape(format!(
                "checkpoint networks ({:?}) do not match config hidden layers {:?}",
                m.actor.dims(),
                cfg.sac.hidden
            )));
        }
    }
    let ensemble = Ensemble::from_members(ck.members.clone(), 1)?;
    Ok((Arc::new(ensemble), ck))
}

fn hybrid(cfg: &Config, checkpoint: Option<&Path>) -> Result<HybridController> {
    let path = checkpoint.ok_or_else(|| Error::Usage("the hybrid method needs --checkpoint".into()))?;
    let (ensemble, ck) = load_ensemble(path, cfg)?;
    Ok(HybridController {
        ensemble,
        gains: ck.gains,
        residual_scale: cfg.fusion.residual_scale,
        deterministic: !cfg.bench.stochastic,
    })
}

fn controllers(cfg: &Config, method: Method, checkpoint: Option<&Path>) -> Result<Vec<Box<dyn Controller>>> {
    let lqr = || Box::new(LqrController(cfg.lqr.lqr_gains().expect("validated"))) as Box<dyn Controller>;
    Ok(match method {
        Method::Lqr => vec![lqr()],
        Method::Zero => vec![Box::new(ZeroController)],
        Method::Hybrid => vec![Box::new(hybrid(cfg, checkpoint)?)],
        Method::All => {
            let mut v = vec![lqr()];
            if let Some(p) = checkpoint {
                v.push(Box::new(hybrid(cfg, Some(p))?));
            }
            v
        }
    })
}

fn cmd_train(cfg: &Config, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let hash = cfg.hash();
    let mut csv = format!("{EPOCH_CSV_HEADER}\n");
    let every = cfg.train.checkpoint_every;
    let trained = train(cfg, |epoch, stats, ensemble| {
        writeln!(csv, "{}", epoch_csv_row(epoch, stats)).unwrap();
        if every > 0 && (epoch + 1) % every == 0 {
            let ck = Checkpoint { config_hash: hash, gains: cfg.lqr.lqr_gains()?, members: ensemble.members.clone() };
            checkpoint::save(&out.join(format!("checkpoint_e{:04}.hlmc", epoch + 1)), &ck)?;
        }
        Ok(())
    })?;
    let ck = Checkpoint { config_hash: hash, gains: trained.gains, members: trained.ensemble.members };
    checkpoint::save(&out.join("checkpoint.hlmc"), &ck)?;
    write_file(&out.join("training.csv"), &csv)?;
    println!("trained {} epochs; checkpoint at {}", cfg.train.epochs, out.join("checkpoint.hlmc").display());
    Ok(())
}

fn sweep(cfg: &Config, ctrls: &[Box<dyn Controller>], out: &Path, stem: &str) -> Result<()> {
    let mut results = Vec::new();
    for task in &cfg.bench.tasks {
        for case in &cfg.bench.cases {
            for c in ctrls {
                results.push(run_case(c.as_ref(), *task, case, &cfg.plant, &cfg.tasks, &cfg.env, &cfg.bench.seeds)?);
            }
        }
    }
    let prov = Provenance { config_hash: cfg.hash_hex(), seeds: cfg.bench.seeds.clone() };
    let (csv, md) = emit_table(&results, &prov)?;
    fs::create_dir_all(out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    write_file(&out.join(format!("{stem}.csv")), &csv)?;
    write_file(&out.join(format!("{stem}.md")), &md)?;
    print!("{md}");
    Ok(())
}

fn cmd_simulate(
    cfg: &Config,
    out: &Path,
    task: SimTask,
    method: Method,
    checkpoint: Option<&Path>,
    trace: Option<&Path>,
    theta0: f64,
    case: usize,
) -> Result<()> {
    let profile = match task {
        SimTask::Balance => TrajectoryProfile::balance(),
        SimTask::Velocity => cfg.tasks.profile(BenchTask::Velocity),
        SimTask::Position => cfg.tasks.profile(BenchTask::Position),
        SimTask::Trace => load_trace(trace.ok_or_else(|| Error::Usage("--task trace needs --trace".into()))?)?,
    };
    let c = cfg.bench.cases.get(case).ok_or_else(|| Error::Usage(format!("no case {case}")))?;
    let params = hlmc::dynamics::apply_case(&cfg.plant, c)?;
    let ctrl: Box<dyn Controller> = match method {
        Method::Lqr | Method::All => Box::new(LqrController(cfg.lqr.lqr_gains()?)),
        Method::Zero => Box::new(ZeroController),
        Method::Hybrid => Box::new(hybrid(cfg, checkpoint)?),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut env = WipEnv::new(params, profile, cfg.env)?;
    let mut obs = env.reset(PlantState::new(0.0, theta0, 0.0, 0.0))?;
    let mut q_des = env.reference();
    let mut csv = String::from("t,x_w,x_des,xdot_w,xdot_des,theta,tau_lqr,tau_res,tau_c,r\n");
    while !env.is_done() {
        let cmd = ctrl.command(&obs, &env.state(), &q_des, &mut rng)?;
        let o = env.step(cmd)?;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            env.time(),
            o.q.x_w,
            o.q_des.x_w,
            o.q.x_w_dot,
            o.q_des.x_w_dot,
            o.q.theta,
            cmd.lqr,
            cmd.residual,
            cmd.total,
            o.reward
        )
        .unwrap();
        obs = o.obs;
        q_des = o.q_des;
    }
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    write_file(&out.join("trace.csv"), &csv)?;
    println!(
        "{} steps, failed {}; trace at {}",
        (env.completed_fraction() * cfg.env.horizon as f64).round(),
        env.failed(),
        out.join("trace.csv").display()
    );
    Ok(())
}

fn cmd_lqr_synth(cfg: &Config) -> Result<()> {
    let model = linearize(&cfg.plant)?;
    let q = Matrix4::from_diagonal(&cfg.lqr.q_diag.into());
    let g = solve_care(&model, &q, cfg.lqr.r, cfg.lqr.sigma2_h)?;
    println!("K = [{}]", g.k.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "));
    let eig = model.closed_loop(&g.k);
    for (re, im) in hlmc::lqr::eigenvalues(&eig) {
        println!("closed-loop eigenvalue {re:.6} {im:+.6}i");
    }
    Ok(())
}

fn cmd_eval(cfg: &Config, checkpoint: &Path) -> Result<()> {
    let h = hybrid(cfg, Some(checkpoint))?;
    let mut rows = Vec::new();
    for task in &cfg.bench.tasks {
        for case in &cfg.bench.cases {
            rows.push(run_case(&h, *task, case, &cfg.plant, &cfg.tasks, &cfg.env, &cfg.bench.seeds)?);
        }
    }
    let prov = Provenance { config_hash: cfg.hash_hex(), seeds: cfg.bench.seeds.clone() };
    print!("{}", emit_table(&rows, &prov)?.1);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = out.clone();
    }
    if let Ok(n) = std::env::var("HLMC_THREADS") {
        let n: usize = n.parse().map_err(|_| Error::Usage(format!("HLMC_THREADS must be an integer, got {n}")))?;
        // Only fails if a global pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = cfg.paths.out_dir.clone();
    match cli.cmd {
        Command::Train => cmd_train(&cfg, &out),
        Command::Bench { method, checkpoint } => {
            if let Some(seed) = cli.seed {
                let n = cfg.bench.seeds.len() as u64;
                cfg.bench.seeds = (seed..seed + n).collect();
            }
            let ctrls = controllers(&cfg, method, checkpoint.as_deref())?;
            sweep(&cfg, &ctrls, &out, "bench_results")
        }
        Command::Simulate { task, method, checkpoint, trace, theta0, case } => {
            cmd_simulate(&cfg, &out, task, method, checkpoint.as_deref(), trace.as_deref(), theta0, case)
        }
        Command::LqrSynth => cmd_lqr_synth(&cfg),
        Command::Eval { checkpoint } => cmd_eval(&cfg, &checkpoint),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Usage(_) | Error::Config { .. } => 2,
            _ => 1,
        });
    }
}
