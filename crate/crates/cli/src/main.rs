use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use suction_core::harness::run::{demo_log, finish, generate_run_demos, TRAJECTORY_LOG_KIND};
use suction_core::harness::{
    build_policy, compare, make_env, read_log, render_replay, resolve_out_dir, rollout, seed_demos, train, write_log,
    EvalReport, LogHeader, PolicyKind, RunConfig,
};
use suction_core::rl::{MetricRecord, PolicyFile, Trainer, TrainerCheckpoint};

#[derive(Parser, Debug)]
#[command(name = "suction", version, about = "Suction-gripper box picking: demos, training, evaluation, replay")]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed the subcommand uses (demo, training or evaluation base seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; falls back to the config, then $SUCTION_OUT_DIR, then ./runs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scripted demonstrations into <out>/demos.jsonl.
    DemoGen {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Train the configured learner for every configured seed.
    Train {
        /// Environment-step budget, overriding the trainer config (or the
        /// checkpoint's, when resuming).
        #[arg(long)]
        steps: Option<u64>,
        /// Demo log to train from instead of generating one.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Continue from a trainer checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write a resumable checkpoint every N environment steps and at the end.
        #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
        checkpoint_every: Option<u64>,
    },
    /// Evaluate a policy on seeded trials and write one report per scenario.
    Eval {
        /// Trained policy file; defaults to the run's first seed under <out>.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Scenario to evaluate on (repeatable); defaults to the config's list.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        /// Trials per scenario; defaults to the config's `n_trials`.
        #[arg(long)]
        trials: Option<usize>,
        /// Also write every trajectory to a JSONL log.
        #[arg(long)]
        log: bool,
    },
    /// Tabulate evaluation reports (files or directories of them).
    Compare {
        #[arg(required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
    },
    /// Render a logged trajectory's voxel grids and depth images to PGM frames.
    Replay {
        log: PathBuf,
        /// Only this episode of the log.
        #[arg(long)]
        episode: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = resolve_out_dir(cli.out.as_deref(), cfg.out_dir.as_deref());
    match cli.cmd {
        Command::DemoGen { n, noise, scenario } => demo_gen(cfg, &out, cli.seed, n, noise, scenario),
        Command::Train {
            steps,
            demos,
            resume,
            checkpoint_every,
        } => train_cmd(cfg, &out, cli.seed, steps, demos, resume, checkpoint_every),
        Command::Eval {
            policy,
            scenarios,
            trials,
            log,
        } => eval_cmd(cfg, &out, cli.seed, policy, scenarios, trials, log),
        Command::Compare { reports } => compare_cmd(&out, &reports),
        Command::Replay { log, episode } => replay_cmd(&out, &log, episode),
    }
}

/// Writes through a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn demo_gen(
    mut cfg: RunConfig,
    out: &Path,
    seed: Option<u64>,
    n: Option<usize>,
    noise: Option<f64>,
    scenario: Option<String>,
) -> Result<()> {
    if let Some(s) = seed {
        cfg.demos.seed = s;
    }
    if let Some(n) = n {
        cfg.demos.n = n;
    }
    if let Some(x) = noise {
        cfg.demos.noise = x;
    }
    if let Some(s) = scenario {
        cfg.demos.scenario = s;
    }
    cfg.validate()?;
    let mut env = make_env(&cfg)?;
    let demos = generate_run_demos(&cfg, &mut env)?;
    let (header, steps) = demo_log(&cfg, &demos);
    let path = out.join("demos.jsonl");
    write_log(&path, &header, &steps)?;
    println!(
        "wrote {} demos ({} transitions, {} attempts) to {}",
        demos.len(),
        steps.len(),
        demos.attempts,
        path.display()
    );
    Ok(())
}

fn run_dir(out: &Path, cfg: &RunConfig, seed: u64) -> PathBuf {
    out.join(cfg.policy_id()).join(format!("seed{seed}"))
}

fn jsonl(items: &[MetricRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

fn save_checkpoint(t: &Trainer, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("checkpoint.json"), serde_json::to_string(&t.checkpoint())?.as_bytes())
}

/// Runs a trainer to its step budget, checkpointing along the way if asked.
fn drive(t: &mut Trainer, every: Option<u64>, dir: &Path) -> Result<()> {
    let total = t.config().total_env_steps;
    while t.env_steps() < total {
        let next = every.map_or(total, |k| (t.env_steps() / k + 1) * k);
        t.run(Some(next))?;
        if every.is_some() {
            save_checkpoint(t, dir)?;
        }
    }
    Ok(())
}

fn train_cmd(
    mut cfg: RunConfig,
    out: &Path,
    seed: Option<u64>,
    steps: Option<u64>,
    demos: Option<PathBuf>,
    resume: Option<PathBuf>,
    every: Option<u64>,
) -> Result<()> {
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(n) = steps {
        cfg.trainer.total_env_steps = n;
    }
    if let Some(p) = demos {
        cfg.demos.path = Some(p);
    }
    cfg.validate()?;
    if cfg.policy == PolicyKind::Bt {
        bail!("policy `bt` is scripted; there is nothing to train");
    }

    let mut outcomes = Vec::new();
    if let Some(ck_path) = resume {
        let mut ck = TrainerCheckpoint::load(&ck_path)?;
        if let Some(n) = steps {
            ck.config.total_env_steps = n;
        }
        let mut trainer = Trainer::from_checkpoint(ck)?;
        let dir = run_dir(out, &cfg, trainer.seed());
        trainer.set_dump_dir(&dir);
        drive(&mut trainer, every, &dir)?;
        outcomes.push((trainer.seed(), finish(&cfg, trainer)));
    } else {
        let mut env = make_env(&cfg)?;
        for &s in &cfg.seeds {
            let transitions = seed_demos(&cfg, &mut env, s)?;
            let outcome = if cfg.policy == PolicyKind::Sac {
                let dir = run_dir(out, &cfg, s);
                let mut trainer = Trainer::new(cfg.trainer_config()?, make_env(&cfg)?, transitions, s)?;
                trainer.set_dump_dir(&dir);
                drive(&mut trainer, every, &dir)?;
                finish(&cfg, trainer)
            } else {
                train(&cfg, s, transitions)?
            };
            outcomes.push((s, outcome));
        }
    }

    for (s, o) in outcomes {
        let dir = run_dir(out, &cfg, s);
        write_atomic(&dir.join("policy.json"), serde_json::to_string(&o.policy)?.as_bytes())?;
        if !o.metrics.is_empty() {
            write_atomic(&dir.join("metrics.jsonl"), &jsonl(&o.metrics)?)?;
        }
        let successes = o.metrics.iter().filter(|m| m.success).count();
        println!(
            "seed {s}: {} episodes, {successes} successful; policy in {}",
            o.metrics.len(),
            dir.display()
        );
    }
    Ok(())
}

fn eval_cmd(
    mut cfg: RunConfig,
    out: &Path,
    seed: Option<u64>,
    policy: Option<PathBuf>,
    scenarios: Vec<String>,
    trials: Option<usize>,
    log: bool,
) -> Result<()> {
    if let Some(s) = seed {
        cfg.eval_base_seed = s;
    }
    if let Some(n) = trials {
        cfg.n_trials = n;
    }
    if !scenarios.is_empty() {
        cfg.eval_scenarios = scenarios;
    }
    cfg.validate()?;
    let file = match (cfg.policy, policy) {
        (PolicyKind::Bt, _) => None,
        (_, Some(p)) => Some(PolicyFile::load(&p)?),
        (_, None) => {
            let p = run_dir(out, &cfg, cfg.seeds[0]).join("policy.json");
            Some(PolicyFile::load(&p).with_context(|| "no trained policy; run `train` first or pass --policy")?)
        }
    };
    let mut env = make_env(&cfg)?;
    for name in &cfg.eval_scenarios {
        env.scenarios().get(name)?;
    }
    let mut pol = build_policy(&cfg, file)?;
    let id = pol.id();

    let mut results = Vec::new();
    for scenario in &cfg.eval_scenarios {
        let mut steps = Vec::new();
        let mut records = Vec::with_capacity(cfg.n_trials);
        for i in 0..cfg.n_trials {
            let rec = log.then_some(&mut steps);
            records.push(rollout(&mut env, &mut pol, scenario, cfg.eval_base_seed + i as u64, i, rec)?);
        }
        let mut report = EvalReport::from_trials(id.clone(), scenario.clone(), cfg.eval_base_seed, records);
        report.config_hash = cfg.hash();
        results.push((report, steps));
    }

    for (report, steps) in &results {
        let stem = format!("{}__{}", report.policy_id, report.scenario);
        let dir = out.join("eval");
        write_atomic(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(report)?.as_bytes())?;
        if log {
            let header = LogHeader {
                kind: TRAJECTORY_LOG_KIND.into(),
                policy_id: report.policy_id.clone(),
                scenario: report.scenario.clone(),
                config_hash: report.config_hash.clone(),
                seed: report.base_seed,
                episodes: report.n_trials,
            };
            write_log(&dir.join(format!("{stem}.jsonl")), &header, steps)?;
        }
        println!(
            "{:<20} {:<8} success {:5.1}%  reward {:7.2} ± {:6.2}  time {:5.2} ± {:4.2} s  d̄ {:.3}",
            report.policy_id,
            report.scenario,
            report.success_rate,
            report.mean_reward,
            report.std_reward,
            report.mean_time_s,
            report.std_time_s,
            report.smoothness
        );
    }
    Ok(())
}

fn report_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(p.clone());
        }
    }
    Ok(paths)
}

fn compare_cmd(out: &Path, inputs: &[PathBuf]) -> Result<()> {
    let mut reports = Vec::new();
    for p in report_paths(inputs)? {
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        reports.push(r);
    }
    let table = compare(&reports)?;
    let text = table.to_text();
    write_atomic(&out.join("comparison.txt"), text.as_bytes())?;
    write_atomic(&out.join("comparison.csv"), table.to_csv().as_bytes())?;
    print!("{text}");
    Ok(())
}

fn replay_cmd(out: &Path, log: &Path, episode: Option<usize>) -> Result<()> {
    let (header, mut steps) = read_log(log)?;
    if let Some(e) = episode {
        steps.retain(|s| s.episode == e);
        if steps.is_empty() {
            bail!("{}: no episode {e}", log.display());
        }
    }
    let stem = log.file_stem().map_or("log".into(), |s| s.to_string_lossy().into_owned());
    let dir = out.join("replay").join(stem);
    let frames = render_replay(&steps, &dir)?;
    println!(
        "rendered {} frames of `{}` ({}) to {}",
        frames.len(),
        header.policy_id,
        header.scenario,
        dir.display()
    );
    Ok(())
}
