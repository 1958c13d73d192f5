//! Acceptance suite. Prints one `criterion N: PASS|FAIL — detail` line per
//! criterion and exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,3,5` restricts the run to the listed criteria. The
//! learning criteria (7–9) train every configured seed of the shipped
//! `configs/` files and dominate the running time.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use suction_core::baselines::{BtConfig, BtPolicy};
use suction_core::geometry::{canonicalize, decanonicalize_action, rotate_action, rotate_observation};
use suction_core::harness::{build_policy, evaluate, make_env, seed_demos, train, EvalReport, Policy, RunConfig};
use suction_core::nets::gradcheck::layer_suite;
use suction_core::rl::{PolicyFile, Trainer, TrainerCheckpoint};
use suction_core::sensing::{sample_shift_3d, voxelize, SHIFT_PAD_3D};
use suction_core::sim::{EnvConfig, SensorMode};
use suction_core::{Action, GridSpec, Observation, SuctionEnv, SymmetryIndex, Vec3, VoxelGrid};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($fmt)+)),
        }
    };
}

fn main() -> ExitCode {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, fn() -> Check); 10] = [
        (1, voxelize_matches_oracle),
        (2, gradients_match_finite_differences),
        (3, symmetry_suite),
        (4, shift_augmentation),
        (5, reward_identity),
        (6, behavior_tree),
        (7, modality_comparison),
        (8, ensembling_smooths),
        (9, behavior_cloning),
        (10, reproducibility),
    ];
    let mut failed = 0;
    for (n, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let res = check();
        let secs = t0.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("criterion {n}: PASS — {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n}: FAIL — {d} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- 1

fn voxelize_matches_oracle() -> Check {
    let spec = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t0 = Instant::now();
    let mut points_total = 0;
    for cloud in 0..100 {
        let n = rng.random_range(0..=5000);
        points_total += n;
        let points: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::from_fn(|a, _| {
                    let lo = spec.origin[a];
                    let ext = spec.dims[a] as f64 * spec.voxel_size;
                    if rng.random_bool(0.1) {
                        // Exactly on a cell boundary, including the far face.
                        lo + rng.random_range(0..=spec.dims[a]) as f64 * spec.voxel_size
                    } else {
                        rng.random_range(lo - 0.1 * ext..lo + 1.1 * ext)
                    }
                })
            })
            .collect();
        let grid = voxelize(&points, &spec);

        let mut expected = BTreeSet::new();
        for p in &points {
            let mut cell = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let f = ((p[a] - spec.origin[a]) / spec.voxel_size).floor();
                if f < 0.0 || f >= spec.dims[a] as f64 {
                    inside = false;
                    break;
                }
                cell[a] = f as usize;
            }
            if inside {
                expected.insert(cell);
            }
        }
        let got: BTreeSet<[usize; 3]> = grid.occupied_coords().collect();
        ensure!(got == expected, "cloud {cloud}: {} cells occupied, oracle says {}", got.len(), expected.len());
        ensure!(grid.count() == expected.len(), "cloud {cloud}: count disagrees with occupied cells");
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s (limit 5s)");
    Ok(format!("100 clouds, {points_total} points, identical to the per-point oracle in {secs:.2}s"))
}

// ---------------------------------------------------------------- 2

fn gradients_match_finite_differences() -> Check {
    let t0 = Instant::now();
    let mut worst = (0.0f64, "");
    let mut names = BTreeSet::new();
    for seed in 0..5 {
        let suite = layer_suite(seed, 64).map_err(|e| e.to_string())?;
        for (name, gc) in suite {
            ensure!(gc.checked > 0, "{name}: no coordinates checked");
            ensure!(
                gc.max_rel_error < 1e-3,
                "{name} seed {seed}: relative error {:.2e} over {} coordinates",
                gc.max_rel_error,
                gc.checked
            );
            if gc.max_rel_error > worst.0 {
                worst = (gc.max_rel_error, name);
            }
            names.insert(name);
        }
    }
    for layer in ["dense", "conv2d", "conv3d", "layer_norm", "spatial_softmax", "tanh_gaussian log_prob"] {
        ensure!(names.iter().any(|n| n.contains(layer)), "no gradient check for {layer}");
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s (limit 60s)");
    Ok(format!("{} checks × 5 seeds, worst {:.2e} ({}) in {secs:.1}s", names.len(), worst.0, worst.1))
}

// ---------------------------------------------------------------- 3

fn obs_bits(o: &Observation) -> (Vec<u64>, Option<VoxelGrid>) {
    (o.proprio().iter().map(|v| v.to_bits()).collect(), o.voxels.as_deref().cloned())
}

fn action_bits(a: &Action) -> [u64; 7] {
    a.to_array().map(f64::to_bits)
}

fn random_action(rng: &mut ChaCha8Rng) -> Action {
    let v: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
    Action::from_slice(&v).expect("seven components")
}

/// Observations from random-action rollouts with voxels rendered.
fn sample_observations() -> Result<Vec<Observation>, String> {
    let mut env = SuctionEnv::builtin(EnvConfig {
        sensors: SensorMode::Voxel,
        ..EnvConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    for (i, scenario) in ["seen", "unseen", "nominal", "defect"].iter().enumerate() {
        for e in 0..3 {
            let mut obs = env.reset(scenario, 100 * i as u64 + e).map_err(|e| e.to_string())?;
            for _ in 0..25 {
                out.push(obs.clone());
                let mut a = random_action(&mut rng);
                a.dpos.z = -a.dpos.z.abs();
                let step = env.step(&a).map_err(|e| e.to_string())?;
                if step.terminated || step.truncated {
                    break;
                }
                obs = step.obs;
            }
        }
    }
    Ok(out)
}

fn symmetry_suite() -> Check {
    let observations = sample_observations()?;
    ensure!(observations.iter().all(|o| o.voxels.is_some()), "observations lack voxel grids");

    // (a) The canonical position lies in the closed positive quadrant.
    for (i, o) in observations.iter().enumerate() {
        for j in 0..4 {
            let (c, _) = canonicalize(&rotate_observation(o, SymmetryIndex::new(j).unwrap()));
            let p = c.rel_pose.position;
            ensure!(p.x >= 0.0 && p.y >= 0.0, "observation {i} rotated {j}: canonical position ({}, {})", p.x, p.y);
        }
    }

    // (b) Rotated copies of a scene share one canonical observation.
    let mut ties = 0;
    for (i, o) in observations.iter().enumerate() {
        let (c0, k0) = canonicalize(o);
        let reference = obs_bits(&c0);
        if o.rel_pose.position.x == 0.0 || o.rel_pose.position.y == 0.0 {
            ties += 1;
        }
        for j in 1..4 {
            let j = SymmetryIndex::new(j).unwrap();
            let (c, k) = canonicalize(&rotate_observation(o, j));
            ensure!(obs_bits(&c) == reference, "observation {i}: rotation {} canonicalizes differently", j.get());
            ensure!(k.compose(j) == k0, "observation {i}: rotation indices do not compose");
        }
    }

    // (c) Decanonicalizing undoes the rotation exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let a = random_action(&mut rng);
        let k = SymmetryIndex::new(rng.random_range(0..4)).unwrap();
        ensure!(
            action_bits(&decanonicalize_action(&rotate_action(&a, k), k)) == action_bits(&a),
            "action {a:?} does not survive rotation {}",
            k.get()
        );
    }
    Ok(format!(
        "{} observations ({ties} on a quadrant boundary) × 4 rotations; 10000 action round trips",
        observations.len()
    ))
}

// ---------------------------------------------------------------- 4

fn shift_oracle(grid: &VoxelGrid, shift: [i32; 3]) -> VoxelGrid {
    let dims = grid.dims();
    let mut out = VoxelGrid::empty(grid.spec());
    for c in grid.occupied_coords() {
        let t: Vec<i64> = (0..3).map(|a| c[a] as i64 + shift[a] as i64).collect();
        if (0..3).all(|a| t[a] >= 0 && t[a] < dims[a] as i64) {
            out.set(t[0] as usize, t[1] as usize, t[2] as usize);
        }
    }
    out
}

/// True when no occupied voxel lies within `SHIFT_PAD_3D` cells of a face the
/// shift moves content out through.
fn clear_of_dropped_faces(grid: &VoxelGrid, shift: [i32; 3]) -> bool {
    let dims = grid.dims();
    let pad = SHIFT_PAD_3D as usize;
    grid.occupied_coords().all(|c| {
        (0..3).all(|a| match shift[a] {
            s if s > 0 => c[a] + pad < dims[a],
            s if s < 0 => c[a] >= pad,
            _ => true,
        })
    })
}

fn shift_augmentation() -> Check {
    let spec = GridSpec::default();
    let dims = spec.dims;
    let pad = SHIFT_PAD_3D as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut equal_cases = 0;
    for trial in 0..10_000 {
        let mut grid = VoxelGrid::empty(spec);
        let n = rng.random_range(0..300);
        let interior = rng.random_bool(0.5);
        for _ in 0..n {
            let c: Vec<usize> = (0..3)
                .map(|a| {
                    if interior {
                        rng.random_range(pad..dims[a] - pad)
                    } else if rng.random_bool(0.3) {
                        // Crowd the faces.
                        if rng.random_bool(0.5) {
                            rng.random_range(0..pad + 1)
                        } else {
                            rng.random_range(dims[a] - pad - 1..dims[a])
                        }
                    } else {
                        rng.random_range(0..dims[a])
                    }
                })
                .collect();
            grid.set(c[0], c[1], c[2]);
        }
        let shift = sample_shift_3d(&mut rng);
        ensure!(shift.iter().all(|s| s.abs() <= SHIFT_PAD_3D), "shift {shift:?} outside ±{SHIFT_PAD_3D}");
        let shifted = grid.shifted(shift);
        ensure!(shifted == shift_oracle(&grid, shift), "trial {trial}: shift {shift:?} disagrees with the oracle");
        ensure!(shifted.count() <= grid.count(), "trial {trial}: shifting added voxels");
        if clear_of_dropped_faces(&grid, shift) {
            equal_cases += 1;
            ensure!(shifted.count() == grid.count(), "trial {trial}: interior content lost under shift {shift:?}");
        }
    }
    ensure!(equal_cases >= 1000, "only {equal_cases} trials exercised the equality case");
    Ok(format!("10000 (grid, shift) pairs match the oracle; {equal_cases} with no voxel near a dropped face keep every voxel"))
}

// ---------------------------------------------------------------- 5

fn reward_identity() -> Check {
    let mut env = SuctionEnv::builtin(EnvConfig::default());
    let mut bt = BtPolicy::new(BtConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scenarios = ["nominal", "seen", "defect", "unseen"];
    let (mut episodes, mut goals, mut wasted) = (0u64, 0, 0);
    let mut obs = env.reset(scenarios[0], 0).map_err(|e| e.to_string())?;
    bt.reset(0);
    for t in 0..1000 {
        // Mostly scripted, so episodes reach the goal, with random interjections.
        let a = if rng.random_bool(0.8) {
            bt.act(&obs).map_err(|e| e.to_string())?
        } else {
            random_action(&mut rng)
        };
        let out = env.step(&a).map_err(|e| e.to_string())?;
        let r = out.reward;
        let identity = r.goal - r.step - r.pose - r.action + r.suction;
        ensure!(r.total.to_bits() == identity.to_bits(), "step {t}: total {} ≠ {identity}", r.total);
        ensure!(r.goal == 0.0 || r.goal == 100.0, "step {t}: goal term {}", r.goal);
        ensure!((r.goal == 100.0) == out.terminated, "step {t}: goal {} with terminated={}", r.goal, out.terminated);
        ensure!(r.step >= 0.0 && r.pose >= 0.0 && r.action >= 0.0, "step {t}: negative penalty in {r:?}");
        goals += usize::from(out.terminated);
        wasted += usize::from(r.suction < 0.0);
        obs = if out.terminated || out.truncated {
            episodes += 1;
            bt.reset(episodes);
            env.reset(scenarios[episodes as usize % 4], episodes).map_err(|e| e.to_string())?
        } else {
            out.obs
        };
    }
    ensure!(goals > 0, "the fuzz run never reached the goal");
    Ok(format!("1000 steps, {episodes} episodes, {goals} goals, {wasted} wasted activations"))
}

// ---------------------------------------------------------------- 6

fn behavior_tree() -> Check {
    let cfg = load_config("bt.json")?;
    let t0 = Instant::now();
    let mut env = make_env(&cfg).map_err(|e| e.to_string())?;
    let mut bt = build_policy(&cfg, None).map_err(|e| e.to_string())?;
    let nominal = evaluate(&mut env, &mut bt, "nominal", 30, cfg.eval_base_seed).map_err(|e| e.to_string())?;
    let defect = evaluate(&mut env, &mut bt, "defect", 30, cfg.eval_base_seed).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    ensure!(nominal.success_rate == 100.0, "nominal {:.1}%", nominal.success_rate);
    ensure!(defect.success_rate < 100.0, "defect {:.1}%", defect.success_rate);
    ensure!(secs < 60.0, "took {secs:.1}s (limit 60s)");
    Ok(format!("nominal {:.1}%, defect {:.1}% in {secs:.1}s", nominal.success_rate, defect.success_rate))
}

// ---------------------------------------------------------------- 7–9

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load_config(name: &str) -> Result<RunConfig, String> {
    RunConfig::load(&config_dir().join(name)).map_err(|e| e.to_string())
}

struct Trained {
    policy: PolicyFile,
    seen: EvalReport,
    unseen: EvalReport,
}

fn eval_policy(cfg: &RunConfig, file: &PolicyFile, scenario: &str) -> Result<EvalReport, String> {
    let mut env = make_env(cfg).map_err(|e| e.to_string())?;
    let mut pol = build_policy(cfg, Some(file.clone())).map_err(|e| e.to_string())?;
    evaluate(&mut env, &mut pol, scenario, cfg.n_trials, cfg.eval_base_seed).map_err(|e| e.to_string())
}

type TrainedCache = Mutex<HashMap<(String, u64), Arc<Trained>>>;

/// Trains and evaluates `configs/<name>` for `seed`, once per process.
fn trained(name: &str, seed: u64) -> Result<Arc<Trained>, String> {
    static CACHE: OnceLock<TrainedCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(t) = cache.lock().unwrap().get(&(name.to_string(), seed)) {
        return Ok(t.clone());
    }
    let cfg = load_config(name)?;
    let t0 = Instant::now();
    let mut env = make_env(&cfg).map_err(|e| e.to_string())?;
    let demos = seed_demos(&cfg, &mut env, seed).map_err(|e| e.to_string())?;
    let outcome = train(&cfg, seed, demos).map_err(|e| e.to_string())?;
    let seen = eval_policy(&cfg, &outcome.policy, "seen")?;
    let unseen = eval_policy(&cfg, &outcome.policy, "unseen")?;
    eprintln!(
        "  {name} seed {seed}: seen {:.1}%, unseen {:.1}% [{:.0}s]",
        seen.success_rate,
        unseen.success_rate,
        t0.elapsed().as_secs_f64()
    );
    let t = Arc::new(Trained {
        policy: outcome.policy,
        seen,
        unseen,
    });
    cache.lock().unwrap().insert((name.to_string(), seed), t.clone());
    Ok(t)
}

/// Seed-mean success rates `(seen, unseen)` for a learning config.
fn study(name: &str) -> Result<(f64, f64), String> {
    let cfg = load_config(name)?;
    ensure!(cfg.demos.n == 20, "{name}: {} demos (criterion fixes 20)", cfg.demos.n);
    ensure!(cfg.trainer.total_env_steps <= 30_000, "{name}: {} env steps exceed 30k", cfg.trainer.total_env_steps);
    ensure!(cfg.seeds.len() == 3, "{name}: {} seeds (criterion fixes 3)", cfg.seeds.len());
    ensure!(cfg.n_trials == 30, "{name}: {} evaluation trials", cfg.n_trials);
    let runs = cfg.seeds.iter().map(|&s| trained(name, s)).collect::<Result<Vec<_>, _>>()?;
    let mean = |f: fn(&Trained) -> f64| runs.iter().map(|r| f(r.as_ref())).sum::<f64>() / runs.len() as f64;
    Ok((mean(|r| r.seen.success_rate), mean(|r| r.unseen.success_rate)))
}

fn modality_comparison() -> Check {
    let proprio = study("proprio.json")?;
    let voxel = study("voxel.json")?;
    let depth = study("depth.json")?;
    let sym = study("voxel-sym.json")?;
    let detail = format!(
        "seen/unseen seed means: proprio {:.1}/{:.1}, voxel {:.1}/{:.1}, depth {:.1}/{:.1}, voxel-sym {:.1}/{:.1}",
        proprio.0, proprio.1, voxel.0, voxel.1, depth.0, depth.1, sym.0, sym.1
    );
    let mut failures = Vec::new();
    if voxel.0 < proprio.0 + 15.0 {
        failures.push("(a) voxel seen < proprio seen + 15pp");
    }
    if voxel.1 < depth.1 {
        failures.push("(b) voxel unseen < depth unseen");
    }
    if sym.1 < voxel.1 {
        failures.push("(c) symmetric voxel unseen < voxel unseen");
    }
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join(", ")))
    }
}

fn ensembling_smooths() -> Check {
    let mut cfg = load_config("voxel.json")?;
    let base = trained("voxel.json", cfg.seeds[0])?;
    cfg.ensembling = true;
    let ens = eval_policy(&cfg, &base.policy, "seen")?;
    let plain = &base.seen;
    ensure!(ens.base_seed == plain.base_seed && ens.n_trials == plain.n_trials, "evaluations use different seeds");
    let drop = plain.success_rate - ens.success_rate;
    let detail = format!(
        "smoothness {:.2} → {:.2}, success {:.1}% → {:.1}%",
        plain.smoothness, ens.smoothness, plain.success_rate, ens.success_rate
    );
    ensure!(ens.smoothness < plain.smoothness, "ensembling is not smoother: {detail}");
    ensure!(drop <= 5.0, "success drops {drop:.1}pp: {detail}");
    Ok(detail)
}

fn behavior_cloning() -> Check {
    let cfg = load_config("bc.json")?;
    ensure!(cfg.demos.n == 20, "{} demos (criterion fixes 20)", cfg.demos.n);
    let t = trained("bc.json", cfg.seeds[0])?;
    ensure!(t.seen.success_rate >= 50.0, "seen {:.1}%", t.seen.success_rate);
    Ok(format!("seen {:.1}%, unseen {:.1}%", t.seen.success_rate, t.unseen.success_rate))
}

// ---------------------------------------------------------------- 10

fn short_config(name: &str, steps: u64) -> Result<RunConfig, String> {
    let mut cfg = load_config(name)?;
    cfg.trainer.total_env_steps = steps;
    cfg.demos.n = 2;
    Ok(cfg)
}

fn new_trainer(cfg: &RunConfig, seed: u64) -> Result<Trainer, String> {
    let mut env = make_env(cfg).map_err(|e| e.to_string())?;
    let demos = seed_demos(cfg, &mut env, seed).map_err(|e| e.to_string())?;
    let tc = cfg.trainer_config().map_err(|e| e.to_string())?;
    Trainer::new(tc, env, demos, seed).map_err(|e| e.to_string())
}

fn snapshot(t: &Trainer) -> String {
    serde_json::to_string(&t.checkpoint()).expect("checkpoint serializes")
}

fn reproducibility() -> Check {
    let mut lines = Vec::new();
    for (name, steps) in [("proprio.json", 400), ("voxel.json", 240)] {
        let cfg = short_config(name, steps)?;
        let seed = 11;

        // Same seed, same everything.
        let mut a = new_trainer(&cfg, seed)?;
        a.run(None).map_err(|e| e.to_string())?;
        let mut b = new_trainer(&cfg, seed)?;
        b.run(None).map_err(|e| e.to_string())?;
        ensure!(a.metrics() == b.metrics(), "{name}: metrics differ between same-seed runs");
        ensure!(snapshot(&a) == snapshot(&b), "{name}: trainer state differs between same-seed runs");
        let pa = a.policy_file(cfg.policy_id());
        let ra = eval_policy(&cfg, &pa, "seen").map_err(|e| format!("{name}: {e}"))?;
        let rb = eval_policy(&cfg, &b.policy_file(cfg.policy_id()), "seen")?;
        ensure!(
            serde_json::to_string(&ra).unwrap() == serde_json::to_string(&rb).unwrap(),
            "{name}: evaluation reports differ"
        );

        // Save halfway, reload from disk, continue.
        let half = steps / 2;
        let mut c = new_trainer(&cfg, seed)?;
        c.run(Some(half)).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = dir.path().join("checkpoint.json");
        c.checkpoint().save(&path).map_err(|e| e.to_string())?;
        drop(c);
        let ck = TrainerCheckpoint::load(&path).map_err(|e| e.to_string())?;
        let mut d = Trainer::from_checkpoint(ck).map_err(|e| e.to_string())?;
        ensure!(d.env_steps() == half, "{name}: resumed at step {}", d.env_steps());
        d.run(None).map_err(|e| e.to_string())?;
        ensure!(steps - half >= 100, "continuation shorter than 100 steps");
        ensure!(d.metrics() == a.metrics(), "{name}: resumed metrics diverge");
        ensure!(snapshot(&d) == snapshot(&a), "{name}: resumed trainer state diverges");
        lines.push(format!(
            "{name}: {steps} steps bitwise-identical twice and after a reload at step {half} ({} episodes)",
            a.metrics().len()
        ));
    }
    Ok(lines.join("; "))
}
