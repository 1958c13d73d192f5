use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suction_core::baselines::generate_demos;
use suction_core::geometry::Vec3;
use suction_core::rl::{critic_update, Agent, AgentSpec, LearnerConfig, Modality, ObsBatch, Optimizers, Transition};
use suction_core::sensing::{voxelize, GridSpec};
use suction_core::sim::{Action, EnvConfig, SensorMode, SuctionEnv};

fn demos(modality: Modality) -> Vec<Transition> {
    let mut env = SuctionEnv::builtin(EnvConfig {
        sensors: modality.sensors(),
        ..EnvConfig::default()
    });
    generate_demos(&mut env, "seen", 2, 0.05, 0).unwrap().transitions()
}

fn env_step(c: &mut Criterion) {
    for (name, sensors) in [("proprio", SensorMode::None), ("voxel", SensorMode::Voxel), ("depth", SensorMode::Depth)] {
        let mut env = SuctionEnv::builtin(EnvConfig {
            sensors,
            ..EnvConfig::default()
        });
        env.reset("seen", 1).unwrap();
        let mut seed = 1;
        c.bench_function(&format!("env_step/{name}"), |b| {
            b.iter(|| {
                let out = env.step(black_box(&Action::zero())).unwrap();
                if out.terminated || out.truncated {
                    seed += 1;
                    env.reset("seen", seed).unwrap();
                }
            })
        });
    }
}

fn voxelize_cloud(c: &mut Criterion) {
    let spec = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pts: Vec<Vec3> = (0..5000)
        .map(|_| Vec3::new(rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06), rng.random_range(-0.1..0.0)))
        .collect();
    c.bench_function("voxelize/5000", |b| b.iter(|| voxelize(black_box(&pts), &spec)));
}

fn encoder_and_critic(c: &mut Criterion) {
    for modality in [Modality::Voxel, Modality::Depth, Modality::Proprio] {
        let ts = demos(modality);
        let batch: Vec<&Transition> = ts.iter().cycle().take(32).collect();
        let agent = Agent::new(AgentSpec::new(modality)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = agent.init(0.1, &mut rng);
        let cfg = LearnerConfig::default();
        let mut opt = Optimizers::new(&cfg);
        let obs: Vec<_> = batch.iter().map(|t| &t.obs).collect();
        let ob = ObsBatch::build::<ChaCha8Rng>(&obs, modality, None).unwrap();
        let name = modality.name();
        if modality != Modality::Proprio {
            c.bench_function(&format!("encode_b32/{name}"), |b| b.iter(|| agent.encode(&params.encoder, black_box(&ob)).unwrap()));
        }
        let mut group = c.benchmark_group("critic_update_b32");
        group.sample_size(10);
        group.bench_function(name, |b| {
            b.iter(|| critic_update(&agent, &mut params, &mut opt, &cfg, black_box(&batch), &mut rng).unwrap())
        });
        group.finish();
    }
}

criterion_group!(benches, env_step, voxelize_cloud, encoder_and_critic);
criterion_main!(benches);
