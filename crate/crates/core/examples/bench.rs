use chair_core::env::{EnvInstance, Task, TaskConfig};
use chair_core::model::RobotModel;
use chair_core::physics::{PhysicsConfig, ResetPose};
use chair_core::ppo::{eval_episode, train, ActMode, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn run(task: Task, seed: u64, overrides: &[(String, f64)]) {
    let model = RobotModel::builtin();
    let physics = PhysicsConfig::default();
    let task_cfg = match task {
        Task::Walk => TaskConfig::walk(),
        Task::Standup => TaskConfig::standup(),
    };
    let mut cfg = TrainConfig::for_task(task);
    cfg.seed = seed;
    for (key, val) in overrides {
        match key.as_str() {
            "envs" => cfg.n_envs = *val as usize,
            "epochs" => cfg.epochs = *val as usize,
            "entropy" => cfg.entropy_coef = *val,
            "lr" => cfg.lr = *val,
            "horizon" => cfg.horizon = *val as usize,
            other => panic!("unknown override {other}"),
        }
    }
    println!(
        "=== {} seed {seed}: {} envs x {} epochs entropy {} lr {} ===",
        task.name(),
        cfg.n_envs,
        cfg.epochs,
        cfg.entropy_coef,
        cfg.lr
    );
    let t0 = Instant::now();
    let dir = format!("/tmp/fullrun/{}-{}", task.name(), seed);
    let out = train(&model, &physics, &task_cfg, &cfg, std::path::Path::new(&dir), |s| {
        if s.epoch % 10 == 0 || s.epoch + 1 == cfg.epochs {
            println!(
                "epoch {} ret {:.1} len {:.1} eps {} resets {:?}",
                s.epoch, s.mean_return, s.mean_length, s.episodes, s.reset_counts
            );
        }
    })
    .unwrap();
    println!("train {:.1?}", t0.elapsed());
    let net = out.checkpoint.restore_net().unwrap();
    let mut env = EnvInstance::new(0, model.clone(), physics.clone(), task_cfg.clone(), 1000 + seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        Task::Walk => {
            let r = eval_episode(&mut env, &net, ResetPose::Standing, ActMode::Deterministic, &mut rng).unwrap();
            println!(
                "walk eval: steps {} ret {:.1} dx {:.4} dy {:.4} yaw {:.1} reason {:?}",
                r.steps, r.ret, r.displacement.x, r.displacement.y, r.mean_yaw_deg, r.reason
            );
        }
        Task::Standup => {
            for pose in [ResetPose::RightSide, ResetPose::LeftSide, ResetPose::Back] {
                let r = eval_episode(&mut env, &net, pose, ActMode::Deterministic, &mut rng).unwrap();
                println!(
                    "{:?}: steps {} ret {:.1} max_u {:.3} final_u {:.3} reason {:?}",
                    pose, r.steps, r.ret, r.max_u, r.final_u, r.reason
                );
            }
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let task: Task = args[1].parse().unwrap();
    let seed: u64 = args[2].parse().unwrap();
    let overrides: Vec<(String, f64)> = args[3..]
        .iter()
        .map(|kv| {
            let (k, v) = kv.split_once('=').expect("key=value");
            (k.to_string(), v.parse().expect("numeric value"))
        })
        .collect();
    run(task, seed, &overrides);
}
