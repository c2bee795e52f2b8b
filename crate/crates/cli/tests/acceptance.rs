//! Acceptance check for artifact hygiene: the bundled model, gait files,
//! CSV headers, checkpoint format, and serial command lines are pinned
//! against golden values.

use std::process::Command;

use chair_core::gait::{compile_script, load_gait, standup_script, walk_script};
use chair_core::model::{load_model, RobotModel};
use chair_core::ppo::{
    format_checkpoint, parse_checkpoint, PolicyCheckpoint, PolicyNet, TrainConfig,
};
use chair_core::env::Task;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn asset(rel: &str) -> String {
    format!("{}/../../{rel}", env!("CARGO_MANIFEST_DIR"))
}

fn report(name: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    let result = std::panic::catch_unwind(body);
    println!("acceptance {name}: {}", if result.is_ok() { "PASS" } else { "FAIL" });
    if let Err(cause) = result {
        std::panic::resume_unwind(cause);
    }
}

#[test]
fn artifact_hygiene() {
    report("artifact hygiene", || {
        let parsed = load_model(&asset("models/chair.chair.xml")).expect("bundled model parses");
        assert_eq!(
            format!("{parsed:?}"),
            format!("{:?}", RobotModel::builtin()),
            "bundled model file matches the built-in description"
        );

        let walk = load_gait(&asset("gaits/walk.gait")).expect("walk gait parses");
        assert_eq!(walk, walk_script());
        assert_eq!(compile_script(&walk).unwrap().len(), 10);
        let standup = load_gait(&asset("gaits/standup.gait")).expect("standup gait parses");
        assert_eq!(standup, standup_script());
        assert_eq!(compile_script(&standup).unwrap().len(), 78);

        assert_eq!(
            chair_cli::trajectory::CSV_HEADER,
            "t,x,y,z,roll,pitch,yaw,theta0,theta1,theta2,theta3,theta4,theta5,reward,reset"
        );
        assert_eq!(
            chair_core::ppo::curve_csv(&[]).trim_end(),
            "epoch,mean_return,mean_episode_length,none,max_episode,tilt,ground,height,flip,fold"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cfg = TrainConfig::for_task(Task::Walk);
        let net = PolicyNet::for_model(cfg.hidden, &RobotModel::builtin(), &mut rng);
        let ckpt = PolicyCheckpoint::capture(Task::Walk, 3, &cfg, &net, &rng);
        let text = format_checkpoint(&ckpt);
        let back = parse_checkpoint(&text, "mem").expect("checkpoint parses back");
        assert_eq!(format_checkpoint(&back), text, "checkpoint text round-trips bitwise");

        let dir = tempfile::tempdir().unwrap();
        let cmd_path = dir.path().join("walk.cmd");
        let out = Command::new(env!("CARGO_BIN_EXE_chair"))
            .args([
                "serial-dump",
                "--script",
                &asset("gaits/walk.gait"),
                "--out",
                cmd_path.to_str().unwrap(),
            ])
            .output()
            .expect("binary runs");
        assert_eq!(out.status.code(), Some(0));
        let first = std::fs::read_to_string(&cmd_path).unwrap();
        assert_eq!(
            first.lines().next().unwrap(),
            "CMD 0.0 90.00 80.00 90.00 100.00 90.00 100.00"
        );
    });
}
