//! End-to-end checks of the `crn` binary and the runner's file outputs.

use std::process::Command;

const TINY_CONFIG: &str = r#"
seed = 3

[env]
channels = 3
secondary_users = 2
sensed_per_su = 2
noise_variance_w = 5e-3
pu_power_w = 1.0
pu_snr = 2.0
max_power_w = 5e-3
occupancy_penalty = 10.0
rate_penalty = 2.5

[env.occupancy]
idle_to_occupied = [0.2, 0.5]
occupied_to_occupied = [0.6, 0.9]

[sensing]
sampling_rate_hz = 1e4
window_s = 0.02
block_s = 1.0
coherence_time_s = 2e-3

[trainer]
episode_length = 200
total_timesteps = 400
minibatch = 32
policy_frequency = 10
discount = 0.4
buffer_capacity = 1000
target_entropy_continuous = 0.0
hidden_layers = [8]
mixer_embed = 4
actor_lr = 1e-4
critic_lr = 1e-3
temperature_lr = 1e-3
polyak = 0.005
warmup_steps = 100
"#;

fn crn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crn"))
}

fn assert_success(out: &std::process::Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_eval_study_oracle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(&config, TINY_CONFIG).unwrap();
    let run_dir = dir.path().join("run");

    let out = crn()
        .args([
            "train".as_ref(),
            config.as_os_str(),
            "--out".as_ref(),
            run_dir.as_os_str(),
        ])
        .env("CRN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_success(&out, "train");
    for file in [
        "metrics.csv",
        "metrics_smoothed.csv",
        "checkpoint.bin",
        "manifest.toml",
        "summary.toml",
    ] {
        assert!(run_dir.join(file).is_file(), "missing {file}");
    }
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 401, "header plus one row per step");
    let summary = std::fs::read_to_string(run_dir.join("summary.toml")).unwrap();
    assert!(summary.contains("occupancy_idle_to_occupied"));
    assert!(summary.contains("analytic_rate_per_su"));

    let eval_dir = dir.path().join("eval");
    let out = crn()
        .args([
            "eval".as_ref(),
            run_dir.join("checkpoint.bin").as_os_str(),
            config.as_os_str(),
            "--steps".as_ref(),
            "50".as_ref(),
            "--out".as_ref(),
            eval_dir.as_os_str(),
        ])
        .output()
        .unwrap();
    assert_success(&out, "eval");
    let eval_csv = std::fs::read_to_string(eval_dir.join("eval_metrics.csv")).unwrap();
    assert_eq!(eval_csv.lines().count(), 51);

    let study_dir = dir.path().join("study");
    let out = crn()
        .args([
            "sense-study".as_ref(),
            config.as_os_str(),
            "--tau-grid".as_ref(),
            "0.01,0.02".as_ref(),
            "--tc-grid".as_ref(),
            "1e-3".as_ref(),
            "--trials".as_ref(),
            "25".as_ref(),
            "--out".as_ref(),
            study_dir.as_os_str(),
        ])
        .output()
        .unwrap();
    assert_success(&out, "sense-study");
    let study = std::fs::read_to_string(study_dir.join("sensing_study.csv")).unwrap();
    assert_eq!(study.lines().count(), 3);

    let oracle_dir = dir.path().join("oracle");
    let out = crn()
        .args([
            "oracle".as_ref(),
            config.as_os_str(),
            "--snapshots".as_ref(),
            "5".as_ref(),
            "--out".as_ref(),
            oracle_dir.as_os_str(),
        ])
        .output()
        .unwrap();
    assert_success(&out, "oracle");
    let oracle = std::fs::read_to_string(oracle_dir.join("oracle.csv")).unwrap();
    assert_eq!(oracle.lines().count(), 6);
    assert!(oracle.starts_with("snapshot,occupancy,best_arms,best_score"));
}

#[test]
fn invalid_config_is_reported_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        TINY_CONFIG.replace("window_s = 0.02", "window_s = 2.0"),
    )
    .unwrap();
    let out = crn()
        .args(["train".as_ref(), config.as_os_str()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sensing.window_s"), "stderr: {stderr}");
}

#[test]
fn checkpoint_restores_the_same_policy() {
    // Train via the library, reload the bundle, and compare deterministic
    // actions from the restored trainer against the original.
    use crn_cli::config::resolve_config;
    use crn_cli::runner::run_train;
    use crn_core::mhsac::Trainer;

    let dir = tempfile::tempdir().unwrap();
    let exp = resolve_config(TINY_CONFIG, Some(9)).unwrap();
    let run_dir = dir.path().join("run");
    let outputs = run_train(&exp, &run_dir).unwrap();

    let mut restored = Trainer::new(&exp.env, exp.trainer.clone(), 1234).unwrap();
    let nets = crn_core::checkpoint::read_bundle(&outputs.checkpoint_path).unwrap();
    restored.load_nets(&nets).unwrap();

    let mut env = crn_core::env::CrnEnv::new(exp.env.clone(), 77).unwrap();
    let original = {
        let mut t = Trainer::new(&exp.env, exp.trainer.clone(), exp.seed).unwrap();
        let mut e = crn_core::env::CrnEnv::new(exp.env.clone(), exp.seed).unwrap();
        t.train(&mut e).unwrap();
        t
    };
    for _ in 0..20 {
        let obs: Vec<Vec<f64>> = env
            .observations()
            .iter()
            .map(|o| o.encode(exp.env.channel.noise_var))
            .collect();
        let mut actions = Vec::new();
        for n in 0..2 {
            let a = restored.act_deterministic(n, &obs[n]).unwrap();
            let b = original.act_deterministic(n, &obs[n]).unwrap();
            assert_eq!(a, b, "restored policy must match the trained one");
            actions.push(a);
        }
        env.step(&actions).unwrap();
    }
}

#[test]
fn divergence_saves_a_post_mortem_checkpoint() {
    // An absurd critic learning rate drives the regression to non-finite
    // values within a few updates; the runner must keep the last finite
    // parameters and a diagnostic.
    use crn_cli::config::resolve_config;
    use crn_cli::runner::run_train;

    let raw = TINY_CONFIG
        .replace("critic_lr = 1e-3", "critic_lr = 1e200")
        .replace("actor_lr = 1e-4", "actor_lr = 1e200")
        .replace("total_timesteps = 400", "total_timesteps = 250");
    let exp = resolve_config(&raw, Some(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let err = match run_train(&exp, &run_dir) {
        Err(e) => e,
        Ok(_) => panic!("expected divergence"),
    };
    assert!(format!("{err:#}").contains("diverged"), "{err:#}");
    assert!(run_dir.join("DIVERGED.txt").is_file());
    assert!(run_dir.join("checkpoint.bin").is_file());
    let nets = crn_core::checkpoint::read_bundle(&run_dir.join("checkpoint.bin")).unwrap();
    assert!(nets
        .iter()
        .all(|(_, n)| n.params().iter().all(|p| p.is_finite())));
}
