//! End-to-end checks of the `alps` binary: the full synthetic pipeline,
//! determinism, config validation, exit codes, and the report math.

use std::path::Path;
use std::process::{Command, Output};

use alps_core::agent::{Agent, AgentConfig, ExplorationSchedule, QNetConfig};
use alps_core::corpus::{self, Partition};
use alps_core::embed::EmbeddingTable;
use alps_core::episodes::{run_cold_start, EpisodeConfig};
use alps_core::eval::{evaluate_model, read_curves_csv};
use alps_core::state::EncoderConfig;
use alps_core::tagger::BaseModel;

fn alps(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alps"))
        .current_dir(dir)
        .env("ALPS_OUT_ROOT", dir.join("runs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = alps(dir, args);
    assert!(
        out.status.success(),
        "alps {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn expect_code(dir: &Path, args: &[&str], code: i32, needle: &str) {
    let out = alps(dir, args);
    assert_eq!(out.status.code(), Some(code), "alps {args:?}");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(needle), "stderr for {args:?} missing {needle:?}: {err}");
}

fn run_json(dir: &Path, run: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("runs").join(run).join("run.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn manifest(dir: &Path, run: &str) -> Vec<usize> {
    let text = std::fs::read_to_string(dir.join("runs").join(run).join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Small world plus smoke-scale run settings shared by the pipeline test.
fn synth_args() -> Vec<&'static str> {
    vec![
        "synth",
        "--out",
        "data",
        "--sentences",
        "24",
        "--heldout",
        "8",
        "--test",
        "8",
        "--entity-rate",
        "0.25",
    ]
}

#[test]
fn pipeline_and_contracts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &synth_args());

    // Policy learning smoke run: seconds, not minutes, and deterministic.
    ok(dir, &["train-policy", "--config", "data/learn.toml", "--episodes", "3", "--budget", "3"]);
    for f in ["policy.json", "episodes.csv", "run.json"] {
        assert!(dir.join("runs/synth-learn").join(f).exists(), "missing {f}");
    }
    ok(dir, &[
        "train-policy",
        "--config",
        "data/learn.toml",
        "--episodes",
        "3",
        "--budget",
        "3",
        "--out",
        "learn-again",
    ]);
    let a = std::fs::read(dir.join("runs/synth-learn/policy.json")).unwrap();
    let b = std::fs::read(dir.join("runs/learn-again/policy.json")).unwrap();
    assert_eq!(a, b, "same config and seed must produce identical checkpoints");

    // Transfer: manifest within budget; the curve's last row is exactly the
    // final model's F1 on the test corpus, recomputed here from the
    // artifacts alone.
    ok(dir, &["transfer", "--config", "data/transfer.toml", "--budget", "4"]);
    let picked = manifest(dir, "synth-transfer");
    assert!(picked.len() <= 4);
    let curves = read_curves_csv(dir.join("runs/synth-transfer/curve.csv")).unwrap();
    assert_eq!(curves.len(), 1);
    let model = BaseModel::load(dir.join("runs/synth-transfer/model.json")).unwrap();
    let table = EmbeddingTable::load(dir.join("data/embeddings.txt"), 16).unwrap();
    let test =
        corpus::load_conll(dir.join("data/bb-test.conll"), None, Partition::Test).unwrap();
    let f1 = evaluate_model(&model, &test, &table).f1;
    assert_eq!(curves[0].final_f1().unwrap(), f1);

    // Random baseline fan-out: distinct seeds, distinct selections.
    ok(dir, &["baseline", "--config", "data/baseline-random.toml", "--budget", "4", "--seeds", "0..2"]);
    let c0 = std::fs::read(dir.join("runs/synth-random-s0/curve.csv")).unwrap();
    let c1 = std::fs::read(dir.join("runs/synth-random-s1/curve.csv")).unwrap();
    assert_ne!(c0, c1, "different seeds must select differently");
    assert_ne!(
        manifest(dir, "synth-random-s0"),
        manifest(dir, "synth-random-s1")
    );

    // Uncertainty baseline shares the harness.
    ok(dir, &["baseline", "--config", "data/baseline-uncertainty.toml", "--budget", "4"]);
    assert_eq!(manifest(dir, "synth-uncertainty").len(), 4);

    // Cold start: input checksums echoed unchanged, selection within budget.
    ok(dir, &["baseline", "--config", "data/baseline-random.toml", "--budget", "4"]);
    ok(dir, &["coldstart", "--config", "data/coldstart.toml", "--budget", "4"]);
    let report = run_json(dir, "synth-coldstart");
    assert_eq!(report["policy_checksum_in"], report["policy_checksum_out"]);
    assert_eq!(report["model_checksum_in"], report["model_checksum_out"]);
    assert!(manifest(dir, "synth-coldstart").len() <= 4);

    // An all-zero network ties every Q comparison, and ties annotate, so
    // selection must be the first budget-many sentences of the seeded
    // stream order; the library run is the reference.
    let zero_policy = zero_agent();
    zero_policy.save(dir.join("zero-policy.json")).unwrap();
    let toml_path = dir.join("data/coldstart.toml");
    let text = std::fs::read_to_string(&toml_path)
        .unwrap()
        .replace("runs/synth-learn/policy.json", "zero-policy.json");
    std::fs::write(dir.join("data/coldstart-zero.toml"), text).unwrap();
    ok(dir, &[
        "coldstart",
        "--config",
        "data/coldstart-zero.toml",
        "--budget",
        "4",
        "--out",
        "coldstart-zero",
    ]);
    let pool =
        corpus::load_conll(dir.join("data/bb-train.conll"), None, Partition::Train).unwrap();
    let pretrained = BaseModel::load(dir.join("runs/synth-random/model.json")).unwrap();
    let expect = run_cold_start(
        &EpisodeConfig { budget: 4, episodes: 1, seed: 1 },
        &zero_agent(),
        &pretrained,
        &pool,
        &table,
        None,
    )
    .unwrap();
    assert_eq!(manifest(dir, "coldstart-zero"), expect.selected);

    // Report: random reference present, C/R 100 for a lone random run.
    let out = ok(dir, &["report", "runs/synth-random-s0", "--out", "runs/summary.csv"]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("random"), "report output: {text}");
    let csv = std::fs::read_to_string(dir.join("runs/summary.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("random,") && row.ends_with(",100.0"), "row: {row}");
    expect_code(
        dir,
        &["report", "runs/synth-uncertainty", "--out", "runs/s2.csv"],
        1,
        "random",
    );
}

fn zero_agent() -> Agent {
    let config = AgentConfig {
        net: QNetConfig {
            encoder: EncoderConfig {
                emb_dim: 16,
                content_widths: vec![2],
                content_filters: 4,
                marginal_width: 2,
                marginal_filters: 2,
                num_labels: 2,
            },
            hidden_dim: 4,
        },
        gamma: 0.99,
        batch_size: 32,
        replay_capacity: 64,
        sync_every: 100,
        schedule: ExplorationSchedule { start: 0.0, end: 0.0, decay_steps: 1 },
        learning_rate: 0.001,
    };
    let mut agent = Agent::new(config, 3).unwrap();
    let zeros = vec![0.0; agent.net.param_len()];
    agent.net.set_params(&zeros).unwrap();
    agent.target.set_params(&zeros).unwrap();
    agent
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &synth_args());

    // Missing held-out corpus fails before any training.
    let learn = std::fs::read_to_string(dir.join("data/learn.toml")).unwrap();
    let trimmed: String =
        learn.lines().filter(|l| !l.starts_with("heldout")).collect::<Vec<_>>().join("\n");
    std::fs::write(dir.join("data/learn-bad.toml"), trimmed).unwrap();
    expect_code(dir, &["train-policy", "--config", "data/learn-bad.toml"], 1, "heldout");
    assert!(!dir.join("runs/synth-learn").exists(), "no output before validation");

    // Held-out data contradicts cold start.
    let cold = std::fs::read_to_string(dir.join("data/coldstart.toml")).unwrap();
    let bad = cold.replace(
        "target = ",
        "heldout = \"data/bb-heldout.conll\"\ntarget = ",
    );
    std::fs::write(dir.join("data/coldstart-bad.toml"), bad).unwrap();
    expect_code(dir, &["coldstart", "--config", "data/coldstart-bad.toml"], 1, "heldout");

    // Subcommand and config mode must agree.
    expect_code(dir, &["train-policy", "--config", "data/transfer.toml"], 1, "mode");

    // Unknown keys are config errors, not silent ignores.
    std::fs::write(
        dir.join("data/typo.toml"),
        learn.replace("[hyper]", "[hyper]\nlerning_rate = 0.5"),
    )
    .unwrap();
    expect_code(dir, &["train-policy", "--config", "data/typo.toml"], 1, "lerning_rate");

    // Default budget is 200 when the config leaves it out.
    let slim = learn
        .lines()
        .filter(|l| !l.starts_with("budget") && !l.starts_with("episodes"))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(dir.join("data/learn-defaults.toml"), slim).unwrap();
    ok(dir, &[
        "train-policy",
        "--config",
        "data/learn-defaults.toml",
        "--episodes",
        "1",
        "--out",
        "learn-defaults",
    ]);
    assert_eq!(run_json(dir, "learn-defaults")["budget"], 200);
}

#[test]
fn incompatible_checkpoint_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &synth_args());
    ok(dir, &["train-policy", "--config", "data/learn.toml", "--episodes", "2", "--budget", "2"]);

    // A second world with a different embedding width; its transfer config
    // still points at the first world's policy, which cannot apply.
    let mut args = synth_args();
    args[2] = "data8";
    args.extend(["--emb-dim", "8"]);
    ok(dir, &args);
    expect_code(dir, &["transfer", "--config", "data8/transfer.toml"], 2, "embeddings");
}
