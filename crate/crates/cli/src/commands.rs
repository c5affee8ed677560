//! One function per subcommand. Every run writes its artifacts plus a
//! `run.json` report into its own output directory; nothing here depends
//! on wall-clock time, so reruns with the same config, seed, and inputs
//! produce identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use alps_core::agent::Agent;
use alps_core::corpus::{self, Corpus, Partition};
use alps_core::embed::EmbeddingTable;
use alps_core::episodes::{
    baseline_random_run, baseline_uncertainty, replay_curve, run_cold_start,
    run_multilingual_learning, run_transfer, write_episode_csv, EpisodeConfig, EpisodeRecord,
};
use alps_core::eval::{
    self, cost_reduction, read_curves_csv, write_curves_csv, write_summary_csv, LearningCurve,
    SummaryRow,
};
use alps_core::nncore::AdamParams;
use alps_core::synth::{self, WorldConfig};
use alps_core::tagger::BaseModel;
use alps_core::{Error, Result};

use crate::config::{Mode, RunConfig};

/// Everything a run writes besides its artifacts: effective settings,
/// input/output digests, and headline metrics.
#[derive(Debug, Default, Serialize)]
struct RunReport {
    mode: String,
    seed: u64,
    budget: usize,
    episodes: usize,
    labels: Vec<String>,
    embeddings_checksum: u64,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    annotations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    retrains: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_heldout_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_test_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    policy_checksum_in: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    policy_checksum_out: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_checksum_in: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_checksum_out: Option<u64>,
}

struct Ctx {
    out: PathBuf,
    table: EmbeddingTable,
}

fn prepare(cfg: &RunConfig, seed: u64) -> Result<Ctx> {
    let out = cfg.out_dir_for(seed);
    std::fs::create_dir_all(&out)?;
    let table = EmbeddingTable::load(&cfg.data.embeddings, cfg.data.emb_dim)?;
    Ok(Ctx { out, table })
}

fn load_corpus(cfg: &RunConfig, path: &Path, partition: Partition) -> Result<Corpus> {
    let c = corpus::load_conll(path, cfg.data.label_column, partition)?;
    if !cfg.data.iob1_to_io {
        return Ok(c);
    }
    let sentences = c
        .sentences
        .into_iter()
        .map(|mut s| {
            s.labels = corpus::convert_iob1_to_io(&s.labels)?;
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Corpus::new(sentences, partition)
}

fn required<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::Config(format!("data.{name} is required")))
}

fn new_agent(cfg: &RunConfig, num_labels: usize, seed: u64) -> Result<Agent> {
    let mut agent = Agent::new(cfg.agent_config(num_labels), seed)?;
    agent.adam_hp = AdamParams {
        alpha: cfg.hyper.adam_alpha,
        beta1: cfg.hyper.adam_beta1,
        beta2: cfg.hyper.adam_beta2,
        eps: cfg.hyper.adam_eps,
    };
    Ok(agent)
}

fn check_policy_compat(policy: &Agent, table: &EmbeddingTable, num_labels: usize) -> Result<()> {
    let enc = &policy.config.net.encoder;
    if enc.emb_dim != table.dim() {
        return Err(Error::Checkpoint(format!(
            "policy expects {}-dim embeddings, table has {}",
            enc.emb_dim,
            table.dim()
        )));
    }
    if enc.num_labels != num_labels {
        return Err(Error::Checkpoint(format!(
            "policy expects {} labels, corpus has {num_labels}",
            enc.num_labels
        )));
    }
    Ok(())
}

fn write_report(out: &Path, report: &RunReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Checkpoint(format!("serialize run report: {e}")))?;
    std::fs::write(out.join("run.json"), json + "\n")?;
    Ok(())
}

fn write_manifest(out: &Path, selected: &[usize]) -> Result<()> {
    let json = serde_json::to_string(selected)
        .map_err(|e| Error::Checkpoint(format!("serialize manifest: {e}")))?;
    std::fs::write(out.join("manifest.json"), json + "\n")?;
    Ok(())
}

pub fn train_policy(cfg: &RunConfig, seed: u64) -> Result<()> {
    let ctx = prepare(cfg, seed)?;
    let sources: Vec<Corpus> = cfg
        .data
        .sources
        .iter()
        .map(|p| load_corpus(cfg, p, Partition::Train))
        .collect::<Result<_>>()?;
    let heldout = load_corpus(cfg, required(&cfg.data.heldout, "heldout")?, Partition::Heldout)?;
    let labels = sources[0].label_set();
    let initial =
        BaseModel::init(cfg.model_kind()?, labels.clone(), &ctx.table, cfg.train_params(), seed)?;
    let mut agent = new_agent(cfg, labels.len(), seed)?;
    let refs: Vec<&Corpus> = sources.iter().collect();
    let records = run_multilingual_learning(
        &cfg.episode_config(seed),
        &mut agent,
        &refs,
        &ctx.table,
        &initial,
        &heldout,
    )?;
    agent.save(ctx.out.join("policy.json"))?;
    write_episode_csv(ctx.out.join("episodes.csv"), &records)?;
    write_report(
        &ctx.out,
        &RunReport {
            mode: Mode::Learn.as_str().into(),
            seed,
            budget: cfg.run.budget,
            episodes: records.len(),
            labels,
            embeddings_checksum: ctx.table.checksum(),
            outputs: vec!["policy.json".into(), "episodes.csv".into()],
            annotations: Some(records.iter().map(EpisodeRecord::annotations).sum()),
            final_heldout_f1: records.last().and_then(EpisodeRecord::final_f1),
            policy_checksum_out: Some(agent.checksum()),
            ..Default::default()
        },
    )
}

pub fn transfer(cfg: &RunConfig, seed: u64) -> Result<()> {
    let ctx = prepare(cfg, seed)?;
    let pool = load_corpus(cfg, required(&cfg.data.target, "target")?, Partition::Train)?;
    let heldout = load_corpus(cfg, required(&cfg.data.heldout, "heldout")?, Partition::Heldout)?;
    let test = load_corpus(cfg, required(&cfg.data.test, "test")?, Partition::Test)?;
    let labels = pool.label_set();
    let mut agent =
        Agent::load(cfg.run.policy.as_ref().ok_or_else(|| {
            Error::Config("run.policy is required".into())
        })?)?;
    check_policy_compat(&agent, &ctx.table, labels.len())?;
    let policy_in = agent.checksum();
    let initial =
        BaseModel::init(cfg.model_kind()?, labels.clone(), &ctx.table, cfg.train_params(), seed)?;
    let episode = EpisodeConfig { budget: cfg.run.budget, episodes: 1, seed };
    let outcome = run_transfer(&episode, &mut agent, &pool, &ctx.table, &initial, &heldout)?;
    // The reported curve retraces the run's own model sequence on the test
    // split; if the replay ever diverged, the curve would be lying.
    let (curve, replayed) =
        replay_curve(&initial, &pool, &ctx.table, &outcome.selected, &test, "transfer", seed)?;
    if replayed.checksum() != outcome.model.checksum() {
        return Err(Error::Validation("curve replay diverged from the run's model".into()));
    }
    outcome.model.save(ctx.out.join("model.json"))?;
    write_manifest(&ctx.out, &outcome.selected)?;
    write_curves_csv(ctx.out.join("curve.csv"), std::slice::from_ref(&curve))?;
    write_episode_csv(ctx.out.join("episodes.csv"), std::slice::from_ref(&outcome.record))?;
    write_report(
        &ctx.out,
        &RunReport {
            mode: Mode::Transfer.as_str().into(),
            seed,
            budget: cfg.run.budget,
            episodes: 1,
            labels,
            embeddings_checksum: ctx.table.checksum(),
            outputs: vec![
                "model.json".into(),
                "manifest.json".into(),
                "curve.csv".into(),
                "episodes.csv".into(),
            ],
            annotations: Some(outcome.selected.len()),
            retrains: Some(outcome.retrains),
            final_heldout_f1: outcome.record.final_f1(),
            final_test_f1: curve.final_f1(),
            policy_checksum_in: Some(policy_in),
            policy_checksum_out: Some(agent.checksum()),
            model_checksum_out: Some(outcome.model.checksum()),
            ..Default::default()
        },
    )
}

pub fn cold_start(cfg: &RunConfig, seed: u64) -> Result<()> {
    let ctx = prepare(cfg, seed)?;
    let pool = load_corpus(cfg, required(&cfg.data.target, "target")?, Partition::Train)?;
    let test = load_corpus(cfg, required(&cfg.data.test, "test")?, Partition::Test)?;
    let agent =
        Agent::load(cfg.run.policy.as_ref().ok_or_else(|| {
            Error::Config("run.policy is required".into())
        })?)?;
    let pretrained =
        BaseModel::load(cfg.run.model.as_ref().ok_or_else(|| {
            Error::Config("run.model is required".into())
        })?)?;
    let labels = pool.label_set();
    check_policy_compat(&agent, &ctx.table, labels.len())?;
    if pretrained.emb_dim() != ctx.table.dim() {
        return Err(Error::Checkpoint(format!(
            "pretrained model expects {}-dim embeddings, table has {}",
            pretrained.emb_dim(),
            ctx.table.dim()
        )));
    }
    let policy_in = agent.checksum();
    let model_in = pretrained.checksum();
    let episode = EpisodeConfig { budget: cfg.run.budget, episodes: 1, seed };
    let outcome = run_cold_start(&episode, &agent, &pretrained, &pool, &ctx.table, None)?;
    let initial_f1 = eval::evaluate_model(&pretrained, &test, &ctx.table).f1;
    let final_f1 = eval::evaluate_model(&outcome.final_model, &test, &ctx.table).f1;
    let mut points = vec![(0, initial_f1)];
    if !outcome.selected.is_empty() {
        points.push((outcome.selected.len(), final_f1));
    }
    let curve = LearningCurve { method: "coldstart".into(), seed, points };
    outcome.final_model.save(ctx.out.join("model.json"))?;
    write_manifest(&ctx.out, &outcome.selected)?;
    write_curves_csv(ctx.out.join("curve.csv"), std::slice::from_ref(&curve))?;
    write_report(
        &ctx.out,
        &RunReport {
            mode: Mode::Coldstart.as_str().into(),
            seed,
            budget: cfg.run.budget,
            episodes: 1,
            labels,
            embeddings_checksum: ctx.table.checksum(),
            outputs: vec!["model.json".into(), "manifest.json".into(), "curve.csv".into()],
            annotations: Some(outcome.selected.len()),
            final_test_f1: Some(final_f1),
            policy_checksum_in: Some(policy_in),
            policy_checksum_out: Some(agent.checksum()),
            model_checksum_in: Some(model_in),
            model_checksum_out: Some(pretrained.checksum()),
            ..Default::default()
        },
    )
}

pub fn baseline(cfg: &RunConfig, seed: u64) -> Result<()> {
    let ctx = prepare(cfg, seed)?;
    let pool = load_corpus(cfg, required(&cfg.data.target, "target")?, Partition::Train)?;
    let heldout = load_corpus(cfg, required(&cfg.data.heldout, "heldout")?, Partition::Heldout)?;
    let test = load_corpus(cfg, required(&cfg.data.test, "test")?, Partition::Test)?;
    let labels = pool.label_set();
    let initial =
        BaseModel::init(cfg.model_kind()?, labels.clone(), &ctx.table, cfg.train_params(), seed)?;
    let (method, outcome) = match cfg.mode {
        Mode::BaselineRandom => (
            "random",
            baseline_random_run(&pool, &ctx.table, &initial, cfg.run.budget, &heldout, seed)?,
        ),
        Mode::BaselineUncertainty => (
            "uncertainty",
            baseline_uncertainty(&pool, &ctx.table, &initial, cfg.run.budget, &heldout)?,
        ),
        other => {
            return Err(Error::Config(format!(
                "baseline got mode {}; expected a baseline mode",
                other.as_str()
            )))
        }
    };
    let (curve, replayed) =
        replay_curve(&initial, &pool, &ctx.table, &outcome.selected, &test, method, seed)?;
    if replayed.checksum() != outcome.model.checksum() {
        return Err(Error::Validation("curve replay diverged from the run's model".into()));
    }
    outcome.model.save(ctx.out.join("model.json"))?;
    write_manifest(&ctx.out, &outcome.selected)?;
    write_curves_csv(ctx.out.join("curve.csv"), std::slice::from_ref(&curve))?;
    write_episode_csv(ctx.out.join("episodes.csv"), std::slice::from_ref(&outcome.record))?;
    write_report(
        &ctx.out,
        &RunReport {
            mode: cfg.mode.as_str().into(),
            seed,
            budget: cfg.run.budget,
            episodes: 1,
            labels,
            embeddings_checksum: ctx.table.checksum(),
            outputs: vec![
                "model.json".into(),
                "manifest.json".into(),
                "curve.csv".into(),
                "episodes.csv".into(),
            ],
            annotations: Some(outcome.selected.len()),
            final_heldout_f1: outcome.record.final_f1(),
            final_test_f1: curve.final_f1(),
            model_checksum_out: Some(outcome.model.checksum()),
            ..Default::default()
        },
    )
}

pub fn dispatch(cfg: &RunConfig, seed: u64) -> Result<()> {
    match cfg.mode {
        Mode::Learn => train_policy(cfg, seed),
        Mode::Transfer => transfer(cfg, seed),
        Mode::Coldstart => cold_start(cfg, seed),
        Mode::BaselineRandom | Mode::BaselineUncertainty => baseline(cfg, seed),
    }
}

/// Summarizes finished runs: mean F1 at the budget endpoint and mean cost
/// reduction per method, with the random runs as the reference.
pub fn report(dirs: &[PathBuf], budget_flag: Option<usize>, out_csv: &Path) -> Result<()> {
    let mut by_method: BTreeMap<String, Vec<LearningCurve>> = BTreeMap::new();
    for dir in dirs {
        let path = dir.join("curve.csv");
        if !path.exists() {
            return Err(Error::Validation(format!(
                "{} has no curve.csv; point report at transfer, coldstart, or baseline runs",
                dir.display()
            )));
        }
        for curve in read_curves_csv(&path)? {
            by_method.entry(curve.method.clone()).or_default().push(curve);
        }
    }
    let Some(random) = by_method.get("random") else {
        return Err(Error::Validation(
            "report needs at least one random baseline run as the reference".into(),
        ));
    };
    let budget = match budget_flag {
        Some(b) => b,
        None => random
            .iter()
            .filter_map(|c| c.points.last().map(|&(n, _)| n))
            .max()
            .ok_or_else(|| Error::Validation("random reference curve is empty".into()))?,
    };
    let reference_f1 =
        random.iter().filter_map(LearningCurve::final_f1).sum::<f64>() / random.len() as f64;

    let mut rows = Vec::new();
    for (method, curves) in &by_method {
        let f1 = curves.iter().filter_map(LearningCurve::final_f1).sum::<f64>()
            / curves.len() as f64;
        // Matching yourself takes the whole budget: the reference method
        // reports 100 by definition, not by scanning its own curves.
        let cr = if method == "random" {
            100.0
        } else {
            curves
                .iter()
                .map(|c| cost_reduction(c, reference_f1, budget))
                .sum::<Result<f64>>()?
                / curves.len() as f64
        };
        rows.push(SummaryRow { method: method.clone(), f1_at_budget: f1, cost_reduction: cr });
    }
    // Reference method first, the rest in name order.
    rows.sort_by_key(|r| (r.method != "random", r.method.clone()));
    write_summary_csv(out_csv, &rows)?;

    println!("{:<16} {:>12} {:>16}", "method", "f1@budget", "cost_reduction");
    for r in &rows {
        println!("{:<16} {:>12.4} {:>16.1}", r.method, r.f1_at_budget, r.cost_reduction);
    }
    println!("reference: mean random F1 {reference_f1:.4} at budget {budget}");
    Ok(())
}

pub struct SynthOpts {
    pub out: PathBuf,
    pub seed: u64,
    pub emb_dim: usize,
    pub sentences: usize,
    pub heldout: usize,
    pub test: usize,
    pub entity_rate: f64,
}

/// Generates the two-language benchmark plus ready-to-run config files for
/// every mode, so the whole pipeline can be exercised without external
/// corpora or embeddings.
pub fn synth(opts: &SynthOpts) -> Result<()> {
    let mut world_cfg = WorldConfig::two_language_default(opts.seed);
    world_cfg.emb_dim = opts.emb_dim;
    world_cfg.train_sentences = opts.sentences;
    world_cfg.heldout_sentences = opts.heldout;
    world_cfg.test_sentences = opts.test;
    world_cfg.entity_rate = opts.entity_rate;
    let world = synth::build_world(&world_cfg)?;

    std::fs::create_dir_all(&opts.out)?;
    world.table.write(opts.out.join("embeddings.txt"))?;
    for lang in &world.langs {
        corpus::write_conll(&lang.train, opts.out.join(format!("{}-train.conll", lang.name)))?;
        corpus::write_conll(&lang.heldout, opts.out.join(format!("{}-heldout.conll", lang.name)))?;
        corpus::write_conll(&lang.test, opts.out.join(format!("{}-test.conll", lang.name)))?;
    }
    for (name, cfg) in demo_configs(opts, &world_cfg) {
        let text = toml::to_string_pretty(&cfg)
            .map_err(|e| Error::Config(format!("serialize {name}: {e}")))?;
        std::fs::write(opts.out.join(name), text)?;
    }
    println!("wrote benchmark and demo configs to {}", opts.out.display());
    Ok(())
}

/// Smoke-scale demo configs chained through the default output root: learn
/// on the first language, then transfer / cold start / baselines on the
/// second. The cold start reuses the random baseline's model as its
/// pretrained tagger.
fn demo_configs(opts: &SynthOpts, world: &WorldConfig) -> Vec<(&'static str, RunConfig)> {
    use crate::config::{DataConfig, HyperConfig, RunSection};
    let data_file = |name: &str| opts.out.join(name);
    let base_data = DataConfig {
        sources: Vec::new(),
        target: None,
        heldout: None,
        test: None,
        embeddings: data_file("embeddings.txt"),
        emb_dim: world.emb_dim,
        label_column: None,
        iob1_to_io: false,
    };
    let hyper = HyperConfig {
        hidden_dim: 32,
        content_widths: vec![2, 3],
        content_filters: 16,
        marginal_width: 3,
        marginal_filters: 8,
        ..HyperConfig::default()
    };
    let run = |out: &str, policy: Option<&str>, model: Option<&str>| RunSection {
        budget: 20,
        episodes: 400,
        seed: opts.seed,
        out_dir: Some(PathBuf::from(out)),
        policy: policy.map(|p| Path::new("runs").join(p)),
        model: model.map(|m| Path::new("runs").join(m)),
    };
    let src = |l: &str, r: &str| data_file(&format!("{l}-{r}.conll"));
    vec![
        (
            "learn.toml",
            RunConfig {
                mode: Mode::Learn,
                data: DataConfig {
                    sources: vec![src("aa", "train")],
                    heldout: Some(src("aa", "heldout")),
                    ..base_data.clone()
                },
                run: run("synth-learn", None, None),
                hyper: hyper.clone(),
            },
        ),
        (
            "transfer.toml",
            RunConfig {
                mode: Mode::Transfer,
                data: DataConfig {
                    target: Some(src("bb", "train")),
                    heldout: Some(src("bb", "heldout")),
                    test: Some(src("bb", "test")),
                    ..base_data.clone()
                },
                run: run("synth-transfer", Some("synth-learn/policy.json"), None),
                hyper: hyper.clone(),
            },
        ),
        (
            "coldstart.toml",
            RunConfig {
                mode: Mode::Coldstart,
                data: DataConfig {
                    target: Some(src("bb", "train")),
                    test: Some(src("bb", "test")),
                    ..base_data.clone()
                },
                run: run(
                    "synth-coldstart",
                    Some("synth-learn/policy.json"),
                    Some("synth-random/model.json"),
                ),
                hyper: hyper.clone(),
            },
        ),
        (
            "baseline-random.toml",
            RunConfig {
                mode: Mode::BaselineRandom,
                data: DataConfig {
                    target: Some(src("bb", "train")),
                    heldout: Some(src("bb", "heldout")),
                    test: Some(src("bb", "test")),
                    ..base_data.clone()
                },
                run: run("synth-random", None, None),
                hyper: hyper.clone(),
            },
        ),
        (
            "baseline-uncertainty.toml",
            RunConfig {
                mode: Mode::BaselineUncertainty,
                data: DataConfig {
                    target: Some(src("bb", "train")),
                    heldout: Some(src("bb", "heldout")),
                    test: Some(src("bb", "test")),
                    ..base_data
                },
                run: run("synth-uncertainty", None, None),
                hyper,
            },
        ),
    ]
}
