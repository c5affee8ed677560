//! Episode runners tying the tagger, state encoders, and Q-learning agent
//! together.
//!
//! Three modes share one step structure (observe a sentence, pick annotate
//! or skip, optionally retrain, log):
//!
//! * policy learning: many simulated annotation episodes over labeled source
//!   data, epsilon-greedy actions, a DQN update per step;
//! * transfer: a single greedy pass over a new pool, fine-tuning the policy
//!   from a fresh replay memory as it goes;
//! * cold start: a single greedy pass with a frozen policy and a frozen
//!   pretrained model, annotations deferred until after selection.
//!
//! The uncertainty and random baseline selectors live here too, so every
//! comparison runs through the same retraining and logging path.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Action, Agent, NextObs, Transition};
use crate::corpus::{Corpus, Sentence};
use crate::embed::EmbeddingTable;
use crate::eval::{self, LearningCurve};
use crate::rng;
use crate::state::Observation;
use crate::tagger::{BaseModel, LabeledSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Annotation budget per episode, in sentences.
    pub budget: usize,
    /// Number of training episodes (single-pass modes ignore this).
    pub episodes: usize,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episode count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub action: Action,
    pub reward: f64,
    /// Labeled-set size after this step.
    pub n_labeled: usize,
    /// Held-out F1 after this step; absent in cold-start runs.
    pub heldout_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Which source corpus this episode streamed from.
    pub source: usize,
    /// Held-out F1 of the reset model before any annotation.
    pub initial_f1: Option<f64>,
    pub steps: Vec<StepRecord>,
}

impl EpisodeRecord {
    pub fn annotations(&self) -> usize {
        self.steps.last().map_or(0, |s| s.n_labeled)
    }

    pub fn reward_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn final_f1(&self) -> Option<f64> {
        self.steps.iter().rev().find_map(|s| s.heldout_f1).or(self.initial_f1)
    }

    /// F1 as a function of annotations: the starting point plus one point
    /// per annotate step.
    pub fn curve(&self, method: impl Into<String>, seed: u64) -> LearningCurve {
        let mut points = Vec::new();
        if let Some(f1) = self.initial_f1 {
            points.push((0, f1));
        }
        for s in &self.steps {
            if s.action == Action::Annotate {
                if let Some(f1) = s.heldout_f1 {
                    points.push((s.n_labeled, f1));
                }
            }
        }
        LearningCurve { method: method.into(), seed, points }
    }
}

/// Skipping leaves the model untouched, so its reward is exactly zero;
/// annotating pays the change in held-out F1, which telescopes over an
/// episode to final minus initial F1.
pub fn compute_reward(prev_f1: f64, new_f1: f64, action: Action) -> f64 {
    debug_assert!((0.0..=1.0).contains(&prev_f1) && (0.0..=1.0).contains(&new_f1));
    match action {
        Action::Skip => 0.0,
        Action::Annotate => new_f1 - prev_f1,
    }
}

fn check_labels(corpus: &Corpus, model: &BaseModel, what: &str) -> Result<()> {
    if corpus.label_set() != model.labels() {
        return Err(Error::Config(format!(
            "{what} label inventory {:?} does not match the model's {:?}",
            corpus.label_set(),
            model.labels()
        )));
    }
    Ok(())
}

/// One simulated annotation episode: stream the shuffled corpus, act
/// epsilon-greedily, annotate/retrain/reward on demand, store transitions,
/// and run one DQN update per step. Ends at the budget (with a Terminate
/// transition) or at data exhaustion.
#[allow(clippy::too_many_arguments)]
fn run_episode(
    agent: &mut Agent,
    corpus: &Corpus,
    table: &EmbeddingTable,
    initial_model: &BaseModel,
    heldout: &Corpus,
    budget: usize,
    episode: usize,
    source: usize,
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut model = initial_model.clone();
    let mut labeled = LabeledSet::new();
    let mut order: Vec<usize> = (0..corpus.sentences.len()).collect();
    order.shuffle(&mut rng::substream(seed, "episode-shuffle", episode as u64));
    let mut act_rng = rng::substream(seed, "episode-actions", episode as u64);
    let mut replay_rng = rng::substream(seed, "episode-replay", episode as u64);

    let mut f1 = eval::evaluate_model(&model, heldout, table).f1;
    let initial_f1 = f1;
    let mut steps = Vec::new();
    let mut next_cache: Option<Observation> = None;
    for (pos, &idx) in order.iter().enumerate() {
        let sentence = &corpus.sentences[idx];
        let obs = next_cache
            .take()
            .unwrap_or_else(|| Observation::from_model(&model, sentence, table));
        let action = agent.act(&obs, &mut act_rng)?;
        let reward = if action == Action::Annotate {
            labeled.push(sentence.clone());
            model.train(&labeled, table)?;
            let new_f1 = eval::evaluate_model(&model, heldout, table).f1;
            let r = compute_reward(f1, new_f1, action);
            f1 = new_f1;
            r
        } else {
            compute_reward(f1, f1, action)
        };
        let at_budget = labeled.len() >= budget;
        let next = if at_budget || pos + 1 == order.len() {
            NextObs::Terminate
        } else {
            let nobs = Observation::from_model(&model, &corpus.sentences[order[pos + 1]], table);
            next_cache = Some(nobs.clone());
            NextObs::Observation(nobs)
        };
        agent.push(Transition { obs, action, reward, next });
        agent.update(&mut replay_rng)?;
        steps.push(StepRecord {
            step: pos,
            action,
            reward,
            n_labeled: labeled.len(),
            heldout_f1: Some(f1),
        });
        if at_budget {
            break;
        }
    }
    Ok(EpisodeRecord { episode, source, initial_f1: Some(initial_f1), steps })
}

/// Learns a policy over `config.episodes` simulated episodes on a single
/// source corpus. The trained policy lives in `agent`; the per-episode logs
/// are returned.
pub fn run_policy_learning(
    config: &EpisodeConfig,
    agent: &mut Agent,
    source: &Corpus,
    table: &EmbeddingTable,
    initial_model: &BaseModel,
    heldout: &Corpus,
) -> Result<Vec<EpisodeRecord>> {
    run_multilingual_learning(config, agent, &[source], table, initial_model, heldout)
}

/// Policy learning over several source corpora sharing one embedding space
/// and one label inventory: each episode streams a uniformly chosen source,
/// and all updates accumulate in the one shared policy. A single-source
/// list behaves exactly like [`run_policy_learning`].
pub fn run_multilingual_learning(
    config: &EpisodeConfig,
    agent: &mut Agent,
    sources: &[&Corpus],
    table: &EmbeddingTable,
    initial_model: &BaseModel,
    heldout: &Corpus,
) -> Result<Vec<EpisodeRecord>> {
    config.validate()?;
    if sources.is_empty() {
        return Err(Error::Config("need at least one source corpus".into()));
    }
    for (i, source) in sources.iter().enumerate() {
        check_labels(source, initial_model, "source corpus")?;
        if config.budget > source.sentences.len() {
            log::warn!(
                "budget {} exceeds source {i} size {}; episodes there end at data exhaustion",
                config.budget,
                source.sentences.len()
            );
        }
    }
    check_labels(heldout, initial_model, "held-out corpus")?;
    let mut source_rng = rng::stream(config.seed, "episode-source");
    let mut records = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let source = source_rng.gen_range(0..sources.len());
        records.push(run_episode(
            agent,
            sources[source],
            table,
            initial_model,
            heldout,
            config.budget,
            episode,
            source,
            config.seed,
        )?);
    }
    Ok(records)
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    /// Pool indices in selection order.
    pub selected: Vec<usize>,
    /// The annotated sentences, in selection order.
    pub labeled: LabeledSet,
    pub model: BaseModel,
    pub record: EpisodeRecord,
    pub retrains: usize,
}

/// One greedy pass over an unlabeled target pool with a pretrained policy.
/// Sentences are visited in seeded random order without replacement; each
/// annotation retrains the model and rewards come from the target held-out
/// set. The policy keeps fine-tuning through DQN updates fed by a fresh
/// replay memory holding only this run's transitions.
pub fn run_transfer(
    config: &EpisodeConfig,
    agent: &mut Agent,
    pool: &Corpus,
    table: &EmbeddingTable,
    initial_model: &BaseModel,
    heldout: &Corpus,
) -> Result<TransferOutcome> {
    config.validate()?;
    check_labels(pool, initial_model, "target pool")?;
    check_labels(heldout, initial_model, "held-out corpus")?;
    if config.budget > pool.sentences.len() {
        log::warn!(
            "budget {} exceeds pool size {}; run ends at data exhaustion",
            config.budget,
            pool.sentences.len()
        );
    }
    agent.reset_memory();
    let mut model = initial_model.clone();
    let mut labeled = LabeledSet::new();
    let mut selected = Vec::new();
    let mut order: Vec<usize> = (0..pool.sentences.len()).collect();
    order.shuffle(&mut rng::stream(config.seed, "transfer-order"));
    let mut replay_rng = rng::stream(config.seed, "transfer-replay");

    let mut f1 = eval::evaluate_model(&model, heldout, table).f1;
    let initial_f1 = f1;
    let mut steps = Vec::new();
    let mut next_cache: Option<Observation> = None;
    for (pos, &idx) in order.iter().enumerate() {
        let sentence = &pool.sentences[idx];
        let obs = next_cache
            .take()
            .unwrap_or_else(|| Observation::from_model(&model, sentence, table));
        let action = agent.greedy(&obs)?;
        let reward = if action == Action::Annotate {
            selected.push(idx);
            labeled.push(sentence.clone());
            model.train(&labeled, table)?;
            let new_f1 = eval::evaluate_model(&model, heldout, table).f1;
            let r = compute_reward(f1, new_f1, action);
            f1 = new_f1;
            r
        } else {
            compute_reward(f1, f1, action)
        };
        let at_budget = labeled.len() >= config.budget;
        let next = if at_budget || pos + 1 == order.len() {
            NextObs::Terminate
        } else {
            let nobs = Observation::from_model(&model, &pool.sentences[order[pos + 1]], table);
            next_cache = Some(nobs.clone());
            NextObs::Observation(nobs)
        };
        agent.push(Transition { obs, action, reward, next });
        agent.update(&mut replay_rng)?;
        steps.push(StepRecord {
            step: pos,
            action,
            reward,
            n_labeled: labeled.len(),
            heldout_f1: Some(f1),
        });
        if at_budget {
            break;
        }
    }
    let retrains = labeled.len();
    Ok(TransferOutcome {
        selected,
        labeled,
        model,
        record: EpisodeRecord { episode: 0, source: 0, initial_f1: Some(initial_f1), steps },
        retrains,
    })
}

#[derive(Debug, Clone)]
pub struct ColdStartOutcome {
    /// Pool indices in selection order.
    pub selected: Vec<usize>,
    /// Selected sentences with their gold labels attached after the pass.
    pub labeled: LabeledSet,
    /// Copy of the pretrained model trained once on the full selection.
    pub final_model: BaseModel,
    pub record: EpisodeRecord,
}

/// One greedy pass with a frozen policy and frozen pretrained model: the
/// model supplies marginals and confidence for every observation but is
/// never retrained mid-pass, and selected sentences accumulate unlabeled.
/// Labels are attached only after the pass, and one model is trained on the
/// whole selection for evaluation. Neither `agent` nor `pretrained` is
/// mutated, so their parameter checksums are unchanged by construction.
pub fn run_cold_start(
    config: &EpisodeConfig,
    agent: &Agent,
    pretrained: &BaseModel,
    pool: &Corpus,
    table: &EmbeddingTable,
    heldout: Option<&Corpus>,
) -> Result<ColdStartOutcome> {
    if heldout.is_some() {
        return Err(Error::Config(
            "cold start computes no rewards and must not receive a held-out set".into(),
        ));
    }
    config.validate()?;
    check_labels(pool, pretrained, "target pool")?;
    let mut selected = Vec::new();
    let mut order: Vec<usize> = (0..pool.sentences.len()).collect();
    order.shuffle(&mut rng::stream(config.seed, "coldstart-order"));
    let mut steps = Vec::new();
    for (pos, &idx) in order.iter().enumerate() {
        let obs = Observation::from_model(pretrained, &pool.sentences[idx], table);
        let action = agent.greedy(&obs)?;
        if action == Action::Annotate {
            selected.push(idx);
        }
        steps.push(StepRecord {
            step: pos,
            action,
            reward: 0.0,
            n_labeled: selected.len(),
            heldout_f1: None,
        });
        if selected.len() >= config.budget {
            break;
        }
    }
    let mut labeled = LabeledSet::new();
    for &idx in &selected {
        labeled.push(pool.sentences[idx].clone());
    }
    let mut final_model = pretrained.clone();
    if !labeled.is_empty() {
        final_model.train(&labeled, table)?;
    }
    Ok(ColdStartOutcome {
        selected,
        labeled,
        final_model,
        record: EpisodeRecord { episode: 0, source: 0, initial_f1: None, steps },
    })
}

/// Sum over tokens of the marginal label entropy, −Σ p ln p.
pub fn total_token_entropy(model: &BaseModel, s: &Sentence, table: &EmbeddingTable) -> f64 {
    let m = model.marginals(s, table);
    let mut h = 0.0;
    for t in 0..m.cols {
        for y in 0..m.rows {
            let p = m.get(y, t);
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    /// Pool indices in selection order.
    pub selected: Vec<usize>,
    pub model: BaseModel,
    pub record: EpisodeRecord,
}

/// Pool-based uncertainty sampling: repeatedly annotate the remaining
/// sentence with the highest total token entropy (ties keep the earliest
/// pool position), retraining after every annotation.
pub fn baseline_uncertainty(
    pool: &Corpus,
    table: &EmbeddingTable,
    initial_model: &BaseModel,
    k: usize,
    heldout: &Corpus,
) -> Result<BaselineOutcome> {
    check_labels(pool, initial_model, "pool")?;
    check_labels(heldout, initial_model, "held-out corpus")?;
    let mut model = initial_model.clone();
    let mut remaining: Vec<usize> = (0..pool.sentences.len()).collect();
    let mut labeled = LabeledSet::new();
    let mut selected = Vec::new();
    let mut f1 = eval::evaluate_model(&model, heldout, table).f1;
    let initial_f1 = f1;
    let mut steps = Vec::new();
    for step in 0..k.min(pool.sentences.len()) {
        let mut best = 0;
        let mut best_h = f64::NEG_INFINITY;
        for (j, &idx) in remaining.iter().enumerate() {
            let h = total_token_entropy(&model, &pool.sentences[idx], table);
            if h > best_h {
                best_h = h;
                best = j;
            }
        }
        let idx = remaining.remove(best);
        selected.push(idx);
        labeled.push(pool.sentences[idx].clone());
        model.train(&labeled, table)?;
        let new_f1 = eval::evaluate_model(&model, heldout, table).f1;
        let reward = compute_reward(f1, new_f1, Action::Annotate);
        f1 = new_f1;
        steps.push(StepRecord {
            step,
            action: Action::Annotate,
            reward,
            n_labeled: labeled.len(),
            heldout_f1: Some(f1),
        });
    }
    Ok(BaselineOutcome {
        selected,
        model,
        record: EpisodeRecord { episode: 0, source: 0, initial_f1: Some(initial_f1), steps },
    })
}

/// Uniform selection of `k` pool indices without replacement. Asking for
/// more than the pool holds selects everything and warns.
pub fn baseline_random(pool: &Corpus, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = pool.sentences.len();
    let k = if k > n {
        log::warn!("requested {k} of {n} sentences; selecting the whole pool");
        n
    } else {
        k
    };
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Random-selection baseline run: annotates a seeded uniform sample one
/// sentence at a time, retraining after each, so its learning curve is
/// directly comparable to the other selectors'.
pub fn baseline_random_run(
    pool: &Corpus,
    table: &EmbeddingTable,
    initial_model: &BaseModel,
    k: usize,
    heldout: &Corpus,
    seed: u64,
) -> Result<BaselineOutcome> {
    check_labels(pool, initial_model, "pool")?;
    check_labels(heldout, initial_model, "held-out corpus")?;
    let selected = baseline_random(pool, k, &mut rng::stream(seed, "baseline-random"));
    let mut model = initial_model.clone();
    let mut labeled = LabeledSet::new();
    let mut f1 = eval::evaluate_model(&model, heldout, table).f1;
    let initial_f1 = f1;
    let mut steps = Vec::new();
    for (step, &idx) in selected.iter().enumerate() {
        labeled.push(pool.sentences[idx].clone());
        model.train(&labeled, table)?;
        let new_f1 = eval::evaluate_model(&model, heldout, table).f1;
        let reward = compute_reward(f1, new_f1, Action::Annotate);
        f1 = new_f1;
        steps.push(StepRecord {
            step,
            action: Action::Annotate,
            reward,
            n_labeled: labeled.len(),
            heldout_f1: Some(f1),
        });
    }
    Ok(BaselineOutcome {
        selected,
        model,
        record: EpisodeRecord { episode: 0, source: 0, initial_f1: Some(initial_f1), steps },
    })
}

/// Replays a selection in order with the same warm-start retraining the
/// runners use, evaluating on `eval_corpus` after each annotation. For any
/// runner that retrains once per annotation, the returned model is
/// bit-identical to that run's final model, so the curve's last point is
/// exactly the final model's F1 on `eval_corpus`.
pub fn replay_curve(
    initial_model: &BaseModel,
    pool: &Corpus,
    table: &EmbeddingTable,
    selection: &[usize],
    eval_corpus: &Corpus,
    method: &str,
    seed: u64,
) -> Result<(LearningCurve, BaseModel)> {
    check_labels(pool, initial_model, "pool")?;
    check_labels(eval_corpus, initial_model, "evaluation corpus")?;
    let mut model = initial_model.clone();
    let mut labeled = LabeledSet::new();
    let mut points = vec![(0usize, eval::evaluate_model(&model, eval_corpus, table).f1)];
    for &idx in selection {
        let s = pool.sentences.get(idx).ok_or_else(|| {
            Error::Validation(format!(
                "selection index {idx} outside pool of {}",
                pool.sentences.len()
            ))
        })?;
        labeled.push(s.clone());
        model.train(&labeled, table)?;
        points.push((labeled.len(), eval::evaluate_model(&model, eval_corpus, table).f1));
    }
    let curve = LearningCurve { method: method.to_string(), seed, points };
    curve.validate()?;
    Ok((curve, model))
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeRow {
    episode: usize,
    step: usize,
    action: u8,
    reward: f64,
    n_labeled: usize,
    heldout_f1: Option<f64>,
}

/// Flat per-step CSV log with columns
/// episode, step, action, reward, n_labeled, heldout_f1.
pub fn write_episode_csv(path: impl AsRef<Path>, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(eval::csv_err)?;
    for rec in records {
        for s in &rec.steps {
            w.serialize(EpisodeRow {
                episode: rec.episode,
                step: s.step,
                action: s.action.index() as u8,
                reward: s.reward,
                n_labeled: s.n_labeled,
                heldout_f1: s.heldout_f1,
            })
            .map_err(eval::csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
