//! Declarative run configuration: one TOML file describes a whole run, a
//! few flags override the common fields. Everything is validated before
//! any data is read or any training starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use alps_core::agent::{AgentConfig, ExplorationSchedule, QNetConfig};
use alps_core::episodes::EpisodeConfig;
use alps_core::state::EncoderConfig;
use alps_core::tagger::{ModelKind, TrainParams};
use alps_core::{Error, Result};

/// Environment variable naming the directory that relative output paths
/// are resolved against.
pub const OUT_ROOT_VAR: &str = "ALPS_OUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Learn,
    Transfer,
    Coldstart,
    BaselineRandom,
    BaselineUncertainty,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Learn => "learn",
            Mode::Transfer => "transfer",
            Mode::Coldstart => "coldstart",
            Mode::BaselineRandom => "baseline-random",
            Mode::BaselineUncertainty => "baseline-uncertainty",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub data: DataConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub hyper: HyperConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled pools for policy learning; one corpus per source language.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<PathBuf>,
    /// Selection pool for transfer, cold start, and the baselines.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    /// Evaluation corpus that drives rewards during learning and transfer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout: Option<PathBuf>,
    /// Corpus the reported learning curves are evaluated on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    pub embeddings: PathBuf,
    #[serde(default = "d_emb_dim")]
    pub emb_dim: usize,
    /// CoNLL column holding the label; defaults to the last column.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_column: Option<usize>,
    /// Rewrite B-X tags to I-X while loading.
    #[serde(default)]
    pub iob1_to_io: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "d_budget")]
    pub budget: usize,
    #[serde(default = "d_episodes")]
    pub episodes: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Output directory; relative paths go under `ALPS_OUT_ROOT` (default
    /// `runs/`). Defaults to `<mode>-s<seed>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Trained policy checkpoint; input for transfer and cold start.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
    /// Pretrained tagger checkpoint; input for cold start.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            budget: d_budget(),
            episodes: d_episodes(),
            seed: d_seed(),
            out_dir: None,
            policy: None,
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub sync_every: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Action selections over which epsilon decays; defaults to
    /// episodes × budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_decay_steps: Option<u64>,
    pub hidden_dim: usize,
    pub content_widths: Vec<usize>,
    pub content_filters: usize,
    pub marginal_width: usize,
    pub marginal_filters: usize,
    pub adam_alpha: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Base tagger family: "crf" or "window".
    pub model: String,
    pub crf_l2: f64,
    pub crf_learning_rate: f64,
    pub crf_epochs: usize,
    pub crf_tol: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            gamma: 0.99,
            batch_size: 32,
            replay_capacity: 10_000,
            sync_every: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_steps: None,
            hidden_dim: 256,
            content_widths: vec![3, 4, 5],
            content_filters: 128,
            marginal_width: 3,
            marginal_filters: 20,
            adam_alpha: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            model: "crf".into(),
            crf_l2: 0.1,
            crf_learning_rate: 0.1,
            crf_epochs: 30,
            crf_tol: 1e-4,
        }
    }
}

fn d_emb_dim() -> usize {
    40
}
fn d_budget() -> usize {
    200
}
fn d_episodes() -> usize {
    10_000
}
fn d_seed() -> u64 {
    1
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))
    }

    /// Rejects anything that contradicts the mode before any file is read.
    pub fn validate(&self) -> Result<()> {
        let need = |field: Option<&PathBuf>, name: &str| {
            field.map(|_| ()).ok_or_else(|| {
                Error::Config(format!("mode {} requires data.{name}", self.mode.as_str()))
            })
        };
        match self.mode {
            Mode::Learn => {
                if self.data.sources.is_empty() {
                    return Err(Error::Config("mode learn requires data.sources".into()));
                }
                need(self.data.heldout.as_ref(), "heldout")?;
            }
            Mode::Transfer => {
                need(self.data.target.as_ref(), "target")?;
                need(self.data.heldout.as_ref(), "heldout")?;
                need(self.data.test.as_ref(), "test")?;
                if self.run.policy.is_none() {
                    return Err(Error::Config("mode transfer requires run.policy".into()));
                }
            }
            Mode::Coldstart => {
                need(self.data.target.as_ref(), "target")?;
                need(self.data.test.as_ref(), "test")?;
                if self.data.heldout.is_some() {
                    return Err(Error::Config(
                        "cold start computes no rewards; remove data.heldout".into(),
                    ));
                }
                if self.run.policy.is_none() || self.run.model.is_none() {
                    return Err(Error::Config(
                        "mode coldstart requires run.policy and run.model".into(),
                    ));
                }
            }
            Mode::BaselineRandom | Mode::BaselineUncertainty => {
                need(self.data.target.as_ref(), "target")?;
                need(self.data.heldout.as_ref(), "heldout")?;
                need(self.data.test.as_ref(), "test")?;
            }
        }
        if self.data.emb_dim == 0 {
            return Err(Error::Config("emb_dim must be positive".into()));
        }
        if self.run.budget == 0 || self.run.episodes == 0 {
            return Err(Error::Config("budget and episodes must be positive".into()));
        }
        if self.data.label_column == Some(0) {
            return Err(Error::Config("label column 0 is the token column".into()));
        }
        self.model_kind()?;
        // Exercises the same checks the agent constructor would apply, so
        // bad hyperparameters fail here rather than mid-run.
        self.agent_config(2).validate()?;
        self.train_params_checked()?;
        Ok(())
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        match self.hyper.model.as_str() {
            "crf" => Ok(ModelKind::Crf),
            "window" => Ok(ModelKind::Window),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?}; expected \"crf\" or \"window\""
            ))),
        }
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            l2: self.hyper.crf_l2,
            learning_rate: self.hyper.crf_learning_rate,
            max_epochs: self.hyper.crf_epochs,
            tol: self.hyper.crf_tol,
        }
    }

    fn train_params_checked(&self) -> Result<()> {
        let p = self.train_params();
        if p.l2 < 0.0 || p.learning_rate <= 0.0 || p.max_epochs == 0 || p.tol <= 0.0 {
            return Err(Error::Config(
                "crf_l2 must be >= 0, crf_learning_rate and crf_tol > 0, crf_epochs > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn encoder_config(&self, num_labels: usize) -> EncoderConfig {
        EncoderConfig {
            emb_dim: self.data.emb_dim,
            content_widths: self.hyper.content_widths.clone(),
            content_filters: self.hyper.content_filters,
            marginal_width: self.hyper.marginal_width,
            marginal_filters: self.hyper.marginal_filters,
            num_labels,
        }
    }

    pub fn agent_config(&self, num_labels: usize) -> AgentConfig {
        let decay = self
            .hyper
            .epsilon_decay_steps
            .unwrap_or((self.run.episodes as u64).saturating_mul(self.run.budget as u64))
            .max(1);
        AgentConfig {
            net: QNetConfig {
                encoder: self.encoder_config(num_labels),
                hidden_dim: self.hyper.hidden_dim,
            },
            gamma: self.hyper.gamma,
            batch_size: self.hyper.batch_size,
            replay_capacity: self.hyper.replay_capacity,
            sync_every: self.hyper.sync_every,
            schedule: ExplorationSchedule {
                start: self.hyper.epsilon_start,
                end: self.hyper.epsilon_end,
                decay_steps: decay,
            },
            learning_rate: self.hyper.adam_alpha,
        }
    }

    pub fn episode_config(&self, seed: u64) -> EpisodeConfig {
        EpisodeConfig { budget: self.run.budget, episodes: self.run.episodes, seed }
    }

    /// Output directory for one seed: the configured directory, or
    /// `<mode>-s<seed>`, resolved against `ALPS_OUT_ROOT` when relative.
    pub fn out_dir_for(&self, seed: u64) -> PathBuf {
        let dir = self
            .run
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}-s{seed}", self.mode.as_str())));
        if dir.is_absolute() {
            dir
        } else {
            let root = std::env::var(OUT_ROOT_VAR).unwrap_or_else(|_| "runs".into());
            Path::new(&root).join(dir)
        }
    }

    /// Copy of this config pinned to one fan-out seed, with the output
    /// directory suffixed `-s<seed>` so workers never collide.
    pub fn for_seed(&self, seed: u64) -> RunConfig {
        let mut c = self.clone();
        c.run.seed = seed;
        let base = self
            .run
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(self.mode.as_str().to_string()));
        let name =
            base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        c.run.out_dir = Some(base.with_file_name(format!("{name}-s{seed}")));
        c
    }
}
