//! Learning active-learning data-selection policies for sequence labeling.
//!
//! The library simulates stream-based active learning as a decision process:
//! sentences arrive one at a time, an agent decides whether each one is worth
//! sending to an annotator, and a base tagger is retrained on the growing
//! labeled set. The agent is a deep Q-network over a state built from the
//! sentence content (convolutional encoder over word embeddings), the
//! tagger's predictive marginals (convolutional encoder over the per-token
//! label distributions), and the tagger's sequence confidence. Policies
//! trained on one dataset can be transferred to another that shares the same
//! embedding space, including a cold-start mode with no feedback at all.
//!
//! Crate layout:
//! - [`corpus`]: CoNLL ingestion, label-scheme conversion, span extraction,
//!   synthetic corpus generation
//! - [`embed`]: fixed (cross-lingual) word embedding tables
//! - [`nncore`]: sequence convolution, pooling, dense layers, ADAM, and a
//!   finite-difference gradient checker
//! - [`tagger`]: the retrainable base models (linear-chain CRF and an
//!   independent window classifier)
//! - [`state`]: the agent's state encoders
//! - [`agent`]: Q-network, replay memory, epsilon-greedy exploration, DQN
//!   updates
//! - [`episodes`]: the episode runners (policy learning, transfer,
//!   cold start) and the uncertainty/random baselines
//! - [`eval`]: span F1, learning curves, cost-reduction summaries
//! - [`synth`]: ready-made multi-language synthetic worlds for desk-scale
//!   experiments

pub mod agent;
pub mod corpus;
pub mod embed;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod nncore;
pub mod rng;
pub mod state;
pub mod synth;
pub mod tagger;

pub use error::{Error, Result};
