//! Synthetic multi-language worlds for end-to-end runs.
//!
//! Each language gets its own disjoint vocabulary, but all vectors live in
//! one shared embedding space: entity words cluster around a single
//! world-wide direction while plain words scatter uniformly. A selection
//! signal learned on one language therefore carries over to another even
//! though no surface form is shared.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Corpus, Partition, SyntheticConfig};
use crate::embed::EmbeddingTable;
use crate::rng;
use crate::{Error, Result};

/// Distance of entity vectors along the shared direction.
const ENTITY_SCALE: f64 = 1.2;
/// Per-coordinate noise added to entity vectors.
const ENTITY_NOISE: f64 = 0.35;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LangSpec {
    pub name: String,
    pub plain_words: usize,
    pub entity_words: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    pub emb_dim: usize,
    pub langs: Vec<LangSpec>,
    pub train_sentences: usize,
    pub heldout_sentences: usize,
    pub test_sentences: usize,
    pub len_min: usize,
    pub len_max: usize,
    /// Per-token probability of drawing an entity word.
    pub entity_rate: f64,
    pub seed: u64,
}

impl WorldConfig {
    /// Small two-language world with enough signal for policy training.
    pub fn two_language_default(seed: u64) -> Self {
        WorldConfig {
            emb_dim: 16,
            langs: vec![
                LangSpec { name: "aa".into(), plain_words: 40, entity_words: 12 },
                LangSpec { name: "bb".into(), plain_words: 40, entity_words: 12 },
            ],
            train_sentences: 120,
            heldout_sentences: 40,
            test_sentences: 40,
            len_min: 3,
            len_max: 9,
            entity_rate: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if self.langs.is_empty() {
            return Err(Error::Config("need at least one language".into()));
        }
        let mut names: Vec<&str> = self.langs.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.langs.len() {
            return Err(Error::Config("language names must be unique".into()));
        }
        for lang in &self.langs {
            if lang.name.is_empty() || lang.name.contains('#') {
                return Err(Error::Config(format!("bad language name {:?}", lang.name)));
            }
            if lang.plain_words == 0 || lang.entity_words == 0 {
                return Err(Error::Config(format!(
                    "language {:?} needs plain and entity words",
                    lang.name
                )));
            }
        }
        if self.train_sentences == 0 || self.heldout_sentences == 0 || self.test_sentences == 0 {
            return Err(Error::Config("every partition needs at least one sentence".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthLang {
    pub name: String,
    /// Just this language's vocabulary; corpora are generated from it.
    pub table: EmbeddingTable,
    pub train: Corpus,
    pub heldout: Corpus,
    pub test: Corpus,
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    /// Union of all language vocabularies; models and policies use this.
    pub table: EmbeddingTable,
    pub langs: Vec<SynthLang>,
}

impl SynthWorld {
    pub fn lang(&self, name: &str) -> Option<&SynthLang> {
        self.langs.iter().find(|l| l.name == name)
    }
}

fn entity_direction(dim: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "synth-direction");
    let raw: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    raw.into_iter().map(|x| x / norm).collect()
}

fn lang_entries(
    spec: &LangSpec,
    dim: usize,
    direction: &[f64],
    seed: u64,
    lang_index: u64,
) -> Vec<(String, Vec<f64>)> {
    let mut r = rng::substream(seed, "synth-vectors", lang_index);
    let mut entries = Vec::with_capacity(spec.plain_words + spec.entity_words);
    for j in 0..spec.plain_words {
        let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        entries.push((format!("{}w{j}", spec.name), v));
    }
    for j in 0..spec.entity_words {
        let v: Vec<f64> = direction
            .iter()
            .map(|&d| ENTITY_SCALE * d + ENTITY_NOISE * r.gen_range(-1.0..1.0))
            .collect();
        entries.push((format!("{}e{j}#ent", spec.name), v));
    }
    entries
}

fn synth_config(cfg: &WorldConfig, sentences: usize) -> SyntheticConfig {
    SyntheticConfig {
        sentences,
        len_min: cfg.len_min,
        len_max: cfg.len_max,
        entity_rate: cfg.entity_rate,
        marker: '#',
    }
}

/// Builds the shared embedding space and per-language train/held-out/test
/// corpora. Fully determined by the config.
pub fn build_world(cfg: &WorldConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let direction = entity_direction(cfg.emb_dim, cfg.seed);
    let mut all_entries = Vec::new();
    let mut langs = Vec::with_capacity(cfg.langs.len());
    for (i, spec) in cfg.langs.iter().enumerate() {
        let entries = lang_entries(spec, cfg.emb_dim, &direction, cfg.seed, i as u64);
        all_entries.extend(entries.iter().cloned());
        let table = EmbeddingTable::from_entries(cfg.emb_dim, entries)?;
        let gen = |sentences, partition, part_idx: u64| {
            corpus::generate_synthetic(
                &synth_config(cfg, sentences),
                &table,
                partition,
                rng::derive_seed(cfg.seed, &format!("synth-corpus-{}", spec.name), part_idx),
            )
        };
        let train = gen(cfg.train_sentences, Partition::Train, 0)?;
        let heldout = gen(cfg.heldout_sentences, Partition::Heldout, 1)?;
        let test = gen(cfg.test_sentences, Partition::Test, 2)?;
        langs.push(SynthLang { name: spec.name.clone(), table, train, heldout, test });
    }
    Ok(SynthWorld { table: EmbeddingTable::from_entries(cfg.emb_dim, all_entries)?, langs })
}

/// A corpus over one language restricted to its first `entity_take` entity
/// words (plain vocabulary unchanged). Useful for pretraining a model that
/// knows only part of the target entity inventory.
pub fn restricted_corpus(
    lang: &SynthLang,
    entity_take: usize,
    cfg: &WorldConfig,
    sentences: usize,
    partition: Partition,
    seed: u64,
) -> Result<Corpus> {
    let mut kept_entities = 0usize;
    let mut entries = Vec::new();
    for word in lang.table.words() {
        let entity = word.contains('#');
        if entity {
            if kept_entities >= entity_take {
                continue;
            }
            kept_entities += 1;
        }
        entries.push((word.clone(), lang.table.lookup(word).to_vec()));
    }
    if kept_entities == 0 {
        return Err(Error::Config(format!(
            "entity_take {entity_take} leaves language {:?} without entity words",
            lang.name
        )));
    }
    let table = EmbeddingTable::from_entries(lang.table.dim(), entries)?;
    corpus::generate_synthetic(&synth_config(cfg, sentences), &table, partition, seed)
}
