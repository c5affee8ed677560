//! CoNLL-format ingestion, label-scheme handling, and synthetic corpora.
//!
//! Sentences are the unit of everything downstream: selection, annotation,
//! and evaluation. Labels are kept in the IO scheme internally; IOB1 input is
//! converted on load. Tokens are lowercased at ingestion (embedding vocabs
//! are lowercase) with the original initial-capital bit kept per token.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::parse;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Heldout,
    Test,
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Partition::Train => "train",
            Partition::Heldout => "heldout",
            Partition::Test => "test",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    /// Lowercased surface forms.
    pub tokens: Vec<String>,
    /// IO labels, one per token.
    pub labels: Vec<String>,
    /// True when the original token started with an uppercase letter.
    pub caps: Vec<bool>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation("sentence has no tokens".into()));
        }
        if self.tokens.len() != self.labels.len() || self.tokens.len() != self.caps.len() {
            return Err(Error::Validation(format!(
                "sentence field lengths disagree: {} tokens, {} labels, {} caps",
                self.tokens.len(),
                self.labels.len(),
                self.caps.len()
            )));
        }
        for l in &self.labels {
            if l != "O" && entity_type_of(l).is_none() {
                return Err(Error::Validation(format!("label {l:?} is not IO")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub entity_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    /// Entity types appearing anywhere in the corpus, sorted.
    pub label_inventory: Vec<String>,
    pub partition: Partition,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>, partition: Partition) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::EmptyCorpus(format!("no sentences for partition {partition}")));
        }
        let mut inventory: Vec<String> = Vec::new();
        for s in &sentences {
            s.validate()?;
            for l in &s.labels {
                if let Some(t) = entity_type_of(l) {
                    if !inventory.iter().any(|x| x == t) {
                        inventory.push(t.to_string());
                    }
                }
            }
        }
        inventory.sort();
        Ok(Corpus { sentences, label_inventory: inventory, partition })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// The full tagging label set: "O" first, then one I- label per entity
    /// type in inventory order.
    pub fn label_set(&self) -> Vec<String> {
        let mut out = vec!["O".to_string()];
        out.extend(self.label_inventory.iter().map(|t| format!("I-{t}")));
        out
    }
}

fn entity_type_of(label: &str) -> Option<&str> {
    label.strip_prefix("I-").filter(|t| !t.is_empty())
}

/// IOB1 to IO: every B-X becomes I-X, everything else is unchanged.
pub fn convert_iob1_to_io(labels: &[String]) -> Result<Vec<String>> {
    labels
        .iter()
        .map(|l| {
            if l == "O" {
                Ok("O".to_string())
            } else if let Some(t) = l.strip_prefix("B-") {
                if t.is_empty() {
                    return Err(Error::Validation("label \"B-\" has no entity type".into()));
                }
                Ok(format!("I-{t}"))
            } else if let Some(t) = l.strip_prefix("I-") {
                if t.is_empty() {
                    return Err(Error::Validation("label \"I-\" has no entity type".into()));
                }
                Ok(l.clone())
            } else {
                Err(Error::Validation(format!("unknown label tag {l:?}")))
            }
        })
        .collect()
}

/// Maximal runs of one I-<type> become one span; O contributes nothing.
pub fn extract_spans_io(labels: &[String]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, l) in labels.iter().enumerate() {
        let t = entity_type_of(l);
        match (&mut open, t) {
            (Some((start, ty)), Some(t)) if ty.as_str() == t => {
                let _ = start;
            }
            (slot, t) => {
                if let Some((start, ty)) = slot.take() {
                    spans.push(Span { start, end: i - 1, entity_type: ty });
                }
                if let Some(t) = t {
                    *slot = Some((i, t.to_string()));
                }
            }
        }
    }
    if let Some((start, ty)) = open {
        spans.push(Span { start, end: labels.len() - 1, entity_type: ty });
    }
    spans
}

/// Renders spans back to an IO label sequence of length `len`.
pub fn spans_to_io(spans: &[Span], len: usize) -> Vec<String> {
    let mut labels = vec!["O".to_string(); len];
    for s in spans {
        for i in s.start..=s.end {
            labels[i] = format!("I-{}", s.entity_type);
        }
    }
    labels
}

/// Reads whitespace-separated CoNLL columns; blank lines separate sentences.
/// `column` picks the label column (`None` means the last column); labels are
/// read as IOB1 and converted to IO. `-DOCSTART-` blocks are dropped.
pub fn load_conll(
    path: impl AsRef<Path>,
    column: Option<usize>,
    partition: Partition,
) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    parse_conll(&text, column, partition)
}

pub fn parse_conll(text: &str, column: Option<usize>, partition: Partition) -> Result<Corpus> {
    if column == Some(0) {
        return Err(Error::Config("label column 0 is the token column".into()));
    }
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut caps: Vec<bool> = Vec::new();

    let mut flush = |tokens: &mut Vec<String>,
                     raw_labels: &mut Vec<String>,
                     caps: &mut Vec<bool>|
     -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let is_docstart = tokens[0] == "-docstart-";
        let labels = convert_iob1_to_io(raw_labels)?;
        let s = Sentence {
            tokens: std::mem::take(tokens),
            labels,
            caps: std::mem::take(caps),
        };
        raw_labels.clear();
        if !is_docstart {
            sentences.push(s);
        }
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            flush(&mut tokens, &mut raw_labels, &mut caps)?;
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(parse(lineno, format!("expected at least 2 columns, found {}", fields.len())));
        }
        let label_idx = match column {
            Some(c) if c >= fields.len() => {
                return Err(parse(
                    lineno,
                    format!("label column {c} out of range for {}-column line", fields.len()),
                ));
            }
            Some(c) => c,
            None => fields.len() - 1,
        };
        let raw = fields[label_idx];
        if raw != "O" && !raw.starts_with("B-") && !raw.starts_with("I-") {
            return Err(parse(lineno, format!("unknown label tag {raw:?}")));
        }
        let word = fields[0];
        caps.push(word.chars().next().is_some_and(char::is_uppercase));
        tokens.push(word.to_lowercase());
        raw_labels.push(raw.to_string());
    }
    flush(&mut tokens, &mut raw_labels, &mut caps)?;
    Corpus::new(sentences, partition)
}

/// Two-column CoNLL text for `corpus`; the initial-capital bit is restored
/// on the token surface so `parse_conll` reproduces the corpus exactly.
pub fn render_conll(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        for i in 0..s.len() {
            let token = if s.caps[i] {
                let mut cs = s.tokens[i].chars();
                match cs.next() {
                    Some(c) => c.to_uppercase().chain(cs).collect(),
                    None => String::new(),
                }
            } else {
                s.tokens[i].clone()
            };
            out.push_str(&token);
            out.push(' ');
            out.push_str(&s.labels[i]);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn write_conll(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_conll(corpus))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub sentences: usize,
    pub len_min: usize,
    pub len_max: usize,
    /// Per-token probability of drawing a marker-suffixed (entity) word.
    pub entity_rate: f64,
    /// Separator between an entity word's stem and its type suffix.
    pub marker: char,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { sentences: 100, len_min: 3, len_max: 10, entity_rate: 0.1, marker: '#' }
    }
}

/// The IO label a synthetic token carries, by the marker rule.
pub fn synthetic_label(token: &str, marker: char) -> String {
    match token.rfind(marker) {
        Some(pos) if pos + marker.len_utf8() < token.len() => {
            format!("I-{}", token[pos + marker.len_utf8()..].to_uppercase())
        }
        _ => "O".to_string(),
    }
}

/// Generates a corpus over the vocabulary of `table`. Labels are a pure
/// function of tokens (the marker rule), so the tagging task is learnable
/// from embeddings alone.
pub fn generate_synthetic(
    cfg: &SyntheticConfig,
    table: &EmbeddingTable,
    partition: Partition,
    seed: u64,
) -> Result<Corpus> {
    if cfg.sentences == 0 {
        return Err(Error::Config("synthetic corpus needs at least one sentence".into()));
    }
    if cfg.len_min == 0 || cfg.len_min > cfg.len_max {
        return Err(Error::Config(format!(
            "bad sentence length range {}..={}",
            cfg.len_min, cfg.len_max
        )));
    }
    if !(0.0..=1.0).contains(&cfg.entity_rate) {
        return Err(Error::Config(format!("entity rate {} outside [0, 1]", cfg.entity_rate)));
    }
    let entity_words: Vec<&String> = table
        .words()
        .iter()
        .filter(|w| synthetic_label(w, cfg.marker) != "O")
        .collect();
    let plain_words: Vec<&String> = table
        .words()
        .iter()
        .filter(|w| synthetic_label(w, cfg.marker) == "O")
        .collect();
    if cfg.entity_rate > 0.0 && entity_words.is_empty() {
        return Err(Error::Config("vocabulary has no marker-suffixed words".into()));
    }
    if cfg.entity_rate < 1.0 && plain_words.is_empty() {
        return Err(Error::Config("vocabulary has no plain words".into()));
    }

    let mut r = rng::stream(seed, "corpus-synthetic");
    let mut sentences = Vec::with_capacity(cfg.sentences);
    for _ in 0..cfg.sentences {
        let n = r.gen_range(cfg.len_min..=cfg.len_max);
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..n {
            let w = if r.gen::<f64>() < cfg.entity_rate {
                entity_words[r.gen_range(0..entity_words.len())]
            } else {
                plain_words[r.gen_range(0..plain_words.len())]
            };
            tokens.push(w.clone());
        }
        let labels = tokens.iter().map(|t| synthetic_label(t, cfg.marker)).collect();
        let caps = vec![false; n];
        sentences.push(Sentence { tokens, labels, caps });
    }
    Corpus::new(sentences, partition)
}
