//! Retrainable base taggers.
//!
//! Two interchangeable sequence labelers sit behind [`BaseModel`]: a
//! linear-chain CRF (emission scores from fixed word embeddings plus a
//! casing bit, dense label-transition weights, exact forward-backward and
//! Viterbi inference) and an independent per-token window classifier over
//! the same embeddings. Both expose per-token marginals, the most probable
//! sequence with its exact probability, and the per-sentence confidence
//! used in the agent state.
//!
//! Training is full-batch gradient ascent on the L2-regularized
//! log-likelihood, warm-started from the current parameters; the best
//! objective seen is restored at the end, so retraining never worsens the
//! training objective.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::embed::EmbeddingTable;
use crate::nncore::{self, AdamParams, AdamState, Mat};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Crf,
    Window,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Crf => "crf",
            ModelKind::Window => "window",
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainParams {
    pub l2: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Relative objective-change threshold that stops an epoch loop early.
    pub tol: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { l2: 0.1, learning_rate: 0.1, max_epochs: 30, tol: 1e-4 }
    }
}

/// Insertion-ordered collection of annotated sentences; duplicates allowed.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    items: Vec<Sentence>,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_sentences(items: Vec<Sentence>) -> Self {
        LabeledSet { items }
    }

    pub fn push(&mut self, s: Sentence) {
        self.items.push(s);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Sentence] {
        &self.items
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseModel {
    kind: ModelKind,
    labels: Vec<String>,
    emb_dim: usize,
    /// CRF: K×d emission weights then K×K transitions. Window: K×d weights.
    params: Vec<f64>,
    hyper: TrainParams,
}

impl BaseModel {
    /// Randomly initialized model over `labels` (the full label set, size
    /// K ≥ 2); same seed, same parameters.
    pub fn init(
        kind: ModelKind,
        labels: Vec<String>,
        table: &EmbeddingTable,
        hyper: TrainParams,
        seed: u64,
    ) -> Result<Self> {
        let k = labels.len();
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 labels, got {k}")));
        }
        for i in 0..k {
            if labels[i + 1..].contains(&labels[i]) {
                return Err(Error::Config(format!("duplicate label {:?}", labels[i])));
            }
        }
        let emb_dim = table.dim();
        let d = feature_dim(kind, emb_dim);
        let n_params = k * d + if kind == ModelKind::Crf { k * k } else { 0 };
        let mut r = rng::stream(seed, "model-init");
        let params = nncore::glorot_uniform(d, k, n_params, &mut r);
        Ok(BaseModel { kind, labels, emb_dim, params, hyper })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn hyper(&self) -> &TrainParams {
        &self.hyper
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Digest of the full serialized model; any parameter change shows up.
    pub fn checksum(&self) -> u64 {
        let json = serde_json::to_string(self).expect("model serializes");
        rng::fnv1a64(json.as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("serialize model: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        let model: BaseModel = serde_json::from_str(&json)
            .map_err(|e| Error::Checkpoint(format!("deserialize model: {e}")))?;
        let d = feature_dim(model.kind, model.emb_dim);
        let k = model.labels.len();
        let expect = k * d + if model.kind == ModelKind::Crf { k * k } else { 0 };
        if model.params.len() != expect || k < 2 {
            return Err(Error::Checkpoint(format!(
                "model shape mismatch: {} params for K={k}, d={d}",
                model.params.len()
            )));
        }
        Ok(model)
    }

    fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Validation(format!("label {label:?} not in model inventory")))
    }

    fn feature_matrix(&self, s: &Sentence, table: &EmbeddingTable) -> Mat {
        assert_eq!(table.dim(), self.emb_dim, "embedding table dimension mismatch");
        match self.kind {
            ModelKind::Crf => {
                let d = self.emb_dim + 1;
                let mut f = Mat::zeros(d, s.len());
                for t in 0..s.len() {
                    let v = table.lookup(&s.tokens[t]);
                    for j in 0..self.emb_dim {
                        f.set(j, t, v[j]);
                    }
                    f.set(self.emb_dim, t, if s.caps[t] { 1.0 } else { 0.0 });
                }
                f
            }
            ModelKind::Window => {
                let e = self.emb_dim;
                let d = 3 * e + 1;
                let mut f = Mat::zeros(d, s.len());
                for t in 0..s.len() {
                    for (slot, pos) in [t.checked_sub(1), Some(t), t.checked_add(1)]
                        .into_iter()
                        .enumerate()
                    {
                        let Some(p) = pos else { continue };
                        if p >= s.len() {
                            continue;
                        }
                        let v = table.lookup(&s.tokens[p]);
                        for j in 0..e {
                            f.set(slot * e + j, t, v[j]);
                        }
                    }
                    f.set(3 * e, t, if s.caps[t] { 1.0 } else { 0.0 });
                }
                f
            }
        }
    }

    fn emission_scores(&self, feats: &Mat) -> Mat {
        let k = self.num_labels();
        let d = feats.rows;
        let n = feats.cols;
        let mut emis = Mat::zeros(k, n);
        for y in 0..k {
            let w = &self.params[y * d..(y + 1) * d];
            for t in 0..n {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += w[j] * feats.get(j, t);
                }
                emis.set(y, t, acc);
            }
        }
        emis
    }

    #[inline]
    fn trans(&self, a: usize, b: usize) -> f64 {
        let k = self.num_labels();
        let d = feature_dim(self.kind, self.emb_dim);
        self.params[k * d + a * k + b]
    }

    /// Per-token predictive marginals, K × n; every column sums to 1.
    pub fn marginals(&self, s: &Sentence, table: &EmbeddingTable) -> Mat {
        let feats = self.feature_matrix(s, table);
        let emis = self.emission_scores(&feats);
        match self.kind {
            ModelKind::Window => {
                let k = self.num_labels();
                let mut m = Mat::zeros(k, s.len());
                for t in 0..s.len() {
                    let p = nncore::softmax(&emis.col_vec(t));
                    for y in 0..k {
                        m.set(y, t, p[y]);
                    }
                }
                m
            }
            ModelKind::Crf => {
                let (alpha, beta, logz) = self.forward_backward(&emis);
                let k = self.num_labels();
                let mut m = Mat::zeros(k, s.len());
                for t in 0..s.len() {
                    for y in 0..k {
                        m.set(y, t, (alpha.get(y, t) + beta.get(y, t) - logz).exp());
                    }
                }
                m
            }
        }
    }

    /// Log-space forward/backward tables and the log partition function.
    fn forward_backward(&self, emis: &Mat) -> (Mat, Mat, f64) {
        let k = self.num_labels();
        let n = emis.cols;
        let mut alpha = Mat::zeros(k, n);
        for y in 0..k {
            alpha.set(y, 0, emis.get(y, 0));
        }
        let mut scratch = vec![0.0; k];
        for t in 1..n {
            for y in 0..k {
                for (a, s) in scratch.iter_mut().enumerate() {
                    *s = alpha.get(a, t - 1) + self.trans(a, y);
                }
                alpha.set(y, t, emis.get(y, t) + nncore::logsumexp(&scratch));
            }
        }
        let mut beta = Mat::zeros(k, n);
        for t in (0..n.saturating_sub(1)).rev() {
            for y in 0..k {
                for (b, s) in scratch.iter_mut().enumerate() {
                    *s = self.trans(y, b) + emis.get(b, t + 1) + beta.get(b, t + 1);
                }
                beta.set(y, t, nncore::logsumexp(&scratch));
            }
        }
        let logz = nncore::logsumexp(&alpha.col_vec(n - 1));
        (alpha, beta, logz)
    }

    /// Most probable label sequence and its exact probability. Score ties
    /// resolve toward the lowest label index at every step.
    pub fn best_sequence(&self, s: &Sentence, table: &EmbeddingTable) -> (Vec<String>, f64) {
        let feats = self.feature_matrix(s, table);
        let emis = self.emission_scores(&feats);
        let k = self.num_labels();
        let n = s.len();
        match self.kind {
            ModelKind::Window => {
                let mut labels = Vec::with_capacity(n);
                let mut logp = 0.0;
                for t in 0..n {
                    let p = nncore::softmax(&emis.col_vec(t));
                    let y = nncore::argmax(&p);
                    labels.push(self.labels[y].clone());
                    logp += p[y].ln();
                }
                (labels, logp.exp())
            }
            ModelKind::Crf => {
                let mut delta = Mat::zeros(k, n);
                let mut ptr = vec![vec![0usize; k]; n];
                for y in 0..k {
                    delta.set(y, 0, emis.get(y, 0));
                }
                for t in 1..n {
                    for y in 0..k {
                        let mut best_a = 0;
                        let mut best = delta.get(0, t - 1) + self.trans(0, y);
                        for a in 1..k {
                            let v = delta.get(a, t - 1) + self.trans(a, y);
                            if v > best {
                                best = v;
                                best_a = a;
                            }
                        }
                        delta.set(y, t, emis.get(y, t) + best);
                        ptr[t][y] = best_a;
                    }
                }
                let mut y = nncore::argmax(&delta.col_vec(n - 1));
                let best_score = delta.get(y, n - 1);
                let mut idx = vec![0usize; n];
                for t in (0..n).rev() {
                    idx[t] = y;
                    if t > 0 {
                        y = ptr[t][y];
                    }
                }
                let (_, _, logz) = self.forward_backward(&emis);
                let labels = idx.iter().map(|&i| self.labels[i].clone()).collect();
                (labels, (best_score - logz).exp())
            }
        }
    }

    /// n-th root of the best-sequence probability, in (0, 1].
    pub fn confidence(&self, s: &Sentence, table: &EmbeddingTable) -> f64 {
        let (_, p) = self.best_sequence(s, table);
        (p.ln() / s.len() as f64).exp()
    }

    /// Regularized log-likelihood of `gold` for one sentence and its exact
    /// gradient in parameter order; `l2 = 0` gives the pure data term.
    pub fn loglik_and_grad(
        &self,
        s: &Sentence,
        table: &EmbeddingTable,
        l2: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let gold: Vec<usize> =
            s.labels.iter().map(|l| self.label_index(l)).collect::<Result<_>>()?;
        let feats = self.feature_matrix(s, table);
        let emis = self.emission_scores(&feats);
        let k = self.num_labels();
        let d = feats.rows;
        let n = s.len();
        let mut grad = vec![0.0; self.params.len()];
        let mut value;
        match self.kind {
            ModelKind::Window => {
                value = 0.0;
                for t in 0..n {
                    let p = nncore::softmax(&emis.col_vec(t));
                    value += p[gold[t]].ln();
                    for y in 0..k {
                        let coeff = if y == gold[t] { 1.0 } else { 0.0 } - p[y];
                        for j in 0..d {
                            grad[y * d + j] += coeff * feats.get(j, t);
                        }
                    }
                }
            }
            ModelKind::Crf => {
                let (alpha, beta, logz) = self.forward_backward(&emis);
                let mut score = emis.get(gold[0], 0);
                for t in 1..n {
                    score += self.trans(gold[t - 1], gold[t]) + emis.get(gold[t], t);
                }
                value = score - logz;
                for t in 0..n {
                    for y in 0..k {
                        let m = (alpha.get(y, t) + beta.get(y, t) - logz).exp();
                        let coeff = if y == gold[t] { 1.0 } else { 0.0 } - m;
                        for j in 0..d {
                            grad[y * d + j] += coeff * feats.get(j, t);
                        }
                    }
                }
                let toff = k * d;
                for t in 1..n {
                    for a in 0..k {
                        for b in 0..k {
                            let q = (alpha.get(a, t - 1)
                                + self.trans(a, b)
                                + emis.get(b, t)
                                + beta.get(b, t)
                                - logz)
                                .exp();
                            let emp = if gold[t - 1] == a && gold[t] == b { 1.0 } else { 0.0 };
                            grad[toff + a * k + b] += emp - q;
                        }
                    }
                }
            }
        }
        if l2 != 0.0 {
            value -= 0.5 * l2 * nncore::l2_norm_sq(&self.params);
            for (g, p) in grad.iter_mut().zip(&self.params) {
                *g -= l2 * p;
            }
        }
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite log-likelihood".into()));
        }
        Ok((value, grad))
    }

    /// Training objective on a set: summed log-likelihood minus one L2
    /// penalty at the model's configured strength.
    pub fn objective(&self, set: &LabeledSet, table: &EmbeddingTable) -> Result<f64> {
        Ok(self.objective_and_grad(set, table)?.0)
    }

    fn objective_and_grad(
        &self,
        set: &LabeledSet,
        table: &EmbeddingTable,
    ) -> Result<(f64, Vec<f64>)> {
        let mut value = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for s in set.items() {
            let (v, g) = self.loglik_and_grad(s, table, 0.0)?;
            value += v;
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x;
            }
        }
        let l2 = self.hyper.l2;
        value -= 0.5 * l2 * nncore::l2_norm_sq(&self.params);
        for (g, p) in grad.iter_mut().zip(&self.params) {
            *g -= l2 * p;
        }
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite training objective".into()));
        }
        Ok((value, grad))
    }

    /// Full-batch re-fit on `set`, warm-started from the current parameters.
    /// An empty set leaves the model untouched. The parameters with the best
    /// objective seen are kept, so the training objective never drops below
    /// its pre-training value.
    pub fn train(&mut self, set: &LabeledSet, table: &EmbeddingTable) -> Result<()> {
        if set.is_empty() {
            return Ok(());
        }
        let original = self.params.clone();
        match self.train_inner(set, table) {
            Ok(()) => Ok(()),
            Err(e) => {
                self.params = original;
                Err(e)
            }
        }
    }

    fn train_inner(&mut self, set: &LabeledSet, table: &EmbeddingTable) -> Result<()> {
        let (mut prev, mut grad) = self.objective_and_grad(set, table)?;
        let mut best_value = prev;
        let mut best_params = self.params.clone();
        let mut adam = AdamState::new(self.params.len());
        let hp = AdamParams::with_alpha(self.hyper.learning_rate);
        let mut ascent = vec![0.0; grad.len()];
        for _ in 0..self.hyper.max_epochs {
            for (a, g) in ascent.iter_mut().zip(&grad) {
                *a = -g;
            }
            adam.step(&mut self.params, &ascent, &hp)?;
            let (value, g) = self.objective_and_grad(set, table)?;
            if value > best_value {
                best_value = value;
                best_params.copy_from_slice(&self.params);
            }
            let rel = (value - prev).abs() / prev.abs().max(1.0);
            prev = value;
            grad = g;
            if rel < self.hyper.tol {
                break;
            }
        }
        self.params = best_params;
        Ok(())
    }
}

fn feature_dim(kind: ModelKind, emb_dim: usize) -> usize {
    match kind {
        ModelKind::Crf => emb_dim + 1,
        ModelKind::Window => 3 * emb_dim + 1,
    }
}
