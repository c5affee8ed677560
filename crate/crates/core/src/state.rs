//! Agent state construction.
//!
//! A sentence is summarized for the agent as three parts, concatenated in a
//! fixed order: a content encoding (wide convolutions of several widths over
//! the token embeddings, ReLU, max-pooled per filter), an uncertainty
//! encoding (one wide convolution over the tagger's per-token marginal
//! distributions, ReLU, mean-pooled), and the tagger's sequence confidence
//! as a final scalar. Encoder parameters belong to the policy and are
//! trained end-to-end through the Q-learning loss, so every forward here has
//! a matching exact backward.

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::embed::EmbeddingTable;
use crate::nncore::{self, ConvLayer, Mat};
use crate::tagger::BaseModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub emb_dim: usize,
    pub content_widths: Vec<usize>,
    pub content_filters: usize,
    pub marginal_width: usize,
    pub marginal_filters: usize,
    /// Height K of the marginal matrices this encoder accepts.
    pub num_labels: usize,
}

impl EncoderConfig {
    /// The reference configuration: 40-dim embeddings, content filter widths
    /// 3/4/5 with 128 filters each, one width-3 marginal filter bank of 20.
    pub fn reference(num_labels: usize) -> Self {
        EncoderConfig {
            emb_dim: 40,
            content_widths: vec![3, 4, 5],
            content_filters: 128,
            marginal_width: 3,
            marginal_filters: 20,
            num_labels,
        }
    }

    pub fn content_out(&self) -> usize {
        self.content_widths.len() * self.content_filters
    }

    /// Content block + marginal block + the confidence scalar.
    pub fn state_len(&self) -> usize {
        self.content_out() + self.marginal_filters + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0
            || self.content_widths.is_empty()
            || self.content_widths.contains(&0)
            || self.content_filters == 0
            || self.marginal_width == 0
            || self.marginal_filters == 0
            || self.num_labels < 2
        {
            return Err(Error::Config("degenerate encoder configuration".into()));
        }
        Ok(())
    }
}

/// Convolution banks owned by the policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateEncoderParams {
    pub content: Vec<ConvLayer>,
    pub marginal: ConvLayer,
}

impl StateEncoderParams {
    pub fn init(cfg: &EncoderConfig, rng: &mut impl rand::Rng) -> Self {
        let content = cfg
            .content_widths
            .iter()
            .map(|&w| ConvLayer::glorot(cfg.emb_dim, w, cfg.content_filters, rng))
            .collect();
        let marginal =
            ConvLayer::glorot(cfg.num_labels, cfg.marginal_width, cfg.marginal_filters, rng);
        StateEncoderParams { content, marginal }
    }

    pub fn param_len(&self) -> usize {
        self.content.iter().map(ConvLayer::param_len).sum::<usize>() + self.marginal.param_len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for c in &self.content {
            c.write_params(out);
        }
        self.marginal.write_params(out);
    }

    pub fn read_params(&mut self, src: &[f64], offset: &mut usize) {
        for c in &mut self.content {
            c.read_params(src, offset);
        }
        self.marginal.read_params(src, offset);
    }
}

/// The concatenated state vector fed to the Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState(pub Vec<f64>);

impl AgentState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Raw per-sentence inputs the encoders run on. Stored in replay transitions
/// so encoder gradients can be recomputed exactly when a transition is
/// replayed later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// emb_dim × n token embedding matrix.
    pub content: Mat,
    /// K × n predictive marginals; each column sums to 1.
    pub marginals: Mat,
    /// n-th root of the best-sequence probability, in (0, 1].
    pub confidence: f64,
}

impl Observation {
    /// What the agent sees for `sentence` under the current tagger.
    pub fn from_model(model: &BaseModel, sentence: &Sentence, table: &EmbeddingTable) -> Self {
        Observation {
            content: content_matrix(sentence, table),
            marginals: model.marginals(sentence, table),
            confidence: model.confidence(sentence, table),
        }
    }
}

/// Token embeddings as columns, emb_dim × n.
pub fn content_matrix(sentence: &Sentence, table: &EmbeddingTable) -> Mat {
    let d = table.dim();
    let mut x = Mat::zeros(d, sentence.len());
    for (t, tok) in sentence.tokens.iter().enumerate() {
        let v = table.lookup(tok);
        for j in 0..d {
            x.set(j, t, v[j]);
        }
    }
    x
}

/// Content block: each conv bank applied with ReLU then max-pooled, results
/// concatenated in bank order.
pub fn encode_content(sentence: &Sentence, table: &EmbeddingTable, banks: &[ConvLayer]) -> Vec<f64> {
    let x = content_matrix(sentence, table);
    let mut h = Vec::new();
    for bank in banks {
        let mut map = bank.forward(&x);
        nncore::relu_inplace(&mut map.data);
        h.extend(nncore::max_pool_rows(&map).0);
    }
    h
}

/// Marginal block: one conv bank with ReLU, mean-pooled. Columns of the
/// marginal matrix must each sum to 1 within 1e-6.
pub fn encode_marginals(marginals: &Mat, bank: &ConvLayer) -> Result<Vec<f64>> {
    validate_marginals(marginals)?;
    let mut map = bank.forward(marginals);
    nncore::relu_inplace(&mut map.data);
    Ok(nncore::mean_pool_rows(&map))
}

fn validate_marginals(marginals: &Mat) -> Result<()> {
    for t in 0..marginals.cols {
        let sum: f64 = (0..marginals.rows).map(|y| marginals.get(y, t)).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "marginal column {t} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

/// Concatenates (h_c, h_e, C) in that order; lengths are checked against the
/// encoder configuration and C must be in (0, 1].
pub fn build_state(h_c: &[f64], h_e: &[f64], confidence: f64, cfg: &EncoderConfig) -> Result<AgentState> {
    if h_c.len() != cfg.content_out() {
        return Err(Error::Shape(format!(
            "content block has length {}, expected {}",
            h_c.len(),
            cfg.content_out()
        )));
    }
    if h_e.len() != cfg.marginal_filters {
        return Err(Error::Shape(format!(
            "marginal block has length {}, expected {}",
            h_e.len(),
            cfg.marginal_filters
        )));
    }
    if !(confidence > 0.0 && confidence <= 1.0) {
        return Err(Error::Validation(format!("confidence {confidence} outside (0, 1]")));
    }
    let mut v = Vec::with_capacity(cfg.state_len());
    v.extend_from_slice(h_c);
    v.extend_from_slice(h_e);
    v.push(confidence);
    Ok(AgentState(v))
}

/// Forward caches needed to backpropagate a state gradient into the encoder
/// parameters.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub state: AgentState,
    /// Pre-activation feature map per content bank.
    content_pre: Vec<Mat>,
    /// Winning column per filter row, per content bank.
    content_idx: Vec<Vec<usize>>,
    marginal_pre: Mat,
}

/// Full state encoding with caches kept for [`encode_backward`].
pub fn encode_observation(
    obs: &Observation,
    enc: &StateEncoderParams,
    cfg: &EncoderConfig,
) -> Result<EncodeCache> {
    if obs.content.rows != cfg.emb_dim {
        return Err(Error::Shape(format!(
            "content matrix height {}, encoder expects {}",
            obs.content.rows, cfg.emb_dim
        )));
    }
    if obs.marginals.rows != cfg.num_labels {
        return Err(Error::Shape(format!(
            "marginal matrix height {}, encoder expects {}",
            obs.marginals.rows, cfg.num_labels
        )));
    }
    validate_marginals(&obs.marginals)?;
    let mut h_c = Vec::with_capacity(cfg.content_out());
    let mut content_pre = Vec::with_capacity(enc.content.len());
    let mut content_idx = Vec::with_capacity(enc.content.len());
    for bank in &enc.content {
        let pre = bank.forward(&obs.content);
        let mut act = pre.clone();
        nncore::relu_inplace(&mut act.data);
        let (vals, idxs) = nncore::max_pool_rows(&act);
        h_c.extend(vals);
        content_pre.push(pre);
        content_idx.push(idxs);
    }
    let marginal_pre = enc.marginal.forward(&obs.marginals);
    let mut act = marginal_pre.clone();
    nncore::relu_inplace(&mut act.data);
    let h_e = nncore::mean_pool_rows(&act);
    let state = build_state(&h_c, &h_e, obs.confidence, cfg)?;
    Ok(EncodeCache { state, content_pre, content_idx, marginal_pre })
}

/// Accumulates d(loss)/d(encoder params) into `grads` (laid out as in
/// [`StateEncoderParams::write_params`]) given the gradient at the state
/// vector. The confidence slot carries no parameters and is ignored.
pub fn encode_backward(
    obs: &Observation,
    enc: &StateEncoderParams,
    cache: &EncodeCache,
    dstate: &[f64],
    grads: &mut [f64],
) {
    assert_eq!(dstate.len(), cache.state.len(), "state gradient length mismatch");
    assert_eq!(grads.len(), enc.param_len(), "encoder gradient length mismatch");
    let mut offset = 0;
    let mut grad_off = 0;
    for (b, bank) in enc.content.iter().enumerate() {
        let rows = bank.out_dim;
        let cols = cache.content_pre[b].cols;
        let dvals = &dstate[offset..offset + rows];
        let mut dpre = nncore::max_pool_backward(dvals, &cache.content_idx[b], rows, cols);
        mask_relu(&mut dpre, &cache.content_pre[b]);
        let (dw, db) = split_grad(&mut grads[grad_off..grad_off + bank.param_len()], bank.w.len());
        bank.backward(&obs.content, &dpre, dw, db, None);
        offset += rows;
        grad_off += bank.param_len();
    }
    let bank = &enc.marginal;
    let rows = bank.out_dim;
    let cols = cache.marginal_pre.cols;
    let dvals = &dstate[offset..offset + rows];
    let mut dpre = nncore::mean_pool_backward(dvals, rows, cols);
    mask_relu(&mut dpre, &cache.marginal_pre);
    let (dw, db) = split_grad(&mut grads[grad_off..grad_off + bank.param_len()], bank.w.len());
    bank.backward(&obs.marginals, &dpre, dw, db, None);
}

fn mask_relu(d: &mut Mat, pre: &Mat) {
    for (g, p) in d.data.iter_mut().zip(&pre.data) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

fn split_grad(seg: &mut [f64], nw: usize) -> (&mut [f64], &mut [f64]) {
    seg.split_at_mut(nw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn uniform_marginals(k: usize, n: usize) -> Mat {
        Mat::from_vec(k, n, vec![1.0 / k as f64; k * n])
    }

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            emb_dim: 3,
            content_widths: vec![2, 3],
            content_filters: 4,
            marginal_width: 2,
            marginal_filters: 5,
            num_labels: 2,
        }
    }

    fn random_obs(cfg: &EncoderConfig, n: usize, seed: u64) -> Observation {
        let mut r = rng::stream(seed, "state-obs");
        let content = Mat::from_vec(
            cfg.emb_dim,
            n,
            (0..cfg.emb_dim * n).map(|_| r.gen_range(-1.0..1.0)).collect(),
        );
        let mut marginals = Mat::zeros(cfg.num_labels, n);
        for t in 0..n {
            let raw: Vec<f64> = (0..cfg.num_labels).map(|_| r.gen_range(0.1..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            for y in 0..cfg.num_labels {
                marginals.set(y, t, raw[y] / sum);
            }
        }
        Observation { content, marginals, confidence: r.gen_range(0.1..1.0) }
    }

    #[test]
    fn reference_config_dimensions() {
        let cfg = EncoderConfig::reference(5);
        assert_eq!(cfg.content_out(), 384);
        assert_eq!(cfg.marginal_filters, 20);
        assert_eq!(cfg.state_len(), 405);
    }

    #[test]
    fn zero_content_params_give_zero_block() {
        let cfg = EncoderConfig::reference(3);
        let mut r = rng::stream(1, "zero-content");
        let mut enc = StateEncoderParams::init(&cfg, &mut r);
        for bank in &mut enc.content {
            bank.w.iter_mut().for_each(|w| *w = 0.0);
            bank.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let table = crate::embed::EmbeddingTable::from_entries(
            40,
            vec![("a".into(), vec![0.3; 40]), ("b".into(), vec![-0.2; 40])],
        )
        .unwrap();
        let s = Sentence {
            tokens: vec!["a".into(), "b".into()],
            labels: vec!["O".into(), "O".into()],
            caps: vec![false, false],
        };
        let h = encode_content(&s, &table, &enc.content);
        assert_eq!(h.len(), 384);
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn content_length_is_constant_across_sentence_lengths() {
        let cfg = EncoderConfig::reference(2);
        let mut r = rng::stream(2, "content-len");
        let enc = StateEncoderParams::init(&cfg, &mut r);
        let table = crate::embed::EmbeddingTable::from_entries(
            40,
            vec![("a".into(), vec![0.1; 40])],
        )
        .unwrap();
        for n in [1, 2, 5, 11] {
            let s = Sentence {
                tokens: vec!["a".into(); n],
                labels: vec!["O".into(); n],
                caps: vec![false; n],
            };
            assert_eq!(encode_content(&s, &table, &enc.content).len(), 384);
        }
    }

    #[test]
    fn single_token_content_matches_window_oracle() {
        // One token, width 2: output column 0 sees the token through tap 1,
        // column 1 through tap 0 (the other tap lands on zero padding).
        // Weights are [filter][in_row][tap], so tap 0 is (1, 2) and tap 1 is
        // (-1, 0.5) over the two input rows.
        let bank = ConvLayer {
            in_dim: 2,
            width: 2,
            out_dim: 1,
            w: vec![1.0, -1.0, 2.0, 0.5],
            b: vec![0.1],
        };
        let table = crate::embed::EmbeddingTable::from_entries(
            2,
            vec![("a".into(), vec![0.4, 0.3])],
        )
        .unwrap();
        let s = Sentence { tokens: vec!["a".into()], labels: vec!["O".into()], caps: vec![false] };
        let h = encode_content(&s, &table, std::slice::from_ref(&bank));
        let col0: f64 = -1.0 * 0.4 + 0.5 * 0.3 + 0.1;
        let col1: f64 = 1.0 * 0.4 + 2.0 * 0.3 + 0.1;
        assert_eq!(h, vec![col0.max(0.0).max(col1.max(0.0))]);
    }

    #[test]
    fn marginal_block_examples() {
        let cfg = small_cfg();
        let mut r = rng::stream(3, "marg");
        let enc = StateEncoderParams::init(&cfg, &mut r);
        let mut zero = enc.marginal.clone();
        zero.w.iter_mut().for_each(|w| *w = 0.0);
        zero.b.iter_mut().for_each(|b| *b = 0.0);
        let m = uniform_marginals(2, 4);
        assert_eq!(encode_marginals(&m, &zero).unwrap(), vec![0.0; 5]);
        for n in [1, 3, 9] {
            assert_eq!(encode_marginals(&uniform_marginals(2, n), &enc.marginal).unwrap().len(), 5);
        }
    }

    #[test]
    fn marginal_block_matches_window_sums() {
        let bank = ConvLayer { in_dim: 2, width: 2, out_dim: 1, w: vec![1.0, 1.0, 1.0, 1.0], b: vec![0.0] };
        // Uniform columns: each full window sums to 2, each half-window
        // (over the zero pad) to 1; mean over n+1 windows of n tokens.
        let m = uniform_marginals(2, 3);
        let got = encode_marginals(&m, &bank).unwrap();
        let want = (1.0 + 2.0 + 2.0 + 1.0) / 4.0;
        assert!((got[0] - want).abs() < 1e-12);
    }

    #[test]
    fn invalid_marginal_columns_rejected() {
        let cfg = small_cfg();
        let mut r = rng::stream(4, "invalid-marg");
        let enc = StateEncoderParams::init(&cfg, &mut r);
        let bad = Mat::from_vec(2, 2, vec![0.9, 0.5, 0.2, 0.3]);
        assert!(encode_marginals(&bad, &enc.marginal).is_err());
    }

    #[test]
    fn build_state_layout() {
        let cfg = EncoderConfig::reference(2);
        let s = build_state(&vec![0.0; 384], &vec![0.0; 20], 1.0, &cfg).unwrap();
        assert_eq!(s.len(), 405);
        assert!(s.0[..404].iter().all(|&v| v == 0.0));
        assert_eq!(s.0[404], 1.0);
        assert!(build_state(&vec![0.0; 100], &vec![0.0; 20], 1.0, &cfg).is_err());
        assert!(build_state(&vec![0.0; 384], &vec![0.0; 20], 0.0, &cfg).is_err());
        assert!(build_state(&vec![0.0; 384], &vec![0.0; 20], 1.5, &cfg).is_err());
    }

    #[test]
    fn build_state_preserves_order() {
        let cfg = small_cfg();
        let mut h_c = vec![0.0; cfg.content_out()];
        h_c[0] = 1.0;
        let a = build_state(&h_c, &vec![0.0; 5], 0.5, &cfg).unwrap();
        h_c[0] = 0.0;
        h_c[1] = 1.0;
        let b = build_state(&h_c, &vec![0.0; 5], 0.5, &cfg).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn reference_state_length_is_405() {
        for k in [2usize, 5, 9] {
            let cfg = EncoderConfig::reference(k);
            let mut r = rng::stream(k as u64, "len-check");
            let enc = StateEncoderParams::init(&cfg, &mut r);
            for n in [1usize, 4, 17] {
                let obs = random_obs(&cfg, n, n as u64);
                let cache = encode_observation(&obs, &enc, &cfg).unwrap();
                assert_eq!(cache.state.len(), 405);
            }
        }
    }

    #[test]
    fn encoder_backward_matches_finite_differences() {
        let cfg = small_cfg();
        let mut r = rng::stream(9, "enc-fd");
        let enc = StateEncoderParams::init(&cfg, &mut r);
        let obs = random_obs(&cfg, 4, 31);
        let probe: Vec<f64> = (0..cfg.state_len()).map(|_| r.gen_range(-1.0..1.0)).collect();

        let cache = encode_observation(&obs, &enc, &cfg).unwrap();
        let mut grads = vec![0.0; enc.param_len()];
        encode_backward(&obs, &enc, &cache, &probe, &mut grads);

        let mut flat = Vec::new();
        enc.write_params(&mut flat);
        let err = nncore::grad_check(
            |p| {
                let mut e = enc.clone();
                let mut off = 0;
                e.read_params(p, &mut off);
                let c = encode_observation(&obs, &e, &cfg).unwrap();
                nncore::dot(c.state.as_slice(), &probe)
            },
            &flat,
            &grads,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "encoder grad err {err}");
    }
}
