//! Small dense/convolutional building blocks.
//!
//! Everything here is plain `f64` on flat buffers: the models in this crate
//! are small enough that clarity and exact reproducibility matter more than
//! throughput. Layers own their parameters and expose flat read/write so
//! optimizers and gradient checks can treat a whole network as one vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col_vec(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// `ln Σ exp(x_i)`, stable for large magnitudes. Empty input gives `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lz = logsumexp(xs);
    xs.iter().map(|&x| (x - lz).exp()).collect()
}

/// Index of the maximum; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm_sq(xs: &[f64]) -> f64 {
    xs.iter().map(|&x| x * x).sum()
}

pub fn relu_inplace(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Uniform draw from `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Convolution over a sequence of column vectors, "wide" style: the input is
/// zero-padded by `width - 1` columns on each side, so an `n`-column input
/// yields `n + width - 1` output columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_dim: usize,
    pub width: usize,
    pub out_dim: usize,
    /// Indexed `[filter][in_row][tap]`, flattened.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ConvLayer {
    pub fn glorot(in_dim: usize, width: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let fan = in_dim * width;
        let w = glorot_uniform(fan, out_dim * width, out_dim * fan, rng);
        ConvLayer { in_dim, width, out_dim, w, b: vec![0.0; out_dim] }
    }

    #[inline]
    fn w_at(&self, f: usize, i: usize, t: usize) -> f64 {
        self.w[(f * self.in_dim + i) * self.width + t]
    }

    pub fn out_cols(&self, n: usize) -> usize {
        n + self.width - 1
    }

    /// Pre-activation feature map, `out_dim × (n + width - 1)`.
    pub fn forward(&self, x: &Mat) -> Mat {
        assert_eq!(x.rows, self.in_dim, "conv input row mismatch");
        let n = x.cols;
        let m = self.out_cols(n);
        let mut out = Mat::zeros(self.out_dim, m);
        for f in 0..self.out_dim {
            for j in 0..m {
                let mut acc = self.b[f];
                for t in 0..self.width {
                    // Input column under tap t at output position j; the
                    // first width-1 positions hang over the left zero pad.
                    let k = (j + t + 1).wrapping_sub(self.width);
                    if k < n {
                        for i in 0..self.in_dim {
                            acc += self.w_at(f, i, t) * x.get(i, k);
                        }
                    }
                }
                out.set(f, j, acc);
            }
        }
        out
    }

    /// Accumulates parameter gradients into `dw`/`db` (laid out like `w`/`b`)
    /// and, when given, the input gradient into `dx`.
    pub fn backward(
        &self,
        x: &Mat,
        dout: &Mat,
        dw: &mut [f64],
        db: &mut [f64],
        mut dx: Option<&mut Mat>,
    ) {
        let n = x.cols;
        debug_assert_eq!(dout.rows, self.out_dim);
        debug_assert_eq!(dout.cols, self.out_cols(n));
        debug_assert_eq!(dw.len(), self.w.len());
        debug_assert_eq!(db.len(), self.b.len());
        for f in 0..self.out_dim {
            for j in 0..dout.cols {
                let g = dout.get(f, j);
                if g == 0.0 {
                    continue;
                }
                db[f] += g;
                for t in 0..self.width {
                    let k = (j + t + 1).wrapping_sub(self.width);
                    if k < n {
                        for i in 0..self.in_dim {
                            dw[(f * self.in_dim + i) * self.width + t] += g * x.get(i, k);
                            if let Some(dx) = dx.as_deref_mut() {
                                dx.add_at(i, k, g * self.w_at(f, i, t));
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn param_len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.b);
    }

    pub fn read_params(&mut self, src: &[f64], offset: &mut usize) {
        let nw = self.w.len();
        self.w.copy_from_slice(&src[*offset..*offset + nw]);
        *offset += nw;
        let nb = self.b.len();
        self.b.copy_from_slice(&src[*offset..*offset + nb]);
        *offset += nb;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, xs: &mut [f64]) {
        if self == Activation::Relu {
            relu_inplace(xs);
        }
    }
}

/// Fully connected layer, `y = act(W x + b)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Indexed `[out][in]`, flattened.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let w = glorot_uniform(in_dim, out_dim, in_dim * out_dim, rng);
        DenseLayer { in_dim, out_dim, w, b: vec![0.0; out_dim], activation }
    }

    fn forward_linear(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "dense input length mismatch");
        (0..self.out_dim)
            .map(|o| self.b[o] + dot(&self.w[o * self.in_dim..(o + 1) * self.in_dim], x))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.forward_linear(x);
        self.activation.apply(&mut y);
        y
    }

    /// `dout` is the gradient at the layer output (post-activation).
    pub fn backward(
        &self,
        x: &[f64],
        dout: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        mut dx: Option<&mut [f64]>,
    ) {
        debug_assert_eq!(dout.len(), self.out_dim);
        debug_assert_eq!(dw.len(), self.w.len());
        let pre = self.forward_linear(x);
        for o in 0..self.out_dim {
            let g = match self.activation {
                Activation::Relu if pre[o] <= 0.0 => 0.0,
                _ => dout[o],
            };
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            for i in 0..self.in_dim {
                dw[o * self.in_dim + i] += g * x[i];
                if let Some(dx) = dx.as_deref_mut() {
                    dx[i] += g * self.w[o * self.in_dim + i];
                }
            }
        }
    }

    pub fn param_len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.b);
    }

    pub fn read_params(&mut self, src: &[f64], offset: &mut usize) {
        let nw = self.w.len();
        self.w.copy_from_slice(&src[*offset..*offset + nw]);
        *offset += nw;
        let nb = self.b.len();
        self.b.copy_from_slice(&src[*offset..*offset + nb]);
        *offset += nb;
    }
}

/// Max over columns for each row; returns the pooled vector and the winning
/// column per row (first column wins ties) for the backward pass.
pub fn max_pool_rows(m: &Mat) -> (Vec<f64>, Vec<usize>) {
    assert!(m.cols > 0, "max pool over empty matrix");
    let mut vals = Vec::with_capacity(m.rows);
    let mut idxs = Vec::with_capacity(m.rows);
    for r in 0..m.rows {
        let row = m.row(r);
        let i = argmax(row);
        vals.push(row[i]);
        idxs.push(i);
    }
    (vals, idxs)
}

pub fn max_pool_backward(dvec: &[f64], idxs: &[usize], rows: usize, cols: usize) -> Mat {
    let mut dm = Mat::zeros(rows, cols);
    for r in 0..rows {
        dm.add_at(r, idxs[r], dvec[r]);
    }
    dm
}

/// Mean over columns for each row.
pub fn mean_pool_rows(m: &Mat) -> Vec<f64> {
    assert!(m.cols > 0, "mean pool over empty matrix");
    (0..m.rows).map(|r| m.row(r).iter().sum::<f64>() / m.cols as f64).collect()
}

pub fn mean_pool_backward(dvec: &[f64], rows: usize, cols: usize) -> Mat {
    let mut dm = Mat::zeros(rows, cols);
    for r in 0..rows {
        let g = dvec[r] / cols as f64;
        for c in 0..cols {
            dm.set(r, c, g);
        }
    }
    dm
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { alpha: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_alpha(alpha: f64) -> Self {
        AdamParams { alpha, ..Default::default() }
    }
}

/// Per-parameter first/second moment accumulators with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// One minimization step: `params -= alpha * m_hat / (sqrt(v_hat) + eps)`.
    /// A non-finite gradient aborts the update with params untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], hp: &AdamParams) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "adam state length mismatch");
        assert_eq!(grad.len(), self.m.len(), "adam grad length mismatch");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient in adam step".into()));
        }
        self.t += 1;
        let b1t = 1.0 - hp.beta1.powi(self.t as i32);
        let b2t = 1.0 - hp.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * g;
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= hp.alpha * mhat / (vhat.sqrt() + hp.eps);
        }
        Ok(())
    }
}

/// Largest relative error between `analytic` and central finite differences
/// of `f` at `params`; per coordinate the error is
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<f64> {
    assert_eq!(params.len(), analytic.len());
    assert!(h > 0.0);
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = f(&theta);
        theta[i] = orig - h;
        let down = f(&theta);
        theta[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at coordinate {i}")));
        }
        let num = (up - down) / (2.0 * h);
        let err = (num - analytic[i]).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Reference convolution: materialize the zero-padded input, then take
    /// plain per-window dot products.
    fn conv_oracle(layer: &ConvLayer, x: &Mat) -> Mat {
        let pad = layer.width - 1;
        let mut padded = Mat::zeros(layer.in_dim, x.cols + 2 * pad);
        for r in 0..x.rows {
            for c in 0..x.cols {
                padded.set(r, c + pad, x.get(r, c));
            }
        }
        let mut out = Mat::zeros(layer.out_dim, x.cols + pad);
        for f in 0..layer.out_dim {
            for j in 0..out.cols {
                let mut acc = layer.b[f];
                for t in 0..layer.width {
                    for i in 0..layer.in_dim {
                        acc += layer.w[(f * layer.in_dim + i) * layer.width + t]
                            * padded.get(i, j + t);
                    }
                }
                out.set(f, j, acc);
            }
        }
        out
    }

    #[test]
    fn wide_conv_hand_example() {
        let layer = ConvLayer { in_dim: 1, width: 2, out_dim: 1, w: vec![1.0, 1.0], b: vec![0.0] };
        let x = Mat::from_vec(1, 3, vec![1.0, 2.0, 3.0]);
        let out = layer.forward(&x);
        assert_eq!(out.cols, 4);
        assert_eq!(out.data, vec![1.0, 3.0, 5.0, 3.0]);
    }

    #[test]
    fn wide_conv_zero_params_zero_output() {
        let layer = ConvLayer { in_dim: 2, width: 3, out_dim: 2, w: vec![0.0; 12], b: vec![0.0; 2] };
        let x = Mat::from_vec(2, 4, (0..8).map(|v| v as f64).collect());
        let mut out = layer.forward(&x);
        relu_inplace(&mut out.data);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wide_conv_matches_padded_window_oracle() {
        let mut r = rng::stream(11, "conv-oracle");
        let layer = ConvLayer::glorot(3, 3, 4, &mut r);
        let x = Mat::from_vec(3, 5, (0..15).map(|_| r.gen_range(-1.0..1.0)).collect());
        let got = layer.forward(&x);
        let want = conv_oracle(&layer, &x);
        assert_eq!(got.rows, want.rows);
        assert_eq!(got.cols, want.cols);
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut r = rng::stream(11, "conv-fd");
        let layer = ConvLayer::glorot(3, 3, 4, &mut r);
        let x = Mat::from_vec(3, 5, (0..15).map(|_| r.gen_range(-1.0..1.0)).collect());
        // Scalar loss: feature map dotted with fixed random weights.
        let probe: Vec<f64> = (0..4 * layer.out_cols(5)).map(|_| r.gen_range(-1.0..1.0)).collect();
        let loss = |l: &ConvLayer, x: &Mat| dot(&l.forward(x).data, &probe);

        let out = layer.forward(&x);
        let dout = Mat::from_vec(out.rows, out.cols, probe.clone());
        let mut dw = vec![0.0; layer.w.len()];
        let mut db = vec![0.0; layer.b.len()];
        let mut dx = Mat::zeros(3, 5);
        layer.backward(&x, &dout, &mut dw, &mut db, Some(&mut dx));

        let mut flat = Vec::new();
        layer.write_params(&mut flat);
        let mut ana = dw.clone();
        ana.extend_from_slice(&db);
        let err = grad_check(
            |p| {
                let mut l = layer.clone();
                let mut off = 0;
                l.read_params(p, &mut off);
                loss(&l, &x)
            },
            &flat,
            &ana,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "conv param grad err {err}");

        let err = grad_check(
            |px| loss(&layer, &Mat::from_vec(3, 5, px.to_vec())),
            &x.data,
            &dx.data,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "conv input grad err {err}");
    }

    #[test]
    fn dense_zero_weights_yield_bias() {
        let layer = DenseLayer {
            in_dim: 3,
            out_dim: 2,
            w: vec![0.0; 6],
            b: vec![0.4, -0.7],
            activation: Activation::Identity,
        };
        assert_eq!(layer.forward(&[1.0, 2.0, 3.0]), vec![0.4, -0.7]);
    }

    #[test]
    fn dense_relu_clamps_negative() {
        let layer = DenseLayer {
            in_dim: 2,
            out_dim: 2,
            w: vec![1.0, 0.0, 0.0, 1.0],
            b: vec![0.0, 0.0],
            activation: Activation::Relu,
        };
        assert_eq!(layer.forward(&[-1.0, 2.0]), vec![0.0, 2.0]);
    }

    #[test]
    fn dense_matches_nested_loop_oracle() {
        let mut r = rng::stream(12, "dense-oracle");
        let layer = DenseLayer::glorot(6, 4, Activation::Identity, &mut r);
        let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
        let got = layer.forward(&x);
        for o in 0..4 {
            let mut acc = layer.b[o];
            for i in 0..6 {
                acc += layer.w[o * 6 + i] * x[i];
            }
            assert!((got[o] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        for activation in [Activation::Identity, Activation::Relu] {
            let mut r = rng::stream(12, "dense-fd");
            let layer = DenseLayer::glorot(6, 4, activation, &mut r);
            let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let probe: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();

            let mut dw = vec![0.0; layer.w.len()];
            let mut db = vec![0.0; layer.b.len()];
            let mut dx = vec![0.0; 6];
            layer.backward(&x, &probe, &mut dw, &mut db, Some(&mut dx));

            let mut flat = Vec::new();
            layer.write_params(&mut flat);
            let mut ana = dw.clone();
            ana.extend_from_slice(&db);
            let err = grad_check(
                |p| {
                    let mut l = layer.clone();
                    let mut off = 0;
                    l.read_params(p, &mut off);
                    dot(&l.forward(&x), &probe)
                },
                &flat,
                &ana,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "dense param grad err {err}");

            let err = grad_check(|px| dot(&layer.forward(px), &probe), &x, &dx, 1e-5).unwrap();
            assert!(err < 1e-6, "dense input grad err {err}");
        }
    }

    #[test]
    fn pooling_hand_examples() {
        let m = Mat::from_vec(1, 3, vec![2.0, 7.0, 3.0]);
        assert_eq!(max_pool_rows(&m).0, vec![7.0]);
        assert_eq!(mean_pool_rows(&m), vec![4.0]);
        let c = Mat::from_vec(1, 4, vec![1.5; 4]);
        assert_eq!(max_pool_rows(&c).0, vec![1.5]);
        assert_eq!(mean_pool_rows(&c), vec![1.5]);
    }

    #[test]
    fn pooling_backward_matches_finite_differences() {
        let mut r = rng::stream(13, "pool-fd");
        let x = Mat::from_vec(3, 4, (0..12).map(|_| r.gen_range(-1.0..1.0)).collect());
        let probe: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();

        let (_, idxs) = max_pool_rows(&x);
        let dmax = max_pool_backward(&probe, &idxs, 3, 4);
        let err = grad_check(
            |px| dot(&max_pool_rows(&Mat::from_vec(3, 4, px.to_vec())).0, &probe),
            &x.data,
            &dmax.data,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "max pool grad err {err}");

        let dmean = mean_pool_backward(&probe, 3, 4);
        let err = grad_check(
            |px| dot(&mean_pool_rows(&Mat::from_vec(3, 4, px.to_vec())), &probe),
            &x.data,
            &dmean.data,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "mean pool grad err {err}");
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut params = vec![0.5];
        let mut st = AdamState::new(1);
        st.step(&mut params, &[1.0], &AdamParams::default()).unwrap();
        assert_relative_eq!(params[0], 0.5 - 0.001, epsilon = 1e-5);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut params = vec![0.5, -2.0];
        let mut st = AdamState::new(2);
        st.step(&mut params, &[0.0, 0.0], &AdamParams::default()).unwrap();
        assert_eq!(params, vec![0.5, -2.0]);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut params = vec![0.5];
        let before = params.clone();
        let mut st = AdamState::new(1);
        assert!(st.step(&mut params, &[f64::NAN], &AdamParams::default()).is_err());
        assert_eq!(params, before);
    }

    #[test]
    fn adam_minimizes_quadratic_from_one() {
        // Trajectory value frozen from an independent implementation of the
        // same update rule.
        let mut params = vec![1.0];
        let mut st = AdamState::new(1);
        let hp = AdamParams::default();
        for _ in 0..1000 {
            let grad = vec![2.0 * params[0]];
            st.step(&mut params, &grad, &hp).unwrap();
        }
        assert_relative_eq!(params[0], 0.2576650275716581, epsilon = 1e-9);
        for _ in 0..1000 {
            let grad = vec![2.0 * params[0]];
            st.step(&mut params, &grad, &hp).unwrap();
        }
        assert!(params[0].abs() < 0.1, "x after 2000 steps: {}", params[0]);
    }

    #[test]
    fn grad_check_quadratic_example() {
        let err = grad_check(|p| p[0] * p[0], &[3.0], &[6.0], 1e-4).unwrap();
        assert!(err <= 1e-6, "err {err}");
        let err = grad_check(|_| 5.0, &[3.0], &[0.0], 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn logsumexp_is_stable() {
        assert_relative_eq!(logsumexp(&[0.0, 0.0]), 2.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(logsumexp(&[1000.0, 1000.0]), 1000.0 + 2.0f64.ln(), epsilon = 1e-9);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }

    proptest! {
        #[test]
        fn wide_conv_output_length(n in 1usize..30, width in 1usize..6, in_dim in 1usize..4) {
            let layer = ConvLayer {
                in_dim,
                width,
                out_dim: 2,
                w: vec![0.1; 2 * in_dim * width],
                b: vec![0.0; 2],
            };
            let x = Mat::zeros(in_dim, n);
            prop_assert_eq!(layer.forward(&x).cols, n + width - 1);
        }

        #[test]
        fn max_pool_dominates_mean_pool(
            rows in 1usize..4,
            cols in 1usize..6,
            seed in 0u64..1000,
        ) {
            let mut r = rng::stream(seed, "pool-prop");
            let m = Mat::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-5.0..5.0)).collect());
            let mx = max_pool_rows(&m).0;
            let mn = mean_pool_rows(&m);
            for (a, b) in mx.iter().zip(&mn) {
                prop_assert!(a >= b);
            }
        }

        #[test]
        fn softmax_sums_to_one(xs in proptest::collection::vec(-50.0f64..50.0, 1..10)) {
            let p = softmax(&xs);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&q| q >= 0.0));
        }

        #[test]
        fn glorot_respects_bound(fan_in in 1usize..100, fan_out in 1usize..100) {
            let mut r = rng::stream(99, "glorot");
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let xs = glorot_uniform(fan_in, fan_out, 64, &mut r);
            prop_assert!(xs.iter().all(|&x| x.abs() <= bound));
        }
    }
}
