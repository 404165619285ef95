//! Fully-connected residual spectrum predictor.
//!
//! Stem lifts the 4 normalized geometry inputs to a trunk of width 64,
//! four residual blocks (64 -> 256 -> 64 with Mish inside and a Mish on
//! the skip sum) refine it, and two linear heads emit the real and
//! imaginary parts of the 64-point spectrum. With default dims that is
//! 10 weight layers and 140,992 parameters.

use crate::numeric::{axpy, dot, mish_forward, smooth_l1_deriv, DenseMatrix, Rng};
use serde::{Deserialize, Serialize};
use std::fmt;

/// SmoothL1 transition point used by the combined training loss.
pub const LOSS_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    BadConfig { detail: String },
    ShapeMismatch { op: &'static str, detail: String },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::BadConfig { detail } => write!(f, "bad model config: {detail}"),
            ModelError::ShapeMismatch { op, detail } => write!(f, "{op}: {detail}"),
        }
    }
}

impl std::error::Error for ModelError {}

/// Architecture dimensions. Defaults reproduce the reference network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub trunk_width: usize,
    pub hidden_width: usize,
    pub num_blocks: usize,
    pub spectrum_points: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 4,
            trunk_width: 64,
            hidden_width: 256,
            num_blocks: 4,
            spectrum_points: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("trunk_width", self.trunk_width),
            ("hidden_width", self.hidden_width),
            ("spectrum_points", self.spectrum_points),
        ] {
            if v == 0 {
                return Err(ModelError::BadConfig {
                    detail: format!("{name} must be at least 1"),
                });
            }
        }
        Ok(())
    }

    /// Stem + two layers per block + the (parallel) heads.
    pub fn layer_count(&self) -> usize {
        2 + 2 * self.num_blocks
    }

    /// Total scalar parameters across all weights and biases.
    pub fn param_count(&self) -> usize {
        let ModelConfig {
            input_dim: d,
            trunk_width: w,
            hidden_width: h,
            num_blocks: nb,
            spectrum_points: s,
        } = *self;
        (w * d + w) + nb * (h * w + h + w * h + w) + 2 * (s * w + s)
    }
}

/// One residual block's tensors: expand (w1, b1), contract (w2, b2).
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlockTensors {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
}

/// All trainable tensors. Weight matrices are (out x in) row-major.
/// Also reused as the gradient container, same shapes throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    pub stem_w: DenseMatrix,
    pub stem_b: Vec<f64>,
    pub blocks: Vec<ResBlockTensors>,
    pub head_re_w: DenseMatrix,
    pub head_re_b: Vec<f64>,
    pub head_im_w: DenseMatrix,
    pub head_im_b: Vec<f64>,
}

pub type Gradients = ParamTensors;

impl ParamTensors {
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config;
        ParamTensors {
            stem_w: DenseMatrix::new(c.trunk_width, c.input_dim),
            stem_b: vec![0.0; c.trunk_width],
            blocks: (0..c.num_blocks)
                .map(|_| ResBlockTensors {
                    w1: DenseMatrix::new(c.hidden_width, c.trunk_width),
                    b1: vec![0.0; c.hidden_width],
                    w2: DenseMatrix::new(c.trunk_width, c.hidden_width),
                    b2: vec![0.0; c.trunk_width],
                })
                .collect(),
            head_re_w: DenseMatrix::new(c.spectrum_points, c.trunk_width),
            head_re_b: vec![0.0; c.spectrum_points],
            head_im_w: DenseMatrix::new(c.spectrum_points, c.trunk_width),
            head_im_b: vec![0.0; c.spectrum_points],
        }
    }

    /// Canonical array order: stem w/b, then each block's w1, b1, w2, b2,
    /// then head_re w/b, head_im w/b. Checkpoints, the optimizer and the
    /// flat views below all follow it.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.stem_w.data(), &self.stem_b];
        for b in &self.blocks {
            out.push(b.w1.data());
            out.push(&b.b1);
            out.push(b.w2.data());
            out.push(&b.b2);
        }
        out.push(self.head_re_w.data());
        out.push(&self.head_re_b);
        out.push(self.head_im_w.data());
        out.push(&self.head_im_b);
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.stem_w.data_mut(), &mut self.stem_b];
        for b in &mut self.blocks {
            out.push(b.w1.data_mut());
            out.push(&mut b.b1);
            out.push(b.w2.data_mut());
            out.push(&mut b.b2);
        }
        out.push(self.head_re_w.data_mut());
        out.push(&mut self.head_re_b);
        out.push(self.head_im_w.data_mut());
        out.push(&mut self.head_im_b);
        out
    }

    /// (name, shape, values) triples in canonical order, for serialization.
    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        let mat = |m: &DenseMatrix| vec![m.rows(), m.cols()];
        out.push(("stem.w".into(), mat(&self.stem_w), self.stem_w.data()));
        out.push(("stem.b".into(), vec![self.stem_b.len()], &self.stem_b));
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.w1"), mat(&b.w1), b.w1.data()));
            out.push((format!("block{i}.b1"), vec![b.b1.len()], &b.b1));
            out.push((format!("block{i}.w2"), mat(&b.w2), b.w2.data()));
            out.push((format!("block{i}.b2"), vec![b.b2.len()], &b.b2));
        }
        out.push((
            "head_re.w".into(),
            mat(&self.head_re_w),
            self.head_re_w.data(),
        ));
        out.push((
            "head_re.b".into(),
            vec![self.head_re_b.len()],
            &self.head_re_b,
        ));
        out.push((
            "head_im.w".into(),
            mat(&self.head_im_w),
            self.head_im_w.data(),
        ));
        out.push((
            "head_im.b".into(),
            vec![self.head_im_b.len()],
            &self.head_im_b,
        ));
        out
    }

    pub fn total_len(&self) -> usize {
        self.flat().iter().map(|s| s.len()).sum()
    }

    /// Concatenation of all arrays in canonical order.
    pub fn to_flat_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.total_len());
        for s in self.flat() {
            v.extend_from_slice(s);
        }
        v
    }

    /// Inverse of [`to_flat_vec`]; `v` must have exactly `total_len` entries.
    pub fn copy_from_flat(&mut self, v: &[f64]) -> Result<(), ModelError> {
        if v.len() != self.total_len() {
            return Err(ModelError::ShapeMismatch {
                op: "copy_from_flat",
                detail: format!("expected {} values, got {}", self.total_len(), v.len()),
            });
        }
        let mut off = 0;
        for s in self.flat_mut() {
            s.copy_from_slice(&v[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }
}

/// Trained (or in-training) model: tensors plus the per-input min/max
/// normalization recorded from the training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: ParamTensors,
    /// One (min, max) pair per input dimension; `(0, 1)` until fitted.
    pub norm_stats: Vec<(f64, f64)>,
}

impl ModelParams {
    pub fn param_count(&self) -> usize {
        self.tensors.total_len()
    }
}

/// Fresh parameters: every weight entry uniform in +-1/sqrt(fan_in),
/// biases zero, placeholder norm stats. Draw order is fixed (stem, then
/// each block's w1, w2, then head_re, head_im), so a seed pins the init.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let draw = |rows: usize, cols: usize, rng: &mut Rng| {
        let bound = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        DenseMatrix::from_vec(rows, cols, data).expect("sized by construction")
    };
    let mut tensors = ParamTensors::zeros(config);
    tensors.stem_w = draw(config.trunk_width, config.input_dim, &mut rng);
    for b in &mut tensors.blocks {
        b.w1 = draw(config.hidden_width, config.trunk_width, &mut rng);
        b.w2 = draw(config.trunk_width, config.hidden_width, &mut rng);
    }
    tensors.head_re_w = draw(config.spectrum_points, config.trunk_width, &mut rng);
    tensors.head_im_w = draw(config.spectrum_points, config.trunk_width, &mut rng);
    Ok(ModelParams {
        config: *config,
        tensors,
        norm_stats: vec![(0.0, 1.0); config.input_dim],
    })
}

/// Per-sample activations and Mish derivatives kept for the backward
/// pass. Row i of every matrix belongs to sample i of the batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: DenseMatrix,
    stem_post: DenseMatrix,
    stem_deriv: DenseMatrix,
    blocks: Vec<BlockCache>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    a_post: DenseMatrix,
    a_deriv: DenseMatrix,
    out_post: DenseMatrix,
    out_deriv: DenseMatrix,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.x.rows()
    }

    fn trunk_output(&self) -> &DenseMatrix {
        self.blocks.last().map_or(&self.stem_post, |b| &b.out_post)
    }
}

/// y[i][j] = b[j] + x.row(i) . w.row(j); x is (batch x in), w is (out x in).
fn linear_forward(x: &DenseMatrix, w: &DenseMatrix, b: &[f64]) -> DenseMatrix {
    let mut y = DenseMatrix::new(x.rows(), w.rows());
    for i in 0..x.rows() {
        let xi = x.row(i);
        let yi = y.row_mut(i);
        for (j, yj) in yi.iter_mut().enumerate() {
            *yj = b[j] + dot(xi, w.row(j));
        }
    }
    y
}

/// dx[i] = sum_j dy[i][j] * w.row(j), accumulated in ascending j.
fn linear_back_input(dy: &DenseMatrix, w: &DenseMatrix) -> DenseMatrix {
    let mut dx = DenseMatrix::new(dy.rows(), w.cols());
    for i in 0..dy.rows() {
        let dyi = dy.row(i);
        let dxi = dx.row_mut(i);
        for (j, &g) in dyi.iter().enumerate() {
            axpy(g, w.row(j), dxi);
        }
    }
    dx
}

/// dw.row(j) += dy[i][j] * x.row(i) and db[j] += dy[i][j], samples outermost.
fn linear_back_params(dy: &DenseMatrix, x: &DenseMatrix, dw: &mut DenseMatrix, db: &mut [f64]) {
    for i in 0..dy.rows() {
        let dyi = dy.row(i);
        let xi = x.row(i);
        for (j, &g) in dyi.iter().enumerate() {
            axpy(g, xi, dw.row_mut(j));
            db[j] += g;
        }
    }
}

fn hadamard(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    debug_assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let mut out = a.clone();
    for (o, &x) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= x;
    }
    out
}

fn add_into(dst: &mut DenseMatrix, src: &DenseMatrix) {
    debug_assert_eq!((dst.rows(), dst.cols()), (src.rows(), src.cols()));
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

/// Full forward pass over a batch of already-normalized inputs.
/// Returns (re, im) predictions, each (batch x spectrum_points), plus
/// the cache for [`backward`]. Rows are processed independently with a
/// fixed per-row order, so batch results equal concatenated
/// single-sample results bit for bit.
pub fn forward(
    params: &ModelParams,
    x: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix, ForwardCache), ModelError> {
    let cfg = &params.config;
    if x.cols() != cfg.input_dim {
        return Err(ModelError::ShapeMismatch {
            op: "forward",
            detail: format!(
                "input has {} columns, model expects {}",
                x.cols(),
                cfg.input_dim
            ),
        });
    }
    let t = &params.tensors;
    let z0 = linear_forward(x, &t.stem_w, &t.stem_b);
    let (stem_post, stem_deriv) = mish_forward(&z0);
    let mut h = stem_post.clone();
    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    for b in &t.blocks {
        let u = linear_forward(&h, &b.w1, &b.b1);
        let (a_post, a_deriv) = mish_forward(&u);
        let mut s = linear_forward(&a_post, &b.w2, &b.b2);
        add_into(&mut s, &h);
        let (out_post, out_deriv) = mish_forward(&s);
        h = out_post.clone();
        blocks.push(BlockCache {
            a_post,
            a_deriv,
            out_post,
            out_deriv,
        });
    }
    let re = linear_forward(&h, &t.head_re_w, &t.head_re_b);
    let im = linear_forward(&h, &t.head_im_w, &t.head_im_b);
    Ok((
        re,
        im,
        ForwardCache {
            x: x.clone(),
            stem_post,
            stem_deriv,
            blocks,
        },
    ))
}

/// Forward without keeping the cache.
pub fn predict(
    params: &ModelParams,
    x: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix), ModelError> {
    forward(params, x).map(|(re, im, _)| (re, im))
}

/// Reverse-mode gradients for the cached forward pass, given upstream
/// gradients on both heads.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_re: &DenseMatrix,
    grad_im: &DenseMatrix,
) -> Result<Gradients, ModelError> {
    let cfg = &params.config;
    let batch = cache.batch_size();
    for (name, g) in [("grad_re", grad_re), ("grad_im", grad_im)] {
        if g.rows() != batch || g.cols() != cfg.spectrum_points {
            return Err(ModelError::ShapeMismatch {
                op: "backward",
                detail: format!(
                    "{name} is {}x{}, cache expects {}x{}",
                    g.rows(),
                    g.cols(),
                    batch,
                    cfg.spectrum_points
                ),
            });
        }
    }
    if cache.blocks.len() != cfg.num_blocks || cache.x.cols() != cfg.input_dim {
        return Err(ModelError::ShapeMismatch {
            op: "backward",
            detail: "cache does not match model config".into(),
        });
    }
    let t = &params.tensors;
    let mut g = Gradients::zeros(cfg);
    let h_last = cache.trunk_output();
    linear_back_params(grad_re, h_last, &mut g.head_re_w, &mut g.head_re_b);
    linear_back_params(grad_im, h_last, &mut g.head_im_w, &mut g.head_im_b);
    let mut dh = linear_back_input(grad_re, &t.head_re_w);
    add_into(&mut dh, &linear_back_input(grad_im, &t.head_im_w));
    for bi in (0..cfg.num_blocks).rev() {
        let bc = &cache.blocks[bi];
        let h_in = if bi == 0 {
            &cache.stem_post
        } else {
            &cache.blocks[bi - 1].out_post
        };
        // s = h_in + w2 mish(w1 h_in + b1) + b2, out = mish(s)
        let ds = hadamard(&dh, &bc.out_deriv);
        let gb = &mut g.blocks[bi];
        linear_back_params(&ds, &bc.a_post, &mut gb.w2, &mut gb.b2);
        let da = linear_back_input(&ds, &t.blocks[bi].w2);
        let du = hadamard(&da, &bc.a_deriv);
        linear_back_params(&du, h_in, &mut gb.w1, &mut gb.b1);
        dh = linear_back_input(&du, &t.blocks[bi].w1);
        add_into(&mut dh, &ds); // skip connection
    }
    let dz0 = hadamard(&dh, &cache.stem_deriv);
    linear_back_params(&dz0, &cache.x, &mut g.stem_w, &mut g.stem_b);
    Ok(g)
}

/// Combined loss over a batch, 0.5 (SmoothL1(re) + SmoothL1(im)) with
/// beta = [`LOSS_BETA`], both means over batch * spectrum_points
/// elements, plus its parameter gradients.
pub fn loss_and_grad(
    params: &ModelParams,
    x: &DenseMatrix,
    re_target: &DenseMatrix,
    im_target: &DenseMatrix,
) -> Result<(f64, Gradients), ModelError> {
    let cfg = &params.config;
    for (name, m) in [("re_target", re_target), ("im_target", im_target)] {
        if m.rows() != x.rows() || m.cols() != cfg.spectrum_points {
            return Err(ModelError::ShapeMismatch {
                op: "loss_and_grad",
                detail: format!(
                    "{name} is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    x.rows(),
                    cfg.spectrum_points
                ),
            });
        }
    }
    let (re, im, cache) = forward(params, x)?;
    let n = (x.rows() * cfg.spectrum_points) as f64;
    let scale = 0.5 / n;
    let head_loss = |pred: &DenseMatrix, target: &DenseMatrix| {
        let mut grad = DenseMatrix::new(pred.rows(), pred.cols());
        let mut acc = 0.0;
        for ((gp, &p), &t) in grad
            .data_mut()
            .iter_mut()
            .zip(pred.data())
            .zip(target.data())
        {
            let d = p - t;
            let ad = d.abs();
            acc += if ad < LOSS_BETA {
                0.5 * d * d / LOSS_BETA
            } else {
                ad - 0.5 * LOSS_BETA
            };
            *gp = scale * smooth_l1_deriv(d, LOSS_BETA);
        }
        (acc / n, grad)
    };
    let (loss_re, grad_re) = head_loss(&re, re_target);
    let (loss_im, grad_im) = head_loss(&im, im_target);
    let grads = backward(params, &cache, &grad_re, &grad_im)?;
    Ok((0.5 * (loss_re + loss_im), grads))
}
