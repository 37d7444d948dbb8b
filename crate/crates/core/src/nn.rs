//! Softmax regression and one-hidden-layer ReLU MLP over a flat `f64` parameter vector,
//! with exact backprop and mini-batch SGD.
//!
//! Parameter layout (row-major weights, `[in][out]`):
//! - `hidden_dim == 0`: `W (input x classes)`, `b (classes)`
//! - otherwise: `W1 (input x hidden)`, `b1 (hidden)`, `W2 (hidden x classes)`, `b2 (classes)`

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataView;
use crate::seed;
use crate::{Error, Result};

/// Rows per forward chunk when evaluating.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
}

impl ArchSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dim,
            num_classes,
            activation: Activation::Relu,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArch("input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArch("num_classes must be >= 2".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        if self.hidden_dim == 0 {
            self.input_dim * self.num_classes + self.num_classes
        } else {
            self.input_dim * self.hidden_dim
                + self.hidden_dim
                + self.hidden_dim * self.num_classes
                + self.num_classes
        }
    }

    fn describe(&self) -> String {
        format!(
            "{}-{}-{}",
            self.input_dim, self.hidden_dim, self.num_classes
        )
    }

    /// Offsets of each parameter block: (W1, b1, W2, b2). For softmax regression
    /// only the last two are used.
    fn offsets(&self) -> (usize, usize, usize, usize) {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        if h == 0 {
            (0, 0, 0, d * c)
        } else {
            let b1 = d * h;
            let w2 = b1 + h;
            (0, b1, w2, w2 + h * c)
        }
    }
}

/// Model parameters: architecture plus a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: ArchSpec,
    theta: Vec<f64>,
}

impl ModelParams {
    pub fn from_theta(arch: ArchSpec, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.parameter_count(),
                actual: theta.len(),
                context: "theta length",
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("from_theta"));
        }
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: ArchSpec) -> Self {
        Self {
            arch,
            theta: vec![0.0; arch.parameter_count()],
        }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    fn check_compatible(&self, other: &ModelParams) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::ArchMismatch {
                left: self.arch.describe(),
                right: other.arch.describe(),
            });
        }
        Ok(())
    }

    /// Euclidean distance between two parameter vectors of the same architecture.
    pub fn distance(&self, other: &ModelParams) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// An owned mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl Batch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, input_dim: usize) -> Result<Self> {
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * input_dim,
                actual: features.len(),
                context: "batch features",
            });
        }
        Ok(Self {
            features,
            labels,
            input_dim,
        })
    }

    pub fn from_view(view: &DataView<'_>) -> Self {
        let mut features = Vec::with_capacity(view.len() * view.input_dim());
        let mut labels = Vec::with_capacity(view.len());
        for p in 0..view.len() {
            features.extend_from_slice(view.row(p));
            labels.push(view.label(p));
        }
        Self {
            features,
            labels,
            input_dim: view.input_dim(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn check(&self, arch: &ArchSpec) -> Result<()> {
        if self.input_dim != arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: arch.input_dim,
                actual: self.input_dim,
                context: "batch input_dim",
            });
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= arch.num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: arch.num_classes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidTrainConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidTrainConfig(
                "batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The config that continues a run after `epochs` epochs.
    ///
    /// Epoch `k` of a call shuffles with the stream seeded by `shuffle_seed + k`
    /// (wrapping), so `train(e1)` followed by `train(e2)` on the advanced config
    /// equals `train(e1 + e2)`.
    pub fn advanced(&self, epochs: usize) -> Self {
        Self {
            shuffle_seed: self.shuffle_seed.wrapping_add(epochs as u64),
            ..*self
        }
    }

    fn epoch_seed(&self, epoch: usize) -> u64 {
        self.shuffle_seed.wrapping_add(epoch as u64)
    }
}

pub fn init_model(arch: ArchSpec, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = seed::rng(seed);
    let mut theta = vec![0.0; arch.parameter_count()];
    let (d, h, c) = (arch.input_dim, arch.hidden_dim, arch.num_classes);
    let (w1, _, w2, _) = arch.offsets();
    let mut fill = |block: &mut [f64], fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for w in block {
            *w = rng.gen_range(-bound..=bound);
        }
    };
    if h == 0 {
        fill(&mut theta[..d * c], d);
    } else {
        fill(&mut theta[w1..w1 + d * h], d);
        fill(&mut theta[w2..w2 + h * c], h);
    }
    Ok(ModelParams { arch, theta })
}

/// `c = a (m x k) * b (k x n) + beta * c`, all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths checked above; strides describe contiguous row-major storage.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a^T * b + beta * c` where `a` is `(k x m)`, `b` is `(k x n)`.
fn gemm_at_b(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as above; `a` is read with swapped strides (transpose).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a * b^T + beta * c` where `a` is `(m x k)`, `b` is `(n x k)`.
fn gemm_a_bt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: as above; `b` is read with swapped strides (transpose).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn broadcast_rows(out: &mut [f64], bias: &[f64]) {
    for row in out.chunks_exact_mut(bias.len()) {
        row.copy_from_slice(bias);
    }
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.fill(0.0);
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Reusable buffers for forward/backward passes.
#[derive(Debug, Default)]
struct Workspace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    dhidden: Vec<f64>,
    grad: Vec<f64>,
    batch_x: Vec<f64>,
    batch_y: Vec<usize>,
}

/// Forward pass into `ws.logits` (and `ws.hidden` for the MLP).
fn forward_into(arch: &ArchSpec, theta: &[f64], x: &[f64], rows: usize, ws: &mut Workspace) {
    let (d, h, c) = (arch.input_dim, arch.hidden_dim, arch.num_classes);
    let (w1, b1, w2, b2) = arch.offsets();
    ws.logits.resize(rows * c, 0.0);
    if h == 0 {
        broadcast_rows(&mut ws.logits, &theta[b2..b2 + c]);
        gemm(rows, d, c, x, &theta[..d * c], 1.0, &mut ws.logits);
        return;
    }
    ws.hidden.resize(rows * h, 0.0);
    broadcast_rows(&mut ws.hidden, &theta[b1..b1 + h]);
    gemm(rows, d, h, x, &theta[w1..w1 + d * h], 1.0, &mut ws.hidden);
    for v in ws.hidden.iter_mut() {
        *v = v.max(0.0);
    }
    broadcast_rows(&mut ws.logits, &theta[b2..b2 + c]);
    gemm(
        rows,
        h,
        c,
        &ws.hidden,
        &theta[w2..w2 + h * c],
        1.0,
        &mut ws.logits,
    );
}

/// Mean cross-entropy; overwrites `ws.logits` with `d loss / d logits`.
fn softmax_xent_backward(labels: &[usize], c: usize, logits: &mut [f64]) -> f64 {
    let n = labels.len() as f64;
    let mut loss = 0.0;
    for (row, &y) in logits.chunks_exact_mut(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        // -log softmax[y] = log z - (logit_y - max)
        loss += z.ln() - row[y].ln();
        for v in row.iter_mut() {
            *v /= z * n;
        }
        row[y] -= 1.0 / n;
    }
    loss / n
}

/// Loss and gradient into `ws.grad` for the batch in `x`/`labels`.
fn loss_grad_into(
    arch: &ArchSpec,
    theta: &[f64],
    x: &[f64],
    labels: &[usize],
    ws: &mut Workspace,
) -> f64 {
    let rows = labels.len();
    let (d, h, c) = (arch.input_dim, arch.hidden_dim, arch.num_classes);
    let (w1, b1, w2, b2) = arch.offsets();
    forward_into(arch, theta, x, rows, ws);
    let loss = softmax_xent_backward(labels, c, &mut ws.logits);
    ws.grad.resize(arch.parameter_count(), 0.0);
    let dlogits = &ws.logits;
    if h == 0 {
        gemm_at_b(d, rows, c, x, dlogits, 0.0, &mut ws.grad[..d * c]);
        column_sums(dlogits, c, &mut ws.grad[b2..b2 + c]);
        return loss;
    }
    gemm_at_b(
        h,
        rows,
        c,
        &ws.hidden,
        dlogits,
        0.0,
        &mut ws.grad[w2..w2 + h * c],
    );
    column_sums(dlogits, c, &mut ws.grad[b2..b2 + c]);
    ws.dhidden.resize(rows * h, 0.0);
    gemm_a_bt(
        rows,
        c,
        h,
        dlogits,
        &theta[w2..w2 + h * c],
        0.0,
        &mut ws.dhidden,
    );
    for (g, &a) in ws.dhidden.iter_mut().zip(&ws.hidden) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    gemm_at_b(
        d,
        rows,
        h,
        x,
        &ws.dhidden,
        0.0,
        &mut ws.grad[w1..w1 + d * h],
    );
    column_sums(&ws.dhidden, h, &mut ws.grad[b1..b1 + h]);
    loss
}

pub fn forward(model: &ModelParams, batch: &Batch) -> Result<Matrix> {
    batch.check(&model.arch)?;
    let mut ws = Workspace::default();
    forward_into(
        &model.arch,
        &model.theta,
        &batch.features,
        batch.len(),
        &mut ws,
    );
    Ok(Matrix {
        rows: batch.len(),
        cols: model.arch.num_classes,
        data: ws.logits,
    })
}

/// Mean softmax cross-entropy over the batch and its exact gradient w.r.t. theta.
pub fn loss_and_grad(model: &ModelParams, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    batch.check(&model.arch)?;
    let mut ws = Workspace::default();
    let loss = loss_grad_into(
        &model.arch,
        &model.theta,
        &batch.features,
        &batch.labels,
        &mut ws,
    );
    Ok((loss, ws.grad))
}

fn check_view(arch: &ArchSpec, data: &DataView<'_>) -> Result<()> {
    if data.input_dim() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim,
            actual: data.input_dim(),
            context: "data input_dim",
        });
    }
    if data.dataset().num_classes() > arch.num_classes {
        return Err(Error::DimensionMismatch {
            expected: arch.num_classes,
            actual: data.dataset().num_classes(),
            context: "dataset num_classes",
        });
    }
    Ok(())
}

/// Mini-batch SGD for `epochs` epochs. Returns the new parameters and the number of
/// SGD steps actually executed.
pub fn train_counted(
    model: &ModelParams,
    data: &DataView<'_>,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<(ModelParams, usize)> {
    cfg.validate()?;
    if epochs == 0 {
        return Ok((model.clone(), 0));
    }
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    check_view(&model.arch, data)?;

    let arch = model.arch;
    let mut theta = model.theta.clone();
    let mut ws = Workspace::default();
    let mut order: Vec<usize> = Vec::with_capacity(data.len());
    let mut steps = 0;
    for epoch in 0..epochs {
        order.clear();
        order.extend(0..data.len());
        order.shuffle(&mut seed::rng(cfg.epoch_seed(epoch)));
        for chunk in order.chunks(cfg.batch_size) {
            ws.batch_x.clear();
            ws.batch_y.clear();
            for &p in chunk {
                ws.batch_x.extend_from_slice(data.row(p));
                ws.batch_y.push(data.label(p));
            }
            let x = std::mem::take(&mut ws.batch_x);
            let y = std::mem::take(&mut ws.batch_y);
            loss_grad_into(&arch, &theta, &x, &y, &mut ws);
            ws.batch_x = x;
            ws.batch_y = y;
            let mut finite = true;
            for (t, g) in theta.iter_mut().zip(&ws.grad) {
                *t -= cfg.learning_rate * g;
                finite &= t.is_finite();
            }
            if !finite {
                return Err(Error::NonFinite("SGD step"));
            }
            steps += 1;
        }
    }
    debug_assert_eq!(steps, epochs * data.len().div_ceil(cfg.batch_size));
    Ok((ModelParams { arch, theta }, steps))
}

/// `epochs` epochs of mini-batch SGD on `data`. The input model is left untouched.
pub fn train(
    model: &ModelParams,
    data: &DataView<'_>,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    train_counted(model, data, epochs, cfg).map(|(m, _)| m)
}

/// Unweighted element-wise mean of the parameter vectors.
pub fn average_params(models: &[ModelParams]) -> Result<ModelParams> {
    let (first, rest) = models.split_first().ok_or(Error::Empty("model list"))?;
    for m in rest {
        first.check_compatible(m)?;
    }
    let mut theta = first.theta.clone();
    for m in rest {
        for (acc, v) in theta.iter_mut().zip(&m.theta) {
            *acc += v;
        }
    }
    let n = models.len() as f64;
    for v in theta.iter_mut() {
        *v /= n;
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("average_params"));
    }
    Ok(ModelParams {
        arch: first.arch,
        theta,
    })
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Number of correctly classified rows of `data`.
pub fn correct_count(model: &ModelParams, data: &DataView<'_>) -> Result<usize> {
    check_view(&model.arch, data)?;
    let c = model.arch.num_classes;
    let mut ws = Workspace::default();
    let mut x = Vec::new();
    let mut correct = 0;
    let positions: Vec<usize> = (0..data.len()).collect();
    for chunk in positions.chunks(EVAL_CHUNK) {
        x.clear();
        for &p in chunk {
            x.extend_from_slice(data.row(p));
        }
        forward_into(&model.arch, &model.theta, &x, chunk.len(), &mut ws);
        for (row, &p) in ws.logits.chunks_exact(c).zip(chunk) {
            if argmax(row) == data.label(p) {
                correct += 1;
            }
        }
    }
    Ok(correct)
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(model: &ModelParams, data: &DataView<'_>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    Ok(correct_count(model, data)? as f64 / data.len() as f64)
}
