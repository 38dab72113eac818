//! Synthetic probing datasets and a toy SGD trainer.
//!
//! The probe question: what can a single pooling operator plus one
//! fully-connected layer learn, with no convolutions at all? The datasets are
//! small grayscale images (one line at a class angle, several lines, or
//! outlined shapes); the model applies one whole-image pooling operator and a
//! linear head, trained with SGD + momentum.
//!
//! Rendering choices the accuracy claims are tested against: 1-pixel
//! Bresenham lines, regular-polygon outlines, uniform background noise at a
//! stated fraction of the 8-bit dynamic range, image values quantized to
//! 8 bits then scaled to [0, 1].

use crate::error::{Error, Result};
use crate::fastgrnn::Mat;
use crate::rnnpool::{rnnpool_backward, rnnpool_forward, RnnPoolGrads, RnnPoolParams};
use crate::tensor::TensorMap;
use crate::Scalar;
use byteorder::ReadBytesExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

/// Which probing task a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// One line per image at one of 9 angles (0°..160° in 20° steps).
    LinesMulticlass,
    /// A non-empty subset of the 9 angles, one line each; multi-hot labels.
    LinesMultilabel,
    /// A non-empty subset of {circle, triangle, square, pentagon, hexagon}
    /// rendered as non-overlapping outlines; multi-hot labels.
    ShapesMultilabel,
}

pub const NUM_ANGLES: usize = 9;
pub const NUM_SHAPES: usize = 5;

/// A generated dataset: H×W×1 images in [0,1] plus labels.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub images: Vec<TensorMap<f32>>,
    /// Multiclass: one-hot. Multilabel: multi-hot. Length = class count.
    pub labels: Vec<Vec<f32>>,
    pub task: Task,
}

impl SynthDataset {
    pub fn num_outputs(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }
}

fn check_size(size: usize) -> Result<()> {
    if size == 32 || size == 64 {
        Ok(())
    } else {
        Err(Error::Arg(format!("image size must be 32 or 64, got {size}")))
    }
}

/// Draw a 1-pixel Bresenham segment with value 255.
fn draw_line(img: &mut [u8], size: usize, x0: i32, y0: i32, x1: i32, y1: i32) {
    let (mut x, mut y) = (x0, y0);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
            img[y as usize * size + x as usize] = 255;
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn render_angle_line(img: &mut [u8], size: usize, class: usize, rng: &mut impl Rng) {
    let angle = (class as f32) * 20.0_f32.to_radians();
    let (dx, dy) = (angle.cos(), angle.sin());
    let len = rng.gen_range(size as f32 * 0.5..size as f32 * 0.9);
    let margin = 1.0;
    // Pick a center such that both endpoints stay inside the frame.
    let half = len / 2.0;
    let span_x = (dx.abs() * half + margin).ceil();
    let span_y = (dy.abs() * half + margin).ceil();
    let cx = rng.gen_range(span_x..(size as f32 - span_x).max(span_x + 0.01));
    let cy = rng.gen_range(span_y..(size as f32 - span_y).max(span_y + 0.01));
    let x0 = (cx - dx * half).round() as i32;
    let y0 = (cy - dy * half).round() as i32;
    let x1 = (cx + dx * half).round() as i32;
    let y1 = (cy + dy * half).round() as i32;
    // Keep stroke width proportional to resolution so the line occupies a
    // similar fraction of each pooling patch at every image size.
    let thickness = (size / 32).max(1) as i32;
    for t in 0..thickness {
        // Offset along the perpendicular direction, in whole pixels.
        let (ox, oy) = ((-dy * t as f32).round() as i32, (dx * t as f32).round() as i32);
        draw_line(img, size, x0 + ox, y0 + oy, x1 + ox, y1 + oy);
    }
}

fn finish_image(mut img: Vec<u8>, size: usize, noise_level: f32, rng: &mut impl Rng) -> TensorMap<f32> {
    let amp = (noise_level * 255.0).round() as u32;
    if amp > 0 {
        for p in img.iter_mut() {
            let n = rng.gen_range(0..=amp) as u8;
            *p = (*p).max(n);
        }
    }
    TensorMap::from_vec(size, size, 1, img.iter().map(|&p| p as f32 / 255.0).collect())
        .expect("square image")
}

/// One line per image at a class angle; stratified classes, deterministic
/// under seed.
pub fn gen_lines_multiclass(count: usize, size: usize, noise_level: f32, seed: u64) -> Result<SynthDataset> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % NUM_ANGLES;
        let mut img = vec![0u8; size * size];
        render_angle_line(&mut img, size, class, &mut rng);
        images.push(finish_image(img, size, noise_level, &mut rng));
        let mut y = vec![0.0; NUM_ANGLES];
        y[class] = 1.0;
        labels.push(y);
    }
    Ok(SynthDataset { images, labels, task: Task::LinesMulticlass })
}

/// A non-empty subset of angle classes, one line each; multi-hot labels.
/// Subset size is uniform over 1..=3 distinct angles: images with many
/// mutually crossing segments become genuinely ambiguous after pooling, and
/// the subset-size distribution is a generator choice.
pub fn gen_lines_multilabel(count: usize, size: usize, noise_level: f32, seed: u64) -> Result<SynthDataset> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let mut y = vec![0.0; NUM_ANGLES];
        let mut img = vec![0u8; size * size];
        let k = rng.gen_range(1..=3);
        while y.iter().filter(|&&v| v > 0.0).count() < k {
            y[rng.gen_range(0..NUM_ANGLES)] = 1.0;
        }
        for c in 0..NUM_ANGLES {
            if y[c] > 0.0 {
                render_angle_line(&mut img, size, c, &mut rng);
            }
        }
        images.push(finish_image(img, size, noise_level, &mut rng));
        labels.push(y);
    }
    Ok(SynthDataset { images, labels, task: Task::LinesMultilabel })
}

/// Outline of a regular polygon (or circle) centred at (cx, cy).
fn draw_shape(img: &mut [u8], size: usize, shape: usize, cx: f32, cy: f32, radius: f32) {
    if shape == 0 {
        // Circle: dense parametric outline.
        let steps = (radius * 8.0) as usize + 16;
        for t in 0..steps {
            let a = t as f32 / steps as f32 * std::f32::consts::TAU;
            let x = (cx + radius * a.cos()).round() as i32;
            let y = (cy + radius * a.sin()).round() as i32;
            if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                img[y as usize * size + x as usize] = 255;
            }
        }
        return;
    }
    let sides = shape + 2; // triangle, square, pentagon, hexagon
    let verts: Vec<(i32, i32)> = (0..sides)
        .map(|v| {
            let a = v as f32 / sides as f32 * std::f32::consts::TAU - std::f32::consts::FRAC_PI_2;
            ((cx + radius * a.cos()).round() as i32, (cy + radius * a.sin()).round() as i32)
        })
        .collect();
    for v in 0..sides {
        let (x0, y0) = verts[v];
        let (x1, y1) = verts[(v + 1) % sides];
        draw_line(img, size, x0, y0, x1, y1);
    }
}

/// A non-empty subset of the five shapes, rendered as non-overlapping
/// outlines; multi-hot labels.
pub fn gen_shapes_multilabel(count: usize, size: usize, noise_level: f32, seed: u64) -> Result<SynthDataset> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        // One or two distinct shapes per image: the label marginals stay
        // balanced while outlines remain large and clearly separated (a
        // crowded canvas forces small radii, and pentagon/hexagon outlines
        // below ~6 px are genuinely ambiguous).
        let mut y = vec![0.0; NUM_SHAPES];
        let k = rng.gen_range(1..=2);
        while y.iter().filter(|&&v| v > 0.0).count() < k {
            y[rng.gen_range(0..NUM_SHAPES)] = 1.0;
        }
        let mut img = vec![0u8; size * size];
        // Place shapes with disjoint bounding boxes by rejection.
        let mut boxes: Vec<(f32, f32, f32)> = Vec::new();
        for c in 0..NUM_SHAPES {
            if y[c] == 0.0 {
                continue;
            }
            let mut placed = false;
            for _ in 0..200 {
                let radius = rng.gen_range(size as f32 * 0.11..size as f32 * 0.22);
                let cx = rng.gen_range(radius + 1.0..size as f32 - radius - 1.0);
                let cy = rng.gen_range(radius + 1.0..size as f32 - radius - 1.0);
                let clear = boxes
                    .iter()
                    .all(|&(ox, oy, orad)| ((cx - ox).powi(2) + (cy - oy).powi(2)).sqrt() > radius + orad + 1.0);
                if clear {
                    draw_shape(&mut img, size, c, cx, cy, radius);
                    boxes.push((cx, cy, radius));
                    placed = true;
                    break;
                }
            }
            if !placed {
                // Could not fit this shape without overlap; drop its label.
                y[c] = 0.0;
            }
        }
        if y.iter().all(|&v| v == 0.0) {
            // Degenerate rejection outcome; trivially place one circle.
            let radius = size as f32 * 0.1;
            draw_shape(&mut img, size, 0, size as f32 / 2.0, size as f32 / 2.0, radius);
            y[0] = 1.0;
        }
        images.push(finish_image(img, size, noise_level, &mut rng));
        labels.push(y);
    }
    Ok(SynthDataset { images, labels, task: Task::ShapesMultilabel })
}

// ---------------------------------------------------------------------------
// Probe model and trainer
// ---------------------------------------------------------------------------

/// One whole-image pooling operator plus a linear head.
#[derive(Debug, Clone)]
pub struct ProbeModel<S: Scalar = f32> {
    pub pool: RnnPoolParams<S>,
    /// Head weight, num_outputs × 4h₂.
    pub fc_w: Mat<S>,
    pub fc_b: Vec<S>,
}

impl ProbeModel<f32> {
    /// Seeded random model with a whole-image patch.
    pub fn random(size: usize, h1: usize, h2: usize, num_outputs: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = RnnPoolParams::random(size, size, 1, h1, h2, 0.3, &mut rng)?;
        // Sweeps here are long (one step per pixel), so the default init
        // washes the input out of the state. Strengthen the input matrices
        // (±1.5) and bias the forget gates toward a memory horizon of about
        // two thirds of the sweep length (z/(1−z) ≈ 2·size/3 − 1; b_z ≈ 3.0
        // at 32 px, ≈ 3.7 at 64 px): without this the pooled features are
        // near-constant and SGD stalls at chance level.
        let b_z = (2.0 * size as f64 / 3.0 - 1.0).ln();
        for cell in [&mut pool.rnn1, &mut pool.rnn2] {
            cell.w.data.iter_mut().for_each(|w| *w *= 5.0);
            cell.b_z.iter_mut().for_each(|b| *b = b_z as f32);
        }
        let d = pool.out_dim();
        let a = 1.0 / (d as f32).sqrt();
        let fc_w = Mat {
            rows: num_outputs,
            cols: d,
            data: (0..num_outputs * d).map(|_| rng.gen_range(-a..a)).collect(),
        };
        let fc_b = vec![0.0; num_outputs];
        Ok(ProbeModel { pool, fc_w, fc_b })
    }
}

impl<S: Scalar> ProbeModel<S> {
    pub fn cast<T: Scalar>(&self) -> ProbeModel<T> {
        ProbeModel {
            pool: self.pool.cast(),
            fc_w: self.fc_w.cast(),
            fc_b: self.fc_b.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }

    /// Logits for one image.
    pub fn forward(&self, image: &TensorMap<S>) -> Result<Vec<S>> {
        let feat = rnnpool_forward(&self.pool, image)?;
        let mut out = self.fc_w.matvec(&feat);
        for (o, &b) in out.iter_mut().zip(&self.fc_b) {
            *o += b;
        }
        Ok(out)
    }
}

/// Gradients of the probe loss for a batch.
#[derive(Debug, Clone)]
pub struct ProbeGrads<S: Scalar = f32> {
    pub pool: RnnPoolGrads<S>,
    pub fc_w: Mat<S>,
    pub fc_b: Vec<S>,
}

fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let mx = logits.iter().fold(S::from_f64(f64::NEG_INFINITY), |a, &b| a.max_s(b));
    let exps: Vec<S> = logits.iter().map(|&v| (v - mx).exp()).collect();
    let sum = exps.iter().fold(S::ZERO, |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::ONE / (S::ONE + (-x).exp())
}

/// Mean loss and summed-then-averaged gradients over a batch.
///
/// Multiclass: softmax cross-entropy. Multilabel: mean per-label binary
/// cross-entropy. Deterministic regardless of worker count: per-sample
/// gradients are reduced in index order.
pub fn batch_grads<S: Scalar>(
    model: &ProbeModel<S>,
    images: &[&TensorMap<S>],
    labels: &[&[f32]],
    task: Task,
) -> Result<(f64, ProbeGrads<S>)> {
    let per: Vec<(f64, ProbeGrads<S>)> = images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(&img, &y)| sample_grads(model, img, y, task))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut total = ProbeGrads {
        pool: RnnPoolGrads::zeros_like(&model.pool),
        fc_w: Mat::zeros(model.fc_w.rows, model.fc_w.cols),
        fc_b: vec![S::ZERO; model.fc_b.len()],
    };
    for (l, g) in &per {
        loss += l;
        total.pool.add_assign(&g.pool);
        for (a, b) in total.fc_w.data.iter_mut().zip(&g.fc_w.data) {
            *a += *b;
        }
        for (a, b) in total.fc_b.iter_mut().zip(&g.fc_b) {
            *a += *b;
        }
    }
    let inv = S::from_f64(1.0 / images.len() as f64);
    scale_grads(&mut total, inv);
    Ok((loss / images.len() as f64, total))
}

fn scale_grads<S: Scalar>(g: &mut ProbeGrads<S>, inv: S) {
    for cell in [&mut g.pool.rnn1, &mut g.pool.rnn2] {
        for v in cell
            .dw
            .data
            .iter_mut()
            .chain(cell.du.data.iter_mut())
            .chain(cell.db_z.iter_mut())
            .chain(cell.db_h.iter_mut())
        {
            *v = *v * inv;
        }
    }
    for v in g.fc_w.data.iter_mut().chain(g.fc_b.iter_mut()) {
        *v = *v * inv;
    }
}

fn sample_grads<S: Scalar>(
    model: &ProbeModel<S>,
    image: &TensorMap<S>,
    label: &[f32],
    task: Task,
) -> Result<(f64, ProbeGrads<S>)> {
    let feat = rnnpool_forward(&model.pool, image)?;
    let mut logits = model.fc_w.matvec(&feat);
    for (o, &b) in logits.iter_mut().zip(&model.fc_b) {
        *o += b;
    }
    // dL/dlogit and loss.
    let mut dlogit = vec![S::ZERO; logits.len()];
    let mut loss = 0.0f64;
    match task {
        Task::LinesMulticlass => {
            let p = softmax(&logits);
            for (k, (&pk, &yk)) in p.iter().zip(label).enumerate() {
                if yk > 0.0 {
                    loss -= pk.to_f64().max(1e-12).ln();
                }
                dlogit[k] = pk - S::from_f64(yk as f64);
            }
        }
        Task::LinesMultilabel | Task::ShapesMultilabel => {
            let n = logits.len() as f64;
            for (k, (&z, &yk)) in logits.iter().zip(label).enumerate() {
                let p = sigmoid(z);
                let pf = p.to_f64().clamp(1e-12, 1.0 - 1e-12);
                loss -= (yk as f64 * pf.ln() + (1.0 - yk as f64) * (1.0 - pf).ln()) / n;
                dlogit[k] = (p - S::from_f64(yk as f64)) * S::from_f64(1.0 / n);
            }
        }
    }
    // Head gradients and upstream into the pooling operator.
    let mut fc_w = Mat::zeros(model.fc_w.rows, model.fc_w.cols);
    for (k, &d) in dlogit.iter().enumerate() {
        for (j, &f) in feat.iter().enumerate() {
            *fc_w.at_mut(k, j) = d * f;
        }
    }
    let dfeat = model.fc_w.matvec_t(&dlogit);
    let pool = rnnpool_backward(&model.pool, image, &dfeat)?;
    Ok((loss, ProbeGrads { pool, fc_w, fc_b: dlogit }))
}

/// Trainer configuration. Defaults: momentum 0.9, weight decay 4·10⁻⁵,
/// batch 64.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of the dataset held out for testing.
    pub test_fraction: f32,
    /// Global gradient-norm clip (None = no clipping). Backpropagation
    /// through thousands of recurrent steps produces occasional spikes;
    /// clipping keeps large learning rates stable.
    pub clip_norm: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.2,
            momentum: 0.9,
            weight_decay: 4e-5,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            test_fraction: 1.0 / 6.0,
            clip_norm: Some(1.0),
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Test accuracy after each epoch.
    pub accuracy_curve: Vec<f64>,
    pub final_test_accuracy: f64,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Accuracy on a slice of the dataset: argmax match for multiclass,
/// label-wise threshold-0.5 agreement for multilabel.
pub fn evaluate(model: &ProbeModel<f32>, data: &SynthDataset, idx: &[usize]) -> Result<f64> {
    let correct: Vec<f64> = idx
        .par_iter()
        .map(|&i| {
            let logits = model.forward(&data.images[i])?;
            let y = &data.labels[i];
            Ok(match data.task {
                Task::LinesMulticlass => {
                    let pred = logits
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(k, _)| k)
                        .unwrap_or(0);
                    if y[pred] > 0.0 { 1.0 } else { 0.0 }
                }
                _ => {
                    let hits = logits
                        .iter()
                        .zip(y)
                        .filter(|&(&z, &yk)| (z > 0.0) == (yk > 0.0))
                        .count();
                    hits as f64 / y.len() as f64
                }
            })
        })
        .collect::<Result<_>>()?;
    Ok(correct.iter().sum::<f64>() / idx.len().max(1) as f64)
}

struct Momentum {
    pool: RnnPoolGrads<f32>,
    fc_w: Mat<f32>,
    fc_b: Vec<f32>,
}

/// SGD with momentum and weight decay on the probe loss.
///
/// Deterministic under seed; errors out with diagnostics if the loss stops
/// being finite.
pub fn train_probe(model: &mut ProbeModel<f32>, data: &SynthDataset, cfg: &TrainConfig) -> Result<TrainResult> {
    if data.images.is_empty() {
        return Err(Error::Arg("empty dataset".into()));
    }
    let (h, w, _) = data.images[0].shape();
    if h != model.pool.patch_rows || w != model.pool.patch_cols {
        return Err(Error::Shape(format!(
            "probe patch must be the whole image ({h}×{w})"
        )));
    }
    let n = data.images.len();
    let n_test = ((n as f32 * cfg.test_fraction) as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let (test_idx, train_idx) = order.split_at(n_test);
    let mut train: Vec<usize> = train_idx.to_vec();

    let mut vel = Momentum {
        pool: RnnPoolGrads::zeros_like(&model.pool),
        fc_w: Mat::zeros(model.fc_w.rows, model.fc_w.cols),
        fc_b: vec![0.0; model.fc_b.len()],
    };
    let mut accuracy_curve = Vec::with_capacity(cfg.epochs);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in train.chunks(cfg.batch_size.max(1)) {
            let images: Vec<&TensorMap<f32>> = chunk.iter().map(|&i| &data.images[i]).collect();
            let labels: Vec<&[f32]> = chunk.iter().map(|&i| data.labels[i].as_slice()).collect();
            let (loss, grads) = batch_grads(model, &images, &labels, data.task)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss diverged at epoch {epoch}, batch {batches}: {loss}"
                )));
            }
            epoch_loss += loss;
            batches += 1;
            let mut grads = grads;
            if let Some(clip) = cfg.clip_norm {
                clip_grad_norm(&mut grads, clip);
            }
            sgd_step(model, &grads, &mut vel, cfg);
        }
        loss_curve.push(epoch_loss / batches.max(1) as f64);
        accuracy_curve.push(evaluate(model, data, test_idx)?);
    }
    let final_test_accuracy = *accuracy_curve.last().unwrap_or(&0.0);
    Ok(TrainResult { accuracy_curve, final_test_accuracy, loss_curve })
}

fn clip_grad_norm(g: &mut ProbeGrads<f32>, clip: f32) {
    let mut sq = 0f32;
    {
        let mut add = |s: &[f32]| sq += s.iter().map(|v| v * v).sum::<f32>();
        for cell in [&g.pool.rnn1, &g.pool.rnn2] {
            add(&cell.dw.data);
            add(&cell.du.data);
            add(&cell.db_z);
            add(&cell.db_h);
        }
        add(&g.fc_w.data);
        add(&g.fc_b);
    }
    let norm = sq.sqrt();
    if norm > clip {
        scale_grads(g, clip / norm);
    }
}

fn sgd_step(model: &mut ProbeModel<f32>, g: &ProbeGrads<f32>, vel: &mut Momentum, cfg: &TrainConfig) {
    let step = |p: &mut f32, v: &mut f32, grad: f32| {
        *v = cfg.momentum * *v + grad + cfg.weight_decay * *p;
        *p -= cfg.lr * *v;
    };
    for (cell, gc, vc) in [
        (&mut model.pool.rnn1, &g.pool.rnn1, &mut vel.pool.rnn1),
        (&mut model.pool.rnn2, &g.pool.rnn2, &mut vel.pool.rnn2),
    ] {
        for ((p, v), gr) in cell.w.data.iter_mut().zip(vc.dw.data.iter_mut()).zip(&gc.dw.data) {
            step(p, v, *gr);
        }
        for ((p, v), gr) in cell.u.data.iter_mut().zip(vc.du.data.iter_mut()).zip(&gc.du.data) {
            step(p, v, *gr);
        }
        for ((p, v), gr) in cell.b_z.iter_mut().zip(vc.db_z.iter_mut()).zip(&gc.db_z) {
            step(p, v, *gr);
        }
        for ((p, v), gr) in cell.b_h.iter_mut().zip(vc.db_h.iter_mut()).zip(&gc.db_h) {
            step(p, v, *gr);
        }
    }
    for ((p, v), gr) in model.fc_w.data.iter_mut().zip(vel.fc_w.data.iter_mut()).zip(&g.fc_w.data) {
        step(p, v, *gr);
    }
    for ((p, v), gr) in model.fc_b.iter_mut().zip(vel.fc_b.iter_mut()).zip(&g.fc_b) {
        step(p, v, *gr);
    }
}

// ---------------------------------------------------------------------------
// CIFAR-10
// ---------------------------------------------------------------------------

/// A loaded CIFAR-10 split: 32×32×3 maps in [0,1] plus class indices.
#[derive(Debug, Clone)]
pub struct Cifar10 {
    pub train_images: Vec<TensorMap<f32>>,
    pub train_labels: Vec<u8>,
    pub test_images: Vec<TensorMap<f32>>,
    pub test_labels: Vec<u8>,
}

const CIFAR_RECORD: usize = 1 + 3072;
const CIFAR_PER_FILE: usize = 10_000;

fn io_err(msg: String) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}

fn load_cifar_file(path: &Path, images: &mut Vec<TensorMap<f32>>, labels: &mut Vec<u8>) -> Result<()> {
    let f = File::open(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(f);
    for rec in 0..CIFAR_PER_FILE {
        let label = r.read_u8().map_err(|e| {
            io_err(format!(
                "{}: truncated at byte {} (record {rec}): {e}",
                path.display(),
                rec * CIFAR_RECORD
            ))
        })?;
        if label > 9 {
            return Err(io_err(format!(
                "{}: invalid label {label} at byte {}",
                path.display(),
                rec * CIFAR_RECORD
            )));
        }
        let mut px = vec![0u8; 3072];
        r.read_exact(&mut px).map_err(|e| {
            io_err(format!(
                "{}: truncated at byte {} (record {rec}): {e}",
                path.display(),
                rec * CIFAR_RECORD + 1
            ))
        })?;
        // Stored plane-major (R, G, B planes of 1024); we use interleaved HWC.
        let img = TensorMap::from_fn(32, 32, 3, |i, j, c| px[c * 1024 + i * 32 + j] as f32 / 255.0);
        images.push(img);
        labels.push(label);
    }
    Ok(())
}

/// Load the binary-version CIFAR-10 files from a directory.
pub fn load_cifar10(dir: &Path) -> Result<Cifar10> {
    let mut out = Cifar10 {
        train_images: Vec::new(),
        train_labels: Vec::new(),
        test_images: Vec::new(),
        test_labels: Vec::new(),
    };
    for i in 1..=5 {
        load_cifar_file(&dir.join(format!("data_batch_{i}.bin")), &mut out.train_images, &mut out.train_labels)?;
    }
    load_cifar_file(&dir.join("test_batch.bin"), &mut out.test_images, &mut out.test_labels)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Single-shot pooling comparison
// ---------------------------------------------------------------------------

/// Which single-shot pooling head to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMethod {
    /// Whole-image pooling operator, h₁=h₂=32 (128 features).
    RnnPool,
    /// One 32×32 strided conv with 128 filters (a linear map to 128).
    StridedConv,
    /// Global max pool then 1×1 conv to 128.
    MaxPool,
    /// Global average pool then 1×1 conv to 128.
    AvgPool,
}

/// Accuracies of the four single-shot pooling heads.
#[derive(Debug, Clone)]
pub struct PoolCompareResult {
    pub rnnpool: f64,
    pub strided_conv: f64,
    pub max_pool: f64,
    pub avg_pool: f64,
}

/// Features of one image under a fixed-structure head (linear heads carry
/// their own weights; pooling reductions are parameter-free up front).
fn reduce_image(img: &TensorMap<f32>, method: PoolMethod) -> Vec<f32> {
    match method {
        PoolMethod::RnnPool | PoolMethod::StridedConv => {
            img.data().to_vec() // the trainable map consumes raw pixels
        }
        PoolMethod::MaxPool => {
            let mut m = vec![f32::NEG_INFINITY; 3];
            for (i, &v) in img.data().iter().enumerate() {
                let c = i % 3;
                m[c] = m[c].max(v);
            }
            m
        }
        PoolMethod::AvgPool => {
            let mut m = vec![0.0; 3];
            for (i, &v) in img.data().iter().enumerate() {
                m[i % 3] += v;
            }
            let n = (img.data().len() / 3) as f32;
            m.iter().map(|v| v / n).collect()
        }
    }
}

/// Train one linear-feature head (features → 128 → ReLU → FC 10) with SGD.
/// Used for every method except the pooling operator, whose features come
/// from a trained probe model instead.
fn train_linear_head(
    feats: &[Vec<f32>],
    labels: &[u8],
    test_feats: &[Vec<f32>],
    test_labels: &[u8],
    lr: f32,
    epochs: usize,
    seed: u64,
) -> f64 {
    let d = feats[0].len();
    let hidden = 128;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a1 = 1.0 / (d as f32).sqrt();
    let a2 = 1.0 / (hidden as f32).sqrt();
    let mut w1: Vec<f32> = (0..hidden * d).map(|_| rng.gen_range(-a1..a1)).collect();
    let mut b1 = vec![0.0f32; hidden];
    let mut w2: Vec<f32> = (0..10 * hidden).map(|_| rng.gen_range(-a2..a2)).collect();
    let mut b2 = vec![0.0f32; 10];
    let mut order: Vec<usize> = (0..feats.len()).collect();
    let (mom, wd) = (0.9f32, 4e-5f32);
    let mut vw1 = vec![0.0f32; w1.len()];
    let mut vb1 = vec![0.0f32; b1.len()];
    let mut vw2 = vec![0.0f32; w2.len()];
    let mut vb2 = vec![0.0f32; b2.len()];
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(64) {
            let mut gw1 = vec![0.0f32; w1.len()];
            let mut gb1 = vec![0.0f32; b1.len()];
            let mut gw2 = vec![0.0f32; w2.len()];
            let mut gb2 = vec![0.0f32; b2.len()];
            for &s in chunk {
                let x = &feats[s];
                let mut h: Vec<f32> = (0..hidden)
                    .map(|k| b1[k] + x.iter().enumerate().map(|(i, &v)| v * w1[k * d + i]).sum::<f32>())
                    .collect();
                let mask: Vec<bool> = h.iter().map(|&v| v > 0.0).collect();
                for v in h.iter_mut() {
                    *v = v.max(0.0);
                }
                let logits: Vec<f32> = (0..10)
                    .map(|k| b2[k] + h.iter().enumerate().map(|(i, &v)| v * w2[k * hidden + i]).sum::<f32>())
                    .collect();
                let p = softmax(&logits);
                let y = labels[s] as usize;
                let mut dh = vec![0.0f32; hidden];
                for k in 0..10 {
                    let dl = p[k] - if k == y { 1.0 } else { 0.0 };
                    gb2[k] += dl;
                    for i in 0..hidden {
                        gw2[k * hidden + i] += dl * h[i];
                        dh[i] += dl * w2[k * hidden + i];
                    }
                }
                for i in 0..hidden {
                    if !mask[i] {
                        continue;
                    }
                    gb1[i] += dh[i];
                    for (j, &v) in x.iter().enumerate() {
                        gw1[i * d + j] += dh[i] * v;
                    }
                }
            }
            let inv = 1.0 / chunk.len() as f32;
            let step = |p: &mut [f32], v: &mut [f32], g: &[f32]| {
                for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = mom * *v + g * inv + wd * *p;
                    *p -= lr * *v;
                }
            };
            step(&mut w1, &mut vw1, &gw1);
            step(&mut b1, &mut vb1, &gb1);
            step(&mut w2, &mut vw2, &gw2);
            step(&mut b2, &mut vb2, &gb2);
        }
    }
    // Test accuracy.
    let mut correct = 0usize;
    for (x, &y) in test_feats.iter().zip(test_labels) {
        let h: Vec<f32> = (0..hidden)
            .map(|k| (b1[k] + x.iter().enumerate().map(|(i, &v)| v * w1[k * d + i]).sum::<f32>()).max(0.0))
            .collect();
        let logits: Vec<f32> = (0..10)
            .map(|k| b2[k] + h.iter().enumerate().map(|(i, &v)| v * w2[k * hidden + i]).sum::<f32>())
            .collect();
        let pred = logits.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        if pred == y as usize {
            correct += 1;
        }
    }
    correct as f64 / test_labels.len().max(1) as f64
}

/// Train the four single-shot pooling heads on CIFAR-10 and report test
/// accuracies. `subset` limits the training-set size (0 = all).
pub fn single_shot_pool_compare(data: &Cifar10, seed: u64, subset: usize, epochs: usize) -> Result<PoolCompareResult> {
    let n = if subset == 0 { data.train_images.len() } else { subset.min(data.train_images.len()) };
    let n_test = data.test_images.len().min(2_000);
    let train_imgs = &data.train_images[..n];
    let train_labels = &data.train_labels[..n];
    let test_imgs = &data.test_images[..n_test];
    let test_labels = &data.test_labels[..n_test];

    // Non-recurrent heads: fixed reduction, trained linear stack.
    let mut acc = [0.0f64; 3];
    for (slot, method) in [PoolMethod::StridedConv, PoolMethod::MaxPool, PoolMethod::AvgPool]
        .into_iter()
        .enumerate()
    {
        let feats: Vec<Vec<f32>> = train_imgs.iter().map(|i| reduce_image(i, method)).collect();
        let tfeats: Vec<Vec<f32>> = test_imgs.iter().map(|i| reduce_image(i, method)).collect();
        let lr = if method == PoolMethod::StridedConv { 0.02 } else { 0.05 };
        acc[slot] = train_linear_head(&feats, train_labels, &tfeats, test_labels, lr, epochs, seed);
    }

    // Pooling-operator head: whole-image 32×32×3 patch, h₁=h₂=32.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = RnnPoolParams::random(32, 32, 3, 32, 32, 0.3, &mut rng)?;
    let mut model = ProbeModel {
        pool,
        fc_w: Mat {
            rows: 10,
            cols: 128,
            data: (0..10 * 128).map(|_| rng.gen_range(-0.09f32..0.09)).collect(),
        },
        fc_b: vec![0.0; 10],
    };
    let mut ds = SynthDataset {
        images: train_imgs.to_vec(),
        labels: train_labels
            .iter()
            .map(|&y| {
                let mut v = vec![0.0; 10];
                v[y as usize] = 1.0;
                v
            })
            .collect(),
        task: Task::LinesMulticlass, // multiclass loss/accuracy semantics
    };
    ds.images.extend(test_imgs.iter().cloned());
    ds.labels.extend(test_labels.iter().map(|&y| {
        let mut v = vec![0.0; 10];
        v[y as usize] = 1.0;
        v
    }));
    // Hold out exactly the appended test images.
    let cfg = TrainConfig {
        lr: 0.05,
        epochs,
        seed,
        test_fraction: n_test as f32 / (n + n_test) as f32,
        ..TrainConfig::default()
    };
    // train_probe shuffles before splitting; evaluate explicitly instead.
    let train_ds = SynthDataset {
        images: ds.images[..n].to_vec(),
        labels: ds.labels[..n].to_vec(),
        task: ds.task,
    };
    let mut cfg2 = cfg;
    cfg2.test_fraction = 0.02; // tiny internal holdout; real eval below
    train_probe(&mut model, &train_ds, &cfg2)?;
    let test_ds = SynthDataset {
        images: test_imgs.to_vec(),
        labels: ds.labels[n..].to_vec(),
        task: ds.task,
    };
    let idx: Vec<usize> = (0..test_ds.images.len()).collect();
    let rnn_acc = evaluate(&model, &test_ds, &idx)?;

    Ok(PoolCompareResult {
        rnnpool: rnn_acc,
        strided_conv: acc[0],
        max_pool: acc[1],
        avg_pool: acc[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        let a = gen_lines_multiclass(30, 32, 0.1, 5).unwrap();
        let b = gen_lines_multiclass(30, 32, 0.1, 5).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.data(), y.data());
        }
        assert_eq!(a.labels, b.labels);
        let c = gen_shapes_multilabel(10, 64, 0.1, 5).unwrap();
        let d = gen_shapes_multilabel(10, 64, 0.1, 5).unwrap();
        for (x, y) in c.images.iter().zip(&d.images) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn invalid_size_rejected() {
        assert!(gen_lines_multiclass(1, 48, 0.0, 0).is_err());
    }

    #[test]
    fn horizontal_class_is_row_aligned() {
        let ds = gen_lines_multiclass(9, 32, 0.0, 3).unwrap();
        // Class 0 = angle 0° = horizontal.
        let img = &ds.images[0];
        assert_eq!(ds.labels[0][0], 1.0);
        let mut rows: Vec<usize> = Vec::new();
        for i in 0..32 {
            for j in 0..32 {
                if img.get(i, j, 0) > 0.0 {
                    rows.push(i);
                }
            }
        }
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|&r| r == rows[0]), "horizontal line spans rows {rows:?}");
    }

    #[test]
    fn class_histogram_is_stratified() {
        let ds = gen_lines_multiclass(900, 32, 0.1, 1).unwrap();
        let mut hist = [0usize; NUM_ANGLES];
        for y in &ds.labels {
            hist[y.iter().position(|&v| v > 0.0).unwrap()] += 1;
        }
        assert!(hist.iter().all(|&h| h == 100), "{hist:?}");
    }

    #[test]
    fn multilabel_has_at_least_one_label() {
        for ds in [
            gen_lines_multilabel(50, 32, 0.1, 2).unwrap(),
            gen_shapes_multilabel(50, 64, 0.1, 2).unwrap(),
        ] {
            for y in &ds.labels {
                assert!(y.iter().any(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn label_marginals_roughly_balanced() {
        let ds = gen_lines_multilabel(1000, 32, 0.1, 7).unwrap();
        let mut marg = [0f64; NUM_ANGLES];
        for y in &ds.labels {
            for (m, &v) in marg.iter_mut().zip(y) {
                *m += v as f64;
            }
        }
        for m in marg {
            let p = m / 1000.0;
            assert!(p > 0.2 && p < 0.45, "marginal {p}");
        }
    }

    #[test]
    fn zero_lr_freezes_accuracy() {
        let ds = gen_lines_multiclass(60, 32, 0.1, 4).unwrap();
        let mut model = ProbeModel::random(32, 4, 4, NUM_ANGLES, 0).unwrap();
        let cfg = TrainConfig { lr: 0.0, epochs: 3, ..TrainConfig::default() };
        let r = train_probe(&mut model, &ds, &cfg).unwrap();
        assert!(r.accuracy_curve.windows(2).all(|w| w[0] == w[1]), "{:?}", r.accuracy_curve);
    }

    #[test]
    fn training_is_reproducible() {
        let ds = gen_lines_multiclass(40, 32, 0.1, 4).unwrap();
        let run = || {
            let mut model = ProbeModel::random(32, 4, 4, NUM_ANGLES, 1).unwrap();
            let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
            train_probe(&mut model, &ds, &cfg).unwrap();
            model
        };
        let (a, b) = (run(), run());
        assert_eq!(a.pool.rnn1.w.data, b.pool.rnn1.w.data);
        assert_eq!(a.fc_w.data, b.fc_w.data);
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let ds = gen_lines_multiclass(3, 32, 0.1, 8).unwrap();
        let model64: ProbeModel<f64> = ProbeModel::random(32, 3, 3, NUM_ANGLES, 2).unwrap().cast();
        let images64: Vec<TensorMap<f64>> = ds.images.iter().map(|i| i.cast()).collect();
        let imgs: Vec<&TensorMap<f64>> = images64.iter().collect();
        let labels: Vec<&[f32]> = ds.labels.iter().map(|l| l.as_slice()).collect();
        let (_, g) = batch_grads(&model64, &imgs, &labels, ds.task).unwrap();
        let eps = 1e-6;
        // Spot-check a handful of parameters across all groups.
        let loss_of = |m: &ProbeModel<f64>| batch_grads(m, &imgs, &labels, ds.task).unwrap().0;
        let checks: Vec<(f64, f64)> = vec![
            (g.pool.rnn1.dw.data[1], {
                let mut m = model64.clone();
                m.pool.rnn1.w.data[1] += eps;
                let hi = loss_of(&m);
                m.pool.rnn1.w.data[1] -= 2.0 * eps;
                (hi - loss_of(&m)) / (2.0 * eps)
            }),
            (g.pool.rnn2.du.data[2], {
                let mut m = model64.clone();
                m.pool.rnn2.u.data[2] += eps;
                let hi = loss_of(&m);
                m.pool.rnn2.u.data[2] -= 2.0 * eps;
                (hi - loss_of(&m)) / (2.0 * eps)
            }),
            (g.pool.rnn1.db_z[0], {
                let mut m = model64.clone();
                m.pool.rnn1.b_z[0] += eps;
                let hi = loss_of(&m);
                m.pool.rnn1.b_z[0] -= 2.0 * eps;
                (hi - loss_of(&m)) / (2.0 * eps)
            }),
            (g.fc_w.data[5], {
                let mut m = model64.clone();
                m.fc_w.data[5] += eps;
                let hi = loss_of(&m);
                m.fc_w.data[5] -= 2.0 * eps;
                (hi - loss_of(&m)) / (2.0 * eps)
            }),
        ];
        for (analytic, numeric) in checks {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "grad mismatch: analytic {analytic}, numeric {numeric}");
        }
    }

    #[test]
    fn cifar_loader_rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=5 {
            std::fs::write(dir.path().join(format!("data_batch_{i}.bin")), vec![0u8; 100]).unwrap();
        }
        std::fs::write(dir.path().join("test_batch.bin"), vec![0u8; 100]).unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Io(e) if e.to_string().contains("byte")), "{err}");
    }

    #[test]
    fn cifar_loader_reads_valid_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![0u8; CIFAR_RECORD * CIFAR_PER_FILE];
        for r in 0..CIFAR_PER_FILE {
            rec[r * CIFAR_RECORD] = (r % 10) as u8;
            rec[r * CIFAR_RECORD + 1] = 200; // first red pixel
        }
        for i in 1..=5 {
            std::fs::write(dir.path().join(format!("data_batch_{i}.bin")), &rec).unwrap();
        }
        std::fs::write(dir.path().join("test_batch.bin"), &rec).unwrap();
        let data = load_cifar10(dir.path()).unwrap();
        assert_eq!(data.train_images.len(), 50_000);
        assert_eq!(data.test_images.len(), 10_000);
        assert_eq!(data.train_labels[3], 3);
        assert!((data.train_images[0].get(0, 0, 0) - 200.0 / 255.0).abs() < 1e-6);
        assert_eq!(data.train_images[0].get(0, 0, 1), 0.0);
    }
}
