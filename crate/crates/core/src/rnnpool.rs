//! The RNNPool operator: an r×c×k patch is reduced to a 1×1×4h₂ summary by
//! two FastGRNN cells, plus the strided layer that sweeps one shared operator
//! across an activation map, and a backward pass for toy-scale training.
//!
//! Pipeline for one patch (hidden states start at zero):
//!
//! 1. The first cell runs over every row (c steps each) giving r row
//!    summaries, and over every column (r steps each) giving c column
//!    summaries.
//! 2. The second cell runs bidirectionally over the row summaries and over the
//!    column summaries.
//! 3. The output is the concatenation `[q_r1, q_r2, q_c1, q_c2]` of the four
//!    final hidden states, length 4h₂ regardless of r and c.

use crate::error::{Error, Result};
use crate::fastgrnn::{CellGrads, FastGrnnCell, StepCache};
use crate::tensor::{extract_patch, PadPolicy, PatchSpec, TensorMap};
use crate::Scalar;

/// Parameters of one RNNPool operator: the two cells and the patch geometry.
#[derive(Debug, Clone)]
pub struct RnnPoolParams<S: Scalar = f32> {
    pub rnn1: FastGrnnCell<S>,
    pub rnn2: FastGrnnCell<S>,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub in_channels: usize,
}

impl<S: Scalar> RnnPoolParams<S> {
    pub fn new(rnn1: FastGrnnCell<S>, rnn2: FastGrnnCell<S>, r: usize, c: usize, k: usize) -> Result<Self> {
        if rnn1.input_dim() != k {
            return Err(Error::Shape(format!(
                "first cell expects input dim {k}, has {}",
                rnn1.input_dim()
            )));
        }
        if rnn2.input_dim() != rnn1.hidden_dim() {
            return Err(Error::Shape(format!(
                "second cell input dim {} must equal first cell hidden dim {}",
                rnn2.input_dim(),
                rnn1.hidden_dim()
            )));
        }
        if r == 0 || c == 0 || k == 0 {
            return Err(Error::Arg("patch dims must be positive".into()));
        }
        Ok(RnnPoolParams {
            rnn1,
            rnn2,
            patch_rows: r,
            patch_cols: c,
            in_channels: k,
        })
    }

    /// Seeded random operator (uniform weights) for tests and training.
    pub fn random(
        r: usize,
        c: usize,
        k: usize,
        h1: usize,
        h2: usize,
        scale: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        let rnn1 = FastGrnnCell::random(k, h1, scale, rng)?;
        let rnn2 = FastGrnnCell::random(h1, h2, scale, rng)?;
        Self::new(rnn1, rnn2, r, c, k)
    }

    pub fn h1(&self) -> usize {
        self.rnn1.hidden_dim()
    }

    pub fn h2(&self) -> usize {
        self.rnn2.hidden_dim()
    }

    /// Output vector length: always 4·h₂.
    pub fn out_dim(&self) -> usize {
        4 * self.h2()
    }

    pub fn param_count(&self) -> usize {
        self.rnn1.param_count() + self.rnn2.param_count()
    }

    pub fn cast<T: Scalar>(&self) -> RnnPoolParams<T> {
        RnnPoolParams {
            rnn1: self.rnn1.cast(),
            rnn2: self.rnn2.cast(),
            patch_rows: self.patch_rows,
            patch_cols: self.patch_cols,
            in_channels: self.in_channels,
        }
    }
}

/// A strided application of one shared operator across a map.
#[derive(Debug, Clone)]
pub struct RnnPoolLayerCfg<S: Scalar = f32> {
    pub params: RnnPoolParams<S>,
    pub stride: usize,
    pub pad: PadPolicy,
}

/// Output grid of the strided layer: ceil-division with right/bottom zero
/// padding, so patch (i, j) covers rows [i·s, i·s+r).
pub fn out_grid_dims(h: usize, w: usize, _r: usize, _c: usize, s: usize) -> (usize, usize) {
    (h.div_ceil(s), w.div_ceil(s))
}

fn check_patch<S: Scalar>(params: &RnnPoolParams<S>, patch: &TensorMap<S>) -> Result<()> {
    if patch.shape() != (params.patch_rows, params.patch_cols, params.in_channels) {
        return Err(Error::Shape(format!(
            "patch shape {:?} does not match operator ({}, {}, {})",
            patch.shape(),
            params.patch_rows,
            params.patch_cols,
            params.in_channels
        )));
    }
    Ok(())
}

fn run_cell<S: Scalar>(cell: &FastGrnnCell<S>, seq: impl Iterator<Item = Vec<S>>) -> Result<Vec<S>> {
    let mut h = vec![S::ZERO; cell.hidden_dim()];
    let mut any = false;
    for x in seq {
        h = cell.step(&x, &h)?;
        any = true;
    }
    if !any {
        return Err(Error::Arg("empty sequence".into()));
    }
    Ok(h)
}

/// Forward pass of the operator on one patch; returns the 4h₂ summary.
pub fn rnnpool_forward<S: Scalar>(params: &RnnPoolParams<S>, patch: &TensorMap<S>) -> Result<Vec<S>> {
    check_patch(params, patch)?;
    let (r, c, k) = patch.shape();
    let pixel = |i: usize, j: usize| (0..k).map(|ch| patch.get(i, j, ch)).collect::<Vec<S>>();

    let mut p_rows = Vec::with_capacity(r);
    for i in 0..r {
        p_rows.push(run_cell(&params.rnn1, (0..c).map(|j| pixel(i, j)))?);
    }
    let mut p_cols = Vec::with_capacity(c);
    for j in 0..c {
        p_cols.push(run_cell(&params.rnn1, (0..r).map(|i| pixel(i, j)))?);
    }

    let q_r1 = run_cell(&params.rnn2, p_rows.iter().cloned())?;
    let q_r2 = run_cell(&params.rnn2, p_rows.iter().rev().cloned())?;
    let q_c1 = run_cell(&params.rnn2, p_cols.iter().cloned())?;
    let q_c2 = run_cell(&params.rnn2, p_cols.iter().rev().cloned())?;

    let mut out = Vec::with_capacity(params.out_dim());
    for q in [q_r1, q_r2, q_c1, q_c2] {
        out.extend(q);
    }
    Ok(out)
}

/// All step caches of one forward pass, kept for backpropagation.
struct ForwardTrace<S: Scalar> {
    row_sweeps: Vec<Vec<StepCache<S>>>,
    col_sweeps: Vec<Vec<StepCache<S>>>,
    agg: [Vec<StepCache<S>>; 4],
}

fn sweep_cached<S: Scalar>(
    cell: &FastGrnnCell<S>,
    seq: impl Iterator<Item = Vec<S>>,
) -> Result<Vec<StepCache<S>>> {
    let mut h = vec![S::ZERO; cell.hidden_dim()];
    let mut caches = Vec::new();
    for x in seq {
        let cache = cell.step_cached(&x, &h)?;
        h = cache.h.clone();
        caches.push(cache);
    }
    Ok(caches)
}

fn forward_traced<S: Scalar>(params: &RnnPoolParams<S>, patch: &TensorMap<S>) -> Result<ForwardTrace<S>> {
    check_patch(params, patch)?;
    let (r, c, k) = patch.shape();
    let pixel = |i: usize, j: usize| (0..k).map(|ch| patch.get(i, j, ch)).collect::<Vec<S>>();
    let mut row_sweeps = Vec::with_capacity(r);
    for i in 0..r {
        row_sweeps.push(sweep_cached(&params.rnn1, (0..c).map(|j| pixel(i, j)))?);
    }
    let mut col_sweeps = Vec::with_capacity(c);
    for j in 0..c {
        col_sweeps.push(sweep_cached(&params.rnn1, (0..r).map(|i| pixel(i, j)))?);
    }
    let p_rows: Vec<Vec<S>> = row_sweeps.iter().map(|s| s.last().unwrap().h.clone()).collect();
    let p_cols: Vec<Vec<S>> = col_sweeps.iter().map(|s| s.last().unwrap().h.clone()).collect();
    let agg = [
        sweep_cached(&params.rnn2, p_rows.iter().cloned())?,
        sweep_cached(&params.rnn2, p_rows.iter().rev().cloned())?,
        sweep_cached(&params.rnn2, p_cols.iter().cloned())?,
        sweep_cached(&params.rnn2, p_cols.iter().rev().cloned())?,
    ];
    Ok(ForwardTrace {
        row_sweeps,
        col_sweeps,
        agg,
    })
}

/// Gradients of one backward pass through the operator.
#[derive(Debug, Clone)]
pub struct RnnPoolGrads<S: Scalar = f32> {
    pub rnn1: CellGrads<S>,
    pub rnn2: CellGrads<S>,
    pub d_patch: TensorMap<S>,
}

impl<S: Scalar> RnnPoolGrads<S> {
    pub fn zeros_like(params: &RnnPoolParams<S>) -> Self {
        RnnPoolGrads {
            rnn1: CellGrads::zeros_like(&params.rnn1),
            rnn2: CellGrads::zeros_like(&params.rnn2),
            d_patch: TensorMap::zeros(params.patch_rows, params.patch_cols, params.in_channels),
        }
    }

    pub fn add_assign(&mut self, other: &RnnPoolGrads<S>) {
        self.rnn1.add_assign(&other.rnn1);
        self.rnn2.add_assign(&other.rnn2);
        for (a, b) in self.d_patch.data_mut().iter_mut().zip(other.d_patch.data()) {
            *a += *b;
        }
    }
}

/// Backpropagate `upstream` (dL/d output, length 4h₂) through one forward
/// pass on `patch`. Cell gradients accumulate over all four aggregation runs
/// and over every row/column sweep of the shared first cell.
pub fn rnnpool_backward<S: Scalar>(
    params: &RnnPoolParams<S>,
    patch: &TensorMap<S>,
    upstream: &[S],
) -> Result<RnnPoolGrads<S>> {
    if upstream.len() != params.out_dim() {
        return Err(Error::Shape(format!(
            "upstream length {} != 4·h2 = {}",
            upstream.len(),
            params.out_dim()
        )));
    }
    let trace = forward_traced(params, patch)?;
    let (r, c, _) = patch.shape();
    let h2 = params.h2();
    let mut grads = RnnPoolGrads::zeros_like(params);

    // dL/d p-vector accumulated from the aggregation runs.
    let mut dp_rows = vec![vec![S::ZERO; params.h1()]; r];
    let mut dp_cols = vec![vec![S::ZERO; params.h1()]; c];

    for (which, caches) in trace.agg.iter().enumerate() {
        let dh_final = &upstream[which * h2..(which + 1) * h2];
        let mut dh = dh_final.to_vec();
        // Walk the run backwards; step t consumed the t-th element of the
        // (possibly reversed) p sequence.
        for (t, cache) in caches.iter().enumerate().rev() {
            let (dx, dh_prev) = params.rnn2.step_backward(cache, &dh, &mut grads.rnn2);
            let len = caches.len();
            let target = match which {
                0 => &mut dp_rows[t],
                1 => &mut dp_rows[len - 1 - t],
                2 => &mut dp_cols[t],
                _ => &mut dp_cols[len - 1 - t],
            };
            for (a, b) in target.iter_mut().zip(&dx) {
                *a += *b;
            }
            dh = dh_prev;
        }
    }

    // Row sweeps: the final hidden state of sweep i is p_rows[i].
    for (i, caches) in trace.row_sweeps.iter().enumerate() {
        let mut dh = dp_rows[i].clone();
        for (j, cache) in caches.iter().enumerate().rev() {
            let (dx, dh_prev) = params.rnn1.step_backward(cache, &dh, &mut grads.rnn1);
            for (ch, g) in dx.into_iter().enumerate() {
                let cur = grads.d_patch.get(i, j, ch);
                grads.d_patch.set(i, j, ch, cur + g);
            }
            dh = dh_prev;
        }
    }
    // Column sweeps: step t of sweep j consumed pixel (t, j).
    for (j, caches) in trace.col_sweeps.iter().enumerate() {
        let mut dh = dp_cols[j].clone();
        for (t, cache) in caches.iter().enumerate().rev() {
            let (dx, dh_prev) = params.rnn1.step_backward(cache, &dh, &mut grads.rnn1);
            for (ch, g) in dx.into_iter().enumerate() {
                let cur = grads.d_patch.get(t, j, ch);
                grads.d_patch.set(t, j, ch, cur + g);
            }
            dh = dh_prev;
        }
    }
    Ok(grads)
}

/// Strided layer forward: every output voxel (i, j, :) is the operator applied
/// to the zero-padded patch anchored at (i·s, j·s). Patches are independent;
/// no intermediate full-resolution map is ever formed.
pub fn rnnpool_layer_forward<S: Scalar>(
    cfg: &RnnPoolLayerCfg<S>,
    map: &TensorMap<S>,
) -> Result<TensorMap<S>> {
    let p = &cfg.params;
    if map.c() != p.in_channels {
        return Err(Error::Shape(format!(
            "map has {} channels, operator expects {}",
            map.c(),
            p.in_channels
        )));
    }
    let (oh, ow) = out_grid_dims(map.h(), map.w(), p.patch_rows, p.patch_cols, cfg.stride);
    let mut out = TensorMap::zeros(oh, ow, p.out_dim());
    for gi in 0..oh {
        for gj in 0..ow {
            let patch = extract_patch(
                map,
                &PatchSpec {
                    top: (gi * cfg.stride) as isize,
                    left: (gj * cfg.stride) as isize,
                    rows: p.patch_rows,
                    cols: p.patch_cols,
                    pad: cfg.pad,
                },
            )?;
            let v = rnnpool_forward(p, &patch)?;
            for (ch, val) in v.into_iter().enumerate() {
                out.set(gi, gj, ch, val);
            }
        }
    }
    Ok(out)
}

/// Cost of the strided layer under the full per-patch convention:
/// `2·r·c` first-cell steps (row plus column sweeps over every pixel) and
/// `2·(r+c)` second-cell steps (bidirectional over both summary sequences),
/// times the H'×W' grid. Returns (madds, parameter count).
pub fn rnnpool_cost<S: Scalar>(
    params: &RnnPoolParams<S>,
    h: usize,
    w: usize,
    s: usize,
) -> (usize, usize) {
    let (oh, ow) = out_grid_dims(h, w, params.patch_rows, params.patch_cols, s);
    (per_patch_madds_full(params) * oh * ow, params.param_count())
}

/// Full per-patch multiply-accumulate count (both pipelines, all sweeps).
pub fn per_patch_madds_full<S: Scalar>(params: &RnnPoolParams<S>) -> usize {
    let (r, c) = (params.patch_rows, params.patch_cols);
    2 * r * c * params.rnn1.step_madds() + 2 * (r + c) * params.rnn2.step_madds()
}

/// Per-patch cost of the aggregation stage only: the `2·(r+c)` bidirectional
/// second-cell steps. Network-level cost reports use this convention by
/// default (the row/column summary sweeps stream over data that replaced
/// convolutions are no longer producing); the conservative full convention is
/// [`per_patch_madds_full`].
pub fn per_patch_madds_aggregator<S: Scalar>(params: &RnnPoolParams<S>) -> usize {
    2 * (params.patch_rows + params.patch_cols) * params.rnn2.step_madds()
}

/// Instrumented evaluation of one cell step that counts every multiply in the
/// general form of the recurrence (matrix–vector products plus the four
/// elementwise products z⊙h_prev, ζ·(1−z), (ζ(1−z))⊙h̃, ν⊙h̃). Serves as an
/// independent oracle for [`FastGrnnCell::step_madds`].
pub fn traced_step_madds<S: Scalar>(cell: &FastGrnnCell<S>, x: &[S], h_prev: &[S]) -> Result<usize> {
    cell.step(x, h_prev)?; // validate dims; the count below mirrors that evaluation
    let mut mults = 0usize;
    let h = cell.hidden_dim();
    mults += h * cell.input_dim(); // W·x
    mults += h * h; // U·h_prev
    mults += 4 * h; // the four elementwise products
    Ok(mults)
}
