//! Peak activation-memory analysis.
//!
//! Four accounting conventions are provided:
//! * a no-recompute lower bound on the live intermediate set of any schedule
//!   over a network segment,
//! * the row-first schedule upper bound for the same segment (optionally with
//!   the input/output maps included),
//! * the layer-by-layer convention with per-block charging rules, and
//! * closed-form per-block footprints.
//!
//! Plus an estimate of the extra multiply-adds incurred when an activation is
//! rebuilt patch-by-patch to fit a memory budget.

use crate::error::{Error, Result};
use crate::graph::{lower, infer_shapes, LayerSpec, Lowered, NetworkSpec, PrimOp};
use crate::tensor::Dtype;
use serde::Serialize;

/// Contiguous run of layers; `start`/`end` are boundary indices into the
/// `infer_shapes` list (0 = network input, `layers.len()` = final output).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

/// Memory-accounting convention used in a [`MemoryReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    LowerBound,
    RowwiseSchedule,
    RowwiseWithIo,
    LayerByLayer,
}

/// Result of a memory analysis.
#[derive(Debug, Clone, Serialize)]
pub struct MemoryReport {
    pub convention: Convention,
    pub peak_bytes: usize,
    /// (label, bytes) contributions; meaning depends on the convention.
    pub contributions: Vec<(String, usize)>,
    /// Human description of the schedule attaining (or charged by) the bound.
    pub schedule: String,
}

impl MemoryReport {
    pub fn peak_mib(&self) -> f64 {
        self.peak_bytes as f64 / (1024.0 * 1024.0)
    }
}

// ---------------------------------------------------------------------------
// Receptive fields over a segment
// ---------------------------------------------------------------------------

/// Receptive-field data for one interior activation of a segment.
#[derive(Debug, Clone, Serialize)]
pub struct ActInfo {
    pub name: String,
    /// Row extent of the segment output's receptive field on this activation.
    pub field: usize,
    /// Cumulative row stride from this activation to the segment output.
    pub cum_stride: usize,
    /// Retained-row overlap: field − cum_stride, clamped at 0.
    pub overlap: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Produced by a pooling op (no weights; excluded from row retention).
    pub pool: bool,
    /// Output participates in a dense-block concatenation: every computed row
    /// must be retained until the block completes, so `field` full rows are
    /// held instead of `overlap`.
    pub concat_member: bool,
    /// Structural node (concat/add), not a separately stored activation.
    pub structural: bool,
}

/// Receptive-field analysis of a segment.
#[derive(Debug, Clone, Serialize)]
pub struct ReceptiveInfo {
    pub acts: Vec<ActInfo>,
    /// Field of the segment output on the segment input, in rows.
    pub input_field: usize,
    /// Total row stride across the segment.
    pub total_stride: usize,
    pub in_shape: (usize, usize, usize),
    pub out_shape: (usize, usize, usize),
}

fn window_and_stride(op: &PrimOp) -> (usize, usize) {
    match op {
        PrimOp::Conv { kh, stride, .. } => (*kh, *stride),
        PrimOp::Pool { k, stride, .. } => (*k, *stride),
        PrimOp::RnnPool { r, stride, .. } => (*r, *stride),
        PrimOp::Input | PrimOp::Fc | PrimOp::Add | PrimOp::Concat => (1, 1),
    }
}

/// Per-activation receptive fields of `segment` of `net`.
///
/// The recurrence runs backward from the segment output: a consumer with
/// window `w` and stride `s` maps a field of `f` rows on its output to
/// `(f−1)·s + w` rows on its input; branching points take the maximum over
/// consumers.
pub fn receptive_fields(net: &NetworkSpec, segment: Segment) -> Result<ReceptiveInfo> {
    if segment.end <= segment.start || segment.end > net.layers.len() {
        return Err(Error::Analysis(format!(
            "segment {}..{} invalid for {} layers",
            segment.start,
            segment.end,
            net.layers.len()
        )));
    }
    let lowered = lower(net)?;
    let in_node = if segment.start == 0 {
        0
    } else {
        lowered.layer_out[segment.start - 1]
    };
    let out_node = lowered.layer_out[segment.end - 1];

    // Collect the interior: nodes strictly between in_node and out_node that
    // feed out_node. The construction order is topological, so a descending
    // scan suffices.
    let mut member = vec![false; lowered.nodes.len()];
    member[out_node] = true;
    for id in (0..=out_node).rev() {
        if !member[id] {
            continue;
        }
        for &src in &lowered.nodes[id].inputs {
            if src == in_node {
                continue;
            }
            if src < in_node {
                return Err(Error::Analysis(format!(
                    "segment has a side input ({}) from outside its range",
                    lowered.nodes[src].name
                )));
            }
            member[src] = true;
        }
    }
    for id in in_node + 1..out_node {
        if member[id] {
            if matches!(lowered.nodes[id].op, PrimOp::Fc) {
                return Err(Error::Analysis("segments may not contain fully-connected layers".into()));
            }
        }
    }

    // Backward field recurrence.
    let mut field = vec![0usize; lowered.nodes.len()];
    let mut cum = vec![0usize; lowered.nodes.len()];
    field[out_node] = 1;
    cum[out_node] = 1;
    for id in (0..=out_node).rev() {
        if !(member[id] || id == in_node) || field[id] == 0 {
            // Sources get their values pushed from consumers below.
        }
        if field[id] == 0 {
            continue;
        }
        let (w, s) = window_and_stride(&lowered.nodes[id].op);
        let f_src = (field[id] - 1) * s + w;
        let s_src = cum[id] * s;
        for &src in &lowered.nodes[id].inputs {
            if member[src] || src == in_node {
                field[src] = field[src].max(f_src);
                cum[src] = cum[src].max(s_src);
            }
        }
    }

    let acts = (in_node + 1..out_node)
        .filter(|&id| member[id])
        .map(|id| {
            let n = &lowered.nodes[id];
            ActInfo {
                name: n.name.clone(),
                field: field[id],
                cum_stride: cum[id],
                overlap: field[id].saturating_sub(cum[id]),
                channels: n.shape.2,
                height: n.shape.0,
                width: n.shape.1,
                pool: matches!(n.op, PrimOp::Pool { .. } | PrimOp::RnnPool { .. }),
                concat_member: n.dense_member,
                structural: matches!(n.op, PrimOp::Add | PrimOp::Concat),
            }
        })
        .collect();

    Ok(ReceptiveInfo {
        acts,
        input_field: field[in_node],
        total_stride: cum[in_node],
        in_shape: lowered.nodes[in_node].shape,
        out_shape: lowered.nodes[out_node].shape,
    })
}

// ---------------------------------------------------------------------------
// Lower bound & row-first schedule bound
// ---------------------------------------------------------------------------

const F32_BYTES: usize = 4;

/// No-recompute lower bound (bytes, float32) on the live set of intermediate
/// activations of any schedule computing the segment, for an m×n output tile.
///
/// Elements: Σ_q c_q · overlap_q · min(S_q·m − 1, S_q·n − 1) over interior
/// weighted activations, where overlap_q is the retained-row count
/// (field − cumulative stride, clamped at 0; a 1×1-only layer contributes 0).
pub fn lower_bound_no_recompute(net: &NetworkSpec, segment: Segment, m: usize, n: usize) -> Result<usize> {
    let info = receptive_fields(net, segment)?;
    let mut elems = 0usize;
    for a in info.acts.iter().filter(|a| !a.structural) {
        let width = (a.cum_stride * m).saturating_sub(1).min((a.cum_stride * n).saturating_sub(1));
        elems += a.channels * a.overlap * width;
    }
    Ok(elems * F32_BYTES)
}

/// Row-first schedule bound for a segment (bytes, float32).
///
/// Interior charge: each weighted activation retains `overlap` rows at its
/// own full width (dense-concatenation members retain `field` rows, since a
/// member's rows stay live until the whole block has been consumed); pool
/// outputs are recomputable slices and are not charged. With `include_io`,
/// adds max{|I| + k₀·w_out·c_out, |O| + k₀·w_in·c_in} where k₀ is the
/// retained-row overlap of the segment input. With `include_padding`, each
/// retained row is widened by its overlap on both ends combined.
pub fn rowwise_schedule_bound(
    net: &NetworkSpec,
    segment: Segment,
    include_io: bool,
    include_padding: bool,
) -> Result<MemoryReport> {
    let info = receptive_fields(net, segment)?;
    let mut contributions = Vec::new();
    let mut elems = 0usize;
    for a in &info.acts {
        if a.structural || a.pool {
            continue;
        }
        let rows = if a.concat_member { a.field } else { a.overlap };
        let width = if include_padding { a.width + a.overlap } else { a.width };
        let e = a.channels * rows * width;
        if e > 0 {
            contributions.push((a.name.clone(), e * F32_BYTES));
        }
        elems += e;
    }
    if include_io {
        let (hi, wi, ci) = info.in_shape;
        let (ho, wo, co) = info.out_shape;
        let k0 = info.input_field.saturating_sub(info.total_stride);
        let hold_in = hi * wi * ci + k0 * wo * co;
        let hold_out = ho * wo * co + k0 * wi * ci;
        let io = hold_in.max(hold_out);
        contributions.push(("io".into(), io * F32_BYTES));
        elems += io;
    }
    Ok(MemoryReport {
        convention: if include_io {
            Convention::RowwiseWithIo
        } else {
            Convention::RowwiseSchedule
        },
        peak_bytes: elems * F32_BYTES,
        contributions,
        schedule: format!(
            "row-first order over layers {}..{}; each activation advances one row at a time, retaining only overlap rows",
            segment.start, segment.end
        ),
    })
}

/// The published per-network analysis segment (the partition member that
/// dominates the schedule), for presets where one is defined.
pub fn reference_segment(net: &NetworkSpec) -> Option<Segment> {
    match net.name.as_str() {
        // Input through the first inverted-bottleneck block.
        "mobilenetv2" => Some(Segment { start: 0, end: 2 }),
        // Input through the stem pool.
        "resnet18" => Some(Segment { start: 0, end: 2 }),
        // First dense block plus its transition.
        "densenet121" => Some(Segment { start: 2, end: 4 }),
        // Second stage-3 inception plus the following pool.
        "googlenet" => Some(Segment { start: 6, end: 8 }),
        // Last 14×14 inception plus the following pool.
        "googlenet-rnnpool" => Some(Segment { start: 7, end: 9 }),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Layer-by-layer convention
// ---------------------------------------------------------------------------

/// One layer's charge under the layer-by-layer convention.
#[derive(Debug, Clone, Serialize)]
pub struct LayerCharge {
    pub name: String,
    /// Peak elements live while this layer runs.
    pub elems: usize,
    /// Elements retained once the layer completes (its materialized output).
    pub retained_elems: usize,
}

/// Index of the streaming head's pooling layer: when the net starts with a
/// run of simple layers followed by an RNN pooling layer, that whole head is
/// executed patch-by-patch and only the pooled output is ever materialized.
pub fn streaming_head(net: &NetworkSpec) -> Option<usize> {
    let idx = net
        .layers
        .iter()
        .position(|l| matches!(l, LayerSpec::RnnPoolLayer { .. }))?;
    let simple = net.layers[..idx].iter().all(|l| {
        matches!(
            l,
            LayerSpec::Conv2d { .. }
                | LayerSpec::DepthwiseConv { .. }
                | LayerSpec::Pointwise { .. }
                | LayerSpec::MaxPool { .. }
                | LayerSpec::AvgPool { .. }
        )
    });
    simple.then_some(idx)
}

/// Per-layer charges in elements (dtype-agnostic).
pub fn layer_charges(net: &NetworkSpec) -> Result<Vec<LayerCharge>> {
    let shapes = infer_shapes(net)?;
    let elems = |b: usize| shapes[b].0 * shapes[b].1 * shapes[b].2;
    // 1×1-convolution outputs are computed on the fly, never materialized.
    let materialized = |b: usize| {
        if b == 0 {
            elems(0)
        } else if matches!(net.layers[b - 1], LayerSpec::Pointwise { .. }) {
            0
        } else {
            elems(b)
        }
    };
    let head = streaming_head(net);
    let mut out = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let (inb, outb) = (i, i + 1);
        if let Some(h) = head {
            if i < h {
                out.push(LayerCharge {
                    name: format!("{i}:streamed"),
                    elems: 0,
                    retained_elems: 0,
                });
                continue;
            }
            if i == h {
                out.push(LayerCharge {
                    name: format!("{i}:rnnpool"),
                    elems: elems(outb),
                    retained_elems: elems(outb),
                });
                continue;
            }
        }
        let (e, retained) = match layer {
            // Input and output maps both live: the expanded map is built
            // filter-by-filter on the fly.
            LayerSpec::MbConv { .. } => (elems(inb) + elems(outb), elems(outb)),
            // Input rows can be discarded as soon as they are added in.
            LayerSpec::ResidualBlock { .. } => (elems(inb).max(elems(outb)), elems(outb)),
            // Every member stays live for the final concatenation.
            LayerSpec::DenseBlock { .. } => (elems(outb), elems(outb)),
            // Input plus the three smallest path outputs (the largest path is
            // computed last, after the input is dropped).
            LayerSpec::InceptionBlock { p1, p2_out, p3_out, p4_out, .. } => {
                let (ho, wo, _) = shapes[outb];
                let mut paths = [*p1, *p2_out, *p3_out, *p4_out];
                paths.sort_unstable();
                let three_smallest: usize = paths[..3].iter().sum();
                (elems(inb) + three_smallest * ho * wo, elems(outb))
            }
            LayerSpec::RnnPoolLayer { .. } => (elems(inb) + elems(outb), elems(outb)),
            // Output streamed into its consumer; only the input is charged.
            LayerSpec::Pointwise { .. } => (materialized(inb), 0),
            LayerSpec::Conv2d { .. }
            | LayerSpec::DepthwiseConv { .. }
            | LayerSpec::MaxPool { .. }
            | LayerSpec::AvgPool { .. }
            | LayerSpec::TransitionBlock { .. }
            | LayerSpec::FullyConnected { .. } => {
                (materialized(inb).max(elems(outb)), elems(outb))
            }
        };
        // Pointwise producers leave nothing behind.
        let retained = if matches!(layer, LayerSpec::Pointwise { .. }) { 0 } else { retained };
        out.push(LayerCharge {
            name: format!("{i}:{:?}", std::mem::discriminant(layer)),
            elems: e,
            retained_elems: retained,
        });
    }
    Ok(out)
}

/// Layer-by-layer peak for a given element type.
pub fn layerbylayer_peak_dtype(net: &NetworkSpec, dtype: Dtype) -> Result<MemoryReport> {
    let charges = layer_charges(net)?;
    let esz = dtype.size_of();
    let contributions: Vec<(String, usize)> = charges
        .iter()
        .map(|c| (c.name.clone(), c.elems * esz))
        .collect();
    let peak_bytes = contributions.iter().map(|c| c.1).max().unwrap_or(0);
    Ok(MemoryReport {
        convention: Convention::LayerByLayer,
        peak_bytes,
        contributions,
        schedule: "layer-by-layer execution; peak is the largest per-layer charge".into(),
    })
}

/// Layer-by-layer peak at float32.
pub fn layerbylayer_peak(net: &NetworkSpec) -> Result<MemoryReport> {
    layerbylayer_peak_dtype(net, Dtype::F32)
}

// ---------------------------------------------------------------------------
// Closed-form block footprints
// ---------------------------------------------------------------------------

/// Input/output map shapes of a block, rows × cols × channels.
#[derive(Debug, Clone, Copy)]
pub struct BlockIo {
    pub in_shape: (usize, usize, usize),
    pub out_shape: (usize, usize, usize),
}

/// Closed-form row-schedule footprint of a single block (bytes, float32).
pub fn block_memory(block: &LayerSpec, io: BlockIo) -> Result<usize> {
    let (hi, wi, ci) = io.in_shape;
    let (ho, wo, co) = io.out_shape;
    let (i_sz, o_sz) = (hi * wi * ci, ho * wo * co);
    let elems = match block {
        LayerSpec::MbConv { t, stride: s, .. } => {
            let hold = 3usize.saturating_sub(*s);
            (i_sz + hold * wo * co).max(o_sz + hold * wi * ci) + hold * t * ci * wi
        }
        LayerSpec::ResidualBlock { stride: s, .. } => {
            let hold = 5usize.saturating_sub(*s);
            (i_sz + hold * wi * co / s).max(i_sz * co / (ci * s * s) + hold * wi * ci) + 2 * wi * co / s
        }
        LayerSpec::InceptionBlock { p2_mid, p3_mid, .. } => {
            (i_sz + 4 * wo * co).max(o_sz + 4 * wi * ci) + (2 * p2_mid + 4 * p3_mid) * wi
        }
        LayerSpec::DenseBlock { .. } => o_sz,
        other => {
            return Err(Error::Analysis(format!("no closed-form footprint for {other:?}")));
        }
    };
    Ok(elems * F32_BYTES)
}

// ---------------------------------------------------------------------------
// Recompute under a budget
// ---------------------------------------------------------------------------

/// Per-pixel multiply-adds of each primitive node, for patch-cost accounting.
fn per_pixel_madds(lowered: &Lowered, id: usize) -> usize {
    let node = &lowered.nodes[id];
    let (_, _, oc) = node.shape;
    match &node.op {
        PrimOp::Conv { kh, kw, depthwise, .. } => {
            if *depthwise {
                oc * kh * kw
            } else {
                let ci = lowered.nodes[node.inputs[0]].shape.2;
                oc * kh * kw * ci
            }
        }
        _ => 0,
    }
}

/// Window of input rows/cols a conv or pool output pixel needs.
fn in_window(op: &PrimOp, lo: usize, hi: usize) -> (usize, usize) {
    let (w, s) = window_and_stride(op);
    (lo * s, hi * s + w - 1)
}

/// Total multiply-adds to run `net` within a peak-memory budget, rebuilding
/// one activation map patch-by-patch if the unconstrained layer-by-layer peak
/// exceeds the budget.
///
/// The checkpoint boundary is the earliest one such that the boundary map
/// fits the budget and no later layer charge exceeds it. Every pixel of the
/// checkpoint map is recomputed from the network input through its (clamped)
/// receptive-field pyramid; the one-shot cost of the replaced prefix is
/// credited back, so an unconstrained budget returns `count_madds` exactly.
pub fn recompute_madds(net: &NetworkSpec, ram_budget_bytes: Option<usize>) -> Result<usize> {
    let base = crate::graph::count_madds(net)?.total_madds;
    let budget = match ram_budget_bytes {
        None => return Ok(base),
        Some(b) => b,
    };
    let report = layerbylayer_peak(net)?;
    if report.peak_bytes <= budget {
        return Ok(base);
    }
    let charges = layer_charges(net)?;
    let shapes = infer_shapes(net)?;
    // Candidate checkpoint boundaries: the boundary map fits the budget and
    // every later layer charge fits too (the suffix runs unmodified). The
    // final boundary is excluded — with no downstream consumer there is no
    // patch-streaming scheme, only an over-budget run.
    let mut suffix_ok = vec![true; net.layers.len() + 1];
    for i in (0..net.layers.len()).rev() {
        suffix_ok[i] = suffix_ok[i + 1] && charges[i].elems * F32_BYTES <= budget;
    }
    let candidates: Vec<usize> = (1..net.layers.len())
        .filter(|&b| {
            let (h, w, c) = shapes[b];
            h * w * c * F32_BYTES <= budget && suffix_ok[b]
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::Planning(format!(
            "budget {budget} B below every achievable suffix; peak is {} B",
            report.peak_bytes
        )));
    }
    // Charge the cheapest valid checkpoint. A larger budget only enlarges the
    // candidate set, so the result is monotone non-decreasing as the budget
    // shrinks.
    let lowered = lower(net)?;
    return candidates
        .into_iter()
        .filter_map(|b| patch_rebuild_madds(&lowered, &shapes, base, b, budget))
        .min()
        .ok_or_else(|| {
            Error::Planning(format!(
                "budget {budget} B: every checkpoint's patch working set overflows the budget"
            ))
        });
}

/// Total MAdds when the map at `boundary` is rebuilt patch-by-patch through
/// the prefix (the prefix's one-shot cost is credited back). Returns `None`
/// when a single patch's receptive-field pyramid itself exceeds the budget —
/// such a checkpoint cannot actually be streamed within it.
fn patch_rebuild_madds(
    lowered: &Lowered,
    shapes: &[(usize, usize, usize)],
    base: usize,
    boundary: usize,
    budget: usize,
) -> Option<usize> {
    let last = lowered.layer_out[boundary - 1];
    let prefix: Vec<usize> = (1..=last).collect();
    let prefix_once: usize = prefix
        .iter()
        .map(|&id| {
            let n = &lowered.nodes[id];
            let (oh, ow, _) = n.shape;
            per_pixel_madds(lowered, id) * oh * ow
        })
        .sum();

    // Patch rebuild: for every output pixel, walk the pyramid backward to get
    // each prefix node's clamped window, then charge window area × per-pixel
    // cost. The prefix is a single path here (blocks expand in place), so a
    // per-node row/col interval suffices.
    let (bh, bw, _) = shapes[boundary];
    let mut patch_total = 0usize;
    let mut max_window_bytes = 0usize;
    for i in 0..bh {
        for j in 0..bw {
            let mut rows = vec![(0usize, 0usize); lowered.nodes.len()];
            let mut cols = vec![(0usize, 0usize); lowered.nodes.len()];
            let mut need = vec![false; lowered.nodes.len()];
            rows[last] = (i, i);
            cols[last] = (j, j);
            need[last] = true;
            for &id in prefix.iter().rev() {
                if !need[id] {
                    continue;
                }
                let n = &lowered.nodes[id];
                let (rh, rw, _) = n.shape;
                let r = (rows[id].0.min(rh - 1), rows[id].1.min(rh - 1));
                let c = (cols[id].0.min(rw - 1), cols[id].1.min(rw - 1));
                let area = (r.1 - r.0 + 1) * (c.1 - c.0 + 1);
                patch_total += per_pixel_madds(lowered, id) * area;
                max_window_bytes = max_window_bytes.max(area * n.shape.2 * F32_BYTES);
                let (wr, wc) = (in_window(&n.op, r.0, r.1), in_window(&n.op, c.0, c.1));
                for &src in &n.inputs {
                    if src == 0 {
                        continue;
                    }
                    let merge = |cur: &mut (usize, usize), new: (usize, usize), seen: bool| {
                        if seen {
                            cur.0 = cur.0.min(new.0);
                            cur.1 = cur.1.max(new.1);
                        } else {
                            *cur = new;
                        }
                    };
                    merge(&mut rows[src], wr, need[src]);
                    merge(&mut cols[src], wc, need[src]);
                    need[src] = true;
                }
            }
        }
    }
    if max_window_bytes > budget {
        return None;
    }
    Some(base - prefix_once + patch_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Pad;
    use crate::graph::preset;

    const MIB: f64 = 1024.0 * 1024.0;

    fn seg(net: &NetworkSpec) -> Segment {
        reference_segment(net).unwrap()
    }

    #[test]
    fn stacked_convs_field() {
        let net = NetworkSpec {
            name: "t".into(),
            input_shape: (9, 9, 1),
            layers: vec![
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 2, stride: 1, pad: Pad::Same },
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 1, stride: 1, pad: Pad::Same },
            ],
        };
        let info = receptive_fields(&net, Segment { start: 0, end: 2 }).unwrap();
        assert_eq!(info.input_field, 5);
        assert_eq!(info.total_stride, 1);
        assert_eq!(info.acts.len(), 1);
        assert_eq!(info.acts[0].overlap, 2);
    }

    #[test]
    fn resnet_stem_field_is_eleven() {
        let net = preset("resnet18").unwrap();
        let info = receptive_fields(&net, Segment { start: 0, end: 2 }).unwrap();
        assert_eq!(info.input_field, 11);
        assert_eq!(info.total_stride, 4);
        // Conv output retains (3−2) rows.
        assert_eq!(info.acts[0].overlap, 1);
    }

    #[test]
    fn densenet_first_block_field_is_fourteen() {
        let net = preset("densenet121").unwrap();
        let info = receptive_fields(&net, seg(&net)).unwrap();
        assert_eq!(info.input_field, 14);
        assert_eq!(info.in_shape, (56, 56, 64));
        assert_eq!(info.out_shape, (28, 28, 128));
    }

    #[test]
    fn lower_bound_tiny_instance() {
        // One intermediate layer, unit channels, half-width 1, 5×5 output,
        // stride 1 → 2·1·1·4 = 8 elements.
        let net = NetworkSpec {
            name: "t".into(),
            input_shape: (5, 5, 1),
            layers: vec![
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 1, stride: 1, pad: Pad::Same },
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 1, stride: 1, pad: Pad::Same },
            ],
        };
        let b = lower_bound_no_recompute(&net, Segment { start: 0, end: 2 }, 5, 5).unwrap();
        assert_eq!(b, 8 * F32_BYTES);
    }

    #[test]
    fn pointwise_contributes_nothing_to_lower_bound() {
        let net = NetworkSpec {
            name: "t".into(),
            input_shape: (8, 8, 4),
            layers: vec![
                LayerSpec::Pointwise { c_out: 16 },
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 4, stride: 1, pad: Pad::Same },
            ],
        };
        // Intermediate is the 1×1 output with field 3, stride 1 → overlap 2?
        // No: the 1×1 itself has window 1, so the conv's window drives it.
        let info = receptive_fields(&net, Segment { start: 0, end: 2 }).unwrap();
        assert_eq!(info.acts[0].overlap, 2);
        // A 1×1 as the *last* layer retains nothing of its input conv.
        let net2 = NetworkSpec {
            name: "t2".into(),
            input_shape: (8, 8, 4),
            layers: vec![
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 4, stride: 1, pad: Pad::Same },
                LayerSpec::Pointwise { c_out: 16 },
            ],
        };
        let info2 = receptive_fields(&net2, Segment { start: 0, end: 2 }).unwrap();
        assert_eq!(info2.acts[0].overlap, 0);
    }

    #[test]
    fn rowwise_single_conv_formula() {
        // Single 3×3 stride-1 conv, 8×8 → 8×8: no interior activations, io
        // term max{64c + 2·8·c, 64c + 2·8·c}.
        let net = NetworkSpec {
            name: "t".into(),
            input_shape: (8, 8, 1),
            layers: vec![LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 1, stride: 1, pad: Pad::Same }],
        };
        let r = rowwise_schedule_bound(&net, Segment { start: 0, end: 1 }, false, false).unwrap();
        assert_eq!(r.peak_bytes, 0);
        let r = rowwise_schedule_bound(&net, Segment { start: 0, end: 1 }, true, false).unwrap();
        assert_eq!(r.peak_bytes, (64 + 16) * F32_BYTES);
    }

    #[test]
    fn rowwise_reference_segments() {
        // (preset, reported MiB, frozen exact elements)
        let cases = [
            ("mobilenetv2", 0.84, 218_400usize),
            ("resnet18", 0.81, 212_576),
            ("densenet121", 2.38, 620_032),
            ("googlenet", 1.01, 262_976),
            ("googlenet-rnnpool", 0.59, 153_216),
        ];
        for (name, reported, elems) in cases {
            let net = preset(name).unwrap();
            let r = rowwise_schedule_bound(&net, seg(&net), true, false).unwrap();
            assert_eq!(r.peak_bytes, elems * F32_BYTES, "{name}");
            let mib = r.peak_bytes as f64 / MIB;
            assert!((mib - reported).abs() / reported < 0.01, "{name}: {mib} vs {reported}");
        }
    }

    #[test]
    fn layerbylayer_presets() {
        let cases = [
            ("mobilenetv2", 2_408_448usize),
            ("mobilenetv2-rnnpool", 250_880),
            ("resnet18", 3_211_264),
            ("resnet18-rnnpool", 401_408),
            ("densenet121", 3_211_264),
            ("densenet121-rnnpool", 802_816),
            ("googlenet-rnnpool", 815_360),
        ];
        for (name, bytes) in cases {
            let net = preset(name).unwrap();
            let r = layerbylayer_peak(&net).unwrap();
            assert_eq!(r.peak_bytes, bytes, "{name}");
        }
    }

    #[test]
    fn layerbylayer_rnnpool_strictly_smaller() {
        for (base, rp) in [
            ("mobilenetv2", "mobilenetv2-rnnpool"),
            ("resnet18", "resnet18-rnnpool"),
            ("densenet121", "densenet121-rnnpool"),
            ("googlenet", "googlenet-rnnpool"),
            ("mobilenetv2-0.35-vww", "mobilenetv2-0.35-vww-rnnpool"),
        ] {
            let pb = layerbylayer_peak(&preset(base).unwrap()).unwrap().peak_bytes;
            let pr = layerbylayer_peak(&preset(rp).unwrap()).unwrap().peak_bytes;
            assert!(pr < pb, "{rp} ({pr}) !< {base} ({pb})");
            let mb = crate::graph::count_madds(&preset(base).unwrap()).unwrap().total_madds;
            let mr = crate::graph::count_madds(&preset(rp).unwrap()).unwrap().total_madds;
            assert!(mr < mb, "{rp} madds ({mr}) !< {base} ({mb})");
        }
    }

    #[test]
    fn int8_quantized_block_footprint() {
        // 80×60×32 in, 80×60×16 out, one byte per element → 230 400 B.
        let net = NetworkSpec {
            name: "face-quant-block".into(),
            input_shape: (80, 60, 32),
            layers: vec![LayerSpec::MbConv { t: 2, c_out: 16, stride: 1 }],
        };
        let r = layerbylayer_peak_dtype(&net, Dtype::I8).unwrap();
        assert_eq!(r.peak_bytes, 230_400);
        let kib = r.peak_bytes as f64 / 1024.0;
        assert!((kib - 224.0).abs() / 224.0 < 0.01, "got {kib} KiB");
    }

    #[test]
    fn block_memory_closed_forms() {
        // MBConv t=6, s=1, 112²×32 → 112²×16.
        let b = block_memory(
            &LayerSpec::MbConv { t: 6, c_out: 16, stride: 1 },
            BlockIo { in_shape: (112, 112, 32), out_shape: (112, 112, 16) },
        )
        .unwrap();
        let expect = (112 * 112 * 32 + 2 * 112 * 16)
            .max(112 * 112 * 16 + 2 * 112 * 32)
            + 2 * 6 * 32 * 112;
        assert_eq!(b, expect * F32_BYTES);
        // Residual s=1, c_in=c_out=c, h=w → max-term + 2wc.
        let (h, c) = (16, 8);
        let b = block_memory(
            &LayerSpec::ResidualBlock { c_out: c, stride: 1 },
            BlockIo { in_shape: (h, h, c), out_shape: (h, h, c) },
        )
        .unwrap();
        assert_eq!(b, (h * h * c + 4 * h * c + 2 * h * c) * F32_BYTES);
        // Unsupported block errors.
        assert!(block_memory(
            &LayerSpec::MaxPool { k: 2, stride: 2, pad: Pad::Valid },
            BlockIo { in_shape: (4, 4, 1), out_shape: (2, 2, 1) },
        )
        .is_err());
    }

    #[test]
    fn recompute_unbounded_is_exact() {
        for name in ["mobilenetv2", "resnet18-rnnpool"] {
            let net = preset(name).unwrap();
            let base = crate::graph::count_madds(&net).unwrap().total_madds;
            assert_eq!(recompute_madds(&net, None).unwrap(), base);
            let peak = layerbylayer_peak(&net).unwrap().peak_bytes;
            assert_eq!(recompute_madds(&net, Some(peak)).unwrap(), base);
        }
    }

    #[test]
    fn recompute_toy_strictly_greater() {
        let net = NetworkSpec {
            name: "toy3".into(),
            input_shape: (16, 16, 2),
            layers: vec![
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 8, stride: 1, pad: Pad::Same },
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 4, stride: 2, pad: Pad::Same },
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 4, stride: 1, pad: Pad::Same },
            ],
        };
        let base = crate::graph::count_madds(&net).unwrap().total_madds;
        let peak = layerbylayer_peak(&net).unwrap().peak_bytes;
        let constrained = recompute_madds(&net, Some(peak / 2)).unwrap();
        assert!(constrained > base, "{constrained} !> {base}");
    }

    #[test]
    fn recompute_infeasible_budget_errors() {
        let net = preset("mobilenetv2").unwrap();
        assert!(matches!(recompute_madds(&net, Some(1024)), Err(Error::Planning(_))));
    }

    #[test]
    fn recompute_monotone_on_mobilenet() {
        let net = preset("mobilenetv2").unwrap();
        let peak = layerbylayer_peak(&net).unwrap().peak_bytes;
        let mut last = 0usize;
        for budget in [peak, peak / 2, peak / 4, 401_408] {
            let m = recompute_madds(&net, Some(budget)).unwrap();
            assert!(m >= last, "budget {budget}: {m} < {last}");
            last = m;
        }
    }

    #[test]
    fn recompute_mobilenet_reference_point() {
        // 0.38 MiB budget: the checkpoint map is the 56×56×24 boundary;
        // reference point ~1.00G ± 20%.
        let net = preset("mobilenetv2").unwrap();
        let m = recompute_madds(&net, Some(401_408)).unwrap() as f64;
        assert!((m - 1.00e9).abs() / 1.00e9 < 0.20, "got {m}");
    }
}
