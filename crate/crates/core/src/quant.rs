//! 8-bit per-channel quantization and a quantized execution mode.
//!
//! The scheme is asymmetric unsigned 8-bit, one (scale, zero-point) pair per
//! channel: `code = round(x/scale + zp)` clamped to `[0, 255]`, with
//! `dequant = (code − zp)·scale`. Rounding is half-away-from-zero. Zero
//! points are stored as float32 so a constant channel round-trips exactly
//! (scale 1, all-zero codes, `zp = −value`).
//!
//! [`run_quantized`] evaluates a net with integer codes: conv/pool/fc inner
//! products accumulate int8 codes in 32-bit integers, with the affine
//! correction terms applied once per output value; every layer's result is
//! requantized for its consumer (the final layer is returned in float, not
//! requantized). Pooling-operator layers run with their cell weights snapped
//! to the int8 grid and the clamp nonlinearities, with float recurrent state.

use crate::error::{Error, Result};
use crate::exec::{eval_full, NetWeights, NodeWeights};
use crate::fastgrnn::{FastGrnnCell, GateNonlin, Mat, UpdateNonlin};
use crate::graph::{lower, NetworkSpec, Pad, PrimOp};
use crate::rnnpool::{RnnPoolLayerCfg, RnnPoolParams};
use crate::tensor::{PadPolicy, TensorMap};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};

/// Round half away from zero.
pub fn round_half_away(x: f32) -> f32 {
    if x >= 0.0 { (x + 0.5).floor() } else { (x - 0.5).ceil() }
}

/// An 8-bit per-channel quantized tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    /// Row-major codes, same layout as the source map.
    pub data: Vec<u8>,
    /// Per-channel positive scales.
    pub scale: Vec<f32>,
    /// Per-channel zero points (float so degenerate channels are exact).
    pub zero_point: Vec<f32>,
    pub shape: (usize, usize, usize),
}

/// Quantize along the channel axis.
///
/// Per channel: the range is first extended to include zero (so that a real
/// zero — for example a padding cell — always has an exact code and the
/// rounded zero point stays inside `[0, 255]`), then `scale = (max−min)/255`
/// and `zp = round(−min/scale)`. A constant channel gets scale 1, all-zero
/// codes and `zp = −value`, which dequantizes exactly.
pub fn quantize_per_channel(t: &TensorMap<f32>) -> Result<QuantTensor> {
    let (h, w, c) = t.shape();
    if t.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("cannot quantize non-finite data".into()));
    }
    let mut min = vec![f32::INFINITY; c];
    let mut max = vec![f32::NEG_INFINITY; c];
    for (i, &v) in t.data().iter().enumerate() {
        let ch = i % c;
        min[ch] = min[ch].min(v);
        max[ch] = max[ch].max(v);
    }
    let mut scale = Vec::with_capacity(c);
    let mut zero_point = Vec::with_capacity(c);
    for ch in 0..c {
        if max[ch] > min[ch] {
            min[ch] = min[ch].min(0.0);
            max[ch] = max[ch].max(0.0);
            let s = (max[ch] - min[ch]) / 255.0;
            scale.push(s);
            zero_point.push(round_half_away(-min[ch] / s).clamp(0.0, 255.0));
        } else {
            scale.push(1.0);
            zero_point.push(-min[ch]);
        }
    }
    let mut data = Vec::with_capacity(h * w * c);
    for (i, &v) in t.data().iter().enumerate() {
        let ch = i % c;
        let code = round_half_away(v / scale[ch] + zero_point[ch]).clamp(0.0, 255.0);
        data.push(code as u8);
    }
    Ok(QuantTensor { data, scale, zero_point, shape: (h, w, c) })
}

impl QuantTensor {
    pub fn dequantize(&self) -> TensorMap<f32> {
        let (h, w, c) = self.shape;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &q)| (q as f32 - self.zero_point[i % c]) * self.scale[i % c])
            .collect();
        TensorMap::from_vec(h, w, c, data).expect("shape consistent")
    }

    #[inline]
    pub fn code(&self, i: usize, j: usize, ch: usize) -> u8 {
        let (_, w, c) = self.shape;
        self.data[(i * w + j) * c + ch]
    }

    /// Payload bytes at one byte per element.
    pub fn bytes(&self) -> usize {
        self.data.len()
    }

    /// Little-endian serialization: u32 H, W, C, then per-channel scales and
    /// zero points as float32, then the int8 payload.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let (h, w, c) = self.shape;
        out.write_u32::<LittleEndian>(h as u32)?;
        out.write_u32::<LittleEndian>(w as u32)?;
        out.write_u32::<LittleEndian>(c as u32)?;
        for &s in &self.scale {
            out.write_f32::<LittleEndian>(s)?;
        }
        for &z in &self.zero_point {
            out.write_f32::<LittleEndian>(z)?;
        }
        out.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut inp: R) -> Result<Self> {
        let h = inp.read_u32::<LittleEndian>()? as usize;
        let w = inp.read_u32::<LittleEndian>()? as usize;
        let c = inp.read_u32::<LittleEndian>()? as usize;
        let mut scale = vec![0f32; c];
        let mut zero_point = vec![0f32; c];
        for s in scale.iter_mut() {
            *s = inp.read_f32::<LittleEndian>()?;
        }
        for z in zero_point.iter_mut() {
            *z = inp.read_f32::<LittleEndian>()?;
        }
        if scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::Schema("quantized tensor with non-positive scale".into()));
        }
        let mut data = vec![0u8; h * w * c];
        inp.read_exact(&mut data)?;
        Ok(QuantTensor { data, scale, zero_point, shape: (h, w, c) })
    }
}

/// Per-layer divergence of the quantized path from the float reference.
#[derive(Debug, Clone)]
pub struct LayerDivergence {
    pub layer: String,
    /// max |quant − float| / max(|float|, 1e−6) over the layer's output.
    pub max_rel: f32,
}

fn quantize_flat(values: &[f32], groups: usize) -> Result<QuantTensor> {
    let per = values.len() / groups;
    quantize_per_channel(&TensorMap::from_vec(1, per, groups, values.to_vec())?)
}

/// Snap a cell's weights onto the int8 grid. The cell must already use the
/// clamp nonlinearities — smooth cells are not quantizable.
fn fake_quant_cell(cell: &FastGrnnCell<f32>) -> Result<FastGrnnCell<f32>> {
    if cell.gate_nonlin != GateNonlin::QuantSigmoid
        || cell.update_nonlin != UpdateNonlin::QuantTanh
    {
        return Err(Error::Spec(
            "pooling cells must use the clamp nonlinearities to quantize".into(),
        ));
    }
    let snap = |m: &Mat<f32>| -> Result<Mat<f32>> {
        let q = quantize_flat(&m.data, 1)?;
        Ok(Mat { rows: m.rows, cols: m.cols, data: q.dequantize().data().to_vec() })
    };
    let snap_vec = |v: &[f32]| -> Result<Vec<f32>> {
        Ok(quantize_flat(v, 1)?.dequantize().data().to_vec())
    };
    let mut out = cell.clone();
    out.w = snap(&cell.w)?;
    out.u = snap(&cell.u)?;
    out.b_z = snap_vec(&cell.b_z)?;
    out.b_h = snap_vec(&cell.b_h)?;
    Ok(out)
}

struct QConv {
    /// Codes laid out like the float kernel, channel-grouped per output.
    q: QuantTensor,
    /// Per-(c_out) precomputed Σ qw over the whole kernel slice feeding it.
    bias: Vec<f32>,
}

/// Integer-code convolution of one output pixel.
#[allow(clippy::too_many_arguments)]
fn qconv_pixel(
    x: &QuantTensor,
    k: &QConv,
    kh: usize,
    kw: usize,
    depthwise: bool,
    stride: usize,
    pad: Pad,
    oi: usize,
    oj: usize,
    out: &mut [f32],
) {
    let (hi, wi, ci) = x.shape;
    let c_out = out.len();
    let (oi0, oj0) = match pad {
        Pad::Same => (
            (oi * stride) as isize - ((kh - 1) / 2) as isize,
            (oj * stride) as isize - ((kw - 1) / 2) as isize,
        ),
        Pad::Valid => ((oi * stride) as isize, (oj * stride) as isize),
    };
    for (ch, o) in out.iter_mut().enumerate() {
        let sw = k.q.scale[ch];
        let zw = k.q.zero_point[ch];
        let mut real = k.bias[ch];
        // Accumulate per input channel so per-channel activation affines stay
        // exact: real += sx·sw·Σ (qx−zx)(qw−zw), with the cross terms expanded
        // from pure-integer sums.
        let cin_range = if depthwise { ch..ch + 1 } else { 0..ci };
        for cin in cin_range {
            let sx = x.scale[cin];
            let zx = x.zero_point[cin];
            let mut acc: i32 = 0;
            let mut sum_x: i32 = 0;
            let mut sum_w: i32 = 0;
            let mut n: i32 = 0;
            for di in 0..kh {
                for dj in 0..kw {
                    let (i, j) = (oi0 + di as isize, oj0 + dj as isize);
                    // Zero padding contributes exactly zero real value.
                    if i < 0 || j < 0 || i >= hi as isize || j >= wi as isize {
                        continue;
                    }
                    let qx = x.code(i as usize, j as usize, cin) as i32;
                    let widx = if depthwise { di * kw + dj } else { (di * kw + dj) * ci + cin };
                    let qw = k.q.data[widx * c_out + ch] as i32;
                    acc += qx * qw;
                    sum_x += qx;
                    sum_w += qw;
                    n += 1;
                }
            }
            real += sx
                * sw
                * (acc as f32 - zw * sum_x as f32 - zx * sum_w as f32 + n as f32 * zx * zw);
        }
        *o = real;
    }
}

/// Integer-arithmetic inference with per-layer requantization.
///
/// Returns the float output of the quantized path and the per-node maximum
/// relative divergence from the float32 reference.
pub fn run_quantized(
    net: &NetworkSpec,
    input: &TensorMap<f32>,
    weights: &NetWeights,
) -> Result<(TensorMap<f32>, Vec<LayerDivergence>)> {
    let lowered = lower(net)?;
    if input.shape() != net.input_shape {
        return Err(Error::Shape("input shape mismatch".into()));
    }
    if weights.nodes.len() != lowered.nodes.len() {
        return Err(Error::Spec("weights do not match lowered net".into()));
    }

    // Float reference, node by node.
    let mut fvals: Vec<TensorMap<f32>> = vec![input.clone()];
    for id in 1..lowered.nodes.len() {
        let node = &lowered.nodes[id];
        let ins: Vec<&TensorMap<f32>> = node.inputs.iter().map(|&i| &fvals[i]).collect();
        fvals.push(eval_full(node, &weights.nodes[id], &ins)?);
    }

    let last = lowered.nodes.len() - 1;
    let mut qvals: Vec<Option<QuantTensor>> = vec![None; lowered.nodes.len()];
    qvals[0] = Some(quantize_per_channel(input)?);
    let mut report = Vec::new();
    let mut final_real: Option<TensorMap<f32>> = None;

    for id in 1..lowered.nodes.len() {
        let node = &lowered.nodes[id];
        let (oh, ow, oc) = node.shape;
        let x = qvals[node.inputs[0]].as_ref().expect("topological order");
        let real: TensorMap<f32> = match (&node.op, &weights.nodes[id]) {
            (PrimOp::Conv { kh, kw, stride, pad, depthwise }, NodeWeights::Conv { kernel, bias }) => {
                let groups = oc;
                let k = QConv { q: quantize_flat(kernel, groups)?, bias: bias.clone() };
                let mut out = TensorMap::zeros(oh, ow, oc);
                let mut px = vec![0f32; oc];
                for oi in 0..oh {
                    for oj in 0..ow {
                        qconv_pixel(x, &k, *kh, *kw, *depthwise, *stride, *pad, oi, oj, &mut px);
                        for (ch, &v) in px.iter().enumerate() {
                            out.set(oi, oj, ch, v);
                        }
                    }
                }
                out
            }
            (PrimOp::Pool { k, stride, pad, avg }, _) => {
                let (hi, wi, _) = x.shape;
                let mut out = TensorMap::zeros(oh, ow, oc);
                for oi in 0..oh {
                    for oj in 0..ow {
                        let (oi0, oj0) = match pad {
                            Pad::Same => (
                                (oi * stride) as isize - ((k - 1) / 2) as isize,
                                (oj * stride) as isize - ((k - 1) / 2) as isize,
                            ),
                            Pad::Valid => ((oi * stride) as isize, (oj * stride) as isize),
                        };
                        for ch in 0..oc {
                            let mut sum: i32 = 0;
                            let mut best: i32 = i32::MIN;
                            let mut n: i32 = 0;
                            for di in 0..*k {
                                for dj in 0..*k {
                                    let (i, j) = (oi0 + di as isize, oj0 + dj as isize);
                                    if i < 0 || j < 0 || i >= hi as isize || j >= wi as isize {
                                        continue;
                                    }
                                    let q = x.code(i as usize, j as usize, ch) as i32;
                                    sum += q;
                                    best = best.max(q);
                                    n += 1;
                                }
                            }
                            let v = if *avg {
                                x.scale[ch] * (sum as f32 / n.max(1) as f32 - x.zero_point[ch])
                            } else {
                                x.scale[ch] * (best as f32 - x.zero_point[ch])
                            };
                            out.set(oi, oj, ch, v);
                        }
                    }
                }
                out
            }
            (PrimOp::RnnPool { stride, .. }, NodeWeights::RnnPool(params)) => {
                let qp = RnnPoolParams {
                    rnn1: fake_quant_cell(&params.rnn1)?,
                    rnn2: fake_quant_cell(&params.rnn2)?,
                    ..(**params).clone()
                };
                let cfg = RnnPoolLayerCfg { params: qp, stride: *stride, pad: PadPolicy::ZeroPad };
                crate::rnnpool::rnnpool_layer_forward(&cfg, &x.dequantize())?
            }
            (PrimOp::Fc, NodeWeights::Fc { weight, bias }) => {
                let xq = &x.data;
                let cin = xq.len();
                let (_, _, c) = x.shape;
                let wq = quantize_flat(weight, oc)?;
                let mut out = TensorMap::zeros(1, 1, oc);
                for ch in 0..oc {
                    let (sw, zw) = (wq.scale[ch], wq.zero_point[ch]);
                    let mut real = bias[ch];
                    // Group by input channel (the activation affine varies).
                    for cin_ch in 0..c {
                        let (sx, zx) = (x.scale[cin_ch], x.zero_point[cin_ch]);
                        let mut acc: i32 = 0;
                        let mut sum_x: i32 = 0;
                        let mut sum_w: i32 = 0;
                        let mut n: i32 = 0;
                        let mut i = cin_ch;
                        while i < cin {
                            let qx = xq[i] as i32;
                            let qw = wq.data[i * oc + ch] as i32;
                            acc += qx * qw;
                            sum_x += qx;
                            sum_w += qw;
                            n += 1;
                            i += c;
                        }
                        real += sx
                            * sw
                            * (acc as f32 - zw * sum_x as f32 - zx * sum_w as f32
                                + n as f32 * zx * zw);
                    }
                    out.set(0, 0, ch, real);
                }
                out
            }
            (PrimOp::Add, _) => {
                let b = qvals[node.inputs[1]].as_ref().expect("topological order");
                let (a, b) = (x.dequantize(), b.dequantize());
                let mut out = a.clone();
                for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
                    *o += v;
                }
                out
            }
            (PrimOp::Concat, _) => {
                let ins: Vec<TensorMap<f32>> = node
                    .inputs
                    .iter()
                    .map(|&i| qvals[i].as_ref().expect("topological order").dequantize())
                    .collect();
                let mut out = TensorMap::zeros(oh, ow, oc);
                for i in 0..oh {
                    for j in 0..ow {
                        let mut ch = 0;
                        for m in &ins {
                            for ci in 0..m.c() {
                                out.set(i, j, ch, m.get(i, j, ci));
                                ch += 1;
                            }
                        }
                    }
                }
                out
            }
            _ => return Err(Error::Spec(format!("non-quantizable node {}", node.name))),
        };

        let fref = &fvals[id];
        let mut max_rel = 0f32;
        for (&q, &f) in real.data().iter().zip(fref.data()) {
            max_rel = max_rel.max((q - f).abs() / f.abs().max(1e-6));
        }
        report.push(LayerDivergence { layer: node.name.clone(), max_rel });

        if id == last {
            final_real = Some(real);
        } else {
            qvals[id] = Some(quantize_per_channel(&real)?);
        }
    }

    Ok((final_real.expect("at least one node"), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::random_weights;
    use crate::graph::LayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn endpoints_roundtrip_exactly() {
        let s = 0.02f32;
        let t = TensorMap::from_vec(1, 2, 1, vec![0.0, 255.0 * s]).unwrap();
        let q = quantize_per_channel(&t).unwrap();
        assert_eq!(q.data, vec![0, 255]);
        let d = q.dequantize();
        assert_eq!(d.data(), t.data());
    }

    #[test]
    fn constant_channel_exact() {
        let t = TensorMap::from_vec(2, 2, 1, vec![3.7; 4]).unwrap();
        let q = quantize_per_channel(&t).unwrap();
        assert!(q.data.iter().all(|&c| c == 0));
        assert_eq!(q.scale, vec![1.0]);
        for &v in q.dequantize().data() {
            assert_eq!(v, 3.7);
        }
    }

    #[test]
    fn roundtrip_error_within_half_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = TensorMap::from_fn(8, 8, 4, |_, _, _| rng.gen_range(-2.0f32..3.0));
        let q = quantize_per_channel(&t).unwrap();
        let d = q.dequantize();
        for (i, (&a, &b)) in t.data().iter().zip(d.data()).enumerate() {
            let ch = i % 4;
            assert!((a - b).abs() <= q.scale[ch] / 2.0 + 1e-6, "ch {ch}: {a} vs {b}");
        }
    }

    #[test]
    fn second_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let t = TensorMap::from_fn(6, 6, 3, |_, _, _| rng.gen_range(-1.0f32..1.0));
        let once = quantize_per_channel(&t).unwrap().dequantize();
        let twice = quantize_per_channel(&once).unwrap().dequantize();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn nan_rejected() {
        let t = TensorMap::from_vec(1, 1, 1, vec![f32::NAN]).unwrap();
        assert!(matches!(quantize_per_channel(&t), Err(Error::Numeric(_))));
    }

    #[test]
    fn file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = TensorMap::from_fn(3, 4, 2, |_, _, _| rng.gen_range(-1.0f32..1.0));
        let q = quantize_per_channel(&t).unwrap();
        let mut buf = Vec::new();
        q.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 2 * 4 * 2 + 24);
        let r = QuantTensor::read_from(&buf[..]).unwrap();
        assert_eq!(q, r);
    }

    #[test]
    fn zero_input_gives_zero_logits() {
        let net = NetworkSpec {
            name: "z".into(),
            input_shape: (6, 6, 2),
            layers: vec![
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 4, stride: 1, pad: Pad::Same },
                LayerSpec::FullyConnected { c_out: 3 },
            ],
        };
        let lowered = lower(&net).unwrap();
        let mut w = random_weights(&lowered, 2).unwrap();
        for nw in &mut w.nodes {
            match nw {
                NodeWeights::Conv { bias, .. } | NodeWeights::Fc { bias, .. } => bias.fill(0.0),
                _ => {}
            }
        }
        let x = TensorMap::zeros(6, 6, 2);
        let (yf, _) = crate::exec::run_naive(&net, &x, &w).unwrap();
        let (yq, _) = run_quantized(&net, &x, &w).unwrap();
        for (&a, &b) in yf.data().iter().zip(yq.data()) {
            assert_eq!(a, 0.0);
            assert!(b.abs() < 1e-5, "quantized logit {b}");
        }
    }

    #[test]
    fn int8_grid_weights_match_float_exactly() {
        // Single conv whose weights and inputs sit exactly on their int8
        // grids; the integer path reproduces the float path bitwise.
        let net = NetworkSpec {
            name: "g".into(),
            input_shape: (4, 4, 1),
            layers: vec![LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 1, stride: 1, pad: Pad::Same }],
        };
        let lowered = lower(&net).unwrap();
        let mut w = random_weights(&lowered, 0).unwrap();
        if let NodeWeights::Conv { kernel, bias } = &mut w.nodes[1] {
            // Values spanning exactly 255/256 so the channel scale is the
            // power of two 1/256 and every product stays exact in float.
            let grid: Vec<f32> = [-128.0f32, -96.0, -64.0, -32.0, 0.0, 32.0, 64.0, 96.0, 127.0]
                .iter()
                .map(|v| v / 256.0)
                .collect();
            kernel.copy_from_slice(&grid);
            assert_eq!((grid[8] - grid[0]) * 256.0, 255.0);
            bias[0] = 0.25;
        }
        let x = TensorMap::from_fn(4, 4, 1, |i, j, _| (i * 4 + j) as f32 * 17.0 / 256.0);
        let (yf, _) = crate::exec::run_naive(&net, &x, &w).unwrap();
        let (yq, _) = run_quantized(&net, &x, &w).unwrap();
        assert_eq!(yf.data(), yq.data());
    }

    #[test]
    fn pooling_net_top_index_agreement() {
        let net = NetworkSpec {
            name: "p".into(),
            input_shape: (8, 8, 2),
            layers: vec![LayerSpec::RnnPoolLayer { r: 8, c: 8, h1: 4, h2: 4, stride: 8 }],
        };
        let lowered = lower(&net).unwrap();
        let mut w = random_weights(&lowered, 9).unwrap();
        for nw in &mut w.nodes {
            if let NodeWeights::RnnPool(p) = nw {
                for cell in [&mut p.rnn1, &mut p.rnn2] {
                    cell.gate_nonlin = GateNonlin::QuantSigmoid;
                    cell.update_nonlin = UpdateNonlin::QuantTanh;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut agree = 0;
        for _ in 0..100 {
            let x = TensorMap::from_fn(8, 8, 2, |_, _, _| rng.gen_range(-1.0f32..1.0));
            let (yf, _) = crate::exec::run_naive(&net, &x, &w).unwrap();
            let (yq, _) = run_quantized(&net, &x, &w).unwrap();
            let top = |d: &[f32]| {
                d.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
            };
            if top(yf.data()) == top(yq.data()) {
                agree += 1;
            }
        }
        assert!(agree >= 95, "only {agree}/100 top-index agreement");
    }

    #[test]
    fn divergence_report_covers_all_nodes() {
        let net = NetworkSpec {
            name: "d".into(),
            input_shape: (8, 8, 2),
            layers: vec![
                LayerSpec::Conv2d { kh: 3, kw: 3, c_out: 4, stride: 2, pad: Pad::Same },
                LayerSpec::MaxPool { k: 2, stride: 2, pad: Pad::Valid },
                LayerSpec::FullyConnected { c_out: 3 },
            ],
        };
        let lowered = lower(&net).unwrap();
        let w = random_weights(&lowered, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = TensorMap::from_fn(8, 8, 2, |_, _, _| rng.gen_range(-1.0f32..1.0));
        let (_, report) = run_quantized(&net, &x, &w).unwrap();
        assert_eq!(report.len(), lowered.nodes.len() - 1);
        // Small net, mild quantization noise.
        for d in &report {
            assert!(d.max_rel.is_finite());
        }
    }
}
