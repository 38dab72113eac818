//! Command implementations behind the `rnnpool` binary.
//!
//! Each command is a thin adapter over one library operation: parse
//! arguments, load the model (a JSON file or a `preset:` built-in), call the
//! library, format the result as a human table or `--json`. Exit codes:
//! 0 success, 1 runtime/numeric failure, 2 usage or schema violation.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnpool_core::error::Error;
use rnnpool_core::exec::{enumerate_min_peak, random_weights, run_naive, run_streaming, Dag, DagNode, NodeWeights, Schedule};
use rnnpool_core::graph::{count_madds, count_params, lower, preset, validate, LayerSpec, NetworkSpec, PRESET_NAMES};
use rnnpool_core::memplan::{
    layerbylayer_peak_dtype, lower_bound_no_recompute, receptive_fields, reference_segment,
    rowwise_schedule_bound, Segment,
};
use rnnpool_core::quant::quantize_per_channel;
use rnnpool_core::rnnpool::{rnnpool_backward, rnnpool_forward, RnnPoolParams};
use rnnpool_core::tensor::{Dtype, TensorMap};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// The JSON model-description document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub name: String,
    /// [H, W, C]
    pub input_shape: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    pub layers: Vec<LayerSpec>,
}

fn default_schema() -> u32 {
    1
}

impl ModelFile {
    pub fn to_net(&self) -> NetworkSpec {
        NetworkSpec {
            name: self.name.clone(),
            input_shape: (self.input_shape[0], self.input_shape[1], self.input_shape[2]),
            layers: self.layers.clone(),
        }
    }

    pub fn from_net(net: &NetworkSpec) -> Self {
        ModelFile {
            schema: 1,
            name: net.name.clone(),
            input_shape: [net.input_shape.0, net.input_shape.1, net.input_shape.2],
            classes: None,
            layers: net.layers.clone(),
        }
    }
}

/// Command failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub message: String,
}

pub type CmdResult = std::result::Result<String, CmdError>;

fn schema_err(msg: impl Into<String>) -> CmdError {
    CmdError { code: 2, message: msg.into() }
}

fn runtime_err(e: Error) -> CmdError {
    let code = match e {
        Error::Schema(_) | Error::Spec(_) | Error::Arg(_) => 2,
        _ => 1,
    };
    CmdError { code, message: e.to_string() }
}

/// Load a model from `preset:name` or a JSON file; validates before use.
pub fn load_model(spec: &str) -> std::result::Result<NetworkSpec, CmdError> {
    let net = if let Some(name) = spec.strip_prefix("preset:") {
        preset(name).map_err(runtime_err)?
    } else {
        let text = fs::read_to_string(spec)
            .map_err(|e| schema_err(format!("{spec}: {e}")))?;
        let model: ModelFile = serde_json::from_str(&text)
            .map_err(|e| schema_err(format!("{spec}: {e}")))?;
        if model.schema != 1 {
            return Err(schema_err(format!("{spec}: unsupported schema {}", model.schema)));
        }
        model.to_net()
    };
    validate(&net).map_err(|e| schema_err(format!("{spec}: {e}")))?;
    Ok(net)
}

/// The segment a rowwise/lower analysis covers: the streaming-friendly early
/// layers — the named reference segment for known presets, otherwise all
/// layers before the first fully-connected one.
fn analysis_segment(net: &NetworkSpec) -> std::result::Result<Segment, CmdError> {
    if let Some(seg) = reference_segment(net) {
        return Ok(seg);
    }
    let end = net
        .layers
        .iter()
        .position(|l| matches!(l, LayerSpec::FullyConnected { .. }))
        .unwrap_or(net.layers.len());
    if end == 0 {
        return Err(schema_err("net has no layers to analyze before the classifier head"));
    }
    Ok(Segment { start: 0, end })
}

pub fn cmd_analyze(model: &str, convention: &str, dtype: &str, json: bool) -> CmdResult {
    let net = load_model(model)?;
    let dt = match dtype {
        "f32" => Dtype::F32,
        "i8" => Dtype::I8,
        other => return Err(schema_err(format!("unknown dtype {other}"))),
    };
    let (label, peak_bytes, contributions, schedule) = match convention {
        "layerbylayer" => {
            let r = layerbylayer_peak_dtype(&net, dt).map_err(runtime_err)?;
            ("layerbylayer", r.peak_bytes, r.contributions, r.schedule)
        }
        "rowwise" => {
            let seg = analysis_segment(&net)?;
            let r = rowwise_schedule_bound(&net, seg, true, false).map_err(runtime_err)?;
            let bytes = if dt == Dtype::I8 { r.peak_bytes / 4 } else { r.peak_bytes };
            ("rowwise", bytes, r.contributions, r.schedule)
        }
        "lower" => {
            let seg = analysis_segment(&net)?;
            let info = receptive_fields(&net, seg).map_err(runtime_err)?;
            let (m, n, _) = info.out_shape;
            let b = lower_bound_no_recompute(&net, seg, m, n).map_err(runtime_err)?;
            let bytes = if dt == Dtype::I8 { b / 4 } else { b };
            ("lower", bytes, Vec::new(), "no-recompute lower bound over the reference segment".into())
        }
        other => return Err(schema_err(format!("unknown convention {other}"))),
    };
    let mib = peak_bytes as f64 / (1024.0 * 1024.0);
    if json {
        let doc = serde_json::json!({
            "schema": 1,
            "model": net.name,
            "convention": label,
            "dtype": dtype,
            "peak_bytes": peak_bytes,
            "peak_mib": mib,
            "contributions": contributions.iter().map(|(n, b)| serde_json::json!({"layer": n, "bytes": b})).collect::<Vec<_>>(),
            "schedule": schedule,
        });
        Ok(serde_json::to_string_pretty(&doc).expect("serializable"))
    } else {
        let mut out = String::new();
        let _ = writeln!(out, "model:      {}", net.name);
        let _ = writeln!(out, "convention: {label} ({dtype})");
        let _ = writeln!(out, "schedule:   {schedule}");
        for (name, bytes) in &contributions {
            let _ = writeln!(out, "  {name:<28} {bytes:>12} B");
        }
        let _ = writeln!(out, "peak: {peak_bytes} B = {mib:.2} MiB");
        Ok(out)
    }
}

pub fn cmd_madds(model: &str, json: bool) -> CmdResult {
    let net = load_model(model)?;
    let madds = count_madds(&net).map_err(runtime_err)?;
    let params = count_params(&net).map_err(runtime_err)?;
    if json {
        let doc = serde_json::json!({
            "schema": 1,
            "model": net.name,
            "total_madds": madds.total_madds,
            "total_params": params.total_params,
            "per_layer": madds.per_layer.iter().zip(&params.per_layer).map(|(m, p)| serde_json::json!({
                "layer": m.name, "madds": m.madds, "params": p.params,
            })).collect::<Vec<_>>(),
        });
        Ok(serde_json::to_string_pretty(&doc).expect("serializable"))
    } else {
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", net.name);
        for (m, p) in madds.per_layer.iter().zip(&params.per_layer) {
            let _ = writeln!(out, "  {:<28} {:>14} MAdds {:>12} params", m.name, m.madds, p.params);
        }
        let _ = writeln!(out, "total: {} MAdds ({:.3}G), {} params ({:.2}M)",
            madds.total_madds,
            madds.total_madds as f64 / 1e9,
            params.total_params,
            params.total_params as f64 / 1e6);
        Ok(out)
    }
}

/// Read a raw float32 little-endian map with a 12-byte (H, W, C) header.
pub fn read_raw_input(path: &Path) -> std::result::Result<TensorMap<f32>, CmdError> {
    let data = fs::read(path).map_err(|e| schema_err(format!("{}: {e}", path.display())))?;
    let mut r = &data[..];
    let parse = |r: &mut &[u8]| r.read_u32::<LittleEndian>().map_err(|e| schema_err(format!("{}: bad header: {e}", path.display())));
    let h = parse(&mut r)? as usize;
    let w = parse(&mut r)? as usize;
    let c = parse(&mut r)? as usize;
    let want = h * w * c;
    if r.len() != want * 4 {
        return Err(schema_err(format!(
            "{}: payload is {} bytes, header {h}×{w}×{c} needs {}",
            path.display(),
            r.len(),
            want * 4
        )));
    }
    let mut vals = vec![0f32; want];
    for v in vals.iter_mut() {
        *v = r.read_f32::<LittleEndian>().expect("length checked");
    }
    TensorMap::from_vec(h, w, c, vals).map_err(runtime_err)
}

/// Write a map in the same raw format (used by tests and data prep).
pub fn write_raw_input(path: &Path, map: &TensorMap<f32>) -> std::result::Result<(), CmdError> {
    let (h, w, c) = map.shape();
    let mut buf = Vec::with_capacity(12 + map.data().len() * 4);
    for d in [h, w, c] {
        buf.write_u32::<LittleEndian>(d as u32).expect("vec write");
    }
    for &v in map.data() {
        buf.write_f32::<LittleEndian>(v).expect("vec write");
    }
    fs::write(path, buf).map_err(|e| schema_err(format!("{}: {e}", path.display())))
}

pub fn cmd_run(model: &str, input: &Path, schedule: &str, seed: u64, json: bool) -> CmdResult {
    let net = load_model(model)?;
    let x = read_raw_input(input)?;
    let lowered = lower(&net).map_err(runtime_err)?;
    let weights = random_weights(&lowered, seed).map_err(runtime_err)?;
    let (out, arena) = match schedule {
        "naive" => run_naive(&net, &x, &weights).map_err(runtime_err)?,
        "stream" => run_streaming(&net, &x, &weights, Schedule::Rowwise).map_err(runtime_err)?,
        other => return Err(schema_err(format!("unknown schedule {other}"))),
    };
    let (h, w, c) = out.shape();
    if json {
        let doc = serde_json::json!({
            "schema": 1,
            "model": net.name,
            "schedule": schedule,
            "output_shape": [h, w, c],
            "output_head": out.data().iter().take(8).collect::<Vec<_>>(),
            "peak_bytes": arena.peak_bytes(),
            "arena_events": arena.events.len(),
        });
        Ok(serde_json::to_string_pretty(&doc).expect("serializable"))
    } else {
        let mut s = String::new();
        let _ = writeln!(s, "output shape: {h}×{w}×{c}");
        let _ = writeln!(
            s,
            "output head:  {:?}",
            out.data().iter().take(8).collect::<Vec<_>>()
        );
        let _ = writeln!(s, "arena peak:   {} B", arena.peak_bytes());
        s.push_str(&arena.to_csv());
        Ok(s)
    }
}

pub fn cmd_gradcheck(h1: usize, h2: usize, patch: usize, seed: u64, json: bool) -> CmdResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: RnnPoolParams<f64> = RnnPoolParams::<f32>::random(patch, patch, 1, h1, h2, 0.5, &mut rng)
        .map_err(runtime_err)?
        .cast();
    let x = TensorMap::<f64>::from_fn(patch, patch, 1, |_, _, _| rng.gen_range(-1.0..1.0));
    let upstream: Vec<f64> = (0..params.out_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grads = rnnpool_backward(&params, &x, &upstream).map_err(runtime_err)?;
    let loss = |p: &RnnPoolParams<f64>| -> f64 {
        rnnpool_forward(p, &x)
            .expect("forward")
            .iter()
            .zip(&upstream)
            .map(|(a, b)| a * b)
            .sum()
    };
    let eps = 1e-6;
    let mut max_rel = 0f64;
    // Every parameter of both cells against central differences.
    macro_rules! check {
        ($($field:ident).+, $($gfield:ident).+) => {
            for i in 0..params.$($field).+.len() {
                let mut p = params.clone();
                p.$($field).+[i] += eps;
                let hi = loss(&p);
                p.$($field).+[i] -= 2.0 * eps;
                let lo = loss(&p);
                let num = (hi - lo) / (2.0 * eps);
                let ana = grads.$($gfield).+[i];
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
        };
    }
    check!(rnn1.w.data, rnn1.dw.data);
    check!(rnn1.u.data, rnn1.du.data);
    check!(rnn1.b_z, rnn1.db_z);
    check!(rnn1.b_h, rnn1.db_h);
    check!(rnn2.w.data, rnn2.dw.data);
    check!(rnn2.u.data, rnn2.du.data);
    check!(rnn2.b_z, rnn2.db_z);
    check!(rnn2.b_h, rnn2.db_h);
    if json {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "schema": 1, "h1": h1, "h2": h2, "patch": patch, "max_rel_error": max_rel,
        }))
        .expect("serializable"))
    } else {
        Ok(format!("max rel error: {max_rel:.3e}\n"))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_probe(
    task: &str,
    h1: usize,
    h2: usize,
    epochs: usize,
    count: usize,
    size: usize,
    seed: u64,
    json: bool,
) -> CmdResult {
    use rnnpool_core::probe::*;
    let data = match task {
        "lines-multiclass" => gen_lines_multiclass(count, size, 0.1, seed),
        "lines-multilabel" => gen_lines_multilabel(count, size, 0.1, seed),
        "shapes-multilabel" => gen_shapes_multilabel(count, size, 0.1, seed),
        other => return Err(schema_err(format!("unknown task {other}"))),
    }
    .map_err(runtime_err)?;
    let mut model =
        ProbeModel::random(size, h1, h2, data.num_outputs(), seed).map_err(runtime_err)?;
    let cfg = TrainConfig { epochs, seed, ..TrainConfig::default() };
    let result = train_probe(&mut model, &data, &cfg).map_err(runtime_err)?;
    if json {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "schema": 1,
            "task": task,
            "final_test_accuracy": result.final_test_accuracy,
            "accuracy_curve": result.accuracy_curve,
            "loss_curve": result.loss_curve,
        }))
        .expect("serializable"))
    } else {
        Ok(format!(
            "final test accuracy: {:.2}% after {} epochs\n",
            result.final_test_accuracy * 100.0,
            epochs
        ))
    }
}

pub fn cmd_quantize(model: &str, out_path: &Path, seed: u64, json: bool) -> CmdResult {
    let net = load_model(model)?;
    let lowered = lower(&net).map_err(runtime_err)?;
    let weights = random_weights(&lowered, seed).map_err(runtime_err)?;
    let mut payload = Vec::new();
    let mut f32_bytes = 0usize;
    let mut entries = 0u32;
    for (node, w) in lowered.nodes.iter().zip(&weights.nodes) {
        let flat: Option<(Vec<f32>, usize)> = match w {
            NodeWeights::Conv { kernel, .. } => Some((kernel.clone(), node.shape.2)),
            NodeWeights::Fc { weight, .. } => Some((weight.clone(), node.shape.2)),
            NodeWeights::RnnPool(p) => {
                let mut v = p.rnn1.w.data.clone();
                v.extend(&p.rnn1.u.data);
                v.extend(&p.rnn2.w.data);
                v.extend(&p.rnn2.u.data);
                Some((v, 1))
            }
            NodeWeights::None => None,
        };
        let Some((vals, groups)) = flat else { continue };
        f32_bytes += vals.len() * 4;
        let per = vals.len() / groups;
        let t = TensorMap::from_vec(1, per, groups, vals).map_err(runtime_err)?;
        let q = quantize_per_channel(&t).map_err(runtime_err)?;
        q.write_to(&mut payload).map_err(runtime_err)?;
        entries += 1;
    }
    let mut file = Vec::new();
    file.write_u32::<LittleEndian>(entries).expect("vec write");
    file.extend(payload);
    let total = file.len();
    fs::write(out_path, file).map_err(|e| schema_err(format!("{}: {e}", out_path.display())))?;
    if json {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "schema": 1,
            "model": net.name,
            "entries": entries,
            "float32_weight_bytes": f32_bytes,
            "quantized_file_bytes": total,
        }))
        .expect("serializable"))
    } else {
        Ok(format!(
            "quantized {entries} weight tensors: {f32_bytes} B float32 -> {total} B file\n"
        ))
    }
}

/// JSON schema for `enumerate`: {"nodes": [{"size": n, "preds": [...], "counted": bool}]}.
#[derive(Debug, Deserialize)]
struct DagFile {
    nodes: Vec<DagNodeFile>,
}

#[derive(Debug, Deserialize)]
struct DagNodeFile {
    size: usize,
    #[serde(default)]
    preds: Vec<usize>,
    #[serde(default = "default_true")]
    counted: bool,
}

fn default_true() -> bool {
    true
}

pub fn cmd_enumerate(dag_path: &Path, json: bool) -> CmdResult {
    let text = fs::read_to_string(dag_path)
        .map_err(|e| schema_err(format!("{}: {e}", dag_path.display())))?;
    let parsed: DagFile = serde_json::from_str(&text)
        .map_err(|e| schema_err(format!("{}: {e}", dag_path.display())))?;
    let n = parsed.nodes.len();
    for (i, node) in parsed.nodes.iter().enumerate() {
        if node.preds.iter().any(|&p| p >= n) {
            return Err(schema_err(format!(
                "{}: node {i} has a predecessor out of range",
                dag_path.display()
            )));
        }
    }
    let dag = Dag {
        nodes: parsed
            .nodes
            .into_iter()
            .map(|n| DagNode { size: n.size, preds: n.preds, counted: n.counted })
            .collect(),
    };
    let peak = enumerate_min_peak(&dag).map_err(runtime_err)?;
    if json {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "schema": 1, "min_peak": peak,
        }))
        .expect("serializable"))
    } else {
        Ok(format!("minimum peak over all orders: {peak}\n"))
    }
}

pub fn cmd_presets(json: bool) -> CmdResult {
    if json {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "schema": 1, "presets": PRESET_NAMES,
        }))
        .expect("serializable"))
    } else {
        Ok(PRESET_NAMES.join("\n") + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_file_roundtrip() {
        let net = preset("mobilenetv2-rnnpool").unwrap();
        let m = ModelFile::from_net(&net);
        let text = serde_json::to_string_pretty(&m).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        let text2 = serde_json::to_string_pretty(&back).unwrap();
        assert_eq!(text, text2);
        assert_eq!(back.to_net().layers.len(), net.layers.len());
    }

    #[test]
    fn analyze_reports_published_figures() {
        let out = cmd_analyze("preset:mobilenetv2", "layerbylayer", "f32", false).unwrap();
        assert!(out.contains("2.30 MiB"), "{out}");
        let out = cmd_analyze("preset:mobilenetv2-rnnpool", "layerbylayer", "f32", false).unwrap();
        assert!(out.contains("0.24 MiB"), "{out}");
    }

    #[test]
    fn analyze_json_is_strict_json() {
        let out = cmd_analyze("preset:resnet18-rnnpool", "rowwise", "f32", true).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(doc["schema"], 1);
        assert!(doc["peak_bytes"].as_u64().unwrap() > 0);
    }

    #[test]
    fn invalid_stride_is_schema_error_naming_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"name":"bad","input_shape":[8,8,3],"layers":[
                {"op":"conv2d","kh":3,"kw":3,"c_out":4,"stride":3,"pad":"same"}]}"#,
        )
        .unwrap();
        let err = load_model(path.to_str().unwrap()).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("layer 0"), "{}", err.message);
    }

    #[test]
    fn presets_lists_all_ten() {
        let out = cmd_presets(false).unwrap();
        assert_eq!(out.lines().count(), 10);
        for name in PRESET_NAMES {
            assert!(out.contains(name));
        }
    }

    #[test]
    fn gradcheck_small() {
        let out = cmd_gradcheck(2, 2, 3, 0, true).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(doc["max_rel_error"].as_f64().unwrap() < 1e-4);
    }

    #[test]
    fn run_roundtrips_raw_input() {
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("m.json");
        let net = NetworkSpec {
            name: "tiny".into(),
            input_shape: (8, 8, 1),
            layers: vec![LayerSpec::Conv2d {
                kh: 3,
                kw: 3,
                c_out: 2,
                stride: 2,
                pad: rnnpool_core::graph::Pad::Same,
            }],
        };
        std::fs::write(&model_path, serde_json::to_string(&ModelFile::from_net(&net)).unwrap())
            .unwrap();
        let input_path = dir.path().join("x.raw");
        let x = TensorMap::from_fn(8, 8, 1, |i, j, _| (i * 8 + j) as f32 * 0.01);
        write_raw_input(&input_path, &x).unwrap();
        let naive = cmd_run(model_path.to_str().unwrap(), &input_path, "naive", 7, true).unwrap();
        let stream = cmd_run(model_path.to_str().unwrap(), &input_path, "stream", 7, true).unwrap();
        let a: serde_json::Value = serde_json::from_str(&naive).unwrap();
        let b: serde_json::Value = serde_json::from_str(&stream).unwrap();
        assert_eq!(a["output_shape"], b["output_shape"]);
        assert_eq!(a["output_head"], b["output_head"]);
    }

    #[test]
    fn enumerate_diamond_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dag.json");
        std::fs::write(
            &path,
            r#"{"nodes":[{"size":4},{"size":1,"preds":[0]},{"size":1,"preds":[0]},{"size":4,"preds":[1,2]}]}"#,
        )
        .unwrap();
        let out = cmd_enumerate(&path, false).unwrap();
        assert!(out.contains("6"), "{out}");
    }

    #[test]
    fn quantize_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let out_path = dir.path().join("w.qnt");
        let msg = cmd_quantize("preset:mobilenetv2-0.35-vww-rnnpool", &out_path, 0, true).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&msg).unwrap();
        let f32b = doc["float32_weight_bytes"].as_u64().unwrap();
        let qb = doc["quantized_file_bytes"].as_u64().unwrap();
        assert!(qb < f32b / 2, "quantized {qb} vs float {f32b}");
        assert!(out_path.exists());
    }
}
