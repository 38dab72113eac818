use rnnpool_core::probe::*;
use std::time::Instant;

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let (task, count, size, epochs, lr, batch, clip): (&str, usize, usize, usize, f32, usize, f32) = (
        &a[1], a[2].parse().unwrap(), a[3].parse().unwrap(), a[4].parse().unwrap(),
        a[5].parse().unwrap(), a[6].parse().unwrap(), a[7].parse().unwrap());
    let ds = match task {
        "mc" => gen_lines_multiclass(count, size, 0.1, 1).unwrap(),
        "ml" => gen_lines_multilabel(count, size, 0.1, 1).unwrap(),
        _ => gen_shapes_multilabel(count, size, 0.1, 1).unwrap(),
    };
    let mut model = ProbeModel::random(size, 32, 32, ds.num_outputs(), 0).unwrap();
    let cfg = TrainConfig { epochs, lr, batch_size: batch,
        clip_norm: if clip > 0.0 { Some(clip) } else { None }, ..TrainConfig::default() };
    let t = Instant::now();
    let r = train_probe(&mut model, &ds, &cfg).unwrap();
    println!("{task} n={count} sz={size} ep={epochs} lr={lr} b={batch} clip={clip}: final {:.3} in {:?}", r.final_test_accuracy, t.elapsed());
    println!("loss: {:?}", r.loss_curve.iter().step_by((epochs/10).max(1)).map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    println!("acc:  {:?}", r.accuracy_curve.iter().step_by((epochs/10).max(1)).map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
}
