//! Manual timing probe for the training hot path (run with --ignored).

use botda_core::autodiff::{adam_step, AdamState, Shape, Tape, Tensor};
use botda_core::srnet::{build_model, ModelConfig};
use std::time::Instant;

#[test]
#[ignore]
fn training_step_throughput() {
    let mut model = build_model(&ModelConfig::desk(), 1).unwrap();
    let batch = 16usize;
    let x = Tensor::from_vec(
        Shape([batch, 1, 71, 128]),
        (0..batch * 71 * 128)
            .map(|i| ((i * 31 % 97) as f32) / 97.0)
            .collect(),
    )
    .unwrap();
    let y = Tensor::from_vec(
        Shape([batch, 1, 1, 128]),
        (0..batch * 128).map(|i| ((i % 13) as f32) / 13.0).collect(),
    )
    .unwrap();
    let mut optimizer = AdamState::new(&model.params, 1e-3);
    // warmup
    for _ in 0..2 {
        let mut tape = Tape::new();
        let (out, vars) = model.forward_train(&mut tape, &x).unwrap();
        let loss = tape.mse_masked(out, y.clone(), (20, 108)).unwrap();
        let grads = tape.backward(loss).unwrap();
        let refs: Vec<_> = vars.iter().map(|&v| grads.get(v)).collect();
        adam_step(&mut model.params, &refs, &mut optimizer).unwrap();
    }
    let steps = 8;
    let t0 = Instant::now();
    for _ in 0..steps {
        let mut tape = Tape::new();
        let (out, vars) = model.forward_train(&mut tape, &x).unwrap();
        let loss = tape.mse_masked(out, y.clone(), (20, 108)).unwrap();
        let grads = tape.backward(loss).unwrap();
        let refs: Vec<_> = vars.iter().map(|&v| grads.get(v)).collect();
        adam_step(&mut model.params, &refs, &mut optimizer).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    let per_step = dt / steps as f64;
    let per_epoch = per_step * (2000.0 / batch as f64);
    println!(
        "step {per_step:.3}s -> epoch(2000) {per_epoch:.1}s -> 30min budget {:.1} epochs",
        1800.0 / per_epoch
    );
    // eval forward timing (540-wide frame)
    let xe = Tensor::from_vec(
        Shape([1, 1, 71, 540]),
        (0..71 * 540).map(|i| ((i * 17 % 89) as f32) / 89.0).collect(),
    )
    .unwrap();
    let t1 = Instant::now();
    for _ in 0..10 {
        let _ = model.forward_eval(&xe).unwrap();
    }
    println!("eval fwd 540-wide: {:.4}s", t1.elapsed().as_secs_f64() / 10.0);
}
