//! End-to-end gradient audit: run a miniature model forward, backpropagate,
//! and compare every parameter gradient against central finite differences.
//!
//! Run with: cargo run --example gradient_audit

use hexformer::attention::Aggregation;
use hexformer::model::{forward, init_model, Activation, ModelConfig, Variant};
use hexformer::optim::label_smoothing_ce;
use hexformer::params::ParamStore;
use hexformer::tensor::fdiff::{finite_diff_grad, max_rel_err};
use hexformer::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hexformer::Result<()> {
    let cfg = ModelConfig {
        variant: Variant::Hexformer,
        aggregation: Aggregation::ExpAgg,
        patch: 4,
        embed: 4,
        mlp: 8,
        depth: 1,
        heads: 2,
        classes: 3,
        curvature: -1.0,
        activation: Activation::Gelu,
        channels: 1,
        image_size: 8,
        lambda_v: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store: ParamStore<f64> = ParamStore::new();
    init_model(&mut store, &cfg, &mut rng)?;

    let pixels: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let image = Tensor::from_vec(pixels, &[1, 8, 8])?;
    let target = 1usize;

    // Analytic gradients from one reverse pass.
    let mut tape: Tape<f64> = Tape::new();
    let (logits, _) = forward(&mut tape, &mut store, &cfg, &image, false)?;
    let loss = label_smoothing_ce(&mut tape, &logits, target, 0.1)?;
    println!("loss = {:.6}", loss.item());
    tape.backward(&loss)?;
    store.accumulate_grads(&tape, 1.0)?;

    // Numeric gradients parameter by parameter.
    let names: Vec<String> = store.trainable().map(|p| p.name.clone()).collect();
    let mut worst = (String::new(), 0.0f64);
    for name in &names {
        let (base, shape, analytic) = {
            let p = store.get(name).unwrap();
            (p.data.clone(), p.shape.clone(), p.grad.clone())
        };
        let x0 = Tensor::from_vec(base.clone(), &shape)?;
        let mut eval = |x: &Tensor<f64>| -> hexformer::Result<f64> {
            store.get_mut(name).unwrap().data = x.data().to_vec();
            let mut tape = Tape::new();
            let (logits, _) = forward(&mut tape, &mut store, &cfg, &image, false)?;
            let loss = label_smoothing_ce(&mut tape, &logits, target, 0.1)?;
            Ok(loss.item())
        };
        let numeric = finite_diff_grad(&mut eval, &x0, 1e-5)?;
        store.get_mut(name).unwrap().data = base;
        let err = max_rel_err(&analytic, numeric.data());
        println!("  {name:<24} max relative error {err:.3e}");
        if err > worst.1 {
            worst = (name.clone(), err);
        }
    }
    println!(
        "\nworst parameter: {} at {:.3e} (threshold 1e-3: {})",
        worst.0,
        worst.1,
        if worst.1 < 1e-3 { "pass" } else { "FAIL" }
    );
    Ok(())
}
