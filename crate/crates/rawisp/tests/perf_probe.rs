// Temporary: release-mode step timing to size the desk-scale experiment.
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rawisp::diffusion::{training_loss, DiffusionModel, ModelConfig};
use rawisp::nn::optim::{Adam, AdamConfig};
use rawisp::nn::Tensor;

#[test]
#[ignore]
fn probe_step_time() {
    let model = DiffusionModel::new(ModelConfig::default(), 1).unwrap();
    model.freeze_autoencoder();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = 16usize;
    let patch = 64usize;
    let x = Tensor::randn(&[batch, 3, patch, patch], 0.3, &mut rng);
    let c = Tensor::randn(&[batch, 4, patch, patch], 0.3, &mut rng);
    let ids = vec![1usize; batch];
    let mut opt = Adam::new(model.denoiser_params(), AdamConfig { lr: 1e-3, total_steps: 100, ..Default::default() });

    // Warm up.
    for _ in 0..2 {
        opt.zero_grads();
        let (loss, _) = training_loss(&model, &x, &c, &ids, &mut rng).unwrap();
        loss.backward().unwrap();
        opt.step().unwrap();
    }
    let n = 10;
    let t0 = Instant::now();
    for _ in 0..n {
        opt.zero_grads();
        let (loss, _) = training_loss(&model, &x, &c, &ids, &mut rng).unwrap();
        loss.backward().unwrap();
        opt.step().unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    println!("diffusion step (batch {batch}, patch {patch}): {:.1} ms", dt * 1000.0);

    // Autoencoder step timing.
    let mut opt_ae = Adam::new(model.ae_params(), AdamConfig { lr: 1e-3, total_steps: 100, ..Default::default() });
    for (_, p) in model.ae_params() {
        p.set_requires_grad(true);
    }
    let t0 = Instant::now();
    for _ in 0..n {
        opt_ae.zero_grads();
        let z = model.ae.encode(&x).unwrap();
        let r = model.ae.decode(&z).unwrap();
        let loss = rawisp::nn::ops::mse_loss(&r, &x).unwrap();
        loss.backward().unwrap();
        opt_ae.step().unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    println!("ae step (batch {batch}, patch {patch}): {:.1} ms", dt * 1000.0);
}
