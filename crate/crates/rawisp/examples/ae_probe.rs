// Temporary: autoencoder capacity/training probe.
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawisp::diffusion::{DiffusionModel, ModelConfig};
use rawisp::nn::optim::{Adam, AdamConfig};
use rawisp::nn::{no_grad, ops, Tensor};
use rawisp::sim::synthesize_scene;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let steps = get("--steps", 1500.0) as usize;
    let ae_base = get("--base", 16.0) as usize;
    let c_lat = get("--c-lat", 4.0) as usize;
    let lr = get("--lr", 2e-3);
    let batch = get("--batch", 8.0) as usize;
    let patch = get("--patch", 48.0) as usize;

    let cfg = ModelConfig { ae_base, c_lat, ..Default::default() };
    let model = DiffusionModel::new(cfg, 1).unwrap();

    // 24 synthetic scenes as training data.
    let scenes: Vec<Vec<f32>> = (0..24)
        .map(|i| {
            let img = synthesize_scene(96, 96, 1000 + i);
            img.to_planar()
        })
        .collect();

    let extract = |planar: &[f32], y0: usize, x0: usize, p: usize| -> Vec<f32> {
        let mut out = Vec::with_capacity(3 * p * p);
        for c in 0..3 {
            for y in 0..p {
                let base = (c * 96 + y0 + y) * 96 + x0;
                out.extend_from_slice(&planar[base..base + p]);
            }
        }
        out
    };

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut opt = Adam::new(
        model.ae_params(),
        AdamConfig { lr, warmup_steps: steps / 10, total_steps: steps, weight_decay: 1e-2, ..Default::default() },
    );
    let t0 = Instant::now();
    for step in 1..=steps {
        let mut xb = Vec::with_capacity(batch * 3 * patch * patch);
        for _ in 0..batch {
            let s = &scenes[rng.gen_range(0..scenes.len())];
            let y0 = rng.gen_range(0..=96 - patch);
            let x0 = rng.gen_range(0..=96 - patch);
            xb.extend(extract(s, y0, x0, patch));
        }
        let x = Tensor::from_vec(&[batch, 3, patch, patch], xb).unwrap();
        opt.zero_grads();
        let z = model.ae.encode(&x).unwrap();
        let r = model.ae.decode(&z).unwrap();
        let loss = ops::mse_loss(&r, &x).unwrap();
        loss.backward().unwrap();
        opt.step().unwrap();
        if step % 250 == 0 || step == 1 {
            println!("step {step}: loss {:.6} ({:.0}s)", loss.item(), t0.elapsed().as_secs_f64());
        }
    }

    // Recon PSNR on held-out scenes.
    let mut psnrs = Vec::new();
    for i in 0..4 {
        let img = synthesize_scene(96, 96, 5000 + i);
        let x = Tensor::from_vec(&[1, 3, 96, 96], img.to_planar()).unwrap();
        let r = no_grad(|| model.ae.decode(&model.ae.encode(&x).unwrap()).unwrap());
        let rv = r.to_vec();
        let xv = x.to_vec();
        let mse: f64 = rv
            .iter()
            .zip(&xv)
            .map(|(&a, &b)| ((a.clamp(0.0, 1.0) - b) as f64).powi(2))
            .sum::<f64>()
            / rv.len() as f64;
        psnrs.push(10.0 * (1.0 / mse).log10());
    }
    let mean = psnrs.iter().sum::<f64>() / psnrs.len() as f64;
    println!(
        "base {ae_base} c_lat {c_lat} steps {steps}: recon psnr {mean:.2} dB ({:?}), {:.0}s total",
        psnrs.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
        t0.elapsed().as_secs_f64()
    );
}
