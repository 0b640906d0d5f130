// Temporary: A/B autoencoder variants without touching the model.
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawisp::nn::layers::{Conv2d, ConvTranspose2d, GroupNorm, ParamList};
use rawisp::nn::optim::{Adam, AdamConfig};
use rawisp::nn::{no_grad, ops, Tensor};
use rawisp::sim::synthesize_scene;
use std::time::Instant;

struct Ae {
    e1: Conv2d,
    gn_e1: GroupNorm,
    e2: Conv2d,
    gn_e2: GroupNorm,
    e3: Conv2d,
    gn_e3: GroupNorm,
    e4: Conv2d,
    d1: Conv2d,
    d2: Conv2d,
    d3: ConvTranspose2d,
    d4: Conv2d,
    d5: Conv2d,
    gn_d1: GroupNorm,
    gn_d2: GroupNorm,
    gn_d3: GroupNorm,
    gn_d4: GroupNorm,
    use_gn_dec: bool,
}

impl Ae {
    fn new(b: usize, c_lat: usize, use_gn_dec: bool, rng: &mut ChaCha8Rng) -> Self {
        Ae {
            e1: Conv2d::new(3, b, 4, 2, 1, rng),
            gn_e1: GroupNorm::new(b),
            e2: Conv2d::new(b, 2 * b, 4, 2, 1, rng),
            gn_e2: GroupNorm::new(2 * b),
            e3: Conv2d::new(2 * b, 2 * b, 3, 1, 1, rng),
            gn_e3: GroupNorm::new(2 * b),
            e4: Conv2d::new(2 * b, c_lat, 3, 1, 1, rng),
            d1: Conv2d::new(c_lat, 2 * b, 3, 1, 1, rng),
            d2: Conv2d::new(2 * b, 2 * b, 3, 1, 1, rng),
            d3: ConvTranspose2d::new(2 * b, b, 4, 2, 1, rng),
            d4: Conv2d::new(b, b, 3, 1, 1, rng),
            d5: Conv2d::new(b, 3, 3, 1, 1, rng),
            gn_d1: GroupNorm::new(2 * b),
            gn_d2: GroupNorm::new(2 * b),
            gn_d3: GroupNorm::new(b),
            gn_d4: GroupNorm::new(b),
            use_gn_dec,
        }
    }

    fn encode(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let h = ops::silu(&self.gn_e1.forward(&self.e1.forward(x).unwrap()).unwrap());
        let h = ops::silu(&self.gn_e2.forward(&self.e2.forward(&h).unwrap()).unwrap());
        let h = ops::silu(&self.gn_e3.forward(&self.e3.forward(&h).unwrap()).unwrap());
        self.e4.forward(&h).unwrap()
    }

    fn decode(&self, z: &Tensor<f32>) -> Tensor<f32> {
        let a = |gn: &GroupNorm, t: Tensor<f32>| -> Tensor<f32> {
            if self.use_gn_dec {
                ops::silu(&gn.forward(&t).unwrap())
            } else {
                ops::silu(&t)
            }
        };
        let h = a(&self.gn_d1, self.d1.forward(z).unwrap());
        let h = a(&self.gn_d2, self.d2.forward(&h).unwrap());
        let h = a(&self.gn_d3, self.d3.forward(&h).unwrap());
        let h = ops::nearest_upsample(&h, 2).unwrap();
        let h = a(&self.gn_d4, self.d4.forward(&h).unwrap());
        self.d5.forward(&h).unwrap()
    }

    fn params(&self) -> ParamList {
        let mut out = Vec::new();
        self.e1.params("e1", &mut out);
        self.gn_e1.params("gn_e1", &mut out);
        self.e2.params("e2", &mut out);
        self.gn_e2.params("gn_e2", &mut out);
        self.e3.params("e3", &mut out);
        self.gn_e3.params("gn_e3", &mut out);
        self.e4.params("e4", &mut out);
        self.d1.params("d1", &mut out);
        self.d2.params("d2", &mut out);
        self.d3.params("d3", &mut out);
        self.d4.params("d4", &mut out);
        self.d5.params("d5", &mut out);
        if self.use_gn_dec {
            self.gn_d1.params("gn_d1", &mut out);
            self.gn_d2.params("gn_d2", &mut out);
            self.gn_d3.params("gn_d3", &mut out);
            self.gn_d4.params("gn_d4", &mut out);
        }
        out
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let steps = get("--steps", 600.0) as usize;
    let base = get("--base", 16.0) as usize;
    let lr = get("--lr", 3e-3);
    let wd = get("--wd", 0.0);
    let gn_dec = get("--gn-dec", 0.0) as usize == 1;
    let batch = get("--batch", 8.0) as usize;
    let patch = get("--patch", 48.0) as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ae = Ae::new(base, 4, gn_dec, &mut rng);

    let scenes: Vec<Vec<f32>> =
        (0..24).map(|i| synthesize_scene(96, 96, 1000 + i).to_planar()).collect();
    let extract = |planar: &[f32], y0: usize, x0: usize, p: usize| -> Vec<f32> {
        let mut out = Vec::with_capacity(3 * p * p);
        for c in 0..3 {
            for y in 0..p {
                let basei = (c * 96 + y0 + y) * 96 + x0;
                out.extend_from_slice(&planar[basei..basei + p]);
            }
        }
        out
    };

    let mut opt = Adam::new(
        ae.params(),
        AdamConfig { lr, warmup_steps: 50, total_steps: steps, weight_decay: wd, ..Default::default() },
    );
    let t0 = Instant::now();
    let mut rng2 = ChaCha8Rng::seed_from_u64(3);
    for step in 1..=steps {
        let mut xb = Vec::with_capacity(batch * 3 * patch * patch);
        for _ in 0..batch {
            let s = &scenes[rng2.gen_range(0..scenes.len())];
            let y0 = rng2.gen_range(0..=96 - patch);
            let x0 = rng2.gen_range(0..=96 - patch);
            xb.extend(extract(s, y0, x0, patch));
        }
        let x = Tensor::from_vec(&[batch, 3, patch, patch], xb).unwrap();
        opt.zero_grads();
        let loss = ops::mse_loss(&ae.decode(&ae.encode(&x)), &x).unwrap();
        loss.backward().unwrap();
        opt.step().unwrap();
        if step % 200 == 0 {
            println!("  step {step}: loss {:.6} ({:.0}s)", loss.item(), t0.elapsed().as_secs_f64());
        }
    }
    let mut psnrs = Vec::new();
    for i in 0..4 {
        let img = synthesize_scene(96, 96, 5000 + i);
        let x = Tensor::from_vec(&[1, 3, 96, 96], img.to_planar()).unwrap();
        let r = no_grad(|| ae.decode(&ae.encode(&x)));
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
        "base {base} gn_dec {gn_dec} lr {lr} wd {wd} steps {steps}: recon {mean:.2} dB, {:.0}s",
        t0.elapsed().as_secs_f64()
    );
}
