// Temporary calibration driver for the desk-scale experiment.
use std::time::Instant;

use rawisp::config::RunConfig;
use rawisp::diffusion::{sample_image, train, DiffusionModel, GuidanceConfig, SampleOpts, TrainConfig};
use rawisp::isp::{read_ppm, run_pipeline};
use rawisp::metrics::psnr;
use rawisp::raw::{preprocess, read_braw};
use rawisp::sim::{make_dataset, DatasetConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let scenes = get("--scenes", 64.0) as usize;
    let steps = get("--steps", 2000.0) as usize;
    let ae_steps = get("--ae-steps", 500.0) as usize;
    let batch = get("--batch", 8.0) as usize;
    let patch = get("--patch", 48.0) as usize;
    let lr = get("--lr", 1e-3);
    let warmup = get("--warmup", 200.0) as usize;
    let eval_n = get("--eval", 8.0) as usize;
    let s_image = get("--s-image", 1.0) as f32;
    let sample_steps = get("--sample-steps", 50.0) as usize;

    let run = RunConfig::default();
    let dir = std::path::PathBuf::from("/tmp/e2e_probe");
    let _ = std::fs::remove_dir_all(&dir);
    let data_dir = dir.join("data");

    let t0 = Instant::now();
    let ds = DatasetConfig {
        n_scenes: scenes,
        ratios: vec![100.0, 300.0],
        width: 96,
        height: 96,
        pattern: run.pattern,
        noise: rawisp::sim::SensorNoiseParams { seed: 42, ..Default::default() },
        isp: run.isp.clone(),
    };
    let manifest = make_dataset(&ds, &data_dir).unwrap();
    println!("simulate: {} pairs in {:.1}s", manifest.rows.len(), t0.elapsed().as_secs_f64());

    let tcfg = TrainConfig {
        patch,
        batch,
        steps,
        ae_steps,
        lr,
        ae_lr: 2e-3,
        warmup_steps: warmup,
        weight_decay: 1e-2,
        seed: 42,
        val_pairs: eval_n,
        val_every: 250,
        checkpoint_every: 100_000,
        model: Default::default(),
    };
    let t0 = Instant::now();
    let report = train(&manifest, &data_dir, &tcfg, &dir.join("ckpt")).unwrap();
    println!(
        "train: {:.1}s  val {:.4} -> {:.4} (ratio {:.3})",
        t0.elapsed().as_secs_f64(),
        report.val_first,
        report.val_last,
        report.val_last / report.val_first
    );

    // Eval on the held-out tail.
    let model = DiffusionModel::load(&report.checkpoint).unwrap();
    let rows = &manifest.rows[manifest.rows.len() - eval_n..];

    // Component diagnostics on the first held-out pair.
    {
        use rand::SeedableRng;
        use rawisp::diffusion::ConditionalDenoiser;
        use rawisp::nn::{no_grad, Tensor};
        let row = &rows[0];
        let reference = read_ppm(&data_dir.join(&row.reference)).unwrap();
        let braw = read_braw(&data_dir.join(&row.noisy)).unwrap();
        let cond_img = preprocess(&braw, row.ratio as f32).unwrap();
        let x = Tensor::from_vec(&[1, 3, 96, 96], reference.to_planar()).unwrap();
        let c = Tensor::from_vec(&[1, 4, 96, 96], cond_img.to_planar()).unwrap();

        let recon = no_grad(|| {
            let z = model.ae.encode(&x).unwrap();
            model.ae.decode(&z).unwrap()
        });
        let rp = {
            let r = recon.to_vec();
            let want = x.to_vec();
            let mse: f64 = r
                .iter()
                .zip(&want)
                .map(|(&a, &b)| ((a.clamp(0.0, 1.0) - b) as f64).powi(2))
                .sum::<f64>()
                / r.len() as f64;
            10.0 * (1.0 / mse).log10()
        };
        println!("diag: AE recon psnr {rp:.2} dB, latent_scale {:.4}", model.latent_scale_value());

        // One-step x0-hat prediction from various noise levels.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &t in &[100usize, 400, 700, 1000] {
            let diag = no_grad(|| {
                let z0 = model.encode_reference(&x).unwrap();
                let cl = model.encode_condition(&c).unwrap();
                let eps = Tensor::randn(&z0.shape(), 1.0, &mut rng);
                let zt = rawisp::diffusion::forward_diffuse(&z0, &[t], &eps, model.schedule()).unwrap();
                let eh = model.predict_eps(&zt, &cl, &[t], &[1]).unwrap();
                let ab = model.schedule().alpha_bar(t);
                let ztv = zt.to_vec();
                let ehv = eh.to_vec();
                let epsv = eps.to_vec();
                let eps_mse: f64 = ehv
                    .iter()
                    .zip(&epsv)
                    .map(|(&a, &b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
                    / ehv.len() as f64;
                let x0: Vec<f32> = ztv
                    .iter()
                    .zip(&ehv)
                    .map(|(&z, &e)| ((z as f64 - (1.0 - ab).sqrt() * e as f64) / ab.sqrt()) as f32)
                    .collect();
                let x0t = Tensor::from_vec(&z0.shape(), x0).unwrap();
                let dec = model.decode(&x0t).unwrap();
                let d = dec.to_vec();
                let want = x.to_vec();
                let mse: f64 = d
                    .iter()
                    .zip(&want)
                    .map(|(&a, &b)| ((a.clamp(0.0, 1.0) - b) as f64).powi(2))
                    .sum::<f64>()
                    / d.len() as f64;
                (eps_mse, 10.0 * (1.0 / mse).log10())
            });
            println!("diag: t={t} eps_mse {:.4} x0hat psnr {:.2} dB", diag.0, diag.1);
        }
    }
    let guidance = GuidanceConfig { s_image, s_text: 0.0 };
    let t0 = Instant::now();
    let mut by_ratio: std::collections::BTreeMap<i64, (Vec<f64>, Vec<f64>)> = Default::default();
    for (i, row) in rows.iter().enumerate() {
        let braw = read_braw(&data_dir.join(&row.noisy)).unwrap();
        let reference = read_ppm(&data_dir.join(&row.reference)).unwrap();

        let baseline = run_pipeline(&braw, &run.isp, row.ratio as f32).unwrap();
        let b_psnr = psnr(&baseline, &reference, 1.0).unwrap();

        let cond = preprocess(&braw, row.ratio as f32).unwrap();
        let opts = SampleOpts { steps: sample_steps, seed: 1000 + i as u64, stochastic: true };
        let out = sample_image(&model, &cond, 1, &guidance, &opts).unwrap();
        let m_psnr = psnr(&out, &reference, 1.0).unwrap();

        let e = by_ratio.entry(row.ratio as i64).or_default();
        e.0.push(m_psnr);
        e.1.push(b_psnr);
        println!("  {} ratio {}: model {:.2} dB, baseline {:.2} dB", row.noisy, row.ratio, m_psnr, b_psnr);
    }
    println!("eval: {:.1}s", t0.elapsed().as_secs_f64());
    for (ratio, (m, b)) in &by_ratio {
        let mm = m.iter().sum::<f64>() / m.len() as f64;
        let bb = b.iter().sum::<f64>() / b.len() as f64;
        println!("ratio {ratio}: model {mm:.2} dB vs baseline {bb:.2} dB (margin {:+.2})", mm - bb);
    }
}
