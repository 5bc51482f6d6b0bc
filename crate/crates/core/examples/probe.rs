//! Scratch probe: gradient check + training speed/accuracy tuning. Deleted
//! before release.

use std::time::Instant;

use scg_core::annotate::LabelingConfig;
use scg_core::detect::{default_tau_grid, select_threshold};
use scg_core::experiment::dataset::{evaluate_subjects, threshold_pairs, Dataset};
use scg_core::experiment::folds::loso_folds;
use scg_core::experiment::synth::{generate_synthetic, SynthConfig};
use scg_core::experiment::train::{pool_windows, train_model, TrainingParams};
use scg_core::neural::{bce_loss, Tensor3, UNet, UNetConfig};
use scg_core::record::ChannelSelection;
use scg_core::signal::WindowConfig;

fn grad_check() {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
    for channels in [1usize, 6] {
        let config = UNetConfig {
            depth: 4,
            base_filters: 8,
            kernel_size: 3,
            in_channels: channels,
            input_length: 320,
        };
        let mut net = UNet::<f64>::new(config, 5).unwrap();
        net.set_train(true);
        let x = Tensor3::<f64>::from_fn(2, channels, 320, |_, _, _| rng.gen_range(0.0..1.0));
        let y = Tensor3::<f64>::from_fn(2, 1, 320, |_, _, l| if l % 40 < 3 { 1.0 } else { 0.0 });

        let probs = net.forward_train(&x).unwrap();
        let (_, dprobs) = bce_loss(&probs, &y).unwrap();
        net.backward(&dprobs).unwrap();
        let grads = net.take_grads().unwrap();
        let n_blocks = grads.len();

        let t0 = Instant::now();
        let mut worst = 0.0f64;
        let h = 1e-4;
        for trial in 0..50 {
            let block = (trial * 7 + 3) % n_blocks;
            let lens: Vec<usize> = grads.iter().map(|g| g.len()).collect();
            let idx = (trial * 131 + 17) % lens[block];
            let ana = grads[block][idx];

            let mut loss_at = |delta: f64| {
                {
                    let mut blocks = net.param_blocks_mut();
                    blocks[block][idx] += delta;
                }
                let mut net2 = net.clone();
                let probs = net2.forward_train(&x).unwrap();
                let (loss, _) = bce_loss(&probs, &y).unwrap();
                {
                    let mut blocks = net.param_blocks_mut();
                    blocks[block][idx] -= delta;
                }
                loss
            };
            let lp = loss_at(h);
            let lm = loss_at(-h);
            let num = (lp - lm) / (2.0 * h);
            let rel = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-10);
            if rel > worst {
                worst = rel;
                println!("  block {block} idx {idx}: ana {ana:.3e} num {num:.3e} rel {rel:.3e}");
            }
        }
        println!(
            "grad check C={channels}: worst rel err {worst:.3e} ({:?})",
            t0.elapsed()
        );
    }
}

fn train_probe(lr: f64, epochs: usize, duration_s: f64) {
    let t0 = Instant::now();
    let synth = SynthConfig {
        n_subjects: 10,
        duration_s,
        ..SynthConfig::default()
    };
    let subjects = generate_synthetic(&synth, 11).unwrap();
    let records: Vec<_> = subjects.into_iter().map(|s| s.record).collect();
    let ds = Dataset::from_records(
        "clean",
        &records,
        ChannelSelection::SingleZ,
        &WindowConfig::default(),
        &LabelingConfig::default(),
    )
    .unwrap();
    println!("dataset build: {:?}, {} windows", t0.elapsed(), ds.window_count());

    let folds = loso_folds(&ds.subject_ids(), 42).unwrap();
    let params = TrainingParams {
        batch_size: 32,
        learning_rate: lr,
        max_epochs: epochs,
        patience: 8,
    };
    let mut f1s = Vec::new();
    for (k, fold) in folds.iter().enumerate().take(3) {
        let t1 = Instant::now();
        let train: Vec<_> = fold
            .train
            .iter()
            .filter_map(|id| ds.subject(id))
            .flat_map(|s| s.windows.iter())
            .collect();
        let val: Vec<_> = fold
            .val
            .iter()
            .filter_map(|id| ds.subject(id))
            .flat_map(|s| s.windows.iter())
            .collect();
        let mut model = UNet::<f32>::new(
            UNetConfig {
                depth: 4,
                base_filters: 8,
                kernel_size: 3,
                in_channels: 1,
                input_length: 320,
            },
            42 + k as u64,
        )
        .unwrap();
        let hist = train_model(&mut model, &train, &val, &params, 42 + k as u64).unwrap();
        let tau = select_threshold(&threshold_pairs(&model, &val).unwrap(), &default_tau_grid(), 2).unwrap();
        let test = ds.subject(&fold.test).unwrap();
        let report = evaluate_subjects(&model, &[test], tau, 2).unwrap();
        let m = &report.aggregate;
        f1s.push(m.f1);
        println!(
            "  fold {k}: {} epochs (best {:?}), tau {tau:.2}, P {:.3} R {:.3} F1 {:.3}, {:?}",
            hist.train_loss.len(),
            hist.best_epoch,
            m.precision,
            m.recall,
            m.f1,
            t1.elapsed()
        );
    }
    let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
    println!("lr {lr} epochs {epochs}: mean F1 over 3 folds {mean:.3}, total {:?}", t0.elapsed());
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    if mode == "layers" { conv_fd(); tiny_unet_fd(); return; }
    if mode == "grad" || mode == "all" {
        grad_check();
    }
    if mode == "train" || mode == "all" {
        let lr: f64 = std::env::args()
            .nth(2)
            .and_then(|s| s.parse().ok())
            .unwrap_or(3e-3);
        let epochs: usize = std::env::args()
            .nth(3)
            .and_then(|s| s.parse().ok())
            .unwrap_or(30);
        let dur: f64 = std::env::args()
            .nth(4)
            .and_then(|s| s.parse().ok())
            .unwrap_or(120.0);
        train_probe(lr, epochs, dur);
    }
}

fn conv_fd() {
    use rand::prelude::*;
    use scg_core::neural::conv::{conv1d_backward, conv1d_forward, ConvParams};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let x = Tensor3::<f64>::from_fn(2, 3, 10, |_, _, _| rng.gen_range(-1.0..1.0));
    let params = ConvParams {
        out_ch: 4,
        in_ch: 3,
        kernel: 3,
        weights: (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        bias: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let cotangent = Tensor3::<f64>::from_fn(2, 4, 10, |_, _, _| rng.gen_range(-1.0..1.0));
    let loss = |x: &Tensor3<f64>, p: &ConvParams<f64>| {
        let y = conv1d_forward(x, p).unwrap();
        y.data.iter().zip(&cotangent.data).map(|(a, b)| a * b).sum::<f64>()
    };
    let (gx, gw, gb) = conv1d_backward(&x, &params, &cotangent).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..x.data.len() {
        let mut xp = x.clone(); xp.data[i] += h;
        let mut xm = x.clone(); xm.data[i] -= h;
        let num = (loss(&xp, &params) - loss(&xm, &params)) / (2.0 * h);
        worst = worst.max((num - gx.data[i]).abs() / (num.abs() + gx.data[i].abs()).max(1e-10));
    }
    println!("conv dx worst {worst:.3e}");
    let mut worst: f64 = 0.0;
    for i in 0..params.weights.len() {
        let mut pp = params.clone(); pp.weights[i] += h;
        let mut pm = params.clone(); pm.weights[i] -= h;
        let num = (loss(&x, &pp) - loss(&x, &pm)) / (2.0 * h);
        worst = worst.max((num - gw[i]).abs() / (num.abs() + gw[i]).abs().max(1e-10));
    }
    println!("conv dw worst {worst:.3e}");
    let mut worst: f64 = 0.0;
    for i in 0..params.bias.len() {
        let mut pp = params.clone(); pp.bias[i] += h;
        let mut pm = params.clone(); pm.bias[i] -= h;
        let num = (loss(&x, &pp) - loss(&x, &pm)) / (2.0 * h);
        worst = worst.max((num - gb[i]).abs() / (num.abs() + gb[i]).abs().max(1e-10));
    }
    println!("conv db worst {worst:.3e}");
}

fn tiny_unet_fd() {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let config = UNetConfig { depth: 1, base_filters: 2, kernel_size: 3, in_channels: 1, input_length: 8 };
    let mut net = UNet::<f64>::new(config, 3).unwrap();
    net.set_train(true);
    let x = Tensor3::<f64>::from_fn(2, 1, 8, |_, _, _| rng.gen_range(0.0..1.0));
    let y = Tensor3::<f64>::from_fn(2, 1, 8, |_, _, l| ((l % 4) == 1) as u8 as f64);
    let probs = net.forward_train(&x).unwrap();
    let (_, dprobs) = bce_loss(&probs, &y).unwrap();
    net.backward(&dprobs).unwrap();
    let grads = net.take_grads().unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut worst_at = (0usize, 0usize);
    for b in 0..grads.len() {
        for i in 0..grads[b].len() {
            let mut loss_at = |delta: f64| {
                { net.param_blocks_mut()[b][i] += delta; }
                let mut n2 = net.clone();
                let p = n2.forward_train(&x).unwrap();
                let (l, _) = bce_loss(&p, &y).unwrap();
                { net.param_blocks_mut()[b][i] -= delta; }
                l
            };
            let num = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let ana = grads[b][i];
            let rel = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-10);
            if rel > worst { worst = rel; worst_at = (b, i); }
        }
    }
    println!("tiny unet FD worst {worst:.3e} at block {} idx {} ({} blocks)", worst_at.0, worst_at.1, grads.len());
}
