//! Compares the data-parallel kernels against single-threaded execution.
//!
//! With the default `parallel` feature, the "serial" measurements run the
//! same code inside a one-thread rayon pool, so the numbers isolate the
//! fan-out benefit. Build with `--no-default-features` to bench the
//! dependency-free sequential fallback instead (compare via criterion
//! baselines: `cargo bench -- --save-baseline parallel`).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use scg_core::annotate::detect_r_peaks;
use scg_core::experiment::dataset::{batch_inputs, batch_targets};
use scg_core::experiment::synth::{generate_synthetic, SynthConfig};
use scg_core::experiment::Dataset;
use scg_core::neural::{adam_step, bce_loss, AdamConfig, AdamState, Tensor3, UNet, UNetConfig};
use scg_core::record::ChannelSelection;
use scg_core::signal::WindowConfig;
use scg_core::annotate::LabelingConfig;

fn unet(batch: usize, channels: usize) -> (UNet<f32>, Tensor3<f32>) {
    let config = UNetConfig {
        depth: 4,
        base_filters: 16,
        kernel_size: 3,
        in_channels: channels,
        input_length: 320,
    };
    let net = UNet::new(config, 11).unwrap();
    let x = Tensor3::from_fn(batch, channels, 320, |b, c, l| {
        (((b + 1) * (c + 1)) as f32 * 0.01 + l as f32 * 0.003).sin() * 0.5 + 0.5
    });
    (net, x)
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("serial", one), ("parallel", all)]
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("unet_forward_32x6x320");
    let (net, x) = unet(32, 6);

    #[cfg(feature = "parallel")]
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &name, |b, _| {
            b.iter(|| pool.install(|| net.forward(&x).unwrap()))
        });
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function(BenchmarkId::from_parameter("sequential"), |b| {
        b.iter(|| net.forward(&x).unwrap())
    });
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step_32x1x320");
    group.sample_size(10);

    let run_step = |net: &mut UNet<f32>, adam: &mut AdamState<f32>, x: &Tensor3<f32>, y: &Tensor3<f32>| {
        let probs = net.forward_train(x).unwrap();
        let (_, grad) = bce_loss(&probs, y).unwrap();
        net.backward(&grad).unwrap();
        adam_step(net, adam).unwrap();
    };

    let make = || {
        let (mut net, x) = unet(32, 1);
        net.set_train(true);
        let y = Tensor3::from_fn(32, 1, 320, |_, _, l| if l % 50 < 3 { 1.0 } else { 0.0 });
        let lens: Vec<usize> = net.param_blocks().iter().map(|b| b.len()).collect();
        let adam = AdamState::<f32>::new(AdamConfig::default(), &lens);
        (net, adam, x, y)
    };

    #[cfg(feature = "parallel")]
    for (name, pool) in pools() {
        let (mut net, mut adam, x, y) = make();
        group.bench_with_input(BenchmarkId::from_parameter(name), &name, |b, _| {
            b.iter(|| pool.install(|| run_step(&mut net, &mut adam, &x, &y)))
        });
    }
    #[cfg(not(feature = "parallel"))]
    {
        let (mut net, mut adam, x, y) = make();
        group.bench_function(BenchmarkId::from_parameter("sequential"), |b| {
            b.iter(|| run_step(&mut net, &mut adam, &x, &y))
        });
    }
    group.finish();
}

fn bench_labeling(c: &mut Criterion) {
    let cfg = SynthConfig {
        n_subjects: 1,
        duration_s: 60.0,
        ..SynthConfig::default()
    };
    let subject = generate_synthetic(&cfg, 3).unwrap().remove(0);
    let ecg = subject.record.ecg.clone().unwrap();
    c.bench_function("pan_tompkins_60s_500hz", |b| {
        b.iter(|| detect_r_peaks(&ecg, 500.0).unwrap())
    });
}

fn bench_windowing(c: &mut Criterion) {
    let cfg = SynthConfig {
        n_subjects: 4,
        duration_s: 60.0,
        channel_count: 6,
        ..SynthConfig::default()
    };
    let records: Vec<_> = generate_synthetic(&cfg, 9)
        .unwrap()
        .into_iter()
        .map(|s| s.record)
        .collect();
    let mut group = c.benchmark_group("label_and_window_4x60s");
    group.sample_size(10);

    let build = || {
        Dataset::from_records(
            "bench",
            &records,
            ChannelSelection::Acc3Gyr3,
            &WindowConfig::default(),
            &LabelingConfig::default(),
        )
        .unwrap()
    };

    #[cfg(feature = "parallel")]
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &name, |b, _| {
            b.iter(|| pool.install(build))
        });
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function(BenchmarkId::from_parameter("sequential"), |b| {
        b.iter(build)
    });
    group.finish();

    // keep batching helpers exercised
    let ds = build();
    let windows: Vec<_> = ds.subjects[0].windows.iter().collect();
    c.bench_function("batch_assembly", |b| {
        b.iter(|| {
            let x = batch_inputs(&windows).unwrap();
            let y = batch_targets(&windows).unwrap();
            (x.data.len(), y.data.len())
        })
    });
}

criterion_group!(
    benches,
    bench_forward,
    bench_train_step,
    bench_labeling,
    bench_windowing
);
criterion_main!(benches);
