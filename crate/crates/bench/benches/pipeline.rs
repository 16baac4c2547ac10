use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfam_core::autodiff::Tape;
use mfam_core::model::{forward_graph, ModelConfig, ModelParams};
use mfam_core::signal::{frequency_decompose, rfft};
use mfam_core::train::joint_loss;
use mfam_core::{BandSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T: usize = 1000;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn fft(c: &mut Criterion) {
    let x = random(&[T], 1).into_data();
    c.bench_function("rfft_1000", |b| b.iter(|| rfft(&x, 100.0).unwrap()));
    let rec = random(&[6, T], 2);
    let bands = BandSet::default();
    c.bench_function("fdm_6x1000", |b| {
        b.iter(|| frequency_decompose(&rec, &bands, 100.0).unwrap())
    });
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv1d_fwd_bwd");
    let x = random(&[18, T], 3);
    for d in [16, 64] {
        let w = random(&[d, 18, 3], 4);
        let bias = random(&[d], 5);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(bias.clone()));
                let y = tape.conv1d(xv, wv, bv, 2).unwrap();
                let s = tape.sum(y);
                tape.backward(s).unwrap()
            })
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let mut group = c.benchmark_group("model_step");
    group.sample_size(10);
    let x = random(&[18, T], 6);
    for d in [16, 64] {
        let mut cfg = ModelConfig::new(18, 2, 6);
        cfg.hidden_dim = d;
        cfg.attention_hidden = d;
        let params = ModelParams::init(&cfg, 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let pv = params.register(&mut tape);
                let xv = tape.leaf(x.clone());
                let g = forward_graph(&mut tape, xv, &pv, &cfg, Some(0.5)).unwrap();
                let loss = joint_loss(&mut tape, g.logits, 1, g.domain_logits.unwrap(), 3, 1.0).unwrap();
                tape.backward(loss.total).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, fft, conv, model);
criterion_main!(benches);
