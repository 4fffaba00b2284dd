use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::ArrayView1;

use entroprog::attention::{AttentionOptions, GatedAttention};
use entroprog::beqrnn::{build, BeqrnnTopology, BuildOptions};
use entroprog::snn::{encode_rate, Encoding, LifParams, SnnNetwork, SnnOptions};
use entroprog::stpe::{stpe_field, temporal_pe, FeatureExtractor, FeatureRecipe, LogBase, StpeConfig};
use entroprog_bench::{chaotic_grid, uniform_rows, uniform_vec};

fn entropy(c: &mut Criterion) {
    let series = uniform_vec(10_000, 1);
    c.bench_function("temporal_pe d=3 n=1e4", |b| {
        b.iter(|| temporal_pe(black_box(&series), 3, 1, LogBase::E, true).unwrap())
    });
    let grid = chaotic_grid(8, 600);
    let cfg = StpeConfig::default();
    c.bench_function("stpe_field 8x8x600", |b| b.iter(|| stpe_field(black_box(&grid), &cfg, 64).unwrap()));
    let recipe = FeatureRecipe::default();
    let mut slow = c.benchmark_group("features");
    slow.sample_size(10);
    slow.bench_function("feature rows 8x8x600", |b| {
        b.iter(|| FeatureExtractor::new(black_box(&grid), &recipe).unwrap().extract(1).unwrap())
    });
    slow.finish();
}

fn networks(c: &mut Criterion) {
    let net = build(&BeqrnnTopology::default(), &BuildOptions::default()).unwrap();
    let x = uniform_rows(64, 70, 2);
    c.bench_function("quantile network batch 64", |b| b.iter(|| net.predict_batch(black_box(x.view())).unwrap()));

    let att = GatedAttention::new(&AttentionOptions::default()).unwrap();
    let mut hist = att.history();
    let states = uniform_rows(att.max_lag(), att.d_model(), 3);
    for row in states.rows() {
        hist.push(row.as_slice().unwrap()).unwrap();
    }
    let h = uniform_vec(att.d_model(), 4);
    c.bench_function("gated attention step", |b| {
        b.iter(|| att.step(ArrayView1::from(black_box(&h[..])), &hist).unwrap())
    });

    let snn = SnnNetwork::new(71, &SnnOptions::default(), LifParams::default()).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    let input = encode_rate(&uniform_vec(71, 6), 0.0, 1.0, 100, Encoding::Bernoulli, &mut rng).unwrap();
    c.bench_function("snn run 100 steps", |b| b.iter(|| snn.run(black_box(&input)).unwrap()));
}

criterion_group!(benches, entropy, networks);
criterion_main!(benches);
