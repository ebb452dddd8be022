use chx_core::bilrpnet::{bilrp, random_mlp};
use chx_core::d2neighbors::{GammaChoice, Preprocess};
use chx_core::imagegrid::synth_generate;
use chx_core::patchlite::build_memory_bank;
use chx_core::relprop::{joint_relevance_binned, Stabilizer};
use chx_core::spectral::{dct_basis, default_binning};
use chx_core::{D2NeighborsModel, LrpRules, NormOrder, SynthConfig};
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn small_synth(size: usize) -> chx_core::SynthDataset {
    let cfg = SynthConfig { image_size: size, n_train_good: 20, n_test_good: 2, n_test_defect: 2, defect_radius: 2.0, ..SynthConfig::default() };
    synth_generate(&cfg).unwrap()
}

fn dct(c: &mut Criterion) {
    let mut group = c.benchmark_group("dct_forward");
    for size in [16, 32, 64] {
        let basis = dct_basis(size, size).unwrap();
        let plane: Vec<f64> = (0..size * size).map(|i| (i as f64 * 0.37).sin()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(size), &plane, |b, p| {
            b.iter(|| basis.forward_plane(black_box(p)).unwrap())
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let ds = small_synth(32);
    let model = D2NeighborsModel::fit(&ds.train, NormOrder::L2, Preprocess::default(), GammaChoice::default()).unwrap();
    let bank = build_memory_bank(&ds.train, 8, 4).unwrap();
    let img = &ds.test[3].image;
    c.bench_function("d2neighbors_score_32", |b| b.iter(|| model.score(black_box(img)).unwrap()));
    c.bench_function("patchcore_score_32", |b| b.iter(|| bank.score(black_box(img)).unwrap()));
}

fn joint_relevance(c: &mut Criterion) {
    let ds = small_synth(16);
    let model = D2NeighborsModel::fit(&ds.train, NormOrder::L2, Preprocess::default(), GammaChoice::default()).unwrap();
    let basis = dct_basis(16, 16).unwrap();
    let binning = default_binning(256, 19).unwrap();
    let img = &ds.test[3].image;
    c.bench_function("joint_relevance_binned_16", |b| {
        b.iter(|| joint_relevance_binned(&model, black_box(img), &basis, Stabilizer::default(), &binning).unwrap())
    });
}

fn bilrp_pairs(c: &mut Criterion) {
    let net = random_mlp(&[64, 32, 16], true, false, 3).unwrap();
    let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.21).cos()).collect();
    let x2: Vec<f64> = (0..64).map(|i| (i as f64 * 0.13).sin()).collect();
    let rules = LrpRules::default();
    c.bench_function("bilrp_mlp_64_32_16", |b| b.iter(|| bilrp(&net, black_box(&x), black_box(&x2), &rules).unwrap()));
}

criterion_group!(benches, dct, scoring, joint_relevance, bilrp_pairs);
criterion_main!(benches);
