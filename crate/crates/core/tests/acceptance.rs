//! One pass/fail line per acceptance criterion; exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chx_core::bilrpnet::{bilrp, bilrp_direct, random_mlp, LrpRules};
use chx_core::d2neighbors::{calibrate_gamma, softmin_mean, GammaChoice, GammaPolicy, Preprocess};
use chx_core::harness::{defect_noise_ratio, shift_experiment, DetectorConfig, Mitigation, ShiftReport, SnrInputs, SourceCategory};
use chx_core::imagegrid::synth_generate;
use chx_core::relprop::{instance_relevance, joint_relevance, Stabilizer};
use chx_core::spectral::{dct_basis, dct_forward, dct_inverse};
use chx_core::{D2NeighborsModel, ImageTensor, NormOrder, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
    ImageTensor::new(h, w, 1, (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn spectral() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut round_trip = 0.0f64;
    let mut gram = 0.0f64;
    for size in [16, 32] {
        let basis = dct_basis(size, size).unwrap();
        for _ in 0..50 {
            let x = random_image(&mut rng, size, size);
            let back = dct_inverse(&dct_forward(&x, &basis).unwrap(), &basis).unwrap();
            round_trip = round_trip.max(back.max_abs_diff(&x));
        }
        let elements: Vec<Vec<f64>> = (0..basis.len()).map(|k| basis.element(k)).collect();
        for a in 0..elements.len() {
            for b in a..elements.len() {
                let dot: f64 = elements[a].iter().zip(&elements[b]).map(|(u, v)| u * v).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                gram = gram.max((dot - want).abs());
            }
        }
    }
    outcome(
        round_trip < 1e-9 && gram < 1e-10,
        format!("max round-trip error {round_trip:.2e} (< 1e-9), max Gram deviation {gram:.2e} (< 1e-10)"),
    )
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let basis = dct_basis(16, 16).unwrap();
    let (mut worst_first, mut worst_below, mut worst_above) = (0.0f64, 0.0f64, 0.0f64);
    let mut max_leak = 0.0f64;
    for _ in 0..20 {
        let bank: Vec<ImageTensor> = (0..10).map(|_| random_image(&mut rng, 16, 16)).collect();
        let model = D2NeighborsModel::fit(&bank, NormOrder::L2, Preprocess::default(), GammaChoice::default()).unwrap();
        let x = random_image(&mut rng, 16, 16);
        let inst = instance_relevance(&model, &x).unwrap();
        worst_first = worst_first.max((inst.r.iter().sum::<f64>() - inst.score).abs());
        let jr = joint_relevance(&model, &x, &basis, Stabilizer::default()).unwrap();
        let o = jr.score;
        worst_below = worst_below.max(o * (1.0 - jr.leak_bound) - jr.total());
        worst_above = worst_above.max(jr.total() - o);
        max_leak = max_leak.max(jr.leak_bound);
    }
    outcome(
        worst_first < 1e-9 && worst_below <= 1e-9 && worst_above <= 1e-9,
        format!(
            "|sum R_j - o| <= {worst_first:.2e}; joint total below o(1-leak) by <= {:.2e}, above o by <= {:.2e}; max leak {max_leak:.2e}",
            worst_below.max(0.0),
            worst_above.max(0.0)
        ),
    )
}

fn softmin_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let spread = max - min;
    let near_min = (softmin_mean(&d, 50.0 / spread) - min).abs();
    let near_mean = (softmin_mean(&d, 1e-4 / spread) - mean).abs();
    let grid: Vec<f64> = (0..20).map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / 19.0) / spread).collect();
    let values: Vec<f64> = grid.iter().map(|&g| softmin_mean(&d, g)).collect();
    let monotone = values.windows(2).all(|w| w[1] <= w[0]);
    let mut detail = format!(
        "|M - min| = {near_min:.3e} at gamma*spread = 50 (bound 1e-6); |M - mean| = {near_mean:.3e} at 1e-4 (bound 1e-3); monotone over 20-point grid: {monotone}"
    );
    if near_min >= 1e-6 {
        let offset = (d.len() as f64).ln() * spread / 50.0;
        detail += &format!("; the f-mean keeps an offset of up to ln(N)/gamma = {offset:.3e} above the min");
    }
    outcome(near_min < 1e-6 && near_mean < 1e-3 && monotone, detail)
}

fn loo_perplexity(bank: &[ImageTensor], gamma: f64) -> f64 {
    let n = bank.len();
    let mut total = 0.0;
    for i in 0..n {
        let d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| bank[i].values().iter().zip(bank[j].values()).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let m = d.iter().copied().fold(f64::INFINITY, f64::min);
        let e: Vec<f64> = d.iter().map(|v| (-gamma * (v - m)).exp()).collect();
        let z: f64 = e.iter().sum();
        let entropy: f64 = e.iter().map(|v| v / z).filter(|w| *w > 0.0).map(|w| -w * w.ln()).sum();
        total += entropy.exp();
    }
    total / n as f64
}

fn calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bank: Vec<ImageTensor> = (0..20).map(|_| random_image(&mut rng, 8, 8)).collect();
    let outcome_ = calibrate_gamma(&bank, NormOrder::L2, &GammaPolicy::default()).unwrap();
    let achieved = loo_perplexity(&bank, outcome_.gamma);
    let rel = (achieved - 5.0).abs() / 5.0;
    outcome(
        outcome_.target_perplexity == 5.0 && rel <= 0.005 && !outcome_.saturated,
        format!("gamma {:.4e}, recomputed average perplexity {achieved:.5} (target 5.0, rel. error {rel:.2e})", outcome_.gamma),
    )
}

fn bilrp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut deviation, mut gap) = (0.0f64, 0.0f64);
    for net_seed in 0..25u64 {
        let depth = rng.gen_range(1..=3);
        let widths: Vec<usize> = (0..=depth).map(|_| rng.gen_range(1..=16)).collect();
        let net = random_mlp(&widths, net_seed % 2 == 0, true, net_seed).unwrap();
        let x: Vec<f64> = (0..widths[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..widths[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for rules in [LrpRules::zero(), LrpRules::default()] {
            let f = bilrp(&net, &x, &x2, &rules).unwrap();
            let d = bilrp_direct(&net, &x, &x2, &rules).unwrap();
            deviation = deviation.max(f.max_abs_diff(&d));
        }
        let e = bilrp(&net, &x, &x2, &LrpRules::zero()).unwrap();
        gap = gap.max((e.total() - e.y).abs());
    }
    outcome(
        deviation < 1e-8 && gap < 1e-8,
        format!("max factorized-vs-direct deviation {deviation:.2e} (< 1e-8), max |sum r - y| under LRP-0 {gap:.2e} (< 1e-8)"),
    )
}

fn sources() -> Vec<SourceCategory> {
    (0..5u64)
        .map(|s| {
            let ds = synth_generate(&SynthConfig::default().with_seed(s)).unwrap();
            SourceCategory::from_synth(format!("seed_{s}"), &ds)
        })
        .collect()
}

fn clever_hans() -> Outcome {
    let src = sources();
    let none = shift_experiment(&src, &DetectorConfig::default(), Mitigation::None).unwrap();
    let blur = shift_experiment(&src, &DetectorConfig::default(), Mitigation::Blur).unwrap();
    let (n, b) = (none.averages, blur.averages);
    let fnr_up = none.per_category.iter().filter(|c| c.fnr_deployed > c.fnr_original).count();
    let pass = n.f1_original >= 0.9
        && n.f1_deployed_fixed <= n.f1_original - 0.05
        && b.f1_deployed_fixed >= b.f1_original - 0.02
        && fnr_up >= 4;
    outcome(
        pass,
        format!(
            "no mitigation: f1 {:.3} -> {:.3} (fixed threshold), fnr {:.3} -> {:.3}, fnr up in {fnr_up}/5 seeds; blur: f1 {:.3} -> {:.3}",
            n.f1_original, n.f1_deployed_fixed, n.fnr_original, n.fnr_deployed, b.f1_original, b.f1_deployed_fixed
        ),
    )
}

fn norm_diagnostic() -> Outcome {
    let inputs = SnrInputs { amplitude: 0.8, defect_pixels: 25.0, pixels: 4096.0, noise: 0.25 };
    let ratios: Vec<f64> = NormOrder::ALL.iter().map(|&p| defect_noise_ratio(&inputs, p).unwrap_or(f64::NAN)).collect();
    // closed form: uniform noise on [-d, d] has E|eta|^p = d^p / (p + 1)
    let oracle: Vec<f64> = [1.0f64, 2.0, 4.0]
        .iter()
        .map(|&p| 25.0 * 0.8f64.powf(p) / (4096.0 * 0.25f64.powf(p) / (p + 1.0)))
        .collect();
    let agree = ratios.iter().zip(&oracle).all(|(a, b)| (a - b).abs() <= 1e-12 * b);
    let increasing = ratios[0] < ratios[1] && ratios[1] < ratios[2];
    outcome(
        agree && increasing,
        format!("ratios l1 {:.4}, l2 {:.4}, l4 {:.4}; reference deployed F1 ordering 0.74 < 0.80 < 0.83", ratios[0], ratios[1], ratios[2]),
    )
}

fn patchcore_direction() -> Outcome {
    let report = shift_experiment(&sources(), &DetectorConfig::patchcore_default(), Mitigation::None).unwrap();
    let drops = report.per_category.iter().filter(|c| c.f1_deployed_fixed < c.f1_original).count();
    let a = report.averages;
    outcome(
        drops >= 4,
        format!("f1 drops in {drops}/5 seeds; average {:.3} -> {:.3} (reference 0.92 -> 0.85)", a.f1_original, a.f1_deployed_fixed),
    )
}

fn artifacts() -> Vec<Vec<u8>> {
    let cfg = SynthConfig { image_size: 16, n_train_good: 8, n_test_good: 4, n_test_defect: 4, defect_radius: 2.0, ..SynthConfig::default() };
    let src: Vec<SourceCategory> = (0..2u64)
        .map(|s| SourceCategory::from_synth(format!("seed_{s}"), &synth_generate(&cfg.clone().with_seed(s)).unwrap()))
        .collect();
    let mut out = Vec::new();
    for mitigation in [Mitigation::None, Mitigation::Blur] {
        let r: ShiftReport = shift_experiment(&src, &DetectorConfig::default(), mitigation).unwrap();
        out.push(r.to_json().unwrap().into_bytes());
    }
    let ds = synth_generate(&cfg).unwrap();
    let model = D2NeighborsModel::fit(&ds.train, NormOrder::L2, Preprocess::default(), GammaChoice::default()).unwrap();
    let basis = dct_basis(16, 16).unwrap();
    let binning = chx_core::spectral::default_binning(256, 8).unwrap();
    let jr = chx_core::relprop::joint_relevance_binned(&model, &ds.test[5].image, &basis, Stabilizer::default(), &binning).unwrap();
    let mut csv = Vec::new();
    chx_core::relprop::frequency_profile(&jr, &binning).unwrap().write_csv(&mut csv).unwrap();
    out.push(csv);
    let mut scores = chx_core::LabeledScores::new();
    for t in &ds.test {
        scores.push(model.score(&t.image).unwrap(), t.label, t.id.clone());
    }
    let mut csv = Vec::new();
    scores.write_csv(&mut csv).unwrap();
    out.push(csv);
    let net = random_mlp(&[16, 8, 4], true, false, 9).unwrap();
    let x: Vec<f64> = ds.test[0].image.values()[..16].to_vec();
    let x2: Vec<f64> = ds.test[5].image.values()[..16].to_vec();
    let e = bilrp(&net, &x, &x2, &LrpRules::default()).unwrap();
    let mut csv = Vec::new();
    chx_core::bilrpnet::aggregate_patches(&e, 4, 4, 2).unwrap().write_csv(&mut csv).unwrap();
    out.push(csv);
    out
}

fn determinism() -> Outcome {
    let (a, b) = (artifacts(), artifacts());
    let same = a == b;
    let bytes: usize = a.iter().map(Vec::len).sum();
    outcome(same, format!("{} artifacts ({bytes} bytes) byte-identical across two runs: {same}", a.len()))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "spectral correctness", spectral, Duration::from_secs(10)),
        (2, "conservation suite", conservation, Duration::from_secs(30)),
        (3, "softmin limits", softmin_limits, Duration::MAX),
        (4, "gamma calibration", calibration, Duration::MAX),
        (5, "BiLRP oracle equivalence", bilrp_oracle, Duration::from_secs(60)),
        (6, "synthetic Clever-Hans reproduction", clever_hans, Duration::from_secs(300)),
        (7, "norm-order diagnostic", norm_diagnostic, Duration::MAX),
        (8, "PatchCore-lite shift direction", patchcore_direction, Duration::MAX),
        (10, "determinism", determinism, Duration::MAX),
    ];
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|_| outcome(false, "panicked".into()));
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = result.pass && in_time;
        failed += usize::from(!pass);
        let budget_note = if budget == Duration::MAX { String::new() } else { format!(", budget {}s", budget.as_secs()) };
        println!(
            "criterion {id:>2} {:<4} {name}: {} [{:.2}s{budget_note}]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
