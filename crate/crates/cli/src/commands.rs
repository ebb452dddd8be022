use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chx_core::bilrpnet::{self, aggregate_patches, render_bipartite};
use chx_core::d2neighbors::{GammaChoice, Preprocess};
use chx_core::harness::{
    defect_noise_ratio, evaluate, load_dataset, norm_comparison, shift_experiment, write_dataset, LabeledScores,
    SnrInputs, SourceCategory, ThresholdChoice,
};
use chx_core::imagegrid::{synth_generate, BlurSpec};
use chx_core::relprop::{
    band_filtered_pixel_map, frequency_profile, instance_relevance_prepared, joint_relevance_binned, pixel_map,
    render_heatmap,
};
use chx_core::spectral::{dct_basis, dct_forward, dct_inverse, default_binning};
use chx_core::{D2NeighborsModel, DetectorConfig, FrequencyBinning, ImageTensor, Mitigation, NormOrder, ToyNetwork};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{CliError, Common, DetectorArgs, Result};

pub fn parse_band(s: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad band start {lo:?}"))?;
    let hi: usize = hi.trim().parse().map_err(|_| format!("bad band end {hi:?}"))?;
    if lo > hi {
        return Err(format!("band start {lo} exceeds end {hi}"));
    }
    Ok((lo, hi))
}

fn config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.synth.category_seed = seed;
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (seed..seed + n).collect();
    }
    Ok(cfg)
}

fn apply_detector_args(cfg: &mut RunConfig, args: &DetectorArgs) -> Result<()> {
    if let Some(m) = args.mitigation {
        cfg.mitigation = m;
    }
    if let Some(p) = args.p {
        let p = NormOrder::try_from(p)?;
        let gamma = match cfg.detector {
            DetectorConfig::D2neighbors { gamma, .. } => gamma,
            DetectorConfig::PatchcoreLite { .. } => GammaChoice::default(),
        };
        cfg.detector = DetectorConfig::D2neighbors { p, gamma };
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn synth(common: &Common) -> Result<()> {
    let cfg = config(common)?;
    let ds = synth_generate(&cfg.synth)?;
    write_dataset(&common.out, &cfg.category, &ds.train, &ds.test)?;
    write_dataset(&common.out.join("hires"), &cfg.category, &ds.hi_res_train, &ds.hi_res_test)?;
    let mut defects = create(&common.out.join("defects.csv"))?;
    writeln!(defects, "id,row,col,radius")?;
    for item in &ds.test {
        if let Some(d) = item.defect {
            writeln!(defects, "{},{},{},{}", item.id, d.row, d.col, d.radius)?;
        }
    }
    defects.flush()?;
    write_json(&common.out.join("config.json"), &cfg)?;
    println!(
        "wrote {} train and {} test images to {}",
        ds.train.len(),
        ds.test.len(),
        common.out.join(&cfg.category).display()
    );
    Ok(())
}

fn blur_for(m: Mitigation) -> Option<BlurSpec> {
    (m == Mitigation::Blur).then(BlurSpec::default)
}

pub fn fit(common: &Common, args: &DetectorArgs, data: &Path) -> Result<()> {
    let mut cfg = config(common)?;
    apply_detector_args(&mut cfg, args)?;
    let DetectorConfig::D2neighbors { p, gamma } = cfg.detector else {
        return Err(CliError::Config("fit supports the d2neighbors detector only".into()));
    };
    let (train, _) = load_dataset(data, &cfg.category)?;
    let preprocess = Preprocess { resize: None, blur: blur_for(cfg.mitigation) };
    let model = D2NeighborsModel::fit(&train, p, preprocess, gamma)?;
    model.save(&common.out)?;
    let saturated = model.calibration().is_some_and(|c| c.saturated);
    println!(
        "fitted {} bank images, p = {}, gamma = {:e}{}",
        model.bank().len(),
        p.as_f64(),
        model.gamma(),
        if saturated { " (perplexity target unreachable)" } else { "" }
    );
    Ok(())
}

pub fn score(common: &Common, model_dir: &Path, data: Option<&Path>, images: &[PathBuf]) -> Result<()> {
    let cfg = config(common)?;
    let model = D2NeighborsModel::load(model_dir)?;
    let mut out = create(&common.out)?;
    match data {
        Some(root) => {
            let (_, test) = load_dataset(root, &cfg.category)?;
            let xs: Vec<ImageTensor> = test.iter().map(|t| t.image.clone()).collect();
            let scores = model.score_batch(&xs)?;
            let mut labeled = LabeledScores::new();
            for (t, s) in test.iter().zip(scores) {
                labeled.push(s, t.label, t.id.clone());
            }
            labeled.write_csv(&mut out)?;
        }
        None => {
            writeln!(out, "id,score")?;
            for path in images {
                let s = model.score(&ImageTensor::load(path)?)?;
                writeln!(out, "{},{s:e}", path.display())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
    passed: bool,
}

impl Check {
    fn new(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self { name, value, tolerance, passed: value.abs() <= tolerance }
    }
}

#[derive(Serialize)]
struct ExplainReport {
    score: f64,
    instance_total: f64,
    pixel_total: f64,
    frequency_total: f64,
    epsilon: f64,
    leak_bound: f64,
    band: Option<(usize, usize)>,
    band_total: Option<f64>,
    checks: Vec<Check>,
}

pub fn explain(common: &Common, model_dir: &Path, image: &Path, bins: Option<usize>, band: Option<(usize, usize)>) -> Result<()> {
    let cfg = config(common)?;
    let model = D2NeighborsModel::load(model_dir)?;
    let img = ImageTensor::load(image)?;
    let x = model.prepare(&img)?;
    let basis = dct_basis(x.height(), x.width())?;
    let n_freq = basis.len();
    let binning = default_binning(n_freq, bins.unwrap_or(cfg.bins))?;

    let inst = instance_relevance_prepared(&model, &x)?;
    let jr = joint_relevance_binned(&model, &img, &basis, cfg.stabilizer, &binning)?;
    let pixels = pixel_map(&jr);
    let profile = frequency_profile(&jr, &binning)?;
    let o = inst.score;
    let tol = 1e-9 * o.abs().max(1.0);
    let below = (o * (1.0 - jr.leak_bound) - profile.total()).max(0.0);
    let above = (profile.total() - o).max(0.0);
    let round_trip = dct_inverse(&dct_forward(&x, &basis)?, &basis)?.max_abs_diff(&x);
    let mut checks = vec![
        Check::new("instance_conservation", inst.r.iter().sum::<f64>() - o, tol),
        Check::new("frequency_within_leak_bound", below.max(above), tol),
        Check::new("pixel_frequency_agreement", pixels.total() - profile.total(), tol),
        Check::new("dct_round_trip", round_trip, 1e-9),
    ];

    fs::create_dir_all(&common.out)?;
    render_heatmap(&pixels, &common.out.join("heatmap.png"))?;
    let mut csv = create(&common.out.join("frequency.csv"))?;
    profile.write_csv(&mut csv)?;
    csv.flush()?;

    let mut band_total = None;
    if let Some((lo, hi)) = band {
        let around = FrequencyBinning::around_band(n_freq, lo, hi)?;
        let jb = joint_relevance_binned(&model, &img, &basis, cfg.stabilizer, &around)?;
        let map = band_filtered_pixel_map(&jb, lo..=hi)?;
        render_heatmap(&map, &common.out.join(format!("band_{lo}_{hi}.png")))?;
        band_total = Some(map.total());
        checks.push(Check::new("binning_invariance", jb.total() - jr.total(), tol));
    }

    let report = ExplainReport {
        score: o,
        instance_total: inst.r.iter().sum(),
        pixel_total: pixels.total(),
        frequency_total: profile.total(),
        epsilon: jr.epsilon,
        leak_bound: jr.leak_bound,
        band,
        band_total,
        checks,
    };
    write_json(&common.out.join("explain.json"), &report)?;
    println!("score {o:e}, frequency total {:e}, leak bound {:e}", profile.total(), jr.leak_bound);
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if !failed.is_empty() {
        return Err(CliError::Check(failed.join(", ")));
    }
    Ok(())
}

fn sources(cfg: &RunConfig, data: Option<&Path>) -> Result<Vec<SourceCategory>> {
    match data {
        None => cfg
            .seeds
            .iter()
            .map(|&s| {
                let ds = synth_generate(&cfg.synth.clone().with_seed(s))?;
                Ok(SourceCategory::from_synth(format!("seed_{s}"), &ds))
            })
            .collect(),
        Some(root) => {
            if cfg.categories.is_empty() {
                return Err(CliError::Config("shift --data needs a non-empty `categories` list".into()));
            }
            cfg.categories
                .iter()
                .map(|name| {
                    let (train, test) = load_dataset(root, name)?;
                    Ok(SourceCategory {
                        name: name.clone(),
                        train,
                        test,
                        target_height: cfg.synth.image_size,
                        target_width: cfg.synth.image_size,
                    })
                })
                .collect()
        }
    }
}

fn snr_inputs(cfg: &RunConfig) -> SnrInputs {
    let s = &cfg.synth;
    SnrInputs {
        amplitude: s.defect_amplitude,
        defect_pixels: std::f64::consts::PI * s.defect_radius * s.defect_radius,
        pixels: (s.image_size * s.image_size) as f64,
        noise: s.noise_amplitude,
    }
}

pub fn shift(common: &Common, args: &DetectorArgs, data: Option<&Path>, compare_norms: bool) -> Result<()> {
    let mut cfg = config(common)?;
    apply_detector_args(&mut cfg, args)?;
    let src = sources(&cfg, data)?;
    if compare_norms {
        let gamma = match cfg.detector {
            DetectorConfig::D2neighbors { gamma, .. } => gamma,
            DetectorConfig::PatchcoreLite { .. } => GammaChoice::default(),
        };
        let rows = norm_comparison(&src, &NormOrder::ALL, gamma, cfg.mitigation, &snr_inputs(&cfg))?;
        for row in &rows {
            print!("{}", row.report.to_table());
            match row.defect_noise_ratio {
                Some(r) => println!("defect-to-noise ratio: {r:.4}\n"),
                None => println!("defect-to-noise ratio: no noise\n"),
            }
        }
        write_json(&common.out, &rows)?;
    } else {
        let report = shift_experiment(&src, &cfg.detector, cfg.mitigation)?;
        print!("{}", report.to_table());
        if let DetectorConfig::D2neighbors { p, .. } = cfg.detector {
            if let Some(r) = defect_noise_ratio(&snr_inputs(&cfg), p) {
                println!("defect-to-noise ratio: {r:.4}");
            }
        }
        write_json(&common.out, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BilrpSummary {
    y: f64,
    total: f64,
    patch: usize,
    n_patches: usize,
}

pub fn bilrp(common: &Common, network: &Path, x: &Path, x2: &Path) -> Result<()> {
    let cfg = config(common)?;
    let net = ToyNetwork::load(network)?;
    let (a, b) = (ImageTensor::load(x)?, ImageTensor::load(x2)?);
    let expl = bilrpnet::bilrp(&net, &net.input_from_image(&a)?, &net.input_from_image(&b)?, &cfg.rules)?;
    let patches = aggregate_patches(&expl, a.height(), a.width(), cfg.patch)?;
    fs::create_dir_all(&common.out)?;
    let mut csv = create(&common.out.join("bilrp.csv"))?;
    patches.write_csv(&mut csv)?;
    csv.flush()?;
    render_bipartite(&a, &b, &patches, cfg.patch, &common.out.join("bilrp.png"))?;
    let summary = BilrpSummary { y: expl.y, total: expl.total(), patch: cfg.patch, n_patches: patches.n_patches() };
    write_json(&common.out.join("bilrp.json"), &summary)?;
    println!("y = {:e}, explained total = {:e}", summary.y, summary.total);
    Ok(())
}

pub fn eval(common: &Common, scores: &Path, threshold: Option<f64>) -> Result<()> {
    let labeled = LabeledScores::read_csv(scores)?;
    let choice = threshold.map_or(ThresholdChoice::Optimize, ThresholdChoice::Fixed);
    let report = evaluate(&labeled, choice)?;
    write_json(&common.out, &report)?;
    println!("f1 {:.4}, fpr {:.4}, fnr {:.4}, threshold {}", report.f1, report.fpr, report.fnr, report.threshold);
    Ok(())
}
