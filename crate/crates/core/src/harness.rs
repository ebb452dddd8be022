//! Evaluation plumbing: labeled scores and F1 thresholds, MVTec-layout dataset
//! I/O, and the nearest-to-antialiased deployment-shift experiment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::d2neighbors::{D2NeighborsModel, GammaChoice, NormOrder, Preprocess};
use crate::error::{Error, Result};
use crate::imagegrid::{resize, BlurSpec, ImageTensor, LabeledImage, ResizePolicy, ResizeVariant, SynthDataset};
use crate::patchlite::{build_memory_bank, MemoryBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Good,
    Defect,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Good => "good",
            Label::Defect => "defect",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "good" => Ok(Label::Good),
            "defect" => Ok(Label::Defect),
            other => Err(Error::arg(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub score: f64,
    pub label: Label,
    pub id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledScores {
    pub entries: Vec<ScoreEntry>,
}

impl LabeledScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, score: f64, label: Label, id: impl Into<String>) {
        self.entries.push(ScoreEntry { score, label, id: id.into() });
    }

    pub fn from_parts(scores: &[f64], labels: &[Label]) -> Self {
        let mut out = Self::new();
        for (i, (s, l)) in scores.iter().zip(labels).enumerate() {
            out.push(*s, *l, format!("{i:03}"));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> Result<()> {
        writeln!(out, "id,score,label")?;
        for e in &self.entries {
            writeln!(out, "{},{:e},{}", e.id, e.score, e.label.as_str())?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let fmt = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("id,score,label") {
            return Err(fmt("expected header id,score,label".into()));
        }
        let mut out = Self::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.trim().split(',').collect();
            let [id, score, label] = cols[..] else {
                return Err(fmt(format!("line {}: expected 3 columns", n + 2)));
            };
            let score = score.parse().map_err(|_| fmt(format!("line {}: bad score {score:?}", n + 2)))?;
            out.push(score, label.parse()?, id);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdChoice {
    Fixed(f64),
    Optimize,
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    /// Scores strictly above the threshold are classified as defects.
    #[serde(serialize_with = "finite_or_null")]
    pub threshold: f64,
    pub f1: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn report_at(entries: &[ScoreEntry], threshold: f64) -> EvalReport {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for e in entries {
        match (e.score > threshold, e.label) {
            (true, Label::Defect) => tp += 1,
            (true, Label::Good) => fp += 1,
            (false, Label::Good) => tn += 1,
            (false, Label::Defect) => fn_ += 1,
        }
    }
    EvalReport {
        threshold,
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        fpr: ratio(fp, fp + tn),
        fnr: ratio(fn_, fn_ + tp),
        tp,
        fp,
        tn,
        fn_,
    }
}

/// Confusion counts at a threshold; `Optimize` scans `-inf`, every midpoint of
/// consecutive distinct scores and `+inf`, keeping the lowest threshold of maximal F1.
pub fn evaluate(scores: &LabeledScores, choice: ThresholdChoice) -> Result<EvalReport> {
    for (label, name) in [(Label::Good, "good"), (Label::Defect, "defect")] {
        if !scores.entries.iter().any(|e| e.label == label) {
            return Err(Error::MissingLabelClass(name));
        }
    }
    if let Some(e) = scores.entries.iter().find(|e| e.score.is_nan()) {
        return Err(Error::arg(format!("score of {} is NaN", e.id)));
    }
    match choice {
        ThresholdChoice::Fixed(t) => Ok(report_at(&scores.entries, t)),
        ThresholdChoice::Optimize => {
            let mut sorted: Vec<f64> = scores.entries.iter().map(|e| e.score).collect();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            let candidates = std::iter::once(f64::NEG_INFINITY)
                .chain(sorted.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0))
                .chain(std::iter::once(f64::INFINITY));
            let mut best: Option<EvalReport> = None;
            for t in candidates {
                let r = report_at(&scores.entries, t);
                if best.is_none_or(|b| r.f1 > b.f1) {
                    best = Some(r);
                }
            }
            Ok(best.expect("at least two candidates"))
        }
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm" | "ppm" | "pnm")
    )
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

fn require_dir(path: PathBuf) -> Result<PathBuf> {
    if path.is_dir() {
        Ok(path)
    } else {
        Err(Error::MissingDirectory(path))
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reads `root/category/train/good/*` and `root/category/test/<kind>/*`; test
/// images are labeled good iff `kind == "good"` and get ids `<kind>/<stem>`.
pub fn load_dataset(root: &Path, category: &str) -> Result<(Vec<ImageTensor>, Vec<LabeledImage>)> {
    let base = require_dir(root.join(category))?;
    let train_dir = require_dir(base.join("train").join("good"))?;
    let train = sorted_images(&train_dir)?
        .iter()
        .map(ImageTensor::load)
        .collect::<Result<Vec<_>>>()?;
    if train.is_empty() {
        return Err(Error::arg(format!("{} holds no images", train_dir.display())));
    }
    let test_dir = require_dir(base.join("test"))?;
    let mut kinds: Vec<PathBuf> = fs::read_dir(&test_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    kinds.sort();
    let mut test = Vec::new();
    for dir in kinds {
        let kind = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let label = if kind == "good" { Label::Good } else { Label::Defect };
        for path in sorted_images(&dir)? {
            test.push(LabeledImage { id: format!("{kind}/{}", stem(&path)), image: ImageTensor::load(&path)?, label, defect: None });
        }
    }
    for (label, name) in [(Label::Good, "good"), (Label::Defect, "defect")] {
        if !test.iter().any(|t| t.label == label) {
            return Err(Error::MissingLabelClass(name));
        }
    }
    Ok((train, test))
}

/// Writes `root/category/{train/good, test/good, test/defect}` as 8-bit PNGs.
pub fn write_dataset(root: &Path, category: &str, train: &[ImageTensor], test: &[LabeledImage]) -> Result<()> {
    let base = root.join(category);
    let train_dir = base.join("train").join("good");
    fs::create_dir_all(&train_dir)?;
    for (i, img) in train.iter().enumerate() {
        img.save(train_dir.join(format!("{i:03}.png")))?;
    }
    for item in test {
        let dir = base.join("test").join(item.label.as_str());
        fs::create_dir_all(&dir)?;
        let name = item.id.rsplit('/').next().unwrap_or(&item.id);
        item.image.save(dir.join(format!("{name}.png")))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mitigation {
    #[default]
    None,
    Blur,
}

impl Mitigation {
    pub fn as_str(self) -> &'static str {
        match self {
            Mitigation::None => "none",
            Mitigation::Blur => "blur",
        }
    }

    fn blur(self) -> Option<BlurSpec> {
        match self {
            Mitigation::None => None,
            Mitigation::Blur => Some(BlurSpec::default()),
        }
    }
}

impl std::str::FromStr for Mitigation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Mitigation::None),
            "blur" => Ok(Mitigation::Blur),
            other => Err(Error::arg(format!("unknown mitigation {other:?} (expected none or blur)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorConfig {
    D2neighbors {
        p: NormOrder,
        #[serde(default)]
        gamma: GammaChoice,
    },
    PatchcoreLite { patch: usize, stride: usize },
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::D2neighbors { p: NormOrder::L2, gamma: GammaChoice::default() }
    }
}

impl DetectorConfig {
    pub fn patchcore_default() -> Self {
        DetectorConfig::PatchcoreLite { patch: 8, stride: 4 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DetectorConfig::D2neighbors { .. } => "d2neighbors",
            DetectorConfig::PatchcoreLite { .. } => "patchcore_lite",
        }
    }
}

enum Fitted {
    D2(D2NeighborsModel),
    Patch(MemoryBank, Preprocess),
}

impl Fitted {
    fn fit(config: &DetectorConfig, train: &[ImageTensor], preprocess: Preprocess) -> Result<Self> {
        match *config {
            DetectorConfig::D2neighbors { p, gamma } => Ok(Fitted::D2(D2NeighborsModel::fit(train, p, preprocess, gamma)?)),
            DetectorConfig::PatchcoreLite { patch, stride } => {
                let prepared = train.iter().map(|x| preprocess.apply(x)).collect::<Result<Vec<_>>>()?;
                Ok(Fitted::Patch(build_memory_bank(&prepared, patch, stride)?, preprocess))
            }
        }
    }

    fn score(&self, x: &ImageTensor) -> Result<f64> {
        match self {
            Fitted::D2(model) => model.score(x),
            Fitted::Patch(bank, pre) => Ok(bank.score(&pre.apply(x)?)?.score),
        }
    }

    fn gamma(&self) -> Option<f64> {
        match self {
            Fitted::D2(model) => Some(model.gamma()),
            Fitted::Patch(..) => None,
        }
    }
}

/// High-resolution originals of one category and the detector input size.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCategory {
    pub name: String,
    pub train: Vec<ImageTensor>,
    pub test: Vec<LabeledImage>,
    pub target_height: usize,
    pub target_width: usize,
}

impl SourceCategory {
    pub fn from_synth(name: impl Into<String>, ds: &SynthDataset) -> Self {
        Self {
            name: name.into(),
            train: ds.hi_res_train.clone(),
            test: ds.hi_res_test.clone(),
            target_height: ds.config.image_size,
            target_width: ds.config.image_size,
        }
    }

    fn policy(&self, variant: ResizeVariant) -> Result<ResizePolicy> {
        ResizePolicy::new(variant, self.target_height, self.target_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryShift {
    pub name: String,
    pub f1_original: f64,
    pub f1_deployed_fixed: f64,
    pub f1_deployed_reopt: f64,
    pub fnr_original: f64,
    pub fnr_deployed: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub threshold: f64,
    pub gamma: Option<f64>,
    #[serde(skip)]
    pub eval_original: EvalReport,
    #[serde(skip)]
    pub eval_deployed_fixed: EvalReport,
    #[serde(skip)]
    pub eval_deployed_reopt: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftAverages {
    pub f1_original: f64,
    pub f1_deployed_fixed: f64,
    pub f1_deployed_reopt: f64,
    pub fnr_original: f64,
    pub fnr_deployed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub model: String,
    pub p: Option<f64>,
    /// Mean of the per-category bandwidths.
    pub gamma: Option<f64>,
    pub mitigation: Mitigation,
    pub per_category: Vec<CategoryShift>,
    pub averages: ShiftAverages,
}

impl ShiftReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let p = self.p.map(|p| format!(" (l{p})")).unwrap_or_default();
        let _ = writeln!(out, "{}{p}, mitigation: {}", self.model, self.mitigation.as_str());
        let header = ["category", "f1_orig", "f1_dep_fixed", "f1_dep_reopt", "fnr_orig", "fnr_dep"];
        let mut rows: Vec<[String; 6]> = self
            .per_category
            .iter()
            .map(|c| {
                [
                    c.name.clone(),
                    format!("{:.3}", c.f1_original),
                    format!("{:.3}", c.f1_deployed_fixed),
                    format!("{:.3}", c.f1_deployed_reopt),
                    format!("{:.3}", c.fnr_original),
                    format!("{:.3}", c.fnr_deployed),
                ]
            })
            .collect();
        let a = &self.averages;
        rows.push([
            "average".into(),
            format!("{:.3}", a.f1_original),
            format!("{:.3}", a.f1_deployed_fixed),
            format!("{:.3}", a.f1_deployed_reopt),
            format!("{:.3}", a.fnr_original),
            format!("{:.3}", a.fnr_deployed),
        ]);
        let widths: Vec<usize> = (0..6)
            .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let fmt_row = |cells: &[&str]| {
            let mut line = format!("{:<w$}", cells[0], w = widths[0]);
            for (c, w) in cells[1..].iter().zip(&widths[1..]) {
                let _ = write!(line, "  {c:>w$}");
            }
            line
        };
        let _ = writeln!(out, "{}", fmt_row(&header));
        for r in &rows {
            let cells: Vec<&str> = r.iter().map(String::as_str).collect();
            let _ = writeln!(out, "{}", fmt_row(&cells));
        }
        out
    }
}

fn score_set(det: &Fitted, test: &[LabeledImage], policy: &ResizePolicy) -> Result<LabeledScores> {
    let scores = test
        .par_iter()
        .map(|t| resize(&t.image, policy).and_then(|x| det.score(&x)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = LabeledScores::new();
    for (t, s) in test.iter().zip(scores) {
        out.push(s, t.label, t.id.clone());
    }
    Ok(out)
}

fn shift_category(src: &SourceCategory, detector: &DetectorConfig, mitigation: Mitigation) -> Result<CategoryShift> {
    let nearest = src.policy(ResizeVariant::NearestNoAa)?;
    let train = src.train.par_iter().map(|x| resize(x, &nearest)).collect::<Result<Vec<_>>>()?;
    let det = Fitted::fit(detector, &train, Preprocess { resize: None, blur: mitigation.blur() })?;
    let original = score_set(&det, &src.test, &nearest)?;
    let eval_original = evaluate(&original, ThresholdChoice::Optimize)?;
    let deployed = score_set(&det, &src.test, &src.policy(ResizeVariant::BilinearAa)?)?;
    let eval_deployed_fixed = evaluate(&deployed, ThresholdChoice::Fixed(eval_original.threshold))?;
    let eval_deployed_reopt = evaluate(&deployed, ThresholdChoice::Optimize)?;
    Ok(CategoryShift {
        name: src.name.clone(),
        f1_original: eval_original.f1,
        f1_deployed_fixed: eval_deployed_fixed.f1,
        f1_deployed_reopt: eval_deployed_reopt.f1,
        fnr_original: eval_original.fnr,
        fnr_deployed: eval_deployed_fixed.fnr,
        threshold: eval_original.threshold,
        gamma: det.gamma(),
        eval_original,
        eval_deployed_fixed,
        eval_deployed_reopt,
    })
}

/// Fits on nearest-resized originals, picks the F1-optimal threshold on the
/// nearest-resized test set, then rescores the antialiased test set under that
/// threshold and under a re-optimized one. Categories are averaged unweighted.
pub fn shift_experiment(source: &[SourceCategory], detector: &DetectorConfig, mitigation: Mitigation) -> Result<ShiftReport> {
    if source.is_empty() {
        return Err(Error::arg("shift experiment needs at least one category"));
    }
    let per_category = source
        .par_iter()
        .map(|src| shift_category(src, detector, mitigation))
        .collect::<Result<Vec<_>>>()?;
    let n = per_category.len() as f64;
    let mean = |f: fn(&CategoryShift) -> f64| per_category.iter().map(f).sum::<f64>() / n;
    let averages = ShiftAverages {
        f1_original: mean(|c| c.f1_original),
        f1_deployed_fixed: mean(|c| c.f1_deployed_fixed),
        f1_deployed_reopt: mean(|c| c.f1_deployed_reopt),
        fnr_original: mean(|c| c.fnr_original),
        fnr_deployed: mean(|c| c.fnr_deployed),
    };
    let gammas: Vec<f64> = per_category.iter().filter_map(|c| c.gamma).collect();
    let gamma = (!gammas.is_empty()).then(|| gammas.iter().sum::<f64>() / gammas.len() as f64);
    let p = match detector {
        DetectorConfig::D2neighbors { p, .. } => Some(p.as_f64()),
        DetectorConfig::PatchcoreLite { .. } => None,
    };
    Ok(ShiftReport { model: detector.name().to_string(), p, gamma, mitigation, per_category, averages })
}

/// Defect and noise statistics entering the contribution ratio of [`defect_noise_ratio`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrInputs {
    pub amplitude: f64,
    pub defect_pixels: f64,
    pub pixels: f64,
    /// Half-width of the uniform noise.
    pub noise: f64,
}

/// `m a^p / (HW E|eta|^p)` with `E|eta|^p = delta^p / (p + 1)` for uniform noise on
/// `[-delta, delta]`; `None` when there is no noise.
pub fn defect_noise_ratio(inputs: &SnrInputs, p: NormOrder) -> Option<f64> {
    let p = p.as_f64();
    let moment = inputs.noise.abs().powf(p) / (p + 1.0);
    (moment > 0.0).then(|| inputs.defect_pixels * inputs.amplitude.powf(p) / (inputs.pixels * moment))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormComparisonRow {
    pub p: f64,
    pub defect_noise_ratio: Option<f64>,
    pub report: ShiftReport,
}

pub fn norm_comparison(
    source: &[SourceCategory],
    p_values: &[NormOrder],
    gamma: GammaChoice,
    mitigation: Mitigation,
    snr: &SnrInputs,
) -> Result<Vec<NormComparisonRow>> {
    p_values
        .iter()
        .map(|&p| {
            let report = shift_experiment(source, &DetectorConfig::D2neighbors { p, gamma }, mitigation)?;
            Ok(NormComparisonRow { p: p.as_f64(), defect_noise_ratio: defect_noise_ratio(snr, p), report })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(s: &[f64], l: &[Label]) -> LabeledScores {
        LabeledScores::from_parts(s, l)
    }

    use Label::{Defect as D, Good as G};

    #[test]
    fn perfect_separation() {
        let r = evaluate(&scores(&[1.0, 2.0, 3.0, 4.0], &[G, G, D, D]), ThresholdChoice::Optimize).unwrap();
        assert_eq!(r.f1, 1.0);
        assert!(r.threshold > 2.0 && r.threshold < 3.0);
        assert_eq!((r.tp, r.fp, r.tn, r.fn_), (2, 0, 2, 0));
    }

    #[test]
    fn threshold_above_max_predicts_all_good() {
        let r = evaluate(&scores(&[1.0, 2.0, 3.0], &[G, D, D]), ThresholdChoice::Fixed(10.0)).unwrap();
        assert_eq!((r.f1, r.fnr, r.fpr), (0.0, 1.0, 0.0));
    }

    #[test]
    fn ties_pick_lowest_threshold() {
        // every threshold below 2 and the midpoint (2,3) both give F1 = 0.8
        let r = evaluate(&scores(&[1.0, 2.0, 3.0], &[D, G, D]), ThresholdChoice::Optimize).unwrap();
        assert_eq!(r.threshold, f64::NEG_INFINITY);
        assert!((r.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn missing_class_is_an_error() {
        let e = evaluate(&scores(&[1.0, 2.0], &[G, G]), ThresholdChoice::Optimize).unwrap_err();
        assert!(matches!(e, Error::MissingLabelClass("defect")));
    }

    #[test]
    fn f1_matches_counts() {
        let s = scores(&[0.1, 0.4, 0.35, 0.8, 0.7, 0.2], &[G, D, G, D, G, D]);
        let r = evaluate(&s, ThresholdChoice::Fixed(0.3)).unwrap();
        let want = 2.0 * r.tp as f64 / (2 * r.tp + r.fp + r.fn_) as f64;
        assert_eq!(r.f1, want);
        assert_eq!(r.tp + r.fp + r.tn + r.fn_, 6);
    }

    #[test]
    fn infinite_threshold_serializes_as_null() {
        let r = evaluate(&scores(&[1.0, 2.0], &[G, D]), ThresholdChoice::Fixed(f64::INFINITY)).unwrap();
        let v = serde_json::to_value(r).unwrap();
        assert!(v["threshold"].is_null());
        assert_eq!(v["fn"], 1);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = scores(&[0.5, 1.25e-3], &[G, D]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        fs::write(&path, buf).unwrap();
        assert_eq!(LabeledScores::read_csv(&path).unwrap(), s);
    }

    #[test]
    fn snr_increases_with_p() {
        let inputs = SnrInputs { amplitude: 0.8, defect_pixels: 25.0, pixels: 4096.0, noise: 0.25 };
        let r: Vec<f64> = NormOrder::ALL.iter().map(|&p| defect_noise_ratio(&inputs, p).unwrap()).collect();
        // the noise moment of uniform [-d, d] is d^p / (p + 1)
        let l1 = 25.0 * 0.8 / (4096.0 * 0.125);
        assert!((r[0] - l1).abs() < 1e-12);
        assert!(r[0] < r[1] && r[1] < r[2]);
        let quiet = SnrInputs { noise: 0.0, ..inputs };
        assert!(NormOrder::ALL.iter().all(|&p| defect_noise_ratio(&quiet, p).is_none()));
    }

    #[test]
    fn detector_config_json() {
        let c: DetectorConfig = serde_json::from_str(r#"{"model":"d2neighbors","p":1}"#).unwrap();
        assert_eq!(c, DetectorConfig::D2neighbors { p: NormOrder::L1, gamma: GammaChoice::default() });
        assert!(serde_json::from_str::<DetectorConfig>(r#"{"model":"d2neighbors","p":3}"#).is_err());
        let pc: DetectorConfig = serde_json::from_str(r#"{"model":"patchcore_lite","patch":8,"stride":4}"#).unwrap();
        assert_eq!(pc, DetectorConfig::patchcore_default());
    }
}
