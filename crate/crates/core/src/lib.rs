//! Distance-based unsupervised anomaly detection with relevance explanations.
//!
//! The crate bundles:
//!
//! - [`imagegrid`]: image tensors, nearest and antialiased resampling, Gaussian
//!   blur, and a synthetic dataset generator whose training images carry aliased
//!   noise that disappears under antialiased resizing.
//! - [`spectral`]: orthonormal 2D DCT basis with radial frequency ordering and
//!   power-scale frequency binning.
//! - [`d2neighbors`]: the soft-minimum distance detector and perplexity based
//!   calibration of its sharpness parameter.
//! - [`relprop`]: relevance propagation from the detector's score to training
//!   instances, pixels, frequencies, and joint pixel-frequency maps.
//! - [`patchlite`]: max-min patch scoring over a hand-crafted patch descriptor.
//! - [`bilrpnet`]: small explicit networks, LRP and second-order BiLRP
//!   explanations of dot-product similarities, linear readouts and pruning.
//! - [`harness`]: dataset loading, F1/FPR/FNR evaluation and the
//!   deployment-shift experiment.

pub mod bankfile;
pub mod bilrpnet;
pub mod d2neighbors;
pub mod error;
pub mod harness;
pub mod imagegrid;
pub mod patchlite;
pub mod relprop;
pub mod spectral;

pub use bilrpnet::{BiLrpExplanation, Layer, LinearReadout, LrpRule, LrpRules, ToyNetwork};
pub use d2neighbors::{
    CalibrationOutcome, D2NeighborsModel, GammaChoice, GammaPolicy, NormOrder, Preprocess,
};
pub use error::{Error, Result};
pub use harness::{
    DetectorConfig, EvalReport, Label, LabeledScores, Mitigation, ShiftReport, ThresholdChoice,
};
pub use imagegrid::{ImageTensor, ResizePolicy, ResizeVariant, SynthConfig, SynthDataset};
pub use patchlite::{MemoryBank, PatchFeatureSet};
pub use relprop::{FrequencyRelevanceProfile, InstanceRelevance, JointRelevanceMap, PixelRelevanceMap};
pub use spectral::{DctBasis, FrequencyBinning, FrequencyOrdering};
