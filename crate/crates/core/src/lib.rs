//! fairaug-core: fairness-aware augmentation tooling for cardiac MRI datasets.
//!
//! The crate is organised as a pipeline of pure stages that hand data to each
//! other through in-memory types and simple file formats:
//!
//! audit (`manifest`, `stratify`) -> plan (`stratify`) -> generate (`genbridge`)
//! -> preprocess (`preprocess`) -> features (`radiomics`) -> fidelity (`frd`)
//! -> downstream fairness (`fairmetrics`).
//!
//! The image generator and the downstream classifier live outside this crate;
//! they are reached through the job manifest and prediction file formats.

pub mod diagnostics;
pub mod error;
pub mod fairmetrics;
pub mod fingerprint;
pub mod frd;
pub mod genbridge;
pub mod imageio;
pub mod linalg;
pub mod manifest;
pub mod phantom;
pub mod preprocess;
pub mod radiomics;
pub mod rng;
pub mod stratify;

pub use diagnostics::Diagnostic;
pub use error::{Error, ErrorCategory, Result};
pub use fairmetrics::{FairnessReport, GroupRates, PredictionSet};
pub use frd::{FrdResult, GaussianSummary};
pub use genbridge::{GenerationJob, SyntheticRecord};
pub use manifest::{
    AgeBin, BmiBin, DatasetManifest, Diagnosis, Origin, Sex, Split, SplitAssignment,
    SubgroupKey, SubjectRecord,
};
pub use preprocess::{Image2D, LabelMask, StackedImage};
pub use radiomics::FeatureVector;
pub use stratify::{DebiasPlan, StratificationReport, WeightTable};

/// Tool version echoed in every settings fingerprint.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seed used whenever a caller does not supply one.
pub const DEFAULT_SEED: u64 = 42;
