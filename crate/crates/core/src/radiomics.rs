//! Radiomics feature vector: 13 first-order intensity statistics, 6 GLCM
//! texture features and 7 two-dimensional shape descriptors.
//!
//! Intensity features are computed on the ED channel after percentile
//! normalization, restricted to the union of cardiac labels. Texture uses a
//! symmetric GLCM averaged over the offsets (0,1), (1,0), (1,1), (1,-1) at
//! distance 1 after equal-width discretization into 32 levels. Shape uses the
//! same union region.
//!
//! Conventions for degenerate input: a constant region has variance,
//! skewness and kurtosis 0; a constant texture has correlation 1 and
//! entropy 0; a single-pixel shape has elongation 1.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::path::PathBuf;
use thiserror::Error;

use crate::diagnostics::Diagnostic;
use crate::error::Error;
use crate::imageio;
use crate::preprocess::{
    normalize_intensity, percentile_sorted, Image2D, LabelMask, NormalizationMode, Region,
    StackedImage,
};

pub const MIN_REGION_PIXELS: usize = 16;
pub const DEFAULT_LEVELS: usize = 32;

/// `(dy, dx)` offsets of the averaged co-occurrence matrix.
pub const GLCM_OFFSETS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

pub const FIRST_ORDER_NAMES: [&str; 13] = [
    "firstorder_mean",
    "firstorder_median",
    "firstorder_minimum",
    "firstorder_maximum",
    "firstorder_p10",
    "firstorder_p90",
    "firstorder_iqr",
    "firstorder_variance",
    "firstorder_skewness",
    "firstorder_kurtosis",
    "firstorder_energy",
    "firstorder_rms",
    "firstorder_mad",
];

pub const GLCM_NAMES: [&str; 6] = [
    "glcm_contrast",
    "glcm_dissimilarity",
    "glcm_homogeneity",
    "glcm_asm",
    "glcm_correlation",
    "glcm_entropy",
];

pub const SHAPE_NAMES: [&str; 7] = [
    "shape_area",
    "shape_perimeter",
    "shape_perimeter_area_ratio",
    "shape_elongation",
    "shape_major_axis",
    "shape_minor_axis",
    "shape_compactness",
];

pub const FEATURE_COUNT: usize = 26;

/// The 26 canonical feature names in vector order.
pub fn canonical_names() -> Vec<String> {
    FIRST_ORDER_NAMES
        .iter()
        .chain(GLCM_NAMES.iter())
        .chain(SHAPE_NAMES.iter())
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum RadiomicsError {
    #[error("region has {count} pixels, need at least {MIN_REGION_PIXELS}")]
    MaskTooSmall { count: usize },
    #[error("need at least 2 gray levels, got {0}")]
    InvalidLevels(usize),
    #[error("no neighbouring pixel pairs inside the region")]
    NoValidPairs,
    #[error("selected structure is empty")]
    EmptyStructure,
    #[error("image is {image:?} but mask is {mask:?}")]
    DimensionMismatch {
        image: (usize, usize),
        mask: (usize, usize),
    },
    #[error("feature table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Quantized gray levels; pixels outside the region hold 0 and are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub width: usize,
    pub height: usize,
    pub levels: usize,
    pub bins: Vec<u16>,
}

impl Quantized {
    pub fn new(width: usize, height: usize, levels: usize, bins: Vec<u16>) -> Self {
        assert_eq!(bins.len(), width * height);
        Self {
            width,
            height,
            levels,
            bins,
        }
    }

    fn at(&self, x: usize, y: usize) -> usize {
        self.bins[y * self.width + x] as usize
    }
}

fn check_region(region: &Region) -> Result<usize, RadiomicsError> {
    let count = region.count();
    if count < MIN_REGION_PIXELS {
        return Err(RadiomicsError::MaskTooSmall { count });
    }
    Ok(count)
}

/// Equal-width binning of the region's intensity range into `levels` bins;
/// the maximum maps to `levels - 1`.
pub fn discretize(
    image: &Image2D,
    region: &Region,
    levels: usize,
) -> Result<(Quantized, Option<Diagnostic>), RadiomicsError> {
    if levels < 2 {
        return Err(RadiomicsError::InvalidLevels(levels));
    }
    check_region(region)?;
    let values = region.values(image);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (image.width(), image.height());
    if hi <= lo {
        let diag = Diagnostic::new("DegenerateRange", format!("region is constant at {lo}"));
        return Ok((Quantized::new(w, h, levels, vec![0; w * h]), Some(diag)));
    }
    let bins = image
        .pixels()
        .iter()
        .zip(&region.inside)
        .map(|(&v, &inside)| {
            if inside {
                (((v - lo) / (hi - lo) * levels as f64).floor() as usize).min(levels - 1) as u16
            } else {
                0
            }
        })
        .collect();
    Ok((Quantized::new(w, h, levels, bins), None))
}

/// First-order statistics of a sample, in [`FIRST_ORDER_NAMES`] order.
/// Moments are population moments; kurtosis is excess kurtosis.
pub fn first_order_from_values(values: &[f64]) -> [f64; 13] {
    assert!(!values.is_empty(), "first-order features of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let p = |q: f64| percentile_sorted(&sorted, q);
    let energy: f64 = values.iter().map(|x| x * x).sum();

    let (mean, variance, skewness, kurtosis, mad, rms) = if max == min {
        (min, 0.0, 0.0, 0.0, 0.0, min.abs())
    } else {
        let mean = values.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4, mut abs) = (0.0, 0.0, 0.0, 0.0);
        for &x in values {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
            abs += d.abs();
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        let (skew, kurt) = if m2 > 0.0 {
            (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
        } else {
            (0.0, 0.0)
        };
        (mean, m2, skew, kurt, abs / n, (energy / n).sqrt())
    };
    [
        mean,
        p(50.0),
        min,
        max,
        p(10.0),
        p(90.0),
        p(75.0) - p(25.0),
        variance,
        skewness,
        kurtosis,
        energy,
        rms,
        mad,
    ]
}

pub fn first_order_features(image: &Image2D, region: &Region) -> Result<[f64; 13], RadiomicsError> {
    check_region(region)?;
    Ok(first_order_from_values(&region.values(image)))
}

/// Symmetric, normalized gray-level co-occurrence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    pub levels: usize,
    /// Row-major `levels x levels` probabilities.
    pub p: Vec<f64>,
}

impl Glcm {
    /// Averages the per-offset normalized symmetric matrices over the offsets
    /// that have at least one pixel pair inside the region.
    pub fn compute(
        q: &Quantized,
        region: &Region,
        offsets: &[(isize, isize)],
    ) -> Result<Glcm, RadiomicsError> {
        let l = q.levels;
        let mut acc = vec![0.0; l * l];
        let mut used = 0usize;
        for &(dy, dx) in offsets {
            let mut counts = vec![0u64; l * l];
            let mut total = 0u64;
            for y in 0..q.height {
                for x in 0..q.width {
                    let (xi, yi) = (x as isize, y as isize);
                    if !region.contains(xi, yi) || !region.contains(xi + dx, yi + dy) {
                        continue;
                    }
                    let i = q.at(x, y);
                    let j = q.at((xi + dx) as usize, (yi + dy) as usize);
                    counts[i * l + j] += 1;
                    counts[j * l + i] += 1;
                    total += 2;
                }
            }
            if total == 0 {
                continue;
            }
            used += 1;
            for (a, &c) in acc.iter_mut().zip(&counts) {
                *a += c as f64 / total as f64;
            }
        }
        if used == 0 {
            return Err(RadiomicsError::NoValidPairs);
        }
        for a in &mut acc {
            *a /= used as f64;
        }
        Ok(Glcm { levels: l, p: acc })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }

    /// Features in [`GLCM_NAMES`] order.
    pub fn features(&self) -> [f64; 6] {
        let l = self.levels;
        let (mut contrast, mut dissim, mut homog, mut asm, mut entropy, mut mu) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..l {
            for j in 0..l {
                let p = self.get(i, j);
                if p == 0.0 {
                    continue;
                }
                let d = i as f64 - j as f64;
                contrast += d * d * p;
                dissim += d.abs() * p;
                homog += p / (1.0 + d * d);
                asm += p * p;
                entropy -= p * p.log2();
                mu += i as f64 * p;
            }
        }
        let (mut var, mut cov) = (0.0, 0.0);
        for i in 0..l {
            for j in 0..l {
                let p = self.get(i, j);
                var += (i as f64 - mu).powi(2) * p;
                cov += (i as f64 - mu) * (j as f64 - mu) * p;
            }
        }
        // symmetric matrix: row and column marginals coincide
        let correlation = if var > 1e-15 {
            (cov / var).clamp(-1.0, 1.0)
        } else {
            1.0
        };
        [contrast, dissim, homog, asm, correlation, entropy.max(0.0)]
    }
}

pub fn glcm_features(q: &Quantized, region: &Region) -> Result<[f64; 6], RadiomicsError> {
    Ok(Glcm::compute(q, region, &GLCM_OFFSETS)?.features())
}

/// Shape descriptors of a region, in [`SHAPE_NAMES`] order.
///
/// The perimeter counts pixel edges shared with non-region pixels (image
/// border included). Axis lengths are `4 * sqrt(lambda)` of the centred
/// second-moment (inertia) tensor, elongation is `sqrt(lambda2 / lambda1)`.
pub fn shape_features_region(region: &Region) -> Result<[f64; 7], RadiomicsError> {
    let area = region.count();
    if area == 0 {
        return Err(RadiomicsError::EmptyStructure);
    }
    let mut perimeter = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..region.height as isize {
        for x in 0..region.width as isize {
            if !region.contains(x, y) {
                continue;
            }
            sx += x as f64;
            sy += y as f64;
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                if !region.contains(x + dx, y + dy) {
                    perimeter += 1;
                }
            }
        }
    }
    let n = area as f64;
    let (xbar, ybar) = (sx / n, sy / n);
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for y in 0..region.height as isize {
        for x in 0..region.width as isize {
            if region.contains(x, y) {
                let (dx, dy) = (x as f64 - xbar, y as f64 - ybar);
                mu20 += dx * dx;
                mu02 += dy * dy;
                mu11 += dx * dy;
            }
        }
    }
    mu20 /= n;
    mu02 /= n;
    mu11 /= n;
    let half_trace = 0.5 * (mu20 + mu02);
    let disc = (0.25 * (mu20 - mu02).powi(2) + mu11 * mu11).sqrt();
    let l1 = half_trace + disc;
    let l2 = (half_trace - disc).max(0.0);
    let elongation = if l1 > 0.0 { (l2 / l1).sqrt() } else { 1.0 };
    let p = perimeter as f64;
    Ok([
        n,
        p,
        p / n,
        elongation,
        4.0 * l1.sqrt(),
        4.0 * l2.sqrt(),
        4.0 * std::f64::consts::PI * n / (p * p),
    ])
}

pub fn shape_features(mask: &LabelMask, structures: &[u8]) -> Result<[f64; 7], RadiomicsError> {
    shape_features_region(&mask.select(structures))
}

/// Which image channels feed the intensity and texture features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FeatureChannels {
    /// ED only: the canonical 26-vector.
    #[serde(rename = "ED")]
    Ed,
    /// ED, then the 19 intensity and texture features of ES appended.
    #[serde(rename = "ED+ES")]
    EdEs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionSettings {
    pub levels: usize,
    pub normalization: NormalizationMode,
    pub channels: FeatureChannels,
}

impl Default for ExtractionSettings {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS,
            normalization: NormalizationMode::default(),
            channels: FeatureChannels::Ed,
        }
    }
}

impl ExtractionSettings {
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = canonical_names();
        if self.channels == FeatureChannels::EdEs {
            names.extend(
                FIRST_ORDER_NAMES
                    .iter()
                    .chain(GLCM_NAMES.iter())
                    .map(|n| format!("es_{n}")),
            );
        }
        names
    }

    /// Sidecar JSON describing how a feature table was produced.
    pub fn sidecar_json(&self) -> Value {
        json!({
            "levels": self.levels,
            "offsets": GLCM_OFFSETS.iter().map(|&(dy, dx)| [dy, dx]).collect::<Vec<_>>(),
            "channel": self.channels,
            "normalization": self.normalization,
            "feature_names": self.feature_names(),
        })
    }
}

fn intensity_features(
    channel: &Image2D,
    region: &Region,
    settings: &ExtractionSettings,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<Vec<f64>, RadiomicsError> {
    let (norm, diag) = normalize_intensity(channel, settings.normalization);
    diagnostics.extend(diag);
    let mut out = first_order_features(&norm, region)?.to_vec();
    let (q, diag) = discretize(&norm, region, settings.levels)?;
    diagnostics.extend(diag);
    out.extend(glcm_features(&q, region)?);
    Ok(out)
}

/// Full feature vector of one stacked image and its label mask.
pub fn extract_features(
    stacked: &StackedImage,
    mask: &LabelMask,
    settings: &ExtractionSettings,
) -> Result<(FeatureVector, Vec<Diagnostic>), RadiomicsError> {
    if (stacked.width(), stacked.height()) != (mask.width(), mask.height()) {
        return Err(RadiomicsError::DimensionMismatch {
            image: (stacked.width(), stacked.height()),
            mask: (mask.width(), mask.height()),
        });
    }
    let region = mask.foreground();
    let mut diagnostics = Vec::new();
    let mut values = intensity_features(&stacked.channels[0], &region, settings, &mut diagnostics)?;
    values.extend(shape_features_region(&region)?);
    if settings.channels == FeatureChannels::EdEs {
        values.extend(intensity_features(
            &stacked.channels[1],
            &region,
            settings,
            &mut diagnostics,
        )?);
    }
    debug_assert!(values.iter().all(|v| v.is_finite()));
    Ok((FeatureVector { values }, diagnostics))
}

/// Rows of feature vectors keyed by subject id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Stable sort by subject id.
    pub fn sort_by_id(&mut self) {
        self.rows.sort_by(|a, b| a.0.cmp(&b.0));
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["subject_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).expect("in-memory");
        for (id, values) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(values.iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("UTF-8")
    }

    pub fn from_csv_str(text: &str) -> Result<Self, RadiomicsError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| RadiomicsError::Table(e.to_string()))?
            .clone();
        if headers.get(0) != Some("subject_id") {
            return Err(RadiomicsError::Table("first column must be subject_id".into()));
        }
        let names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| RadiomicsError::Table(e.to_string()))?;
            let values = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| RadiomicsError::Table(format!("row {}: bad value {v:?}", i + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != names.len() {
                return Err(RadiomicsError::Table(format!("row {}: wrong column count", i + 1)));
            }
            rows.push((rec.get(0).unwrap_or("").to_string(), values));
        }
        Ok(Self { names, rows })
    }
}

/// One image to featurize.
#[derive(Debug, Clone)]
pub struct FeatureInput {
    pub subject_id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

/// Extracts features for every input in parallel and returns the table
/// sorted by subject id (stable, so repeated ids keep input order).
pub fn extract_table(
    inputs: &[FeatureInput],
    settings: &ExtractionSettings,
) -> Result<(FeatureTable, Vec<Diagnostic>), Error> {
    let results: Vec<Result<(Vec<f64>, Vec<Diagnostic>), Error>> = inputs
        .par_iter()
        .map(|input| {
            let stacked = imageio::read_stacked(&input.image_path)?;
            let mask = imageio::read_mask_for_slice(&input.mask_path, None)?;
            let (v, diags) = extract_features(&stacked, &mask, settings)?;
            let diags = diags
                .into_iter()
                .map(|d| Diagnostic::new(d.code, format!("{}: {}", input.subject_id, d.message)))
                .collect();
            Ok((v.values, diags))
        })
        .collect();
    let mut table = FeatureTable::new(settings.feature_names());
    let mut diagnostics = Vec::new();
    for (input, result) in inputs.iter().zip(results) {
        let (values, diags) = result?;
        table.rows.push((input.subject_id.clone(), values));
        diagnostics.extend(diags);
    }
    table.sort_by_id();
    Ok((table, diagnostics))
}
