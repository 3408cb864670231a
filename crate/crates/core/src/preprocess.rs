//! Turns 4D cine volumes into 2D three-channel training images.
//!
//! A training subject contributes nine views: the three central slices, each
//! at temporal offsets -1, 0 and +1 applied jointly to the ED and ES frame
//! indices. Validation and test subjects contribute a single view (central
//! slice, offset 0).

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::diagnostics::Diagnostic;
use crate::imageio::{self, ImageIoError};
use crate::manifest::{Origin, Split, SubjectRecord};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("need at least 3 slices, record has {n_slices}")]
    InsufficientSlices { n_slices: u32 },
    #[error("frame {frame} with offset {offset:+} leaves [0, {n_frames})")]
    TemporalBoundary {
        frame: u32,
        offset: i32,
        n_frames: u32,
    },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("side must be positive")]
    InvalidSide,
    #[error("volume does not match record: {0}")]
    VolumeMismatch(String),
    #[error(transparent)]
    Image(#[from] ImageIoError),
}

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 {
            return Err(PreprocessError::InvalidImage("zero dimension".into()));
        }
        if data.len() != width * height {
            return Err(PreprocessError::InvalidImage(format!(
                "{} values for {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PreprocessError::InvalidImage("non-finite value".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("valid constant image")
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data).expect("from_fn produced invalid image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image2D {
        Image2D {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Segmentation labels: 0 background, 1 left ventricle, 2 myocardium,
/// 3 right ventricle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub const BACKGROUND: u8 = 0;
    pub const LEFT_VENTRICLE: u8 = 1;
    pub const MYOCARDIUM: u8 = 2;
    pub const RIGHT_VENTRICLE: u8 = 3;
    pub const MAX_LABEL: u8 = 3;

    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(PreprocessError::InvalidImage(format!(
                "{} labels for {width}x{height}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > Self::MAX_LABEL) {
            return Err(PreprocessError::InvalidImage(format!("undeclared label {bad}")));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_set(&self) -> BTreeSet<u8> {
        self.labels.iter().copied().collect()
    }

    pub fn select(&self, structures: &[u8]) -> Region {
        Region {
            width: self.width,
            height: self.height,
            inside: self.labels.iter().map(|l| structures.contains(l)).collect(),
        }
    }

    /// Union of all cardiac structures.
    pub fn foreground(&self) -> Region {
        self.select(&[Self::LEFT_VENTRICLE, Self::MYOCARDIUM, Self::RIGHT_VENTRICLE])
    }
}

/// Binary pixel selection on an image grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub width: usize,
    pub height: usize,
    pub inside: Vec<bool>,
}

impl Region {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            inside: vec![true; width * height],
        }
    }

    pub fn contains(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.inside[y as usize * self.width + x as usize]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Values of `image` at selected pixels, row-major.
    pub fn values(&self, image: &Image2D) -> Vec<f64> {
        image
            .pixels()
            .iter()
            .zip(&self.inside)
            .filter_map(|(&v, &keep)| keep.then_some(v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub subject_id: String,
    pub slice: u32,
    pub ed_frame: u32,
    pub es_frame: u32,
    pub temporal_offset: i32,
}

/// Three equally sized channels: ED, ES and a third channel per
/// [`ChannelPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct StackedImage {
    pub channels: [Image2D; 3],
    pub provenance: Provenance,
}

impl StackedImage {
    pub fn new(channels: [Image2D; 3], provenance: Provenance) -> Result<Self, PreprocessError> {
        let (w, h) = (channels[0].width, channels[0].height);
        if channels.iter().any(|c| c.width != w || c.height != h) {
            return Err(PreprocessError::InvalidImage("channel sizes differ".into()));
        }
        Ok(Self {
            channels,
            provenance,
        })
    }

    pub fn width(&self) -> usize {
        self.channels[0].width
    }

    pub fn height(&self) -> usize {
        self.channels[0].height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelPolicy {
    /// (ED, ES, ED)
    #[default]
    DuplicateEd,
    /// (ED, ES, (ED + ES) / 2)
    MeanThird,
}

impl std::str::FromStr for ChannelPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "duplicate-ed" => Ok(ChannelPolicy::DuplicateEd),
            "mean-third" => Ok(ChannelPolicy::MeanThird),
            other => Err(format!("unknown channel policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolumeDims {
    pub n_slices: u32,
    pub n_frames: u32,
    pub width: usize,
    pub height: usize,
}

/// Random access to the frames of a 4D cine volume.
pub trait VolumeSource {
    fn n_slices(&self) -> u32;
    fn n_frames(&self) -> u32;
    fn frame(&self, slice: u32, frame: u32) -> Result<Image2D, PreprocessError>;
}

/// Fully in-memory volume, `data[((slice * n_frames) + frame) * w * h + pixel]`.
#[derive(Debug, Clone)]
pub struct Volume4D {
    dims: VolumeDims,
    data: Vec<f64>,
}

impl Volume4D {
    pub fn new(dims: VolumeDims, data: Vec<f64>) -> Result<Self, PreprocessError> {
        let expected = dims.n_slices as usize * dims.n_frames as usize * dims.width * dims.height;
        if data.len() != expected {
            return Err(PreprocessError::InvalidImage(format!(
                "volume has {} values, expected {expected}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: VolumeDims, f: impl Fn(u32, u32, usize, usize) -> f64) -> Self {
        let mut data = Vec::new();
        for s in 0..dims.n_slices {
            for t in 0..dims.n_frames {
                for y in 0..dims.height {
                    for x in 0..dims.width {
                        data.push(f(s, t, x, y));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> VolumeDims {
        self.dims
    }
}

impl VolumeSource for Volume4D {
    fn n_slices(&self) -> u32 {
        self.dims.n_slices
    }

    fn n_frames(&self) -> u32 {
        self.dims.n_frames
    }

    fn frame(&self, slice: u32, frame: u32) -> Result<Image2D, PreprocessError> {
        if slice >= self.dims.n_slices || frame >= self.dims.n_frames {
            return Err(PreprocessError::IndexOutOfRange(format!(
                "slice {slice}, frame {frame}"
            )));
        }
        let plane = self.dims.width * self.dims.height;
        let start = (slice as usize * self.dims.n_frames as usize + frame as usize) * plane;
        Image2D::new(
            self.dims.width,
            self.dims.height,
            self.data[start..start + plane].to_vec(),
        )
    }
}

/// Directory of per-slice, per-frame PNG files named `s{slice:02}_t{frame:03}.png`,
/// read on demand.
#[derive(Debug, Clone)]
pub struct PngVolume {
    pub dir: PathBuf,
    pub n_slices: u32,
    pub n_frames: u32,
}

impl PngVolume {
    pub fn frame_path(dir: &Path, slice: u32, frame: u32) -> PathBuf {
        dir.join(format!("s{slice:02}_t{frame:03}.png"))
    }
}

impl VolumeSource for PngVolume {
    fn n_slices(&self) -> u32 {
        self.n_slices
    }

    fn n_frames(&self) -> u32 {
        self.n_frames
    }

    fn frame(&self, slice: u32, frame: u32) -> Result<Image2D, PreprocessError> {
        if slice >= self.n_slices || frame >= self.n_frames {
            return Err(PreprocessError::IndexOutOfRange(format!(
                "slice {slice}, frame {frame}"
            )));
        }
        Ok(imageio::read_gray(&Self::frame_path(&self.dir, slice, frame))?)
    }
}

pub fn central_slice(n_slices: u32) -> u32 {
    n_slices / 2
}

/// Stacks the ED and ES frames of one slice into a three-channel image.
pub fn stack_frames(
    volume: &dyn VolumeSource,
    slice: u32,
    ed: u32,
    es: u32,
    policy: ChannelPolicy,
) -> Result<StackedImage, PreprocessError> {
    if slice >= volume.n_slices() {
        return Err(PreprocessError::IndexOutOfRange(format!(
            "slice {slice} of {}",
            volume.n_slices()
        )));
    }
    for frame in [ed, es] {
        if frame >= volume.n_frames() {
            return Err(PreprocessError::IndexOutOfRange(format!(
                "frame {frame} of {}",
                volume.n_frames()
            )));
        }
    }
    let ed_img = volume.frame(slice, ed)?;
    let es_img = volume.frame(slice, es)?;
    if ed_img.width != es_img.width || ed_img.height != es_img.height {
        return Err(PreprocessError::InvalidImage("ED and ES frame sizes differ".into()));
    }
    let third = match policy {
        ChannelPolicy::DuplicateEd => ed_img.clone(),
        ChannelPolicy::MeanThird => Image2D {
            width: ed_img.width,
            height: ed_img.height,
            data: ed_img
                .data
                .iter()
                .zip(&es_img.data)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        },
    };
    Ok(StackedImage {
        channels: [ed_img, es_img, third],
        provenance: Provenance {
            subject_id: String::new(),
            slice,
            ed_frame: ed,
            es_frame: es,
            temporal_offset: 0,
        },
    })
}

fn check_volume(record: &SubjectRecord, volume: &dyn VolumeSource) -> Result<(), PreprocessError> {
    if volume.n_slices() != record.n_slices || volume.n_frames() != record.n_frames {
        return Err(PreprocessError::VolumeMismatch(format!(
            "record {} declares {}x{} slices x frames, volume has {}x{}",
            record.subject_id,
            record.n_slices,
            record.n_frames,
            volume.n_slices(),
            volume.n_frames()
        )));
    }
    Ok(())
}

fn shifted(frame: u32, offset: i32, n_frames: u32) -> Result<u32, PreprocessError> {
    let f = frame as i64 + offset as i64;
    if f < 0 || f >= n_frames as i64 {
        return Err(PreprocessError::TemporalBoundary {
            frame,
            offset,
            n_frames,
        });
    }
    Ok(f as u32)
}

pub const TEMPORAL_OFFSETS: [i32; 3] = [-1, 0, 1];

/// The (slice, offset) grid of the nine training views, checked against the
/// record without touching pixel data.
pub fn training_view_plan(record: &SubjectRecord) -> Result<Vec<(u32, i32)>, PreprocessError> {
    if record.n_slices < 3 {
        return Err(PreprocessError::InsufficientSlices {
            n_slices: record.n_slices,
        });
    }
    for offset in [-1, 1] {
        shifted(record.ed_frame, offset, record.n_frames)?;
        shifted(record.es_frame, offset, record.n_frames)?;
    }
    let c = central_slice(record.n_slices);
    let mut plan = Vec::with_capacity(9);
    for slice in [c - 1, c, c + 1] {
        for offset in TEMPORAL_OFFSETS {
            plan.push((slice, offset));
        }
    }
    Ok(plan)
}

fn view(
    record: &SubjectRecord,
    volume: &dyn VolumeSource,
    slice: u32,
    offset: i32,
    policy: ChannelPolicy,
) -> Result<StackedImage, PreprocessError> {
    let ed = shifted(record.ed_frame, offset, record.n_frames)?;
    let es = shifted(record.es_frame, offset, record.n_frames)?;
    let mut img = stack_frames(volume, slice, ed, es, policy)?;
    img.provenance.subject_id = record.subject_id.clone();
    img.provenance.temporal_offset = offset;
    Ok(img)
}

/// The nine training views: slices `{c-1, c, c+1}` with `c = n_slices / 2`,
/// each at temporal offsets `{-1, 0, +1}`.
pub fn expand_training_views(
    record: &SubjectRecord,
    volume: &dyn VolumeSource,
    policy: ChannelPolicy,
) -> Result<Vec<StackedImage>, PreprocessError> {
    check_volume(record, volume)?;
    training_view_plan(record)?
        .into_iter()
        .map(|(slice, offset)| view(record, volume, slice, offset, policy))
        .collect()
}

/// The single evaluation view: central slice, offset 0.
pub fn eval_view(
    record: &SubjectRecord,
    volume: &dyn VolumeSource,
    policy: ChannelPolicy,
) -> Result<StackedImage, PreprocessError> {
    check_volume(record, volume)?;
    view(record, volume, central_slice(record.n_slices), 0, policy)
}

/// Number of views a record yields: `train_views` (9 or 1) for training
/// records and records without a split, 1 for val/test.
pub fn view_count(record: &SubjectRecord, train_views: usize) -> usize {
    match record.split {
        Some(Split::Val) | Some(Split::Test) => 1,
        _ => train_views,
    }
}

/// Views for a record according to its split.
pub fn views_for_record(
    record: &SubjectRecord,
    volume: &dyn VolumeSource,
    policy: ChannelPolicy,
    train_views: usize,
) -> Result<Vec<StackedImage>, PreprocessError> {
    if view_count(record, train_views) == 9 {
        expand_training_views(record, volume, policy)
    } else {
        Ok(vec![eval_view(record, volume, policy)?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMethod {
    Bilinear,
    Nearest,
}

/// Source coordinate of destination pixel `i` under pixel-centre alignment.
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5
}

/// Resizes to `side x side`. Bilinear interpolation uses pixel-centre
/// alignment with edge clamping, so resizing to the current size is exact.
pub fn resize_image(
    image: &Image2D,
    side: usize,
    method: ResizeMethod,
) -> Result<Image2D, PreprocessError> {
    if side == 0 {
        return Err(PreprocessError::InvalidSide);
    }
    let (w, h) = (image.width, image.height);
    if (w, h) == (side, side) {
        return Ok(image.clone());
    }
    let out = match method {
        ResizeMethod::Nearest => {
            let xs: Vec<usize> = (0..side).map(|i| nearest_index(i, w, side)).collect();
            let ys: Vec<usize> = (0..side).map(|i| nearest_index(i, h, side)).collect();
            Image2D::from_fn(side, side, |x, y| image.get(xs[x], ys[y]))
        }
        ResizeMethod::Bilinear => {
            let taps = |src: usize| -> Vec<(usize, usize, f64)> {
                (0..side)
                    .map(|i| {
                        let c = source_coord(i, src, side).clamp(0.0, (src - 1) as f64);
                        let i0 = c.floor() as usize;
                        let i1 = (i0 + 1).min(src - 1);
                        (i0, i1, c - i0 as f64)
                    })
                    .collect()
            };
            let tx = taps(w);
            let ty = taps(h);
            Image2D::from_fn(side, side, |x, y| {
                let (x0, x1, fx) = tx[x];
                let (y0, y1, fy) = ty[y];
                let top = image.get(x0, y0) * (1.0 - fx) + image.get(x1, y0) * fx;
                let bottom = image.get(x0, y1) * (1.0 - fx) + image.get(x1, y1) * fx;
                top * (1.0 - fy) + bottom * fy
            })
        }
    };
    Ok(out)
}

fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    (((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1)
}

pub fn resize_stacked(
    image: &StackedImage,
    side: usize,
    method: ResizeMethod,
) -> Result<StackedImage, PreprocessError> {
    let [a, b, c] = &image.channels;
    Ok(StackedImage {
        channels: [
            resize_image(a, side, method)?,
            resize_image(b, side, method)?,
            resize_image(c, side, method)?,
        ],
        provenance: image.provenance.clone(),
    })
}

/// Nearest-neighbour resize; never introduces new labels.
pub fn resize_mask(mask: &LabelMask, side: usize) -> Result<LabelMask, PreprocessError> {
    if side == 0 {
        return Err(PreprocessError::InvalidSide);
    }
    let xs: Vec<usize> = (0..side).map(|i| nearest_index(i, mask.width, side)).collect();
    let ys: Vec<usize> = (0..side).map(|i| nearest_index(i, mask.height, side)).collect();
    let mut labels = Vec::with_capacity(side * side);
    for &y in &ys {
        for &x in &xs {
            labels.push(mask.get(x, y));
        }
    }
    LabelMask::new(side, side, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum NormalizationMode {
    MinMax,
    Percentile { p_lo: f64, p_hi: f64 },
}

impl Default for NormalizationMode {
    fn default() -> Self {
        NormalizationMode::Percentile {
            p_lo: 1.0,
            p_hi: 99.0,
        }
    }
}

/// Linear-interpolation percentile (`p` in [0, 100]) of ascending `sorted`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn intensity_bounds(values: &[f64], mode: NormalizationMode) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    match mode {
        NormalizationMode::MinMax => (sorted[0], sorted[sorted.len() - 1]),
        NormalizationMode::Percentile { p_lo, p_hi } => {
            (percentile_sorted(&sorted, p_lo), percentile_sorted(&sorted, p_hi))
        }
    }
}

fn rescale(v: f64, lo: f64, hi: f64) -> f64 {
    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Maps intensities to [0, 1]. A degenerate range (all bounds equal) yields
/// an all-zero image plus a `DegenerateRange` diagnostic.
pub fn normalize_intensity(
    image: &Image2D,
    mode: NormalizationMode,
) -> (Image2D, Option<Diagnostic>) {
    let (lo, hi) = intensity_bounds(&image.data, mode);
    if hi <= lo {
        return (
            image.map(|_| 0.0),
            Some(Diagnostic::new(
                "DegenerateRange",
                format!("intensity range collapses at {lo}"),
            )),
        );
    }
    (image.map(|v| rescale(v, lo, hi)), None)
}

/// Normalizes the three channels with bounds pooled over all of them, which
/// keeps ED/ES contrast comparable.
pub fn normalize_stacked(
    image: &StackedImage,
    mode: NormalizationMode,
) -> (StackedImage, Option<Diagnostic>) {
    let pooled: Vec<f64> = image
        .channels
        .iter()
        .flat_map(|c| c.data.iter().copied())
        .collect();
    let (lo, hi) = intensity_bounds(&pooled, mode);
    let (f, diag): (Box<dyn Fn(f64) -> f64>, _) = if hi <= lo {
        (
            Box::new(|_| 0.0),
            Some(Diagnostic::new(
                "DegenerateRange",
                format!("intensity range collapses at {lo}"),
            )),
        )
    } else {
        (Box::new(move |v| rescale(v, lo, hi)), None)
    };
    let [a, b, c] = &image.channels;
    (
        StackedImage {
            channels: [a.map(&f), b.map(&f), c.map(&f)],
            provenance: image.provenance.clone(),
        },
        diag,
    )
}

/// Settings for the on-disk preprocessing stage.
#[derive(Debug, Clone, Serialize)]
pub struct PreprocessSettings {
    pub size: Option<usize>,
    pub train_views: usize,
    pub channel_policy: ChannelPolicy,
    pub normalization: NormalizationMode,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        Self {
            size: Some(512),
            train_views: 9,
            channel_policy: ChannelPolicy::default(),
            normalization: NormalizationMode::default(),
        }
    }
}

/// One written view, as listed in the view index CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub subject_id: String,
    pub split: String,
    pub slice: u32,
    pub temporal_offset: i32,
    pub image_path: String,
    pub mask_path: String,
}

pub const VIEW_INDEX_HEADER: &str = "subject_id,split,slice,temporal_offset,image_path,mask_path";

pub fn view_file_name(subject_id: &str, slice: u32, offset: i32) -> String {
    format!("{subject_id}_s{slice:02}_o{offset:+}.png")
}

/// Preprocesses one record from disk: reads its PNG volume and mask, builds
/// its views, normalizes, resizes and writes 8-bit RGB images plus the
/// matching per-slice masks into `out_dir`.
pub fn preprocess_record(
    record: &SubjectRecord,
    volume_dir: &Path,
    mask_path: &Path,
    out_dir: &Path,
    settings: &PreprocessSettings,
) -> Result<(Vec<ViewEntry>, Vec<Diagnostic>), PreprocessError> {
    if record.origin == Origin::Synthetic {
        return preprocess_synthetic(record, volume_dir, mask_path, out_dir, settings);
    }
    let volume = PngVolume {
        dir: volume_dir.to_path_buf(),
        n_slices: record.n_slices,
        n_frames: record.n_frames,
    };
    let views = views_for_record(record, &volume, settings.channel_policy, settings.train_views)?;
    let split = record.split.map(|s| s.to_string()).unwrap_or_default();
    let mut entries = Vec::with_capacity(views.len());
    let mut diagnostics = Vec::new();
    let mut written_masks = BTreeSet::new();
    for v in views {
        let (mut img, diag) = normalize_stacked(&v, settings.normalization);
        if let Some(d) = diag {
            diagnostics.push(Diagnostic::new(
                d.code,
                format!("{} slice {}: {}", record.subject_id, v.provenance.slice, d.message),
            ));
        }
        let slice = v.provenance.slice;
        let mask_name = format!("{}_s{slice:02}_mask.png", record.subject_id);
        if written_masks.insert(slice) {
            let mut mask = imageio::read_mask_for_slice(mask_path, Some(slice))?;
            if (mask.width(), mask.height()) != (img.width(), img.height()) {
                return Err(PreprocessError::VolumeMismatch(format!(
                    "mask {}x{} vs image {}x{}",
                    mask.width(),
                    mask.height(),
                    img.width(),
                    img.height()
                )));
            }
            if let Some(side) = settings.size {
                mask = resize_mask(&mask, side)?;
            }
            imageio::write_mask(&out_dir.join(&mask_name), &mask)?;
        }
        if let Some(side) = settings.size {
            img = resize_stacked(&img, side, ResizeMethod::Bilinear)?;
        }
        let name = view_file_name(&record.subject_id, slice, v.provenance.temporal_offset);
        imageio::write_stacked(&out_dir.join(&name), &img)?;
        entries.push(ViewEntry {
            subject_id: record.subject_id.clone(),
            split: split.clone(),
            slice,
            temporal_offset: v.provenance.temporal_offset,
            image_path: name,
            mask_path: mask_name,
        });
    }
    Ok((entries, diagnostics))
}

/// A generated image is already a single 2D view: it is normalized and
/// resized like any other view, and its donor mask is brought to the same
/// size with nearest-neighbour sampling.
fn preprocess_synthetic(
    record: &SubjectRecord,
    image_path: &Path,
    mask_path: &Path,
    out_dir: &Path,
    settings: &PreprocessSettings,
) -> Result<(Vec<ViewEntry>, Vec<Diagnostic>), PreprocessError> {
    let mut stacked = imageio::read_stacked(image_path)?;
    stacked.provenance = Provenance {
        subject_id: record.subject_id.clone(),
        slice: 0,
        ed_frame: record.ed_frame,
        es_frame: record.es_frame,
        temporal_offset: 0,
    };
    let mut diagnostics = Vec::new();
    let (mut img, diag) = normalize_stacked(&stacked, settings.normalization);
    if let Some(d) = diag {
        diagnostics.push(Diagnostic::new(d.code, format!("{}: {}", record.subject_id, d.message)));
    }
    let mut mask = imageio::read_mask_for_slice(mask_path, None)?;
    if let Some(side) = settings.size {
        img = resize_stacked(&img, side, ResizeMethod::Bilinear)?;
    }
    if (mask.width(), mask.height()) != (img.width(), img.height()) {
        if img.width() != img.height() {
            return Err(PreprocessError::VolumeMismatch(format!(
                "mask {}x{} vs image {}x{}",
                mask.width(),
                mask.height(),
                img.width(),
                img.height()
            )));
        }
        mask = resize_mask(&mask, img.width())?;
    }
    let mask_name = format!("{}_s00_mask.png", record.subject_id);
    imageio::write_mask(&out_dir.join(&mask_name), &mask)?;
    let name = view_file_name(&record.subject_id, 0, 0);
    imageio::write_stacked(&out_dir.join(&name), &img)?;
    let split = record.split.map(|s| s.to_string()).unwrap_or_default();
    Ok((
        vec![ViewEntry {
            subject_id: record.subject_id.clone(),
            split,
            slice: 0,
            temporal_offset: 0,
            image_path: name,
            mask_path: mask_name,
        }],
        diagnostics,
    ))
}

pub fn view_index_csv(entries: &[ViewEntry]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in entries {
        w.serialize(e).expect("in-memory");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory")).expect("UTF-8");
    if entries.is_empty() {
        format!("{VIEW_INDEX_HEADER}\n")
    } else {
        body
    }
}

pub fn view_index_from_csv_str(text: &str) -> Result<Vec<ViewEntry>, PreprocessError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| PreprocessError::InvalidImage(format!("view index row {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::test_support::record;
    use crate::manifest::{Diagnosis, Sex};
    use proptest::prelude::*;

    fn dims(n_slices: u32, n_frames: u32) -> VolumeDims {
        VolumeDims {
            n_slices,
            n_frames,
            width: 8,
            height: 8,
        }
    }

    /// Pixel value encodes (slice, frame) so views can be checked exactly.
    fn coded_volume(n_slices: u32, n_frames: u32) -> Volume4D {
        Volume4D::from_fn(dims(n_slices, n_frames), |s, t, x, y| {
            (s * 1000 + t) as f64 + (x + y) as f64 * 1e-3
        })
    }

    fn code(img: &Image2D) -> (u32, u32) {
        let v = img.get(0, 0).round() as u32;
        (v / 1000, v % 1000)
    }

    #[test]
    fn nine_views_with_expected_indices() {
        let rec = record("a", Sex::Female, 50, 22.0, Diagnosis::Healthy);
        let vol = coded_volume(5, 50);
        let views = expand_training_views(&rec, &vol, ChannelPolicy::DuplicateEd).unwrap();
        assert_eq!(views.len(), 9);
        let mut seen = Vec::new();
        for v in &views {
            let (s_ed, ed) = code(&v.channels[0]);
            let (s_es, es) = code(&v.channels[1]);
            assert_eq!(s_ed, s_es);
            assert_eq!(s_ed, v.provenance.slice);
            seen.push((s_ed, ed, es));
        }
        let mut expected = Vec::new();
        for s in [1, 2, 3] {
            for (ed, es) in [(9, 24), (10, 25), (11, 26)] {
                expected.push((s, ed, es));
            }
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn smallest_volume_uses_all_slices() {
        let mut rec = record("a", Sex::Female, 50, 22.0, Diagnosis::Healthy);
        rec.n_slices = 3;
        let plan = training_view_plan(&rec).unwrap();
        let slices: BTreeSet<u32> = plan.iter().map(|p| p.0).collect();
        assert_eq!(slices, BTreeSet::from([0, 1, 2]));
        assert_eq!(central_slice(3), 1);
        assert_eq!(central_slice(4), 2);
    }

    #[test]
    fn boundary_errors() {
        let mut rec = record("a", Sex::Female, 50, 22.0, Diagnosis::Healthy);
        rec.ed_frame = 0;
        assert!(matches!(
            training_view_plan(&rec),
            Err(PreprocessError::TemporalBoundary { frame: 0, offset: -1, .. })
        ));
        rec.ed_frame = 10;
        rec.es_frame = 49;
        assert!(matches!(
            training_view_plan(&rec),
            Err(PreprocessError::TemporalBoundary { frame: 49, offset: 1, .. })
        ));
        rec.es_frame = 25;
        rec.n_slices = 2;
        assert!(matches!(
            training_view_plan(&rec),
            Err(PreprocessError::InsufficientSlices { n_slices: 2 })
        ));
    }

    #[test]
    fn eval_records_get_one_view() {
        let mut rec = record("a", Sex::Female, 50, 22.0, Diagnosis::Healthy);
        rec.split = Some(Split::Test);
        rec.ed_frame = 0; // no temporal neighbour needed
        let vol = coded_volume(5, 50);
        let views = views_for_record(&rec, &vol, ChannelPolicy::DuplicateEd, 9).unwrap();
        assert_eq!(views.len(), 1);
        assert_eq!(views[0].provenance.slice, 2);
        assert_eq!(code(&views[0].channels[0]), (2, 0));
    }

    #[test]
    fn channel_policies() {
        let vol = coded_volume(3, 30);
        let img = stack_frames(&vol, 1, 4, 12, ChannelPolicy::DuplicateEd).unwrap();
        assert_eq!(img.channels[0], vol.frame(1, 4).unwrap());
        assert_eq!(img.channels[1], vol.frame(1, 12).unwrap());
        assert_eq!(img.channels[2], img.channels[0]);

        let flat = Volume4D::from_fn(dims(3, 4), |_, _, _, _| 7.5);
        let img = stack_frames(&flat, 0, 1, 2, ChannelPolicy::MeanThird).unwrap();
        for c in &img.channels {
            assert!(c.pixels().iter().all(|&v| v == 7.5));
        }
        assert!(matches!(
            stack_frames(&vol, 3, 0, 1, ChannelPolicy::DuplicateEd),
            Err(PreprocessError::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn resize_examples() {
        let flat = Image2D::filled(256, 256, 0.37);
        let up = resize_image(&flat, 512, ResizeMethod::Bilinear).unwrap();
        assert_eq!((up.width(), up.height()), (512, 512));
        assert!(up.pixels().iter().all(|&v| (v - 0.37).abs() < 1e-15));

        let tiny = Image2D::new(2, 2, vec![0.0, 2.0, 2.0, 4.0]).unwrap();
        let r = resize_image(&tiny, 3, ResizeMethod::Bilinear).unwrap();
        assert_eq!(r.get(1, 1), 2.0);
        assert!(matches!(resize_image(&tiny, 0, ResizeMethod::Nearest), Err(PreprocessError::InvalidSide)));
    }

    #[test]
    fn mask_resize_keeps_labels() {
        let labels: Vec<u8> = (0..100).map(|i| ((i * 7) % 3) as u8).collect();
        let mask = LabelMask::new(10, 10, labels).unwrap();
        for side in [3, 17, 64] {
            let r = resize_mask(&mask, side).unwrap();
            assert!(r.label_set().is_subset(&mask.label_set()));
        }
    }

    #[test]
    fn normalize_examples() {
        let img = Image2D::new(3, 1, vec![10.0, 20.0, 30.0]).unwrap();
        let (n, d) = normalize_intensity(&img, NormalizationMode::MinMax);
        assert_eq!(n.pixels(), &[0.0, 0.5, 1.0]);
        assert!(d.is_none());

        let (n, d) = normalize_intensity(&Image2D::filled(4, 4, 3.0), NormalizationMode::MinMax);
        assert!(n.pixels().iter().all(|&v| v == 0.0));
        assert_eq!(d.unwrap().code, "DegenerateRange");

        // one hot pixel among a gradient: 99th percentile sits below it
        let mut data: Vec<f64> = (0..400).map(|i| (i % 50) as f64).collect();
        data[123] = 10_000.0;
        let img = Image2D::new(20, 20, data.clone()).unwrap();
        let (n, _) = normalize_intensity(&img, NormalizationMode::default());
        let mut sorted = data;
        sorted.sort_by(f64::total_cmp);
        // sorting oracle for the 99th percentile, index 0.99 * 399 = 395.01
        let p99 = sorted[395] + (sorted[396] - sorted[395]) * (0.99 * 399.0 - 395.0);
        assert!(p99 < 10_000.0);
        assert_eq!(n.pixels()[123], 1.0);
    }

    #[test]
    fn percentile_matches_linear_rule() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&v, 0.0), 1.0);
        assert_eq!(percentile_sorted(&v, 100.0), 4.0);
        assert_eq!(percentile_sorted(&v, 50.0), 2.5);
    }

    proptest! {
        #[test]
        fn resize_to_same_size_is_identity(w in 1usize..12, seed in any::<u64>()) {
            let img = Image2D::from_fn(w, w, |x, y| ((seed ^ (x * 31 + y) as u64) % 1000) as f64 / 7.0);
            for method in [ResizeMethod::Bilinear, ResizeMethod::Nearest] {
                prop_assert_eq!(&resize_image(&img, w, method).unwrap(), &img);
            }
        }

        #[test]
        fn nearest_never_invents_labels(w in 1usize..20, h in 1usize..20, side in 1usize..40, seed in any::<u32>()) {
            let labels: Vec<u8> = (0..w * h).map(|i| ((i as u32).wrapping_mul(seed) >> 7) as u8 % 4).collect();
            let mask = LabelMask::new(w, h, labels).unwrap();
            let r = resize_mask(&mask, side).unwrap();
            prop_assert!(r.label_set().is_subset(&mask.label_set()));
        }
    }
}
