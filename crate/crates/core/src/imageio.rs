//! PNG reading and writing for frames, masks and stacked images.

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::preprocess::{Image2D, LabelMask, StackedImage};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("{path}: label {label} is not one of 0..=3")]
    UndeclaredLabel { path: PathBuf, label: u8 },
    #[error("{path}: no mask for slice {slice:?}")]
    NoMaskForSlice { path: PathBuf, slice: Option<u32> },
}

fn read_err(path: &Path, e: impl ToString) -> ImageIoError {
    ImageIoError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_err(path: &Path, e: impl ToString) -> ImageIoError {
    ImageIoError::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn open(path: &Path) -> Result<DynamicImage, ImageIoError> {
    image::open(path).map_err(|e| read_err(path, e))
}

/// Reads a grayscale PNG keeping raw sample values (0..=255 for 8-bit,
/// 0..=65535 for 16-bit). Colour images are reduced to 16-bit luma.
pub fn read_gray(path: &Path) -> Result<Image2D, ImageIoError> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        other => other
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(f64::from)
            .collect(),
    };
    Image2D::new(w, h, data).map_err(|e| read_err(path, e))
}

/// Reads a colour PNG as three channels scaled to [0, 1].
pub fn read_stacked(path: &Path) -> Result<StackedImage, ImageIoError> {
    let rgb = open(path)?.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut chans = [
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
    ];
    for p in rgb.pixels() {
        for c in 0..3 {
            chans[c].push(f64::from(p[c]) / 255.0);
        }
    }
    let [a, b, c] = chans;
    let mk = |d| Image2D::new(w, h, d).map_err(|e| read_err(path, e));
    StackedImage::new(
        [mk(a)?, mk(b)?, mk(c)?],
        crate::preprocess::Provenance {
            subject_id: String::new(),
            slice: 0,
            ed_frame: 0,
            es_frame: 0,
            temporal_offset: 0,
        },
    )
    .map_err(|e| read_err(path, e))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes channels in [0, 1] as an 8-bit RGB PNG.
pub fn write_stacked(path: &Path, image: &StackedImage) -> Result<(), ImageIoError> {
    let (w, h) = (image.width(), image.height());
    let [a, b, c] = &image.channels;
    let mut raw = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        raw.push(to_u8(a.pixels()[i]));
        raw.push(to_u8(b.pixels()[i]));
        raw.push(to_u8(c.pixels()[i]));
    }
    let buf = RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions");
    buf.save(path).map_err(|e| write_err(path, e))
}

/// Writes one 8-bit gray plane replicated into three RGB channels.
pub fn write_gray_as_rgb(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<(), ImageIoError> {
    let raw: Vec<u8> = gray.iter().flat_map(|&g| [g, g, g]).collect();
    let buf = RgbImage::from_raw(width as u32, height as u32, raw).expect("buffer matches dimensions");
    buf.save(path).map_err(|e| write_err(path, e))
}

/// Writes raw values (clamped to 0..=65535) as a 16-bit grayscale PNG.
pub fn write_gray16(path: &Path, image: &Image2D) -> Result<(), ImageIoError> {
    let raw: Vec<u16> = image
        .pixels()
        .iter()
        .map(|&v| v.clamp(0.0, 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, raw)
            .expect("buffer matches dimensions");
    buf.save(path).map_err(|e| write_err(path, e))
}

pub fn read_mask(path: &Path) -> Result<LabelMask, ImageIoError> {
    let gray = open(path)?.into_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let labels = gray.into_raw();
    if let Some(&label) = labels.iter().find(|&&l| l > LabelMask::MAX_LABEL) {
        return Err(ImageIoError::UndeclaredLabel {
            path: path.to_path_buf(),
            label,
        });
    }
    LabelMask::new(w, h, labels).map_err(|e| read_err(path, e))
}

/// Resolves a mask reference. A file is used as is; a directory holds one
/// `s{slice:02}.png` per slice, and without a slice the middle file (in name
/// order) is taken.
pub fn mask_file_for_slice(path: &Path, slice: Option<u32>) -> Result<PathBuf, ImageIoError> {
    if !path.is_dir() {
        return Ok(path.to_path_buf());
    }
    let candidate = match slice {
        Some(s) => path.join(format!("s{s:02}.png")),
        None => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| read_err(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "png"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(ImageIoError::NoMaskForSlice {
                    path: path.to_path_buf(),
                    slice,
                });
            }
            files.swap_remove(files.len() / 2)
        }
    };
    if !candidate.exists() {
        return Err(ImageIoError::NoMaskForSlice {
            path: path.to_path_buf(),
            slice,
        });
    }
    Ok(candidate)
}

pub fn read_mask_for_slice(path: &Path, slice: Option<u32>) -> Result<LabelMask, ImageIoError> {
    read_mask(&mask_file_for_slice(path, slice)?)
}

pub fn write_mask(path: &Path, mask: &LabelMask) -> Result<(), ImageIoError> {
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.labels().to_vec())
        .expect("buffer matches dimensions");
    buf.save(path).map_err(|e| write_err(path, e))
}

/// Width and height from the PNG header only.
pub fn dimensions(path: &Path) -> Result<(usize, usize), ImageIoError> {
    let (w, h) = image::image_dimensions(path).map_err(|e| read_err(path, e))?;
    Ok((w as usize, h as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let img = Image2D::from_fn(9, 8, |x, y| (x * 1000 + y * 7) as f64);
        write_gray16(&p, &img).unwrap();
        assert_eq!(read_gray(&p).unwrap(), img);
        assert_eq!(dimensions(&p).unwrap(), (9, 8));
    }

    #[test]
    fn mask_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mask = LabelMask::new(4, 2, vec![0, 1, 2, 3, 3, 2, 1, 0]).unwrap();
        write_mask(&p, &mask).unwrap();
        assert_eq!(read_mask(&p).unwrap(), mask);

        let bad = GrayImage::from_raw(2, 1, vec![0, 9]).unwrap();
        let q = dir.path().join("bad.png");
        bad.save(&q).unwrap();
        assert!(matches!(read_mask(&q), Err(ImageIoError::UndeclaredLabel { label: 9, .. })));
    }

    #[test]
    fn mask_directory_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let mask = LabelMask::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        for s in 0..3 {
            write_mask(&dir.path().join(format!("s{s:02}.png")), &mask).unwrap();
        }
        assert_eq!(
            mask_file_for_slice(dir.path(), None).unwrap(),
            dir.path().join("s01.png")
        );
        assert!(mask_file_for_slice(dir.path(), Some(7)).is_err());
    }
}
