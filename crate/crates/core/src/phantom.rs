//! Synthetic short-axis phantoms for fixtures, demos and tests.
//!
//! A phantom is a left-ventricle disk wrapped in a myocardial ring with a
//! right-ventricle crescent to one side. Geometry is jittered from a seeded
//! stream so corpora of phantoms have realistic shape variance.

use rand::Rng;
use std::path::Path;

use crate::error::Error;
use crate::imageio;
use crate::manifest::SubjectRecord;
use crate::preprocess::{LabelMask, PngVolume, Volume4D, VolumeDims, VolumeSource};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomGeometry {
    pub cx: f64,
    pub cy: f64,
    pub lv_radius: f64,
    pub wall: f64,
    pub rv_radius: f64,
    /// Horizontal offset of the RV centre from the LV centre (negative = left).
    pub rv_offset: f64,
}

impl PhantomGeometry {
    /// A mid-sized heart centred in a `side x side` frame.
    pub fn centred(side: usize) -> Self {
        let s = side as f64;
        Self {
            cx: s / 2.0,
            cy: s / 2.0,
            lv_radius: 0.12 * s,
            wall: 0.06 * s,
            rv_radius: 0.16 * s,
            rv_offset: -0.22 * s,
        }
    }

    /// Seeded jitter around [`PhantomGeometry::centred`].
    pub fn random(side: usize, seed: u64, index: u64) -> Self {
        let mut rng = rng::stream(rng::derived_seed(seed, index), streams::PHANTOM);
        let base = Self::centred(side);
        let s = side as f64;
        let mut j = |scale: f64| (rng.random::<f64>() * 2.0 - 1.0) * scale * s;
        Self {
            cx: base.cx + j(0.04),
            cy: base.cy + j(0.04),
            lv_radius: base.lv_radius + j(0.025),
            wall: base.wall + j(0.012),
            rv_radius: base.rv_radius + j(0.03),
            rv_offset: base.rv_offset + j(0.03),
        }
    }

    /// Geometry scaled over the cardiac cycle; `phase` 0 is ED, 1 is ES.
    pub fn at_phase(&self, phase: f64) -> Self {
        let k = 1.0 - 0.35 * phase.clamp(0.0, 1.0);
        Self {
            lv_radius: self.lv_radius * k,
            wall: self.wall * (1.0 + 0.3 * phase.clamp(0.0, 1.0)),
            rv_radius: self.rv_radius * (1.0 - 0.25 * phase.clamp(0.0, 1.0)),
            ..*self
        }
    }

    pub fn label_at(&self, x: usize, y: usize) -> u8 {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let r = ((px - self.cx).powi(2) + (py - self.cy).powi(2)).sqrt();
        if r < self.lv_radius {
            LabelMask::LEFT_VENTRICLE
        } else if r < self.lv_radius + self.wall {
            LabelMask::MYOCARDIUM
        } else {
            let rx = px - (self.cx + self.rv_offset);
            let rr = (rx * rx + (py - self.cy).powi(2)).sqrt();
            if rr < self.rv_radius {
                LabelMask::RIGHT_VENTRICLE
            } else {
                LabelMask::BACKGROUND
            }
        }
    }

    pub fn mask(&self, width: usize, height: usize) -> LabelMask {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(self.label_at(x, y));
            }
        }
        LabelMask::new(width, height, labels).expect("phantom labels are declared")
    }
}

/// Nominal 16-bit intensity of each label in phantom volumes.
pub fn label_intensity(label: u8) -> f64 {
    match label {
        LabelMask::LEFT_VENTRICLE => 36_000.0,
        LabelMask::MYOCARDIUM => 18_000.0,
        LabelMask::RIGHT_VENTRICLE => 28_000.0,
        _ => 5_000.0,
    }
}

/// A cine volume whose heart contracts from ED towards ES and relaxes
/// afterwards. Each slice shrinks slightly away from the base.
pub fn phantom_volume(
    geometry: &PhantomGeometry,
    dims: VolumeDims,
    ed_frame: u32,
    es_frame: u32,
) -> Volume4D {
    let span = (es_frame as f64 - ed_frame as f64).abs().max(1.0);
    Volume4D::from_fn(dims, |s, t, x, y| {
        let phase = 1.0 - ((t as f64 - es_frame as f64).abs() / span).min(1.0);
        let g = slice_geometry(geometry, s, dims.n_slices).at_phase(phase);
        label_intensity(g.label_at(x, y)) + 200.0 * ((x * 7 + y * 13 + t as usize) % 5) as f64
    })
}

fn slice_geometry(geometry: &PhantomGeometry, slice: u32, n_slices: u32) -> PhantomGeometry {
    let taper = 1.0 - 0.05 * (slice as f64 - n_slices as f64 / 2.0).abs();
    PhantomGeometry {
        lv_radius: geometry.lv_radius * taper,
        ..*geometry
    }
}

/// Writes a phantom subject under `root`: the cine volume as
/// `<id>/s{slice}_t{frame}.png` and ED masks as `<id>_mask/s{slice}.png`.
/// The record's frame counts are honoured and its paths are set relative
/// to `root`.
pub fn write_subject(
    root: &Path,
    record: &mut SubjectRecord,
    side: usize,
    seed: u64,
    index: u64,
) -> Result<(), Error> {
    let geometry = PhantomGeometry::random(side, seed, index);
    let dims = VolumeDims {
        n_slices: record.n_slices,
        n_frames: record.n_frames,
        width: side,
        height: side,
    };
    let volume = phantom_volume(&geometry, dims, record.ed_frame, record.es_frame);
    let image_dir = root.join(&record.subject_id);
    let mask_dir = root.join(format!("{}_mask", record.subject_id));
    for dir in [&image_dir, &mask_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for s in 0..dims.n_slices {
        for t in 0..dims.n_frames {
            imageio::write_gray16(&PngVolume::frame_path(&image_dir, s, t), &volume.frame(s, t)?)?;
        }
        let mask = slice_geometry(&geometry, s, dims.n_slices).mask(side, side);
        imageio::write_mask(&mask_dir.join(format!("s{s:02}.png")), &mask)?;
    }
    record.image_path = record.subject_id.clone();
    record.mask_path = format!("{}_mask", record.subject_id);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_has_all_structures() {
        let m = PhantomGeometry::centred(64).mask(64, 64);
        assert_eq!(m.label_set().len(), 4);
        let g = PhantomGeometry::random(64, 1, 2);
        assert_eq!(g, PhantomGeometry::random(64, 1, 2));
        assert_ne!(g, PhantomGeometry::random(64, 1, 3));
    }
}
