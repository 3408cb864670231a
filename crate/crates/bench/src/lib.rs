//! Input builders shared by the benchmarks in `benches/`.

use rand::Rng;

use fairaug_core::genbridge::mock_render;
use fairaug_core::linalg::Matrix;
use fairaug_core::phantom::PhantomGeometry;
use fairaug_core::preprocess::{Image2D, Provenance};
use fairaug_core::{rng, LabelMask, StackedImage};

/// Scores in [0, 1) with every fourth one tied, plus balanced labels.
pub fn scored(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng::stream(seed, 0);
    let scores = (0..n)
        .map(|i| if i % 4 == 0 { 0.5 } else { r.random() })
        .collect();
    let labels = (0..n).map(|i| i % 2 == 0).collect();
    (scores, labels)
}

pub fn spd(dim: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 1);
    let x = Matrix::from_fn(dim, |_, _| r.random_range(-1.0..1.0));
    x.mul(&x.transpose())
        .and_then(|xx| xx.add(&Matrix::identity(dim).scale(0.1)))
        .expect("square operands")
}

/// A mock-rendered phantom and its mask.
pub fn phantom_image(side: usize, seed: u64) -> (StackedImage, LabelMask) {
    let mask = PhantomGeometry::random(side, seed, 0).mask(side, side);
    let gray = mock_render(&mask, 2, seed);
    let img = Image2D::new(side, side, gray.iter().map(|&g| f64::from(g)).collect())
        .expect("valid image");
    let stacked = StackedImage::new(
        [img.clone(), img.clone(), img],
        Provenance {
            subject_id: "bench".into(),
            slice: 0,
            ed_frame: 0,
            es_frame: 1,
            temporal_offset: 0,
        },
    )
    .expect("equal channels");
    (stacked, mask)
}
