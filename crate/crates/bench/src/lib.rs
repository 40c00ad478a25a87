//! Shared fixtures for the benchmarks: a seeded toy backend with a
//! 100-class vocabulary and a structured test image.

use fcl_core::encoders::{
    ImageTensor, ToyTextConfig, ToyTextEncoder, ToyVisualConfig, ToyVisualEncoder, DEFAULT_TEMPLATE,
};

pub const N_CLASSES: usize = 100;

pub fn toy_backend() -> (ToyVisualEncoder, ToyTextEncoder) {
    let visual = ToyVisualEncoder::new(ToyVisualConfig::default()).expect("default visual config");
    let cfg = ToyTextConfig::default();
    let names = (0..N_CLASSES).map(|i| format!("class {i}")).collect();
    let vocab = ToyTextEncoder::hashed_vocabulary(&cfg, names, DEFAULT_TEMPLATE).expect("vocabulary");
    (visual, ToyTextEncoder::new(cfg, vocab).expect("text encoder"))
}

/// A 48x40 image with diagonal colour bands.
pub fn test_image() -> ImageTensor {
    let (h, w) = (48, 40);
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let band = ((x + 2 * y) / 6 % 4) as f64 / 3.0;
            data.extend_from_slice(&[band, 1.0 - band, (x as f64) / w as f64]);
        }
    }
    ImageTensor::new(h, w, data).expect("valid image")
}
