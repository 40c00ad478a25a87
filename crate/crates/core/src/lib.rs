//! Fair context learning for episodic test-time adaptation of
//! vision-language classifiers.
//!
//! An episode explores augmented views of one test image to shortlist
//! candidate classes, localizes the image evidence those candidates share,
//! calibrates the text context so shared evidence no longer favours any one
//! candidate, and predicts again with the calibrated context.

pub mod augment;
pub mod calibrate;
pub mod encoders;
pub mod error;
pub mod evidence;
pub mod explore;
pub mod numerics;
pub mod pipeline;
pub mod selftest;
pub mod theorylab;

pub use error::{FclError, Result};
