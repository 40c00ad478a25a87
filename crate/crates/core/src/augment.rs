//! Stochastic views of a test image: random resized crops plus horizontal
//! flips, resampled bilinearly to the encoder resolution.
//!
//! Resampling uses half-pixel centres: output pixel `o` samples source
//! coordinate `(o + 0.5) * in / out - 0.5`, clamped to the crop, and the two
//! neighbours are blended as `a + t * (b - a)` so constant regions stay
//! exactly constant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::ImageTensor;
use crate::error::{FclError, Result};
use crate::numerics::RngStream;

const MAX_CROP_ATTEMPTS: usize = 10;
const ASPECT_RANGE: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub n_views: usize,
    /// Crop area as a fraction of the source area, `(min, max)`.
    pub crop_scale: (f64, f64),
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            n_views: 64,
            crop_scale: (0.5, 1.0),
            flip_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(FclError::invalid("augment.n_views", "must be >= 1"));
        }
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(FclError::invalid(
                "augment.crop_scale",
                format!("need 0 < min <= max <= 1, got ({lo}, {hi})"),
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(FclError::invalid(
                "augment.flip_probability",
                format!("must be in [0, 1], got {}", self.flip_probability),
            ));
        }
        Ok(())
    }
}

/// Crop rectangle in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRect {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            top: 0,
            left: 0,
            height,
            width,
        }
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.height > 0 && self.width > 0 && self.top + self.height <= height && self.left + self.width <= width
    }
}

/// The augmented views of one image; view 0 is the resized original.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<ImageTensor>,
    pub crops: Vec<CropRect>,
    pub flips: Vec<bool>,
    /// `(seed, stream id)` of the generating stream.
    pub provenance: (u64, u64),
}

impl ViewSet {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn original(&self) -> &ImageTensor {
        &self.views[0]
    }
}

/// Samples a crop with area fraction uniform in `scale` and aspect ratio
/// uniform in `[3/4, 4/3]`, falling back to the full frame after ten misses.
pub fn sample_crop(height: usize, width: usize, scale: (f64, f64), rng: &mut RngStream) -> CropRect {
    let area = (height * width) as f64;
    for _ in 0..MAX_CROP_ATTEMPTS {
        let target = area * rng.random_range(scale.0..=scale.1);
        let ratio = rng.random_range(ASPECT_RANGE.0..=ASPECT_RANGE.1);
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w == 0 || h == 0 || w > width || h > height {
            continue;
        }
        let top = rng.random_range(0..=height - h);
        let left = rng.random_range(0..=width - w);
        return CropRect {
            top,
            left,
            height: h,
            width: w,
        };
    }
    CropRect::full(height, width)
}

fn source_coord(out: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let s = (out as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    let s = s.clamp(0.0, (in_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resample of `crop` from `src` to `out_h x out_w`, optionally
/// mirrored left-right.
pub fn resize_crop(src: &ImageTensor, crop: CropRect, out_h: usize, out_w: usize, flip: bool) -> Result<ImageTensor> {
    if !crop.fits_in(src.height(), src.width()) {
        return Err(FclError::Degenerate(format!("crop {crop:?} outside image")));
    }
    if out_h == 0 || out_w == 0 {
        return Err(FclError::Degenerate("zero output size".into()));
    }
    let xs: Vec<_> = (0..out_w).map(|x| source_coord(x, crop.width, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for oy in 0..out_h {
        let (y0, y1, ty) = source_coord(oy, crop.height, out_h);
        for ox in 0..out_w {
            let sx = if flip { out_w - 1 - ox } else { ox };
            let (x0, x1, tx) = xs[sx];
            let p00 = src.pixel(crop.top + y0, crop.left + x0);
            let p01 = src.pixel(crop.top + y0, crop.left + x1);
            let p10 = src.pixel(crop.top + y1, crop.left + x0);
            let p11 = src.pixel(crop.top + y1, crop.left + x1);
            for c in 0..3 {
                let top = lerp(p00[c], p01[c], tx);
                let bottom = lerp(p10[c], p11[c], tx);
                data.push(lerp(top, bottom, ty).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(out_h, out_w, data)
}

pub fn resize(src: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    resize_crop(src, CropRect::full(src.height(), src.width()), out_h, out_w, false)
}

/// Generates `cfg.n_views` views of `image` at `output_size`.
pub fn generate_views(
    image: &ImageTensor,
    cfg: &AugmentConfig,
    output_size: (usize, usize),
    rng: &mut RngStream,
) -> Result<ViewSet> {
    cfg.validate()?;
    if image.num_pixels() < 2 {
        return Err(FclError::Degenerate("image must be larger than 1x1".into()));
    }
    let (out_h, out_w) = output_size;
    let (h, w) = (image.height(), image.width());
    let mut views = Vec::with_capacity(cfg.n_views);
    let mut crops = Vec::with_capacity(cfg.n_views);
    let mut flips = Vec::with_capacity(cfg.n_views);
    views.push(resize(image, out_h, out_w)?);
    crops.push(CropRect::full(h, w));
    flips.push(false);
    for _ in 1..cfg.n_views {
        let crop = sample_crop(h, w, cfg.crop_scale, rng);
        let flip = rng.random::<f64>() < cfg.flip_probability;
        views.push(resize_crop(image, crop, out_h, out_w, flip)?);
        crops.push(crop);
        flips.push(flip);
    }
    Ok(ViewSet {
        views,
        crops,
        flips,
        provenance: (rng.seed(), rng.stream_id()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient_image(h: usize, w: usize) -> ImageTensor {
        let data = (0..h * w)
            .flat_map(|i| {
                let (y, x) = (i / w, i % w);
                [y as f64 / h as f64, x as f64 / w as f64, 0.5]
            })
            .collect();
        ImageTensor::new(h, w, data).unwrap()
    }

    #[test]
    fn single_view_is_resized_original() {
        let img = gradient_image(10, 12);
        let cfg = AugmentConfig {
            n_views: 1,
            ..Default::default()
        };
        let vs = generate_views(&img, &cfg, (8, 8), &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(vs.len(), 1);
        assert_eq!(vs.views[0], resize(&img, 8, 8).unwrap());
    }

    #[test]
    fn identity_resize_is_exact() {
        let img = gradient_image(7, 9);
        assert_eq!(resize(&img, 7, 9).unwrap(), img);
    }

    #[test]
    fn deterministic_given_stream() {
        let img = gradient_image(20, 16);
        let cfg = AugmentConfig {
            n_views: 16,
            ..Default::default()
        };
        let a = generate_views(&img, &cfg, (8, 8), &mut RngStream::new(5, 2)).unwrap();
        let b = generate_views(&img, &cfg, (8, 8), &mut RngStream::new(5, 2)).unwrap();
        assert_eq!(a, b);
        let c = generate_views(&img, &cfg, (8, 8), &mut RngStream::new(5, 3)).unwrap();
        assert_ne!(a.views, c.views);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = ImageTensor::filled(13, 17, [0.3, 0.7, 0.1]).unwrap();
        let cfg = AugmentConfig {
            n_views: 32,
            ..Default::default()
        };
        let vs = generate_views(&img, &cfg, (9, 11), &mut RngStream::new(2, 0)).unwrap();
        for v in &vs.views {
            for px in v.data().chunks(3) {
                assert_eq!(px, [0.3, 0.7, 0.1]);
            }
        }
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = gradient_image(4, 6);
        let crop = CropRect::full(4, 6);
        let a = resize_crop(&img, crop, 4, 6, false).unwrap();
        let b = resize_crop(&img, crop, 4, 6, true).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(a.pixel(y, x), b.pixel(y, 5 - x));
            }
        }
    }

    #[test]
    fn rejects_bad_config_and_tiny_images() {
        let img = ImageTensor::filled(1, 1, [0.5; 3]).unwrap();
        assert!(generate_views(&img, &AugmentConfig::default(), (4, 4), &mut RngStream::new(0, 0)).is_err());
        let bad = AugmentConfig {
            crop_scale: (0.0, 1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            flip_probability: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            n_views: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tiny_sources_fall_back_to_full_frame() {
        // A 1x2 image cannot fit most sampled crops; every crop must still be valid.
        let mut rng = RngStream::new(9, 9);
        for _ in 0..200 {
            let c = sample_crop(1, 2, (0.5, 1.0), &mut rng);
            assert!(c.fits_in(1, 2));
        }
    }

    proptest! {
        #[test]
        fn crops_lie_inside_source(h in 1usize..300, w in 1usize..300, seed in any::<u64>(), lo in 0.05f64..1.0) {
            let mut rng = RngStream::new(seed, 0);
            for _ in 0..8 {
                let c = sample_crop(h, w, (lo, 1.0), &mut rng);
                prop_assert!(c.fits_in(h, w), "{:?} in {}x{}", c, h, w);
            }
        }

        #[test]
        fn views_are_finite_in_range_and_shaped(seed in any::<u64>(), oh in 1usize..12, ow in 1usize..12) {
            let img = gradient_image(15, 10);
            let cfg = AugmentConfig { n_views: 6, ..Default::default() };
            let vs = generate_views(&img, &cfg, (oh, ow), &mut RngStream::new(seed, 1)).unwrap();
            prop_assert_eq!(vs.len(), 6);
            for v in &vs.views {
                prop_assert_eq!((v.height(), v.width()), (oh, ow));
                prop_assert!(v.data().iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
            }
        }
    }
}
