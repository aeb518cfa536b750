use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImageShape, Sample};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Zero-pad by `pad` pixels on every side, then crop a `size x size` window
/// at a random offset. `size` must equal the image side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub pad: usize,
    pub size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    #[serde(default)]
    pub crop: Option<CropSpec>,
    #[serde(default)]
    pub hflip_prob: f64,
    #[serde(default)]
    pub noise_std: f64,
    /// Separates augmentation randomness from every other seeded stream.
    #[serde(default)]
    pub stream: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            crop: None,
            hflip_prob: 0.0,
            noise_std: 0.0,
            stream: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::invalid(format!("hflip_prob {} outside [0, 1]", self.hflip_prob)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(format!("noise_std must be nonnegative, got {}", self.noise_std)));
        }
        Ok(())
    }

    pub fn needs_image(&self) -> bool {
        self.crop.is_some() || self.hflip_prob > 0.0
    }
}

/// Per-sample generator, so a view depends only on (seed, epoch, sample).
pub fn augment_rng(train_seed: u64, spec: &AugmentationSpec, epoch: usize, sample_index: usize) -> Rng {
    let base = seed::derive_indexed(train_seed ^ seed::mix(spec.stream), "augment", epoch as u64);
    seed::rng(seed::mix(base ^ seed::mix(sample_index as u64 + 1)))
}

fn pixel(img: &ImageShape, r: usize, c: usize, ch: usize) -> usize {
    (r * img.cols + c) * img.channels + ch
}

/// Produces one augmented view. Labels are preserved; image data is clipped
/// to `[0, 1]` after noise, vector data is not clipped.
pub fn augment(sample: &Sample, spec: &AugmentationSpec, image: Option<ImageShape>, rng: &mut Rng) -> Result<Sample> {
    spec.validate()?;
    let mut input = sample.input.clone();

    if spec.needs_image() {
        let img = image.ok_or_else(|| Error::invalid("crop and flip require image data"))?;
        if img.len() != input.len() || !img.is_square() {
            return Err(Error::invalid(format!(
                "crop and flip require a square image, got {img:?} for {} values",
                input.len()
            )));
        }
        if let Some(crop) = spec.crop {
            if crop.size != img.rows {
                return Err(Error::invalid(format!(
                    "crop size {} must equal the image side {}",
                    crop.size, img.rows
                )));
            }
            let dr = rng.random_range(0..=2 * crop.pad);
            let dc = rng.random_range(0..=2 * crop.pad);
            let mut out = vec![0.0; input.len()];
            for r in 0..img.rows {
                for c in 0..img.cols {
                    // position in the padded canvas, then back to the source
                    let (sr, sc) = ((r + dr) as isize - crop.pad as isize, (c + dc) as isize - crop.pad as isize);
                    if sr < 0 || sc < 0 || sr >= img.rows as isize || sc >= img.cols as isize {
                        continue;
                    }
                    for ch in 0..img.channels {
                        out[pixel(&img, r, c, ch)] = input[pixel(&img, sr as usize, sc as usize, ch)];
                    }
                }
            }
            input = out;
        }
        if spec.hflip_prob > 0.0 && rng.random_bool(spec.hflip_prob) {
            input = hflip(&input, &img);
        }
    }

    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
        for v in input.iter_mut() {
            *v += normal.sample(rng);
        }
        if image.is_some() {
            input.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
    }
    Ok(Sample {
        input,
        label: sample.label,
    })
}

fn hflip(input: &[f64], img: &ImageShape) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for r in 0..img.rows {
        for c in 0..img.cols {
            for ch in 0..img.channels {
                out[pixel(img, r, img.cols - 1 - c, ch)] = input[pixel(img, r, c, ch)];
            }
        }
    }
    out
}
