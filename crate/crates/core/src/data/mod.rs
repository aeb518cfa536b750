//! Datasets: synthetic Gaussian classes, IDX (MNIST) ingestion, view
//! augmentation, rotated-class synthesis, and validation-driven loss search.

mod augment;
mod idx;
mod rotate;
mod search;
mod synth;

pub use augment::{augment, augment_rng, AugmentationSpec, CropSpec};
pub use idx::{load_idx, parse_idx, write_idx_images, write_idx_labels};
pub use rotate::{rotate_class_synthesis, rotate_image};
pub use search::{hyperparam_search, SearchCandidate, SearchOptions, SearchOutcome};
pub use synth::{split_holdout, synth_gaussian_classes, SynthSpec};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: usize,
}

/// Layout of image inputs: row-major, channels interleaved (HWC).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    image: Option<ImageShape>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, image: Option<ImageShape>) -> Result<Self> {
        let dim = match (samples.first(), image) {
            (Some(s), _) => s.input.len(),
            (None, Some(img)) => img.len(),
            (None, None) => 0,
        };
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.input.len() != dim) {
            return Err(Error::invalid(format!(
                "sample {i} has dimension {}, expected {dim}",
                s.input.len()
            )));
        }
        if let Some(img) = image {
            if img.len() != dim {
                return Err(Error::invalid(format!(
                    "image shape {img:?} does not match input dimension {dim}"
                )));
            }
        }
        Ok(Dataset { samples, dim, image })
    }

    pub fn empty_like(&self) -> Self {
        Dataset {
            samples: Vec::new(),
            dim: self.dim,
            image: self.image,
        }
    }

    pub fn with_image_shape(self, image: ImageShape) -> Result<Self> {
        Dataset::new(self.samples, Some(image))
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn image(&self) -> Option<ImageShape> {
        self.image
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Sorted distinct class ids.
    pub fn classes(&self) -> Vec<usize> {
        self.by_class().into_keys().collect()
    }

    /// Sample indices grouped by class, in sample order.
    pub fn by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            m.entry(s.label).or_default().push(i);
        }
        m
    }

    /// Labels form `0..C` with every class present.
    pub fn has_contiguous_labels(&self) -> bool {
        self.classes().iter().enumerate().all(|(i, &c)| i == c)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            dim: self.dim,
            image: self.image,
        }
    }

    pub fn filter_classes(&self, classes: &[usize]) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| classes.contains(&s.label))
                .cloned()
                .collect(),
            dim: self.dim,
            image: self.image,
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if !self.is_empty() && !other.is_empty() && self.dim != other.dim {
            return Err(Error::invalid(format!(
                "cannot concatenate dimension {} with {}",
                self.dim, other.dim
            )));
        }
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        let dim = if self.is_empty() { other.dim } else { self.dim };
        Ok(Dataset {
            samples,
            dim,
            image: self.image.or(other.image),
        })
    }

    /// `[n, dim]` matrix of inputs.
    pub fn inputs(&self) -> Result<Tensor> {
        Tensor::from_rows(&self.samples.iter().map(|s| s.input.as_slice()).collect::<Vec<_>>())
    }

    pub fn inputs_of(&self, indices: &[usize]) -> Result<Tensor> {
        Tensor::from_rows(&indices.iter().map(|&i| self.samples[i].input.as_slice()).collect::<Vec<_>>())
    }

    /// Writes `label,x0,x1,...` rows with no header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.samples {
            write!(w, "{}", s.label)?;
            for v in &s.input {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Dataset> {
        let mut samples = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let parse_err = |what: &str| Error::invalid(format!("line {}: bad {what}", lineno + 1));
            let label = fields
                .next()
                .and_then(|f| f.trim().parse::<usize>().ok())
                .ok_or_else(|| parse_err("label"))?;
            let input = fields
                .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err("value")))
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample { input, label });
        }
        Dataset::new(samples, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::new(
            vec![
                Sample { input: vec![0.1, -2.5], label: 0 },
                Sample { input: vec![1e-17, 3.0], label: 1 },
            ],
            None,
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_ragged_samples() {
        let r = Dataset::new(
            vec![
                Sample { input: vec![0.0, 1.0], label: 0 },
                Sample { input: vec![0.0], label: 1 },
            ],
            None,
        );
        assert!(r.is_err());
    }

    #[test]
    fn class_grouping() {
        let ds = Dataset::new(
            (0..6).map(|i| Sample { input: vec![i as f64], label: i % 3 }).collect(),
            None,
        )
        .unwrap();
        assert_eq!(ds.classes(), vec![0, 1, 2]);
        assert!(ds.has_contiguous_labels());
        assert_eq!(ds.by_class()[&1], vec![1, 4]);
        assert_eq!(ds.filter_classes(&[2]).len(), 2);
        assert!(!ds.filter_classes(&[0, 2]).has_contiguous_labels());
    }
}
