use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_idx, split_holdout, synth_gaussian_classes, AugmentationSpec, Dataset, ImageShape, SynthSpec};
use crate::error::{Error, Result};
use crate::ib::IbPlaneConfig;
use crate::losses::LossConfig;
use crate::protocol::{SplitSpec, TrainConfig};

/// Where train and test data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Gaussian clusters; each class gets `train_per_class + test_per_class`
    /// samples and the test part is drawn at random.
    Synthetic {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        input_dim: usize,
        center_separation: f64,
        cluster_std: f64,
        seed: u64,
        #[serde(default)]
        image: Option<ImageShape>,
    },
    /// IDX image/label files for the train and test splits.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl DatasetSpec {
    /// Returns `(train, test)`.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Synthetic {
                classes,
                train_per_class,
                test_per_class,
                input_dim,
                center_separation,
                cluster_std,
                seed,
                image,
            } => {
                let all = synth_gaussian_classes(&SynthSpec {
                    classes: *classes,
                    per_class: train_per_class + test_per_class,
                    input_dim: *input_dim,
                    center_separation: *center_separation,
                    cluster_std: *cluster_std,
                    seed: *seed,
                })?;
                let all = match image {
                    Some(shape) => all.with_image_shape(*shape)?,
                    None => all,
                };
                split_holdout(&all, *test_per_class, *seed)
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok((
                load_idx(train_images, train_labels)?,
                load_idx(test_images, test_labels)?,
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    /// Hidden layer widths; the input width comes from the data.
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

fn yes() -> bool {
    true
}

fn default_bins() -> usize {
    36
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricToggles {
    #[serde(default = "yes")]
    pub transferability: bool,
    #[serde(default = "yes")]
    pub spread: bool,
    /// Only produced for 2-dimensional embeddings.
    #[serde(default = "yes")]
    pub histogram: bool,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub features: bool,
    #[serde(default)]
    pub ib: bool,
    #[serde(default)]
    pub ib_config: IbPlaneConfig,
}

impl Default for MetricToggles {
    fn default() -> Self {
        MetricToggles {
            transferability: true,
            spread: true,
            histogram: true,
            histogram_bins: default_bins(),
            features: false,
            ib: false,
            ib_config: IbPlaneConfig::default(),
        }
    }
}

fn default_seeds() -> usize {
    3
}

/// A complete, serializable experiment description. A run is a pure
/// function of this document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub encoder: EncoderSpec,
    pub loss: LossConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentationSpec,
    #[serde(default)]
    pub metrics: MetricToggles,
    /// Independent trials; results are reported as mean and std.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

pub const PRESETS: [&str; 3] = ["baseline", "baseline_rs", "closer"];

pub const BASE_TAU: f64 = 1.0 / 16.0;
pub const LOW_TAU: f64 = 1.0 / 32.0;
pub const DEFAULT_LAMBDA_SSC: f64 = 0.1;
pub const DEFAULT_LAMBDA_INTER: f64 = 1.0;

/// Desk-scale synthetic setting: 20 base classes and 10 new classes in two
/// 5-way 5-shot sessions.
pub fn desk_config() -> ExperimentConfig {
    ExperimentConfig {
        name: "baseline".into(),
        dataset: DatasetSpec::Synthetic {
            classes: 30,
            train_per_class: 60,
            test_per_class: 40,
            input_dim: 32,
            center_separation: 3.0,
            cluster_std: 0.8,
            seed: 7,
            image: None,
        },
        split: SplitSpec {
            base_classes: 20,
            ways: 5,
            shots: 5,
            sessions: 2,
        },
        encoder: EncoderSpec {
            hidden: vec![128, 128],
            embed_dim: 16,
        },
        loss: LossConfig {
            tau: BASE_TAU,
            ..LossConfig::default()
        },
        train: TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 0.1,
            ..TrainConfig::default()
        },
        augment: AugmentationSpec {
            noise_std: 0.3,
            ..AugmentationSpec::default()
        },
        metrics: MetricToggles::default(),
        seeds: default_seeds(),
        master_seed: 0,
        output_dir: None,
    }
}

/// Applies one of the three arms to `config`'s loss settings.
pub fn apply_preset(config: &mut ExperimentConfig, name: &str) -> Result<()> {
    let (tau, ssc, inter) = match name {
        "baseline" => (BASE_TAU, 0.0, 0.0),
        "baseline_rs" => (LOW_TAU, DEFAULT_LAMBDA_SSC, 0.0),
        "closer" => (LOW_TAU, DEFAULT_LAMBDA_SSC, DEFAULT_LAMBDA_INTER),
        other => {
            return Err(Error::invalid(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    config.name = name.to_string();
    config.loss.tau = tau;
    config.loss.lambda_ssc = ssc;
    config.loss.lambda_inter = inter;
    Ok(())
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut c = desk_config();
    apply_preset(&mut c, name)?;
    Ok(c)
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        if self.seeds == 0 {
            return Err(Error::invalid("seeds must be at least 1"));
        }
        if self.encoder.embed_dim < 2 || self.encoder.hidden.contains(&0) {
            return Err(Error::invalid("embedding dimension must be >= 2 and hidden widths positive"));
        }
        if self.split.base_classes < 2 {
            return Err(Error::invalid("need at least 2 base classes"));
        }
        if self.metrics.histogram_bins < 4 {
            return Err(Error::invalid("histogram needs at least 4 bins"));
        }
        if let DatasetSpec::Synthetic { classes, train_per_class, test_per_class, input_dim, image, .. } = &self.dataset {
            let needed = self.split.base_classes + self.split.ways * self.split.sessions;
            if needed > *classes {
                return Err(Error::InsufficientClasses {
                    needed,
                    available: *classes,
                });
            }
            if *train_per_class == 0 || *test_per_class == 0 {
                return Err(Error::invalid("synthetic classes need train and test samples"));
            }
            if let Some(shape) = image {
                if shape.len() != *input_dim {
                    return Err(Error::invalid(format!("image shape {shape:?} does not cover {input_dim} inputs")));
                }
            }
        }
        if self.augment.needs_image() {
            let has_image = match &self.dataset {
                DatasetSpec::Synthetic { image, .. } => image.is_some(),
                DatasetSpec::Idx { .. } => true,
            };
            if !has_image {
                return Err(Error::invalid("crop/flip augmentation needs image data"));
            }
        }
        Ok(())
    }

    /// SHA-256 (hex) of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Encoder layer widths for data of `input_dim` features.
    pub fn encoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.encoder.hidden);
        dims.push(self.encoder.embed_dim);
        dims
    }
}
