use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    /// Radius of the sphere the class centers are drawn on.
    pub center_separation: f64,
    /// Isotropic standard deviation around each center.
    pub cluster_std: f64,
    pub seed: u64,
}

/// Gaussian clusters around centers drawn uniformly on a sphere. Samples are
/// ordered class by class.
pub fn synth_gaussian_classes(spec: &SynthSpec) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {}", spec.classes)));
    }
    if spec.per_class == 0 || spec.input_dim == 0 {
        return Err(Error::invalid("per_class and input_dim must be positive"));
    }
    if !(spec.center_separation > 0.0) || !(spec.cluster_std >= 0.0) {
        return Err(Error::invalid(format!(
            "separation must be positive and std nonnegative, got {} / {}",
            spec.center_separation, spec.cluster_std
        )));
    }
    let mut center_rng = seed::rng(seed::derive(spec.seed, "centers"));
    let mut noise_rng = seed::rng(seed::derive(spec.seed, "noise"));
    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        let center = loop {
            let v: Vec<f64> = (0..spec.input_dim).map(|_| StandardNormal.sample(&mut center_rng)).collect();
            let n = crate::numerics::norm(&v);
            if n > 1e-9 {
                break v.into_iter().map(|x| x / n * spec.center_separation).collect::<Vec<_>>();
            }
        };
        for _ in 0..spec.per_class {
            let input = center
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut noise_rng);
                    c + spec.cluster_std * z
                })
                .collect();
            samples.push(Sample { input, label: class });
        }
    }
    Dataset::new(samples, None)
}

/// Moves `holdout_per_class` randomly chosen samples of every class into a
/// second dataset. Classes with too few samples are rejected.
pub fn split_holdout(ds: &Dataset, holdout_per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = seed::rng(seed::derive(seed, "holdout"));
    let mut keep = Vec::new();
    let mut hold = Vec::new();
    for (class, mut idx) in ds.by_class() {
        if idx.len() <= holdout_per_class {
            return Err(Error::InsufficientSamples {
                class,
                needed: holdout_per_class + 1,
                available: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let (h, k) = idx.split_at(holdout_per_class);
        hold.extend_from_slice(h);
        keep.extend_from_slice(k);
    }
    keep.sort_unstable();
    hold.sort_unstable();
    Ok((ds.subset(&keep), ds.subset(&hold)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec {
            classes: 4,
            per_class: 7,
            input_dim: 5,
            center_separation: 3.0,
            cluster_std: 0.5,
            seed: 21,
        }
    }

    #[test]
    fn zero_noise_gives_centers() {
        let ds = synth_gaussian_classes(&SynthSpec { cluster_std: 0.0, ..spec() }).unwrap();
        for idx in ds.by_class().values() {
            let first = &ds.samples()[idx[0]].input;
            assert!((crate::numerics::norm(first) - 3.0).abs() < 1e-12);
            for &i in idx {
                assert_eq!(&ds.samples()[i].input, first);
            }
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_gaussian_classes(&spec()).unwrap();
        let b = synth_gaussian_classes(&spec()).unwrap();
        assert_eq!(a, b);
        assert!(a.has_contiguous_labels());
        for idx in a.by_class().values() {
            assert_eq!(idx.len(), 7);
        }
        let c = synth_gaussian_classes(&SynthSpec { seed: 22, ..spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(synth_gaussian_classes(&SynthSpec { classes: 1, ..spec() }).is_err());
        assert!(synth_gaussian_classes(&SynthSpec { per_class: 0, ..spec() }).is_err());
        assert!(synth_gaussian_classes(&SynthSpec { center_separation: 0.0, ..spec() }).is_err());
        assert!(synth_gaussian_classes(&SynthSpec { cluster_std: -1.0, ..spec() }).is_err());
    }

    #[test]
    fn holdout_split_partitions() {
        let ds = synth_gaussian_classes(&spec()).unwrap();
        let (train, hold) = split_holdout(&ds, 2, 3).unwrap();
        assert_eq!(train.len() + hold.len(), ds.len());
        for idx in hold.by_class().values() {
            assert_eq!(idx.len(), 2);
        }
        assert!(split_holdout(&ds, 7, 3).is_err());
    }
}
