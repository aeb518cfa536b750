use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::ib::IbPoint;
use crate::numerics::{angular_distance, kahan_mean, Tensor};
use crate::protocol::{Prototype, SessionEval};

/// `A_W` of the first session minus `A_W` of the last.
pub fn performance_drop(a_w: &[f64]) -> Result<f64> {
    match a_w {
        [first, .., last] => Ok(first - last),
        _ => Err(Error::invalid(format!(
            "performance drop needs at least 2 sessions, got {}",
            a_w.len()
        ))),
    }
}

fn mean_pairwise_angle(vectors: &[&[f64]]) -> Result<Option<f64>> {
    let mut angles = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            angles.push(angular_distance(vectors[i], vectors[j])?);
        }
    }
    Ok(kahan_mean(angles))
}

/// Transferability from precomputed features: mean nearest-prototype angle
/// of the new-class features, divided by the mean angle between base
/// prototypes.
pub fn transferability_from_features(base_prototypes: &[Vec<f64>], new_features: &Tensor) -> Result<f64> {
    if base_prototypes.len() < 2 {
        return Err(Error::invalid(format!(
            "transferability needs at least 2 base prototypes, got {}",
            base_prototypes.len()
        )));
    }
    if new_features.is_empty() || new_features.rows() == 0 {
        return Err(Error::invalid("transferability needs at least one new-class sample"));
    }
    let protos: Vec<&[f64]> = base_prototypes.iter().map(Vec::as_slice).collect();
    let denominator = mean_pairwise_angle(&protos)?.expect("at least one pair");
    if denominator <= 0.0 {
        return Err(Error::DegenerateInput(
            "all base prototypes point in the same direction".into(),
        ));
    }
    let mut nearest = Vec::with_capacity(new_features.rows());
    for z in new_features.row_iter() {
        let mut best = f64::INFINITY;
        for p in &protos {
            best = best.min(angular_distance(z, p)?);
        }
        nearest.push(best);
    }
    let numerator = kahan_mean(nearest).expect("nonempty");
    Ok(numerator / denominator)
}

pub fn transferability(params: &EncoderParams, base_prototypes: &[Prototype], new_inputs: &Tensor) -> Result<f64> {
    let means: Vec<Vec<f64>> = base_prototypes.iter().map(|p| p.mean.clone()).collect();
    transferability_from_features(&means, &params.embed(new_inputs)?)
}

/// Angular spread statistics. A component is `None` when there is not
/// enough data to define it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    /// Mean over classes of the mean angle between samples and their prototype.
    pub intra: Option<f64>,
    /// Mean angle over all prototype pairs.
    pub inter: Option<f64>,
}

pub fn spread_stats(features: &Tensor, labels: &[usize], prototypes: &[Prototype]) -> Result<Spread> {
    if features.rows() != labels.len() {
        return Err(Error::shape(
            "spread_stats",
            format!("{} features for {} labels", features.rows(), labels.len()),
        ));
    }
    let mut per_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (z, &y) in features.row_iter().zip(labels) {
        let p = prototypes
            .iter()
            .find(|p| p.class_id == y)
            .ok_or(Error::UnseenClass(y))?;
        per_class.entry(y).or_default().push(angular_distance(z, &p.mean)?);
    }
    let class_means: Vec<f64> = per_class
        .into_values()
        .filter(|a| a.len() >= 2)
        .map(|a| kahan_mean(a).expect("nonempty"))
        .collect();
    let means: Vec<&[f64]> = prototypes.iter().map(|p| p.mean.as_slice()).collect();
    Ok(Spread {
        intra: kahan_mean(class_means),
        inter: mean_pairwise_angle(&means)?,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub class_id: usize,
    pub counts: Vec<usize>,
}

/// Bin index of a 2-d feature's polar angle in `[0, 2π)`, half-open bins.
pub fn angle_bin(z: &[f64], bins: usize) -> usize {
    let mut angle = z[1].atan2(z[0]);
    if angle < 0.0 {
        angle += TAU;
    }
    if angle >= TAU {
        angle = 0.0;
    }
    ((angle / TAU * bins as f64).floor() as usize).min(bins - 1)
}

/// Per-class counts of 2-d feature angles. Classes appear in ascending id
/// order.
pub fn angular_histogram(features: &Tensor, labels: &[usize], bins: usize) -> Result<Vec<ClassHistogram>> {
    if features.cols() != 2 {
        return Err(Error::invalid(format!(
            "angular histograms need 2-dimensional features, got {}",
            features.cols()
        )));
    }
    if bins < 4 {
        return Err(Error::invalid(format!("need at least 4 bins, got {bins}")));
    }
    if features.rows() != labels.len() {
        return Err(Error::shape("angular_histogram", "feature/label count mismatch"));
    }
    let mut hist: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (z, &y) in features.row_iter().zip(labels) {
        if z[0] == 0.0 && z[1] == 0.0 {
            return Err(Error::DegenerateInput("zero feature has no angle".into()));
        }
        hist.entry(y).or_insert_with(|| vec![0; bins])[angle_bin(z, bins)] += 1;
    }
    Ok(hist
        .into_iter()
        .map(|(class_id, counts)| ClassHistogram { class_id, counts })
        .collect())
}

/// Everything measured for one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub sessions: Vec<SessionEval>,
    pub pd: Option<f64>,
    pub transferability: Option<f64>,
    pub spread: Option<Spread>,
    pub ib: Option<Vec<IbPoint>>,
}

impl SessionReport {
    pub fn new(sessions: Vec<SessionEval>) -> Self {
        let a_w: Vec<f64> = sessions.iter().map(|s| s.a_w).collect();
        SessionReport {
            pd: performance_drop(&a_w).ok(),
            sessions,
            transferability: None,
            spread: None,
            ib: None,
        }
    }
}
