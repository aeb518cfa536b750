//! Representation-learning objectives over unit features.
//!
//! All losses are recorded on a [`Tape`] so they can be differentiated with
//! respect to features, classifier weights, and (through the encoder) the
//! network parameters. Cosine similarity normalizes both arguments, so raw
//! classifier weights can be passed as-is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Softmax temperature; logits are `cos / tau`.
    pub tau: f64,
    /// Subtracted from the true-class cosine before scaling. Zero disables.
    #[serde(default)]
    pub margin: f64,
    #[serde(default)]
    pub lambda_ssc: f64,
    #[serde(default)]
    pub lambda_inter: f64,
    #[serde(default)]
    pub lambda_intra: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 1.0 / 16.0,
            margin: 0.0,
            lambda_ssc: 0.0,
            lambda_inter: 0.0,
            lambda_intra: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !self.margin.is_finite() {
            return Err(Error::invalid("margin must be finite"));
        }
        for (name, w) in [
            ("lambda_ssc", self.lambda_ssc),
            ("lambda_inter", self.lambda_inter),
            ("lambda_intra", self.lambda_intra),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a nonnegative number, got {w}")));
            }
        }
        Ok(())
    }
}

/// `[n, m]` matrix of cosine similarities between rows of `a` and rows of `b`.
pub fn cosine_matrix(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let na = tape.normalize_rows(a)?;
    let nb = if a == b { na } else { tape.normalize_rows(b)? };
    tape.matmul_bt(na, nb)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// Softmax cross-entropy over cosine logits, averaged over the batch. The
/// true-class logit is `(cos - margin) / tau`; all others are `cos / tau`.
pub fn sce_loss(
    tape: &mut Tape,
    features: Var,
    labels: &[usize],
    classifier: Var,
    tau: f64,
    margin: f64,
) -> Result<Var> {
    check_tau(tau)?;
    let b = tape.value(features).rows();
    let c = tape.value(classifier).rows();
    if !tape.value(classifier).is_matrix() || c < 2 {
        return Err(Error::invalid(format!("classifier needs at least 2 classes, got {c}")));
    }
    if labels.len() != b || b == 0 {
        return Err(Error::shape("sce_loss", format!("{} labels for {b} features", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let cos = cosine_matrix(tape, features, classifier)?;
    let shifted = if margin != 0.0 {
        let mut m = Tensor::zeros(vec![b, c]);
        for (i, &y) in labels.iter().enumerate() {
            m.data_mut()[i * c + y] = margin;
        }
        let m = tape.constant(m);
        tape.sub(cos, m)?
    } else {
        cos
    };
    let logits = tape.scale(shifted, 1.0 / tau)?;
    let lse = tape.log_sum_exp_rows(logits, None)?;
    let picked = tape.gather(logits, labels.iter().enumerate().map(|(i, &y)| i * c + y).collect())?;
    let nll = tape.sub(lse, picked)?;
    tape.mean(nll)
}

/// InfoNCE over positive pairs `(i, j)`: every `k != i` in the batch is a
/// candidate in the denominator. Averaged over the listed pairs.
pub fn ssc_loss(tape: &mut Tape, features: Var, pairs: &[(usize, usize)], tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let b = tape.value(features).rows();
    if b < 2 {
        return Err(Error::invalid(format!("ssc_loss needs at least 2 samples, got {b}")));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("ssc_loss needs at least one positive pair"));
    }
    for &(i, j) in pairs {
        if i >= b || j >= b {
            return Err(Error::invalid(format!("pair ({i}, {j}) out of range for batch of {b}")));
        }
        if i == j {
            return Err(Error::invalid(format!("pair ({i}, {j}) is not a pair of distinct samples")));
        }
    }
    let cos = cosine_matrix(tape, features, features)?;
    let logits = tape.scale(cos, 1.0 / tau)?;
    let mask = (0..b * b).map(|idx| idx / b != idx % b).collect();
    let lse = tape.log_sum_exp_rows(logits, Some(mask))?;
    let den = tape.gather(lse, pairs.iter().map(|&(i, _)| i).collect())?;
    let num = tape.gather(logits, pairs.iter().map(|&(i, j)| i * b + j).collect())?;
    let nll = tape.sub(den, num)?;
    tape.mean(nll)
}

fn pair_indices(labels: &[usize], b: usize, same: bool) -> Vec<usize> {
    let mut idx = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if (labels[i] == labels[j]) == same {
                idx.push(i * b + j);
            }
        }
    }
    idx
}

fn negative_mean_pair_similarity(tape: &mut Tape, features: Var, labels: &[usize], same: bool) -> Result<Var> {
    let b = tape.value(features).rows();
    if labels.len() != b {
        return Err(Error::shape("pair_loss", format!("{} labels for {b} features", labels.len())));
    }
    let idx = pair_indices(labels, b, same);
    if idx.is_empty() {
        return Err(if same { Error::NoIntraPair } else { Error::NoInterPair });
    }
    let cos = cosine_matrix(tape, features, features)?;
    let sims = tape.gather(cos, idx)?;
    let mean = tape.mean(sims)?;
    tape.scale(mean, -1.0)
}

/// Negative mean cosine similarity over unordered pairs with different labels.
pub fn inter_loss(tape: &mut Tape, features: Var, labels: &[usize]) -> Result<Var> {
    negative_mean_pair_similarity(tape, features, labels, false)
}

/// Negative mean cosine similarity over unordered pairs sharing a label.
pub fn intra_loss(tape: &mut Tape, features: Var, labels: &[usize]) -> Result<Var> {
    negative_mean_pair_similarity(tape, features, labels, true)
}

/// One training batch as seen by [`total_loss`].
#[derive(Clone, Debug)]
pub struct LossBatch<'a> {
    /// `[B, d]` features of the original samples.
    pub features: Var,
    pub labels: &'a [usize],
    /// `[B, d]` features of one augmented view per sample; row `i` is the
    /// positive partner of row `i` of `features`. Required when `lambda_ssc > 0`.
    pub augmented: Option<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub value: f64,
    pub weight: f64,
}

impl LossTerm {
    pub fn contribution(&self) -> f64 {
        self.value * self.weight
    }
}

/// Per-term values of the combined objective. Inactive terms are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ssc: Option<LossTerm>,
    pub inter: Option<LossTerm>,
    pub intra: Option<LossTerm>,
    pub total: f64,
}

/// Positive pairs linking row `i` with row `B + i` in both directions.
pub fn view_pairs(b: usize) -> Vec<(usize, usize)> {
    (0..b).flat_map(|i| [(i, b + i), (b + i, i)]).collect()
}

/// `L_ce + λ_ssc·L_ssc + λ_inter·L_inter + λ_intra·L_intra`.
pub fn total_loss(
    tape: &mut Tape,
    batch: &LossBatch<'_>,
    config: &LossConfig,
    classifier: Var,
) -> Result<(Var, LossBreakdown)> {
    config.validate()?;
    let ce = sce_loss(tape, batch.features, batch.labels, classifier, config.tau, config.margin)?;
    let mut total = ce;
    let mut breakdown = LossBreakdown {
        ce: tape.value(ce).item()?,
        ssc: None,
        inter: None,
        intra: None,
        total: 0.0,
    };

    if config.lambda_ssc > 0.0 {
        let aug = batch
            .augmented
            .ok_or_else(|| Error::invalid("lambda_ssc > 0 requires augmented views"))?;
        let b = tape.value(batch.features).rows();
        let both = tape.concat_rows(batch.features, aug)?;
        let l = ssc_loss(tape, both, &view_pairs(b), config.tau)?;
        breakdown.ssc = Some(LossTerm {
            value: tape.value(l).item()?,
            weight: config.lambda_ssc,
        });
        let w = tape.scale(l, config.lambda_ssc)?;
        total = tape.add(total, w)?;
    }
    if config.lambda_inter > 0.0 {
        let l = inter_loss(tape, batch.features, batch.labels)?;
        breakdown.inter = Some(LossTerm {
            value: tape.value(l).item()?,
            weight: config.lambda_inter,
        });
        let w = tape.scale(l, config.lambda_inter)?;
        total = tape.add(total, w)?;
    }
    if config.lambda_intra > 0.0 {
        let l = intra_loss(tape, batch.features, batch.labels)?;
        breakdown.intra = Some(LossTerm {
            value: tape.value(l).item()?,
            weight: config.lambda_intra,
        });
        let w = tape.scale(l, config.lambda_intra)?;
        total = tape.add(total, w)?;
    }
    breakdown.total = tape.value(total).item()?;
    Ok((total, breakdown))
}

/// Evaluates [`sce_loss`] on plain tensors.
pub fn sce_loss_value(features: &Tensor, labels: &[usize], classifier: &Tensor, tau: f64, margin: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let c = tape.constant(classifier.clone());
    let l = sce_loss(&mut tape, f, labels, c, tau, margin)?;
    tape.value(l).item()
}

pub fn ssc_loss_value(features: &Tensor, pairs: &[(usize, usize)], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let l = ssc_loss(&mut tape, f, pairs, tau)?;
    tape.value(l).item()
}

pub fn inter_loss_value(features: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let l = inter_loss(&mut tape, f, labels)?;
    tape.value(l).item()
}

pub fn intra_loss_value(features: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let l = intra_loss(&mut tape, f, labels)?;
    tape.value(l).item()
}
