//! Dense tensors, reverse-mode differentiation, and hypersphere geometry.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::matmul_raw;

use crate::error::{Error, Result};

/// Norms at or below this are treated as having no direction.
pub const EPSILON_NORM: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn checked_norm(v: &[f64]) -> Result<f64> {
    let n = norm(v);
    if !(n > EPSILON_NORM) {
        return Err(Error::DegenerateInput(format!("vector norm {n:e} is below {EPSILON_NORM:e}")));
    }
    Ok(n)
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = checked_norm(v)?;
    Ok(v.iter().map(|x| x / n).collect())
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", format!("lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (checked_norm(a)?, checked_norm(b)?);
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Angle between two vectors in `[0, π]`.
pub fn angular_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(cosine_similarity(a, b)?.acos())
}

/// Compensated running sum, so that means over reordered samples agree to
/// within a few ulps.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::new();
        for x in iter {
            k.add(x);
        }
        k
    }
}

pub(crate) fn kahan_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut k = KahanSum::new();
    let mut n = 0usize;
    for v in values {
        k.add(v);
        n += 1;
    }
    (n > 0).then(|| k.value() / n as f64)
}
