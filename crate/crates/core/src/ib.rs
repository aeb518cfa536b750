//! Information-bottleneck diagnostics.
//!
//! Two independent views of how much a representation `Z` keeps about the
//! labels `Y` relative to the inputs `X`:
//!
//! * a closed-form lower bound of `I(Y;Z) / I(X;Z)` built from the
//!   log-determinants of per-class and total feature covariances, valid only
//!   while both its numerator and denominator are negative;
//! * a neural estimate of each mutual information via the Donsker-Varadhan
//!   representation, `I(A;B) >= E_joint[T] - log E_marginal[exp T]`, with a
//!   small ReLU statistics network `T`.

use std::collections::BTreeMap;
use std::f64::consts::{E, PI};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::{EncoderParams, Mlp};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};
use crate::optim::Adam;
use crate::seed;

pub const DEFAULT_SHRINKAGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    pub class_ids: Vec<usize>,
    /// `log|Σ_W_i|` in the order of `class_ids`.
    pub log_det_within: Vec<f64>,
    pub log_det_total: f64,
    pub dim: usize,
    pub epsilon: f64,
}

impl CovarianceSummary {
    /// Summary from log-determinants directly, for analysis of hypothetical
    /// covariance structures.
    pub fn from_log_dets(dim: usize, log_det_within: Vec<f64>, log_det_total: f64) -> Result<Self> {
        if dim < 2 || log_det_within.len() < 2 {
            return Err(Error::invalid("need d >= 2 and at least 2 classes"));
        }
        Ok(CovarianceSummary {
            class_ids: (0..log_det_within.len()).collect(),
            log_det_within,
            log_det_total,
            dim,
            epsilon: 0.0,
        })
    }

    pub fn classes(&self) -> usize {
        self.log_det_within.len()
    }
}

/// Sorting rows by their bit patterns makes every accumulation below
/// independent of the caller's sample order.
fn canonical_rows<'a>(rows: &mut [&'a [f64]]) {
    rows.sort_by(|a, b| {
        a.iter()
            .map(|v| v.to_bits())
            .cmp(b.iter().map(|v| v.to_bits()))
    });
}

fn covariance(rows: &[&[f64]], d: usize, epsilon: f64) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1.0);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
        cov[i * d + i] += epsilon;
    }
    cov
}

/// `log|A|` of a symmetric positive-definite matrix via Cholesky.
pub fn log_det_spd(a: &[f64], d: usize) -> Result<f64> {
    if a.len() != d * d {
        return Err(Error::shape("log_det_spd", format!("{} entries for d = {d}", a.len())));
    }
    let mut l = vec![0.0; d * d];
    let mut log_det = 0.0;
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= l[j * d + k] * l[j * d + k];
        }
        if !(s > 0.0) {
            return Err(Error::DegenerateInput(format!(
                "matrix is not positive definite (pivot {j} = {s})"
            )));
        }
        let ljj = s.sqrt();
        l[j * d + j] = ljj;
        log_det += 2.0 * ljj.ln();
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Ok(log_det)
}

/// Per-class and total covariance log-determinants of `features`, with
/// `epsilon` added to every diagonal.
pub fn covariances_with(features: &Tensor, labels: &[usize], epsilon: f64) -> Result<CovarianceSummary> {
    if features.rows() != labels.len() {
        return Err(Error::shape("covariances", "feature/label count mismatch"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("shrinkage must be positive"));
    }
    let d = features.cols();
    if d < 2 {
        return Err(Error::invalid(format!("need embedding dimension >= 2, got {d}")));
    }
    let mut groups: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for (z, &y) in features.row_iter().zip(labels) {
        groups.entry(y).or_default().push(z);
    }
    if groups.len() < 2 {
        return Err(Error::InsufficientClasses {
            needed: 2,
            available: groups.len(),
        });
    }
    let mut class_ids = Vec::new();
    let mut log_det_within = Vec::new();
    for (class, mut rows) in groups {
        if rows.len() < 2 {
            return Err(Error::InsufficientSamples {
                class,
                needed: 2,
                available: rows.len(),
            });
        }
        canonical_rows(&mut rows);
        class_ids.push(class);
        log_det_within.push(log_det_spd(&covariance(&rows, d, epsilon), d)?);
    }
    let mut all: Vec<&[f64]> = features.row_iter().collect();
    canonical_rows(&mut all);
    let log_det_total = log_det_spd(&covariance(&all, d, epsilon), d)?;
    Ok(CovarianceSummary {
        class_ids,
        log_det_within,
        log_det_total,
        dim: d,
        epsilon,
    })
}

pub fn covariances(features: &Tensor, labels: &[usize]) -> Result<CovarianceSummary> {
    covariances_with(features, labels, DEFAULT_SHRINKAGE)
}

/// Returns `(numerator, denominator)` of the bound's fractional term.
pub fn bound_terms(summary: &CovarianceSummary) -> (f64, f64) {
    let base = summary.dim as f64 * (2.0 * PI * E).ln();
    let mean_within = summary.log_det_within.iter().sum::<f64>() / summary.classes() as f64;
    (base + mean_within, base + summary.log_det_total)
}

/// `1 - numerator / denominator`; rejected unless both terms are negative.
pub fn ib_lower_bound(summary: &CovarianceSummary) -> Result<f64> {
    if summary.classes() < 2 || summary.dim < 2 {
        return Err(Error::invalid("need d >= 2 and at least 2 classes"));
    }
    let (numerator, denominator) = bound_terms(summary);
    if !(numerator < 0.0 && denominator < 0.0) {
        return Err(Error::NotInLemmaRegime {
            numerator,
            denominator,
        });
    }
    Ok(1.0 - numerator / denominator)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineConfig {
    /// Hidden width of the 4-layer statistics network.
    pub width: usize,
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            width: 64,
            lr: 1e-4,
            iterations: 2000,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl MineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.width == 0 || self.batch_size < 2 {
            return Err(Error::invalid("MINE needs iterations >= 1, width >= 1 and batch >= 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("MINE lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineEstimate {
    /// Tail mean clamped at zero.
    pub estimate: f64,
    /// Unclamped mean of the bound over the final 10% of iterations.
    pub tail_mean: f64,
    pub history: Vec<f64>,
}

/// Trains a statistics network on joint pairs `(a_i, b_i)` against
/// within-batch shuffled pairs and reads out the Donsker-Varadhan bound.
pub fn mine_estimate(a: &Tensor, b: &Tensor, cfg: &MineConfig) -> Result<MineEstimate> {
    cfg.validate()?;
    let n = a.rows();
    if b.rows() != n {
        return Err(Error::shape("mine_estimate", format!("{n} vs {} samples", b.rows())));
    }
    if n < 2 * cfg.batch_size {
        return Err(Error::invalid(format!(
            "MINE needs at least {} samples for batch size {}, got {n}",
            2 * cfg.batch_size,
            cfg.batch_size
        )));
    }
    let (da, db) = (a.cols(), b.cols());
    let w = cfg.width;
    let mut net = Mlp::init(&[da + db, w, w, w, 1], seed::derive(cfg.seed, "mine-init"))?;
    let mut adam = Adam::new(cfg.lr);
    let mut rng = seed::rng(seed::derive(cfg.seed, "mine-batches"));
    let bs = cfg.batch_size;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut input = vec![0.0; 2 * bs * (da + db)];
    let mut perm: Vec<usize> = (0..bs).collect();

    for it in 0..cfg.iterations {
        let idx = index::sample(&mut rng, n, bs).into_vec();
        perm.shuffle(&mut rng);
        for (r, &i) in idx.iter().enumerate() {
            let joint = &mut input[r * (da + db)..(r + 1) * (da + db)];
            joint[..da].copy_from_slice(a.row(i));
            joint[da..].copy_from_slice(b.row(i));
            let m = bs + r;
            let marg = &mut input[m * (da + db)..(m + 1) * (da + db)];
            marg[..da].copy_from_slice(a.row(i));
            marg[da..].copy_from_slice(b.row(idx[perm[r]]));
        }
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let x = tape.constant(Tensor::matrix(2 * bs, da + db, input.clone())?);
        let t = net.forward_on_tape(&mut tape, &vars, x)?;
        let t_joint = tape.gather(t, (0..bs).collect())?;
        let t_marg = tape.gather(t, (bs..2 * bs).collect())?;
        let shift = tape.value(t_marg).data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift_v = tape.constant(Tensor::vector(vec![shift; bs])?);
        let centered = tape.sub(t_marg, shift_v)?;
        let e = tape.exp(centered)?;
        let s = tape.sum(e)?;
        let log_s = tape.log(s)?;
        let mean_joint = tape.mean(t_joint)?;
        // -DV = log_s + shift - log(bs) - mean_joint; constants do not affect gradients
        let neg = tape.sub(log_s, mean_joint)?;
        let dv = -(tape.value(neg).item()? + shift - (bs as f64).ln());
        if !dv.is_finite() {
            return Err(Error::NonFinite(format!("MINE objective at iteration {it}: {dv}")));
        }
        history.push(dv);
        let grads = tape.backward(neg)?;
        let g: Vec<Tensor> = vars.all().map(|v| grads.get(v)).collect();
        adam.step(net.params_mut().zip(g.iter()));
    }

    let tail = (cfg.iterations / 10).max(1);
    let tail_mean = history[history.len() - tail..].iter().sum::<f64>() / tail as f64;
    Ok(MineEstimate {
        estimate: tail_mean.max(0.0),
        tail_mean,
        history,
    })
}

/// One-hot encoding of `labels` over the sorted distinct label set.
pub fn one_hot(labels: &[usize]) -> Result<Tensor> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let c = classes.len();
    let mut data = vec![0.0; labels.len() * c];
    for (r, l) in labels.iter().enumerate() {
        data[r * c + classes.binary_search(l).expect("present")] = 1.0;
    }
    Tensor::matrix(labels.len(), c, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbPoint {
    /// `base`, `new` or `whole`.
    pub group: String,
    pub i_xz: f64,
    pub i_yz: f64,
    /// Closed-form bound when the group is inside the bound's valid regime.
    pub closed_form_bound: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbPlaneConfig {
    pub yz: MineConfig,
    pub xz: MineConfig,
}

impl Default for IbPlaneConfig {
    fn default() -> Self {
        IbPlaneConfig {
            yz: MineConfig { width: 64, ..MineConfig::default() },
            xz: MineConfig { width: 128, ..MineConfig::default() },
        }
    }
}

/// Information-plane coordinates for base classes, new classes and all
/// classes of `data`. Groups without samples are skipped. The six
/// estimators run on separate threads.
pub fn ib_plane(params: &EncoderParams, data: &Dataset, base_classes: &[usize], cfg: &IbPlaneConfig) -> Result<Vec<IbPoint>> {
    let all = data.classes();
    let new: Vec<usize> = all.iter().copied().filter(|c| !base_classes.contains(c)).collect();
    let groups: Vec<(&str, Dataset)> = [
        ("base", data.filter_classes(base_classes)),
        ("new", data.filter_classes(&new)),
        ("whole", data.clone()),
    ]
    .into_iter()
    .filter(|(_, d)| !d.is_empty())
    .collect();

    let mut prepared = Vec::new();
    for (name, d) in &groups {
        let x = d.inputs()?;
        let z = params.embed(&x)?;
        let labels = d.labels();
        let y = one_hot(&labels)?;
        let bound = covariances(&z, &labels).and_then(|s| ib_lower_bound(&s)).ok();
        let cap = |c: &MineConfig, tag: &str| MineConfig {
            batch_size: c.batch_size.min(d.len() / 2).max(2),
            seed: seed::derive(c.seed, &format!("{name}-{tag}")),
            ..*c
        };
        prepared.push((name.to_string(), x, z, y, bound, cap(&cfg.xz, "xz"), cap(&cfg.yz, "yz")));
    }

    std::thread::scope(|s| {
        let handles: Vec<_> = prepared
            .iter()
            .map(|(_, x, z, y, _, cx, cy)| {
                (
                    s.spawn(move || mine_estimate(x, z, cx)),
                    s.spawn(move || mine_estimate(y, z, cy)),
                )
            })
            .collect();
        handles
            .into_iter()
            .zip(&prepared)
            .map(|((hx, hy), p)| {
                let i_xz = hx.join().expect("MINE thread panicked")?.estimate;
                let i_yz = hy.join().expect("MINE thread panicked")?.estimate;
                Ok(IbPoint {
                    group: p.0.clone(),
                    i_xz,
                    i_yz,
                    closed_form_bound: p.4,
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_matches_diagonal_product() {
        let a = [4.0, 0.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 0.25];
        assert!((log_det_spd(&a, 3).unwrap() - (4.0f64 * 9.0 * 0.25).ln()).abs() < 1e-14);
        let b = [2.0, 1.0, 1.0, 2.0];
        assert!((log_det_spd(&b, 2).unwrap() - 3.0f64.ln()).abs() < 1e-14);
        assert!(log_det_spd(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }

    #[test]
    fn identical_features_give_epsilon_determinant() {
        let f = Tensor::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        let s = covariances(&f, &[0, 0, 1, 1]).unwrap();
        for ld in &s.log_det_within {
            assert!((ld - 2.0 * 1e-6f64.ln()).abs() < 1e-9);
        }
        assert!(covariances(&f, &[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn permutation_gives_identical_summary() {
        let rows: Vec<[f64; 3]> = (0..12)
            .map(|i| {
                let t = i as f64 * 0.7;
                [t.cos(), t.sin(), (t * 1.3).cos()]
            })
            .collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let a = covariances(&Tensor::from_rows(&rows).unwrap(), &labels).unwrap();
        let order = [5, 2, 11, 0, 7, 3, 9, 1, 10, 4, 8, 6];
        let rows_p: Vec<[f64; 3]> = order.iter().map(|&i| rows[i]).collect();
        let labels_p: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let b = covariances(&Tensor::from_rows(&rows_p).unwrap(), &labels_p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bound_regime() {
        let s = CovarianceSummary::from_log_dets(2, vec![-20.0, -20.0], -20.0).unwrap();
        assert_eq!(ib_lower_bound(&s).unwrap(), 0.0);
        let out = CovarianceSummary::from_log_dets(2, vec![-20.0, -20.0], 0.0).unwrap();
        assert!(matches!(ib_lower_bound(&out), Err(Error::NotInLemmaRegime { .. })));
    }

    #[test]
    fn one_hot_rows() {
        let t = one_hot(&[5, 2, 5]).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    }
}
