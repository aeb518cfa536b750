//! Helpers shared by the integration test targets: a central-difference
//! gradient checker and brute-force reference computations that do not go
//! through the library's own code paths.

#![allow(dead_code)]

use closer_core::numerics::{Tape, Tensor, Var};
use closer_core::seed::{rng, Rng};
use closer_core::Result;
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL: f64 = 1e-5;
pub const FD_ABS: f64 = 1e-8;

pub fn random_tensor(r: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn random_labels(r: &mut Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| r.random_range(0..classes)).collect()
}

pub fn test_rng(seed: u64) -> Rng {
    rng(seed)
}

/// First violation found by [`check_gradients`].
#[derive(Debug)]
pub struct GradMismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn close(a: f64, n: f64) -> bool {
    (a - n).abs() <= (FD_REL * a.abs().max(n.abs())).max(FD_ABS)
}

/// Compares reverse-mode gradients of `build` with respect to every input
/// against central differences. `build` receives the inputs as tape leaves
/// and must return a scalar.
pub fn check_gradients<F>(inputs: &[Tensor], build: F) -> std::result::Result<(), GradMismatch>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars).expect("forward pass");
        tape.value(out).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).expect("forward pass");
    let grads = tape.backward(out).expect("backward pass");

    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let g = grads.get(*var);
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(&work);
            work[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(&work);
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = g.data()[i];
            if !close(analytic, numeric) {
                return Err(GradMismatch {
                    input: k,
                    index: i,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(())
}

pub fn ref_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn ref_cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (d / (ref_norm(a) * ref_norm(b))).clamp(-1.0, 1.0)
}

pub fn ref_angle(a: &[f64], b: &[f64]) -> f64 {
    ref_cos(a, b).acos()
}

pub fn ref_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Class means of `rows` grouped by `labels`, sorted by class id.
pub fn ref_prototypes(rows: &[Vec<f64>], labels: &[usize]) -> Vec<(usize, Vec<f64>)> {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|c| {
            let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &y)| y == c).map(|(r, _)| r).collect();
            let d = members[0].len();
            let mean = (0..d)
                .map(|j| members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64)
                .collect();
            (c, mean)
        })
        .collect()
}

pub fn ref_transferability(protos: &[Vec<f64>], feats: &[Vec<f64>]) -> f64 {
    let nearest: Vec<f64> = feats
        .iter()
        .map(|z| protos.iter().map(|p| ref_angle(z, p)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut pair = Vec::new();
    for i in 0..protos.len() {
        for j in 0..protos.len() {
            if i < j {
                pair.push(ref_angle(&protos[i], &protos[j]));
            }
        }
    }
    ref_mean(&nearest) / ref_mean(&pair)
}

/// Returns (intra, inter) spread.
pub fn ref_spread(feats: &[Vec<f64>], labels: &[usize], protos: &[(usize, Vec<f64>)]) -> (f64, f64) {
    let mut per_class = Vec::new();
    for (c, p) in protos {
        let angles: Vec<f64> = feats
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == *c)
            .map(|(z, _)| ref_angle(z, p))
            .collect();
        if angles.len() >= 2 {
            per_class.push(ref_mean(&angles));
        }
    }
    let mut pair = Vec::new();
    for i in 0..protos.len() {
        for j in i + 1..protos.len() {
            pair.push(ref_angle(&protos[i].1, &protos[j].1));
        }
    }
    (ref_mean(&per_class), ref_mean(&pair))
}

/// Nearest-prototype prediction by cosine, lowest class id on ties.
pub fn ref_predict(z: &[f64], protos: &[(usize, Vec<f64>)]) -> usize {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (c, p) in protos {
        let s = ref_cos(z, p);
        if s > best.0 || (s == best.0 && *c < best.1) {
            best = (s, *c);
        }
    }
    best.1
}

/// (A_B, A_N, A_W) in percent; `None` for an empty group.
pub fn ref_accuracies(
    feats: &[Vec<f64>],
    labels: &[usize],
    protos: &[(usize, Vec<f64>)],
    base: &[usize],
) -> (Option<f64>, Option<f64>, f64) {
    let (mut bc, mut bt, mut nc, mut nt) = (0.0, 0.0, 0.0, 0.0);
    for (z, &y) in feats.iter().zip(labels) {
        let hit = if ref_predict(z, protos) == y { 1.0 } else { 0.0 };
        if base.contains(&y) {
            bc += hit;
            bt += 1.0;
        } else {
            nc += hit;
            nt += 1.0;
        }
    }
    let pct = |c: f64, t: f64| (t > 0.0).then(|| 100.0 * c / t);
    (pct(bc, bt), pct(nc, nt), 100.0 * (bc + nc) / (bt + nt))
}

pub fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    t.row_iter().map(<[f64]>::to_vec).collect()
}

/// Small synthetic experiment that trains in well under a second, with a
/// 2-dimensional embedding so every artifact can be produced.
pub fn tiny_config() -> closer_core::experiment::ExperimentConfig {
    let json = r#"{
        "name": "tiny",
        "dataset": {"kind": "synthetic", "classes": 8, "train_per_class": 15, "test_per_class": 6,
                    "input_dim": 6, "center_separation": 3.0, "cluster_std": 0.6, "seed": 5},
        "split": {"base_classes": 4, "ways": 2, "shots": 3, "sessions": 2},
        "encoder": {"hidden": [16], "embed_dim": 2},
        "loss": {"tau": 0.03125, "lambda_ssc": 0.1, "lambda_inter": 1.0},
        "train": {"epochs": 3, "batch_size": 12, "lr": 0.05},
        "augment": {"noise_std": 0.2},
        "metrics": {"features": true, "histogram_bins": 8},
        "seeds": 2,
        "master_seed": 9
    }"#;
    closer_core::experiment::ExperimentConfig::from_json(json).unwrap()
}
