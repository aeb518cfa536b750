//! Feed-forward feature extractor whose output lives on the unit sphere.
//!
//! [`Mlp`] is the bare network (ReLU between linear layers, linear output);
//! [`EncoderParams`] adds the final projection onto `S^{d-1}` and the
//! checkpoint format.
//!
//! Checkpoint layout (JSON, one object):
//!
//! ```text
//! {
//!   "format": "closer-encoder",
//!   "version": 1,
//!   "tags": {"key": "value", ...},        (optional)
//!   "layer_dims": [in, h1, ..., d],
//!   "seed": <u64>,
//!   "layers": [ { "weight": {"shape": [in, h1], "data": [...]},
//!                 "bias":   {"shape": [h1],     "data": [...]} }, ... ]
//! }
//! ```
//!
//! Weights are stored `[fan_in, fan_out]` row-major, so a batch `X: [B, in]`
//! maps to `X·W + b`. Floats are written in shortest round-trip form and
//! reload bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{matmul_raw, Tape, Tensor, Var, EPSILON_NORM};
use crate::seed;

pub const CHECKPOINT_FORMAT: &str = "closer-encoder";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Multi-layer perceptron with ReLU hidden activations and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
}

/// Tape handles for one registration of an [`Mlp`]'s parameters.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl MlpVars {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

impl Mlp {
    /// He-style initialization: weights `N(0, 2/fan_in)`, zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least input and output dims, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::invalid(format!("layer dims must be positive: {layer_dims:?}")));
        }
        let mut rng = seed::rng(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (2.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * scale
                    })
                    .collect();
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, data).expect("sized"),
                    bias: Tensor::zeros(vec![fan_out]),
                }
            })
            .collect();
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            layers,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::invalid("no layers"))?;
        let mut dims = vec![first.weight.rows()];
        for (i, l) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (l.weight.rows(), l.weight.cols());
            if !l.weight.is_matrix() || l.bias.shape() != [fan_out] || fan_in != *dims.last().unwrap() {
                return Err(Error::invalid(format!(
                    "layer {i}: weight {:?} and bias {:?} do not chain",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
            dims.push(fan_out);
        }
        Ok(Mlp {
            layer_dims: dims,
            layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Mutable parameter tensors in registration order (w0, b0, w1, b1, ...).
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
        }
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim() {
            return Err(Error::shape(
                "mlp",
                format!("input width {cols}, expected {}", self.input_dim()),
            ));
        }
        let mut h = x;
        let last = vars.layers.len() - 1;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let lin = tape.matmul(h, w)?;
            h = tape.add_bias(lin, b)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Forward pass without recording, for evaluation.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "mlp",
                format!("input width {}, expected {}", x.cols(), self.input_dim()),
            ));
        }
        let m = x.rows();
        let mut h = x.data().to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (k, n) = (l.weight.rows(), l.weight.cols());
            let mut out = matmul_raw(&h, l.weight.data(), m, k, n);
            for row in out.chunks_mut(n) {
                for (v, b) in row.iter_mut().zip(l.bias.data()) {
                    *v += b;
                    if i < last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = out;
        }
        Tensor::matrix(m, self.output_dim(), h)
    }
}

/// The feature extractor `f`: an [`Mlp`] followed by unit normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    net: Mlp,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    tags: BTreeMap<String, String>,
    layer_dims: Vec<usize>,
    seed: u64,
    layers: Vec<Layer>,
}

impl EncoderParams {
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if let Some(&d) = layer_dims.last() {
            if layer_dims.len() >= 2 && d < 2 {
                return Err(Error::invalid(format!("embedding dimension must be >= 2, got {d}")));
            }
        }
        Ok(EncoderParams {
            net: Mlp::init(layer_dims, seed)?,
            seed,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer_dims(&self) -> &[usize] {
        self.net.layer_dims()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        self.net.register(tape)
    }

    /// Differentiable embedding of a batch `[B, in]` into unit rows `[B, d]`.
    pub fn embed_on_tape(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var> {
        let raw = self.net.forward_on_tape(tape, vars, x)?;
        tape.normalize_rows(raw)
    }

    /// Embeds a batch `[B, in]` (or a single vector) into unit rows `[B, d]`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let x = if x.is_matrix() {
            x.clone()
        } else {
            x.clone().reshape(vec![1, x.len()])?
        };
        let mut raw = self.net.forward(&x)?;
        let d = raw.cols();
        for (i, row) in raw.data_mut().chunks_mut(d).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > EPSILON_NORM) {
                return Err(Error::DegenerateInput(format!(
                    "pre-normalization feature of row {i} has norm {n:e}"
                )));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(raw)
    }

    pub fn embed_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embed(&Tensor::vector(x.to_vec())?)?.into_data())
    }

    /// SHA-256 over the exact bit patterns of all parameters.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for d in self.net.layer_dims() {
            h.update((*d as u64).to_le_bytes());
        }
        for p in self.net.params() {
            for v in p.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn to_json(&self) -> Result<String> {
        self.to_json_tagged(&BTreeMap::new())
    }

    /// Checkpoint with extra string tags in the header. Tags are ignored on
    /// load.
    pub fn to_json_tagged(&self, tags: &BTreeMap<String, String>) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            tags: tags.clone(),
            layer_dims: self.net.layer_dims().to_vec(),
            seed: self.seed,
            layers: self.net.layers().to_vec(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let net = Mlp::from_layers(ck.layers)?;
        if net.layer_dims() != ck.layer_dims.as_slice() {
            return Err(Error::invalid(format!(
                "checkpoint header dims {:?} disagree with layers {:?}",
                ck.layer_dims,
                net.layer_dims()
            )));
        }
        if net.output_dim() < 2 {
            return Err(Error::invalid("embedding dimension must be >= 2"));
        }
        Ok(EncoderParams { net, seed: ck.seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
