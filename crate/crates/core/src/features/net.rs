//! Per-point multilayer perceptron with hand-written backpropagation.
//!
//! Hidden layers use `tanh`; the last layer is linear and optionally followed
//! by row-wise L2 normalization.

use std::hash::{Hash, Hasher};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EncodingConfig, FeatureMatrix};
use crate::error::{Error, Result};

/// Weights are `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct NetParams {
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    layer_dims: Vec<usize>,
    layers: Vec<LayerRepr>,
}

impl From<NetParams> for ParamsRepr {
    fn from(p: NetParams) -> Self {
        ParamsRepr {
            layer_dims: p.layer_dims(),
            layers: p
                .layers
                .iter()
                .map(|l| LayerRepr {
                    weights: (0..l.weights.nrows())
                        .map(|r| l.weights.row(r).iter().copied().collect())
                        .collect(),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ParamsRepr> for NetParams {
    type Error = Error;

    fn try_from(repr: ParamsRepr) -> Result<Self> {
        if repr.layer_dims.len() != repr.layers.len() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} layer dims for {} layers",
                repr.layer_dims.len(),
                repr.layers.len()
            )));
        }
        let layers = repr
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let (rows, cols) = (repr.layer_dims[i + 1], repr.layer_dims[i]);
                if l.weights.len() != rows || l.weights.iter().any(|r| r.len() != cols) || l.bias.len() != rows {
                    return Err(Error::ShapeMismatch(format!("layer {i} does not match {cols}->{rows}")));
                }
                Ok(Layer {
                    weights: DMatrix::from_fn(rows, cols, |r, c| l.weights[r][c]),
                    bias: DVector::from_vec(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        NetParams::from_layers(layers)
    }
}

impl NetParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::ShapeMismatch(format!("layer {i} bias length mismatch")));
            }
            if i > 0 && l.weights.ncols() != layers[i - 1].weights.nrows() {
                return Err(Error::ShapeMismatch(format!("layer {i} input width mismatch")));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(format!("layer {i} has non-finite values")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// `[d_in, hidden..., ℓ]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].weights.ncols())
            .chain(self.layers.iter().map(|l| l.weights.nrows()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &NetParams) -> bool {
        self.layer_dims() == other.layer_dims()
    }

    fn check_shape(&self, other: &NetParams) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "parameter shapes differ: {:?} vs {:?}",
                self.layer_dims(),
                other.layer_dims()
            )))
        }
    }

    /// Every scalar parameter, layer by layer, weights (column-major) then bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Elementwise `f(self, other)` into a new instance.
    pub fn zip_map(&self, other: &NetParams, f: impl Fn(f64, f64) -> f64) -> Result<NetParams> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (o, b) in out.values_mut().zip(other.values()) {
            *o = f(*o, b);
        }
        Ok(out)
    }

    /// Hash of the exact bit patterns of all parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.layer_dims().hash(&mut h);
        for v in self.values() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Variance-scaled uniform init (variance `1/fan_in`), zero biases.
pub fn param_init<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<NetParams> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "need at least one layer with positive widths, got {layer_dims:?}"
        )));
    }
    let layers = layer_dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (3.0 / fan_in as f64).sqrt();
            // Filled row by row so the draw order matches the row-major file layout.
            let mut weights = DMatrix::zeros(fan_out, fan_in);
            for r in 0..fan_out {
                for c in 0..fan_in {
                    weights[(r, c)] = rng.random_range(-bound..bound);
                }
            }
            Layer {
                weights,
                bias: DVector::zeros(fan_out),
            }
        })
        .collect();
    NetParams::from_layers(layers)
}

struct Activations {
    /// Input to each layer; `inputs[0]` is the encoding.
    inputs: Vec<DMatrix<f64>>,
    /// Output of the last layer before normalization.
    raw: DMatrix<f64>,
}

fn encoding_matrix(params: &NetParams, enc: &FeatureMatrix) -> Result<DMatrix<f64>> {
    if enc.cols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "encoding width {} but network expects {}",
            enc.cols(),
            params.input_dim()
        )));
    }
    Ok(DMatrix::from_row_slice(enc.rows(), enc.cols(), enc.values()))
}

fn forward_pass(params: &NetParams, x: DMatrix<f64>) -> Activations {
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut h = x;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = &h * layer.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += layer.bias.transpose();
        }
        inputs.push(h);
        if i < last {
            z.apply(|v| *v = v.tanh());
        }
        h = z;
    }
    Activations { inputs, raw: h }
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Applies the network to every row of `enc`.
pub fn net_forward(params: &NetParams, enc: &FeatureMatrix, normalize: bool) -> Result<FeatureMatrix> {
    let x = encoding_matrix(params, enc)?;
    let acts = forward_pass(params, x);
    let (rows, cols) = acts.raw.shape();
    let values = to_row_major(&acts.raw);
    if normalize {
        FeatureMatrix::normalized(rows, cols, values)
    } else {
        FeatureMatrix::new(rows, cols, values)
    }
}

/// Gradient of `Σ output_grad ⊙ net_forward(params, enc, normalize)` with
/// respect to every weight and bias.
pub fn net_backward(
    params: &NetParams,
    enc: &FeatureMatrix,
    output_grad: &FeatureMatrix,
    normalize: bool,
) -> Result<NetParams> {
    let x = encoding_matrix(params, enc)?;
    if output_grad.rows() != enc.rows() || output_grad.cols() != params.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient is {}x{}, expected {}x{}",
            output_grad.rows(),
            output_grad.cols(),
            enc.rows(),
            params.output_dim()
        )));
    }
    let acts = forward_pass(params, x);
    let mut g = DMatrix::from_row_slice(output_grad.rows(), output_grad.cols(), output_grad.values());

    if normalize {
        // y = z/|z|  =>  dz = (g - y (y·g)) / |z|
        for (mut grow, zrow) in g.row_iter_mut().zip(acts.raw.row_iter()) {
            let norm = zrow.norm();
            if norm == 0.0 {
                grow.fill(0.0);
                continue;
            }
            let y = zrow / norm;
            let proj = y.dot(&grow);
            let adjusted = (&grow - y * proj) / norm;
            grow.copy_from(&adjusted);
        }
    }

    let mut grads = params.zeros_like();
    for i in (0..params.layers.len()).rev() {
        let input = &acts.inputs[i];
        grads.layers[i].weights = g.transpose() * input;
        grads.layers[i].bias = g.row_sum().transpose();
        if i > 0 {
            let mut prev = &g * &params.layers[i].weights;
            // Input of layer i is tanh of the previous pre-activation.
            prev.zip_apply(input, |gv, h| *gv *= 1.0 - h * h);
            g = prev;
        }
    }
    Ok(grads)
}

/// Checkpoint container: network parameters plus what inference needs to
/// rebuild the encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub normalize: bool,
    pub voxel_size: f64,
    pub encoding: EncodingConfig,
    pub params: NetParams,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "direg-params/1";

    pub fn new(params: NetParams, encoding: EncodingConfig, voxel_size: f64, normalize: bool) -> Self {
        Self {
            format: Self::FORMAT.to_string(),
            normalize,
            voxel_size,
            encoding,
            params,
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(ckpt)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e.to_string()))?;
    if ckpt.format != Checkpoint::FORMAT {
        return Err(Error::format(path, 1, format!("unsupported checkpoint format {:?}", ckpt.format)));
    }
    Ok(ckpt)
}
