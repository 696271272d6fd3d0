//! Synthetic layer chains and calibration inputs.
//!
//! A [`LayerNet`] is a chain of weight matrices `W_1 … W_L` with
//! `X_{i+1} = act(W_i X_i)`. There are no residual paths, norms or attention
//! blocks; each weight matrix is one layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, DenseMatrix};
use crate::rng::SplitMix64;

/// Stream tag separating calibration draws from weight draws of the same seed.
pub const CALIBRATION_STREAM: u64 = 0xCA1B;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Linear,
    Relu,
}

impl Activation {
    pub fn apply(self, m: DenseMatrix) -> DenseMatrix {
        match self {
            Activation::Linear => m,
            Activation::Relu => m.map(|v| v.max(0.0)),
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::domain(format!("unknown activation '{other}'"))),
        }
    }
}

/// An ordered, dimension-compatible chain of layer weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNet {
    layers: Vec<DenseMatrix>,
    activation: Activation,
    label: String,
}

impl LayerNet {
    pub fn new(layers: Vec<DenseMatrix>, activation: Activation, label: impl Into<String>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("a network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::shape(format!(
                    "layer {} outputs {} features but layer {} expects {}",
                    i + 1,
                    pair[0].rows(),
                    i + 2,
                    pair[1].cols()
                )));
            }
        }
        Ok(Self {
            layers,
            activation,
            label: label.into(),
        })
    }

    pub fn layers(&self) -> &[DenseMatrix] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &DenseMatrix {
        &self.layers[i]
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    /// Same topology and activation with replaced weights.
    pub fn with_layers(&self, layers: Vec<DenseMatrix>) -> Result<Self> {
        if layers.len() != self.layers.len()
            || layers.iter().zip(&self.layers).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("replacement layers do not match the network topology"));
        }
        Ok(Self {
            layers,
            activation: self.activation,
            label: self.label.clone(),
        })
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(DenseMatrix::numel).sum()
    }
}

/// Calibration inputs `X_1` with one sample per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub x0: DenseMatrix,
}

impl CalibrationSet {
    pub fn new(x0: DenseMatrix) -> Self {
        Self { x0 }
    }

    pub fn samples(&self) -> usize {
        self.x0.cols()
    }

    pub fn features(&self) -> usize {
        self.x0.rows()
    }

    /// Splits the samples into a leading block of `first` columns and the rest.
    pub fn split(&self, first: usize) -> Result<(Self, Self)> {
        let d = self.samples();
        if first == 0 || first >= d {
            return Err(Error::domain(format!(
                "cannot split {d} samples at {first}"
            )));
        }
        Ok((
            Self::new(self.x0.columns(0, first)?),
            Self::new(self.x0.columns(first, d)?),
        ))
    }
}

/// Random chain with `dims[i+1] × dims[i]` weights drawn uniformly from
/// `±√(3/c_in)` (variance `1/c_in`), consumed layer by layer in row-major order
/// from `SplitMix64::new(seed)`.
pub fn generate_net(layers: usize, dims: &[usize], activation: Activation, seed: u64) -> Result<LayerNet> {
    if layers == 0 {
        return Err(Error::shape("a network needs at least one layer"));
    }
    if dims.len() != layers + 1 {
        return Err(Error::shape(format!(
            "{layers} layers need {} dims, got {}",
            layers + 1,
            dims.len()
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::shape("all dims must be at least 1"));
    }
    let mut rng = SplitMix64::new(seed);
    let weights = dims
        .windows(2)
        .map(|w| {
            let (c_in, c_out) = (w[0], w[1]);
            let bound = (3.0 / c_in as f64).sqrt();
            let data = (0..c_in * c_out).map(|_| rng.uniform(-bound, bound)).collect();
            DenseMatrix::from_parts(c_out, c_in, data)
        })
        .collect();
    LayerNet::new(weights, activation, format!("synthetic-L{layers}-seed{seed}"))
}

/// Standard-normal calibration inputs drawn from
/// `SplitMix64::fork(seed, CALIBRATION_STREAM)`, row-major.
pub fn generate_calibration(features: usize, samples: usize, seed: u64) -> Result<CalibrationSet> {
    if features == 0 || samples == 0 {
        return Err(Error::shape("calibration set needs at least one feature and one sample"));
    }
    let mut rng = SplitMix64::fork(seed, CALIBRATION_STREAM);
    let data = (0..features * samples).map(|_| rng.normal()).collect();
    Ok(CalibrationSet::new(DenseMatrix::from_parts(features, samples, data)))
}

/// Dense activations `[X_1, …, X_{L+1}]` with `X_1 = x0`.
pub fn forward(net: &LayerNet, x0: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
    let mut xs = Vec::with_capacity(net.depth() + 1);
    xs.push(x0.clone());
    for w in net.layers() {
        let pre = matmul(w, xs.last().expect("non-empty"))?;
        xs.push(net.activation().apply(pre));
    }
    Ok(xs)
}
