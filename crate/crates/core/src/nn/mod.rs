//! Stacked-LSTM forecaster with a linear head, trained by backpropagation through time and Adam.
//!
//! Every parameter lives in one flat [`ParamVector`] so models can be averaged, shipped and
//! stored without knowing their structure. Canonical layout, per LSTM layer: input weights
//! `(4h, in)`, recurrent weights `(4h, h)`, biases `(4h)`, all row-major with gate blocks in
//! the order input | forget | cell | output; then the head weights `(out, h_last)` and bias.

mod adam;
mod codec;
mod lstm;
mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed;

pub use adam::{adam_step, AdamState};
pub use codec::{decode_params, encode_params, load_params, save_params, HEADER_BYTES, MAGIC, MAX_LAYERS};
pub use lstm::{forward, loss_and_gradient, mean_inference_latency, predict_many, Predictor};
pub use train::{evaluate_mse, evaluate_rmse, rmse_with, train_epochs, train_epochs_with, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("window has {got} values, model expects {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("target has {got} values, model predicts {expected}")]
    TargetLength { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelTopology {
    pub input_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_size: usize,
    pub lookback: usize,
}

/// Offsets of one LSTM layer's blocks inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    pub input_size: usize,
    pub hidden: usize,
    pub w_in: usize,
    pub w_rec: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub layers: Vec<LayerSlots>,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
}

impl ModelTopology {
    /// PV and consumption forecaster: two 128-unit layers, 48 steps in, one step out.
    pub fn model1() -> Self {
        Self {
            input_size: 1,
            hidden_sizes: vec![128, 128],
            output_size: 1,
            lookback: 48,
        }
    }

    /// EV forecaster: two 200-unit layers, 15 one-minute steps in, the next 5 out.
    pub fn model2() -> Self {
        Self {
            input_size: 1,
            hidden_sizes: vec![200, 200],
            output_size: 5,
            lookback: 15,
        }
    }

    pub fn with_hidden(mut self, hidden_sizes: Vec<usize>) -> Self {
        self.hidden_sizes = hidden_sizes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidTopology(m.to_string()));
        if self.input_size == 0 || self.output_size == 0 || self.lookback == 0 {
            return bad("input_size, output_size and lookback must be positive");
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.len() > MAX_LAYERS {
            return bad("between 1 and 8 LSTM layers are supported");
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        Ok(())
    }

    /// Values per input window.
    pub fn window_len(&self) -> usize {
        self.lookback * self.input_size
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    pub(crate) fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut input_size = self.input_size;
        let mut layers = Vec::with_capacity(self.hidden_sizes.len());
        for &hidden in &self.hidden_sizes {
            let w_in = offset;
            let w_rec = w_in + 4 * hidden * input_size;
            let bias = w_rec + 4 * hidden * hidden;
            offset = bias + 4 * hidden;
            layers.push(LayerSlots {
                input_size,
                hidden,
                w_in,
                w_rec,
                bias,
            });
            input_size = hidden;
        }
        let head_w = offset;
        let head_b = head_w + self.output_size * input_size;
        Layout {
            layers,
            head_w,
            head_b,
            total: head_b + self.output_size,
        }
    }
}

/// Model parameters in canonical layout; the unit exchanged between aggregator and prosumers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    topology: ModelTopology,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(topology: ModelTopology, values: Vec<f64>) -> Result<Self> {
        topology.validate()?;
        let expected = topology.param_count();
        if values.len() != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { topology, values })
    }

    pub fn zeros(topology: ModelTopology) -> Result<Self> {
        let n = topology.param_count();
        Self::new(topology, vec![0.0; n])
    }

    pub fn topology(&self) -> &ModelTopology {
        &self.topology
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Indices of every forget-gate bias.
    pub fn forget_bias_indices(&self) -> Vec<usize> {
        self.topology
            .layout()
            .layers
            .iter()
            .flat_map(|l| (l.bias + l.hidden)..(l.bias + 2 * l.hidden))
            .collect()
    }
}

/// Glorot-uniform weights, zero biases except forget gates at 1.0.
pub fn init_params(topology: &ModelTopology, seed: u64) -> Result<ParamVector> {
    topology.validate()?;
    let layout = topology.layout();
    let mut values = vec![0.0; layout.total];
    let mut rng = seed::rng(seed);
    let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut values[range] {
            *v = rng.random_range(-limit..limit);
        }
    };
    for l in &layout.layers {
        let four_h = 4 * l.hidden;
        fill(l.w_in..l.w_rec, l.input_size, four_h);
        fill(l.w_rec..l.bias, l.hidden, four_h);
    }
    let last_hidden = *topology.hidden_sizes.last().expect("validated");
    fill(layout.head_w..layout.head_b, last_hidden, topology.output_size);
    for l in &layout.layers {
        values[l.bias + l.hidden..l.bias + 2 * l.hidden].fill(1.0);
    }
    ParamVector::new(topology.clone(), values)
}
