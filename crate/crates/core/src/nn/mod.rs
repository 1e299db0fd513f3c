//! A small from-scratch 1D CNN: layer specs, He-uniform initialization,
//! batched forward/backward passes and checkpoints.
//!
//! Arithmetic is generic over [`Real`]; training runs in `f32`, gradient
//! checks in `f64`.

pub mod checkpoint;
pub mod init;
pub mod layers;
pub mod model;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use init::he_uniform_init;
pub use model::{
    backward, build_model, forward, forward_batch, predict_proba, Batch, ForwardTrace, Gradients, Mode, ModelParams,
};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Send + Sync + Debug + Default + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid epoch: {0}")]
    InvalidEpoch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint blob does not match its manifest: {0}")]
    ChecksumMismatch(String),
    #[error("checkpoint declares {declared} parameters, model spec has {expected}")]
    ParamCountMismatch { declared: usize, expected: usize },
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
}

/// One layer of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Same-padded 1D convolution, odd kernel.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool {
        factor: usize,
    },
    GlobalAvgPool,
    Dropout {
        rate: f64,
    },
    /// Fully connected; the input is flattened channel-major.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

impl LayerSpec {
    /// Trainable parameter count. Batch-norm running statistics are not
    /// trainable and are not counted.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => out_channels * in_channels * kernel_size + out_channels,
            LayerSpec::BatchNorm { channels } => 2 * channels,
            LayerSpec::Dense { inputs, outputs } => outputs * inputs + outputs,
            _ => 0,
        }
    }

    fn running_count(&self) -> usize {
        match *self {
            LayerSpec::BatchNorm { channels } => 2 * channels,
            _ => 0,
        }
    }

    /// Whether this entry counts as a layer of the architecture. Activation
    /// and output normalisation ride on the preceding layer.
    pub fn is_counted_layer(&self) -> bool {
        !matches!(self, LayerSpec::Relu | LayerSpec::Softmax)
    }
}

/// Sum of trainable parameters over `layers`.
pub fn count_params(layers: &[LayerSpec]) -> usize {
    layers.iter().map(LayerSpec::param_count).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_channels: usize,
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
}

/// Shape and storage offsets of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub spec: LayerSpec,
    pub in_shape: (usize, usize),
    pub out_shape: (usize, usize),
    pub param_offset: usize,
    pub running_offset: usize,
}

impl ModelSpec {
    /// The 11-layer, 5,082-parameter single-channel sleep-state network:
    /// three conv/batch-norm/ReLU blocks (two followed by 4x max-pooling),
    /// global average pooling, dropout and a two-way dense softmax head.
    pub fn reference() -> Self {
        use LayerSpec::*;
        Self {
            input_channels: 1,
            input_len: crate::dsp::EPOCH_LEN,
            layers: vec![
                Conv1d {
                    in_channels: 1,
                    out_channels: 8,
                    kernel_size: 3,
                },
                BatchNorm { channels: 8 },
                Relu,
                MaxPool { factor: 4 },
                Conv1d {
                    in_channels: 8,
                    out_channels: 16,
                    kernel_size: 11,
                },
                BatchNorm { channels: 16 },
                Relu,
                MaxPool { factor: 4 },
                Conv1d {
                    in_channels: 16,
                    out_channels: 24,
                    kernel_size: 9,
                },
                BatchNorm { channels: 24 },
                Relu,
                GlobalAvgPool,
                Dropout { rate: 0.2 },
                Dense { inputs: 24, outputs: 2 },
                Softmax,
            ],
        }
    }

    pub fn total_params(&self) -> usize {
        count_params(&self.layers)
    }

    pub fn counted_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.is_counted_layer()).count()
    }

    /// Walk the layers, checking shapes and assigning storage offsets.
    pub fn plan(&self) -> Result<Vec<LayerPlan>, NnError> {
        let mismatch = |i: usize, msg: String| NnError::ShapeMismatch(format!("layer {i}: {msg}"));
        if self.input_channels == 0 || self.input_len == 0 {
            return Err(NnError::ShapeMismatch("empty input".into()));
        }
        let mut shape = (self.input_channels, self.input_len);
        let mut p_off = 0;
        let mut r_off = 0;
        let mut plans = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            if matches!(spec, LayerSpec::Softmax) && i + 1 != self.layers.len() {
                return Err(mismatch(i, "softmax must be the final layer".into()));
            }
            let (c, l) = shape;
            let out = match *spec {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                } => {
                    if kernel_size % 2 == 0 {
                        return Err(mismatch(i, format!("kernel size {kernel_size} is even")));
                    }
                    if in_channels != c || out_channels == 0 {
                        return Err(mismatch(i, format!("conv expects {in_channels} channels, got {c}")));
                    }
                    (out_channels, l)
                }
                LayerSpec::BatchNorm { channels } => {
                    if channels != c {
                        return Err(mismatch(i, format!("batch-norm over {channels} channels, got {c}")));
                    }
                    shape
                }
                LayerSpec::Relu | LayerSpec::Softmax => shape,
                LayerSpec::MaxPool { factor } => {
                    if factor == 0 || l % factor != 0 {
                        return Err(mismatch(i, format!("pool factor {factor} does not divide length {l}")));
                    }
                    (c, l / factor)
                }
                LayerSpec::GlobalAvgPool => (c, 1),
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(mismatch(i, format!("dropout rate {rate}")));
                    }
                    shape
                }
                LayerSpec::Dense { inputs, outputs } => {
                    if inputs != c * l || outputs == 0 {
                        return Err(mismatch(i, format!("dense expects {inputs} inputs, got {}", c * l)));
                    }
                    (outputs, 1)
                }
            };
            plans.push(LayerPlan {
                spec: spec.clone(),
                in_shape: shape,
                out_shape: out,
                param_offset: p_off,
                running_offset: r_off,
            });
            p_off += spec.param_count();
            r_off += spec.running_count();
            shape = out;
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Softmax)) {
            return Err(NnError::ShapeMismatch("the final layer must be softmax".into()));
        }
        if shape.1 != 1 {
            return Err(NnError::ShapeMismatch(format!("output length is {}, expected 1", shape.1)));
        }
        Ok(plans)
    }

    pub fn output_classes(&self) -> Result<usize, NnError> {
        Ok(self.plan()?.last().map(|p| p.out_shape.0).unwrap_or(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form count for the reference layout, written out by hand.
    #[test]
    fn reference_has_5082_parameters() {
        let conv = |i: usize, o: usize, k: usize| o * i * k + o;
        let bn = |c: usize| 2 * c;
        let closed = conv(1, 8, 3) + bn(8) + conv(8, 16, 11) + bn(16) + conv(16, 24, 9) + bn(24) + (24 * 2 + 2);
        assert_eq!(closed, 32 + 16 + 1424 + 32 + 3480 + 48 + 50);
        assert_eq!(closed, 5082);
        let spec = ModelSpec::reference();
        assert_eq!(spec.total_params(), 5082);
        assert_eq!(count_params(&spec.layers), 5082);
    }

    #[test]
    fn reference_has_eleven_layers_and_expected_shapes() {
        let spec = ModelSpec::reference();
        assert_eq!(spec.counted_layers(), 11);
        let plan = spec.plan().unwrap();
        let lens: Vec<usize> = plan.iter().map(|p| p.out_shape.1).collect();
        assert_eq!(lens, vec![3840, 3840, 3840, 960, 960, 960, 960, 240, 240, 240, 240, 1, 1, 1, 1]);
        assert_eq!(plan.last().unwrap().out_shape, (2, 1));
        assert_eq!(spec.output_classes().unwrap(), 2);
    }

    #[test]
    fn simple_counts() {
        assert_eq!(count_params(&[]), 0);
        assert_eq!(count_params(&[LayerSpec::Dense { inputs: 24, outputs: 2 }]), 50);
        assert_eq!(
            count_params(&[LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 8,
                kernel_size: 3
            }]),
            32
        );
        assert_eq!(count_params(&[LayerSpec::Relu, LayerSpec::MaxPool { factor: 4 }, LayerSpec::Dropout { rate: 0.5 }]), 0);
    }

    #[test]
    fn even_kernel_rejected() {
        let spec = ModelSpec {
            input_channels: 1,
            input_len: 16,
            layers: vec![
                LayerSpec::Conv1d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel_size: 4,
                },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { inputs: 2, outputs: 2 },
                LayerSpec::Softmax,
            ],
        };
        assert!(matches!(spec.plan(), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn pool_must_divide() {
        let spec = ModelSpec {
            input_channels: 1,
            input_len: 10,
            layers: vec![LayerSpec::MaxPool { factor: 4 }, LayerSpec::Dense { inputs: 2, outputs: 2 }, LayerSpec::Softmax],
        };
        assert!(matches!(spec.plan(), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn layer_spec_json_shape() {
        let j = serde_json::to_string(&LayerSpec::Conv1d {
            in_channels: 1,
            out_channels: 8,
            kernel_size: 3,
        })
        .unwrap();
        assert_eq!(j, r#"{"kind":"conv1d","in_channels":1,"out_channels":8,"kernel_size":3}"#);
    }
}
