//! A small f64 tensor engine with a recording tape and reverse-mode gradients.
//!
//! Layouts are row-major: sequences are `[L, C]` (time-major), conv kernels
//! `[K, C_in, C_out]`, dense weights `[N_in, N_out]`.

mod adam;
mod tape;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{dropout_mask, softmax, Gradients, Tape, Var};

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target class {target} out of range for {classes} classes")]
    InvalidTarget { target: usize, classes: usize },
    #[error("softmax over zero classes")]
    EmptyLogits,
    #[error("backward called before any forward operation was recorded")]
    BackwardBeforeForward,
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("non-finite gradient in parameter {param} at element {index}; step skipped")]
    NonFiniteGradient { param: usize, index: usize },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutodiffError::Shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// A 1-D tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// A `[L, 1]` single-channel sequence.
    pub fn sequence(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len(), 1],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }
}
