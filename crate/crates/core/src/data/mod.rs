//! Datasets, class-incremental streams and the probe/background slice.

mod idx;
mod seqfile;
mod stream;
mod synth;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use seqfile::{load_sequences, parse_sequences, write_sequences};
pub use stream::{build_stream, build_stream_split, make_slice, EvaluationSlice, Experience, ExperienceStream};
pub use synth::{synth_images, synth_sequences};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// What one example looks like, ignoring the batch axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// `channels × height × width`
    Image { channels: usize, height: usize, width: usize },
    /// `steps × features`
    Sequence { steps: usize, features: usize },
}

impl InputKind {
    pub fn from_example_shape(shape: &[usize]) -> Result<Self> {
        match *shape {
            [channels, height, width] => Ok(Self::Image { channels, height, width }),
            [steps, features] => Ok(Self::Sequence { steps, features }),
            _ => Err(Error::invalid(format!("unsupported example shape {shape:?}"))),
        }
    }

    pub fn example_shape(&self) -> Vec<usize> {
        match *self {
            Self::Image { channels, height, width } => vec![channels, height, width],
            Self::Sequence { steps, features } => vec![steps, features],
        }
    }

    pub fn features(&self) -> usize {
        self.example_shape().iter().product()
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Self::Image { .. })
    }
}

/// Batched inputs with integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let count = inputs.shape().first().copied().unwrap_or(0);
        if count != labels.len() {
            return Err(Error::CountMismatch {
                images: count,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} not below class count {num_classes}")));
        }
        InputKind::from_example_shape(&inputs.shape()[1..])?;
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn kind(&self) -> InputKind {
        InputKind::from_example_shape(&self.inputs.shape()[1..]).expect("validated at construction")
    }

    pub fn example(&self, i: usize) -> Result<Tensor> {
        self.inputs.index_first(i)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            inputs: self.inputs.select_first(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        })
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        Self::new(
            Tensor::concat_first(&self.inputs, &other.inputs)?,
            [self.labels.as_slice(), other.labels.as_slice()].concat(),
            self.num_classes.max(other.num_classes),
        )
    }

    /// Indices of every example with label `class`, in dataset order.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &y)| (y == class).then_some(i))
            .collect()
    }
}
