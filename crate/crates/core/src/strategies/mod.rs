//! Continual-learning training loops. Each produces a [`TrainLog`] holding
//! one model snapshot per experience (a single one for joint training).

mod buffer;

pub use buffer::{cosine, example_gradient, Admission, BufferPolicy, Entry, GssConfig, ReplayBuffer};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ExperienceStream, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::numerics::{Tape, Tensor};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    Er,
    Gss,
    Joint,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Er => "er",
            Self::Gss => "gss",
            Self::Joint => "joint",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "er" => Ok(Self::Er),
            "gss" => Ok(Self::Gss),
            "joint" => Ok(Self::Joint),
            other => Err(Error::Config {
                field: "strategies".into(),
                reason: format!("unknown strategy `{other}`"),
            }),
        }
    }
}

/// Plain mini-batch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptConfig {
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Rescale the whole gradient when its norm exceeds this.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    4
}

impl OptConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            batch_size: default_batch(),
            epochs: default_epochs(),
            clip_norm: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    /// Index of the experience just trained (0 for joint training).
    pub experience: usize,
    /// Mean loss over the last epoch.
    pub final_loss: f64,
    /// Accuracy on each experience's test set, in stream order.
    pub test_accuracy: Vec<f64>,
    /// Replay buffer occupancy at the end of the experience.
    pub buffer_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub strategy: Strategy,
    pub records: Vec<ExperienceRecord>,
    #[serde(skip)]
    pub snapshots: Vec<Model>,
}

impl TrainLog {
    /// Mean test accuracy over all experiences after the last snapshot.
    pub fn final_average_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| mean(&r.test_accuracy))
    }

    pub fn final_accuracy_on(&self, experience: usize) -> f64 {
        self.records
            .last()
            .and_then(|r| r.test_accuracy.get(experience).copied())
            .unwrap_or(0.0)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn check_model(model: &Model, stream: &ExperienceStream) -> Result<()> {
    if model.classes() < stream.num_classes() {
        return Err(Error::invalid(format!(
            "model emits {} logits but the stream has {} classes",
            model.classes(),
            stream.num_classes()
        )));
    }
    Ok(())
}

/// Sequential fine-tuning with no forgetting mitigation.
pub fn train_naive(model: Model, stream: &ExperienceStream, opt: &OptConfig) -> Result<TrainLog> {
    train_sequential(model, stream, opt, None, Strategy::Naive)
}

/// Sequential training where every mini-batch is joined by an equally sized
/// draw from `buffer`. Class-balanced buffers are refilled at experience
/// boundaries; GSS buffers admit examples per step during each experience's
/// first epoch.
pub fn train_replay(model: Model, stream: &ExperienceStream, buffer: ReplayBuffer, opt: &OptConfig) -> Result<TrainLog> {
    let strategy = match buffer.policy() {
        BufferPolicy::ClassBalanced => Strategy::Er,
        BufferPolicy::GssGreedy => Strategy::Gss,
    };
    train_sequential(model, stream, opt, Some(buffer), strategy)
}

fn train_sequential(
    mut model: Model,
    stream: &ExperienceStream,
    opt: &OptConfig,
    mut buffer: Option<ReplayBuffer>,
    strategy: Strategy,
) -> Result<TrainLog> {
    check_model(&model, stream)?;
    let mut records = Vec::with_capacity(stream.len());
    let mut snapshots = Vec::with_capacity(stream.len());
    let mut seen: Vec<usize> = Vec::new();
    for (ei, exp) in stream.experiences().iter().enumerate() {
        seen.extend(&exp.classes);
        let mut last_loss = 0.0;
        for epoch in 0..opt.epochs {
            let mut r = rng::seeded(rng::derive(opt.seed, &[ei as u64, epoch as u64]));
            let mut losses = Vec::new();
            for batch_idx in shuffled_batches(exp.train.len(), opt.batch_size, &mut r) {
                let cur = exp.train.subset(&batch_idx)?;
                let replay = buffer.as_ref().and_then(|b| b.sample(batch_idx.len(), &mut r));
                let (inputs, labels) = match replay {
                    Some((x, y)) => (
                        Tensor::concat_first(cur.inputs(), &x)?,
                        [cur.labels(), y.as_slice()].concat(),
                    ),
                    None => (cur.inputs().clone(), cur.labels().to_vec()),
                };
                let loss = sgd_step(&mut model, &inputs, &labels, opt)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { experience: ei, loss });
                }
                losses.push(loss);
                if let Some(buf) = buffer.as_mut() {
                    if buf.policy() == BufferPolicy::GssGreedy && epoch == 0 {
                        buf.gss_admit_batch(&model, cur.inputs(), cur.labels(), &mut r)?;
                    }
                }
            }
            last_loss = mean(&losses);
        }
        if let Some(buf) = buffer.as_mut() {
            if buf.policy() == BufferPolicy::ClassBalanced {
                let mut r = rng::seeded(rng::derive(opt.seed, &[ei as u64, u64::MAX]));
                buf.update_class_balanced(&exp.train, &mut r)?;
            }
            debug_assert!(buf.labels().all(|y| seen.contains(&y)));
        }
        records.push(ExperienceRecord {
            experience: ei,
            final_loss: last_loss,
            test_accuracy: test_accuracies(&model, stream)?,
            buffer_len: buffer.as_ref().map_or(0, ReplayBuffer::len),
        });
        snapshots.push(model.clone());
    }
    Ok(TrainLog {
        strategy,
        records,
        snapshots,
    })
}

/// Offline training on the union of every experience.
pub fn train_joint(mut model: Model, stream: &ExperienceStream, opt: &OptConfig) -> Result<TrainLog> {
    check_model(&model, stream)?;
    let all = stream.joint_train()?;
    let last_loss = train_epochs(&mut model, &all, opt, 0)?;
    Ok(TrainLog {
        strategy: Strategy::Joint,
        records: vec![ExperienceRecord {
            experience: 0,
            final_loss: last_loss,
            test_accuracy: test_accuracies(&model, stream)?,
            buffer_len: 0,
        }],
        snapshots: vec![model],
    })
}

/// Plain supervised training of `model` on one dataset; returns the mean
/// loss of the final epoch.
pub fn train_epochs(model: &mut Model, data: &LabeledDataset, opt: &OptConfig, tag: u64) -> Result<f64> {
    let mut last = 0.0;
    for epoch in 0..opt.epochs {
        let mut r = rng::seeded(rng::derive(opt.seed, &[tag, epoch as u64]));
        let mut losses = Vec::new();
        for idx in shuffled_batches(data.len(), opt.batch_size, &mut r) {
            let b = data.subset(&idx)?;
            let loss = sgd_step(model, b.inputs(), b.labels(), opt)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    experience: tag as usize,
                    loss,
                });
            }
            losses.push(loss);
        }
        last = mean(&losses);
    }
    Ok(last)
}

fn shuffled_batches(n: usize, batch: usize, r: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(r);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// One SGD update on a batch; returns the pre-update loss.
pub fn sgd_step(model: &mut Model, inputs: &Tensor, labels: &[usize], opt: &OptConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape, true);
    let x = tape.constant(inputs.clone());
    let logits = model.forward(&mut tape, x, &params)?;
    let loss = tape.cross_entropy(logits, labels)?;
    let value = tape.value(loss).item().expect("scalar loss");
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = tape.backward(loss)?;
    let mut updates: Vec<(usize, Tensor)> = Vec::new();
    for (i, (p, v)) in model.parameters().iter().zip(&params).enumerate() {
        if p.trainable {
            if let Some(g) = grads.take(*v) {
                updates.push((i, g));
            }
        }
    }
    let mut scale = opt.lr;
    if let Some(max) = opt.clip_norm {
        let norm = updates.iter().map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        if norm > max {
            scale *= max / norm;
        }
    }
    let ps = model.parameters_mut();
    for (i, g) in updates {
        ps[i].value.data_mut().iter_mut().zip(g.data()).for_each(|(w, d)| *w -= scale * d);
    }
    Ok(value)
}

pub fn test_accuracies(model: &Model, stream: &ExperienceStream) -> Result<Vec<f64>> {
    stream
        .experiences()
        .iter()
        .map(|e| model.accuracy(e.test.inputs(), e.test.labels()))
        .collect()
}
