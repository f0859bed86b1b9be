//! Fixed-capacity replay memory with class-balanced and GSS-greedy policies.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::numerics::{Tape, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferPolicy {
    ClassBalanced,
    GssGreedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GssConfig {
    /// Buffered entries sampled per step for the similarity comparison.
    pub n_sim: usize,
    /// Candidates whose best cosine similarity reaches this are rejected.
    pub threshold: f64,
}

impl Default for GssConfig {
    fn default() -> Self {
        Self {
            n_sim: 10,
            threshold: 0.95,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub input: Tensor,
    pub label: usize,
    /// Best cosine similarity against the memory when admitted (GSS only).
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Added,
    Replaced(usize),
    Rejected,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    policy: BufferPolicy,
    gss: GssConfig,
    entries: Vec<Entry>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, policy: BufferPolicy) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            policy,
            gss: GssConfig::default(),
            entries: Vec::new(),
        })
    }

    pub fn with_gss(mut self, gss: GssConfig) -> Self {
        self.gss = gss;
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> BufferPolicy {
        self.policy
    }

    pub fn gss_config(&self) -> GssConfig {
        self.gss
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.label)
    }

    fn assert_capacity(&self) {
        assert!(self.entries.len() <= self.capacity, "replay buffer over capacity");
    }

    /// Uniform sample without replacement of up to `n` entries.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Option<(Tensor, Vec<usize>)> {
        if self.entries.is_empty() || n == 0 {
            return None;
        }
        let picked = index::sample(rng, self.entries.len(), n.min(self.entries.len()));
        let inputs: Vec<Tensor> = picked.iter().map(|i| self.entries[i].input.clone()).collect();
        let labels = picked.iter().map(|i| self.entries[i].label).collect();
        Some((Tensor::stack(&inputs).expect("uniform entry shapes"), labels))
    }

    /// Class-balanced refill at an experience boundary: each class seen so
    /// far gets `capacity / classes_seen` slots, filled by a uniform random
    /// draw of that class's examples (old classes keep a random subset of
    /// their current entries).
    pub fn update_class_balanced(&mut self, experience: &LabeledDataset, rng: &mut Rng) -> Result<()> {
        let mut by_class: Vec<(usize, Vec<Entry>)> = Vec::new();
        for e in self.entries.drain(..) {
            match by_class.iter_mut().find(|(c, _)| *c == e.label) {
                Some((_, v)) => v.push(e),
                None => by_class.push((e.label, vec![e])),
            }
        }
        let mut new_classes: Vec<usize> = experience.labels().to_vec();
        new_classes.sort_unstable();
        new_classes.dedup();
        for &c in &new_classes {
            if by_class.iter().all(|(k, _)| *k != c) {
                let entries = experience
                    .indices_of(c)
                    .into_iter()
                    .map(|i| {
                        Ok(Entry {
                            input: experience.example(i)?,
                            label: c,
                            score: 0.0,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                by_class.push((c, entries));
            }
        }
        by_class.sort_by_key(|(c, _)| *c);
        let quota = self.capacity / by_class.len().max(1);
        for (_, mut entries) in by_class {
            entries.shuffle(rng);
            entries.truncate(quota);
            self.entries.extend(entries);
        }
        self.assert_capacity();
        Ok(())
    }

    /// GSS-greedy admission of every example in a batch.
    ///
    /// Gradients of `n_sim` randomly chosen buffered entries are computed once
    /// per call. Each candidate's score is its maximum cosine similarity with
    /// those gradients; see [`ReplayBuffer::decide`] for the admission rule.
    pub fn gss_admit_batch(
        &mut self,
        model: &Model,
        inputs: &Tensor,
        labels: &[usize],
        rng: &mut Rng,
    ) -> Result<Vec<Admission>> {
        let n_sim = self.gss.n_sim.min(self.entries.len());
        let sampled = index::sample(rng, self.entries.len(), n_sim).into_vec();
        let mem_grads = sampled
            .iter()
            .map(|&i| example_gradient(model, &self.entries[i].input, self.entries[i].label))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(labels.len());
        for (i, &label) in labels.iter().enumerate() {
            let x = inputs.index_first(i)?;
            let g = example_gradient(model, &x, label)?;
            let sim = mem_grads
                .iter()
                .map(|m| cosine(&g, m))
                .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
            out.push(self.decide(x, label, sim, rng));
        }
        Ok(out)
    }

    /// Admission of one candidate against the model's current gradients.
    pub fn gss_admit(&mut self, model: &Model, input: &Tensor, label: usize, rng: &mut Rng) -> Result<Admission> {
        let batch = Tensor::stack(std::slice::from_ref(input))?;
        Ok(self.gss_admit_batch(model, &batch, &[label], rng)?[0])
    }

    /// Admission rule given a candidate's best cosine similarity `sim` to the
    /// sampled memory (`None` when the memory is empty).
    ///
    /// * not full: always admitted;
    /// * `sim ≥ threshold`: rejected;
    /// * otherwise the entry with the highest stored score is the victim. It
    ///   is replaced outright when the candidate's score is lower; if not,
    ///   the candidate wins with probability `(1+s_victim) / ((1+s_victim) +
    ///   (1+sim))`.
    pub fn decide(&mut self, input: Tensor, label: usize, sim: Option<f64>, rng: &mut Rng) -> Admission {
        let score = sim.unwrap_or(0.0);
        let decision = if !self.is_full() {
            self.entries.push(Entry { input, label, score });
            Admission::Added
        } else if score >= self.gss.threshold {
            Admission::Rejected
        } else {
            let victim = self
                .entries
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bs), (i, e)| if e.score > bs { (i, e.score) } else { (bi, bs) })
                .0;
            let sv = self.entries[victim].score;
            let wins = score < sv || rng.random::<f64>() < (1.0 + sv) / ((1.0 + sv) + (1.0 + score));
            if wins {
                self.entries[victim] = Entry { input, label, score };
                Admission::Replaced(victim)
            } else {
                Admission::Rejected
            }
        };
        self.assert_capacity();
        decision
    }
}

/// Flattened cross-entropy gradient of one example over the trainable
/// parameters.
pub fn example_gradient(model: &Model, input: &Tensor, label: usize) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape, true);
    let x = tape.constant(Tensor::stack(std::slice::from_ref(input))?);
    let logits = model.forward(&mut tape, x, &params)?;
    let loss = tape.cross_entropy(logits, &[label])?;
    let grads = tape.backward(loss)?;
    let mut flat = Vec::with_capacity(model.trainable_count());
    for (p, v) in model.parameters().iter().zip(&params) {
        if p.trainable {
            flat.extend_from_slice(grads.get(*v).map(Tensor::data).unwrap_or(&[]));
        }
    }
    Ok(flat)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_images;
    use crate::rng;

    fn x(v: f64) -> Tensor {
        Tensor::full(vec![1, 2, 2], v)
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(ReplayBuffer::new(0, BufferPolicy::ClassBalanced).is_err());
    }

    #[test]
    fn empty_buffer_always_admits() {
        let mut b = ReplayBuffer::new(2, BufferPolicy::GssGreedy).unwrap();
        let mut r = rng::seeded(0);
        assert_eq!(b.decide(x(0.0), 0, None, &mut r), Admission::Added);
        assert_eq!(b.decide(x(1.0), 1, Some(0.99), &mut r), Admission::Added);
        assert!(b.is_full());
    }

    #[test]
    fn identical_gradient_is_rejected_when_full() {
        let mut b = ReplayBuffer::new(1, BufferPolicy::GssGreedy).unwrap();
        let mut r = rng::seeded(0);
        b.decide(x(0.0), 0, None, &mut r);
        assert_eq!(b.decide(x(1.0), 1, Some(1.0), &mut r), Admission::Rejected);
        assert_eq!(b.entries()[0].label, 0);
    }

    #[test]
    fn orthogonal_candidate_replaces_most_similar_entry() {
        let mut b = ReplayBuffer::new(3, BufferPolicy::GssGreedy).unwrap();
        let mut r = rng::seeded(0);
        for (label, s) in [(0, 0.2), (1, 0.7), (2, 0.4)] {
            b.decide(x(label as f64), label, Some(s), &mut r);
        }
        assert_eq!(b.decide(x(9.0), 9, Some(0.0), &mut r), Admission::Replaced(1));
        assert_eq!(b.labels().collect::<Vec<_>>(), vec![0, 9, 2]);
    }

    #[test]
    fn class_balanced_quota_and_causality() {
        let ds = synth_images(6, 20, 8, 0).unwrap();
        let mut b = ReplayBuffer::new(30, BufferPolicy::ClassBalanced).unwrap();
        let mut r = rng::seeded(1);
        for pair in [[0, 1], [2, 3], [4, 5]] {
            let idx: Vec<usize> = pair.iter().flat_map(|&c| ds.indices_of(c)).collect();
            b.update_class_balanced(&ds.subset(&idx).unwrap(), &mut r).unwrap();
            assert!(b.len() <= 30);
            assert!(b.labels().all(|y| y <= pair[1]));
        }
        for c in 0..6 {
            assert_eq!(b.labels().filter(|&y| y == c).count(), 5);
        }
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }
}
