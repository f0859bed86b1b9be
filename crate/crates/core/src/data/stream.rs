use rand::seq::index;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Train:test ratio used when a single pool is split per class.
const TRAIN_PARTS: usize = 5;
const TEST_PARTS: usize = 1;

#[derive(Debug, Clone)]
pub struct Experience {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Classes introduced by this experience, in stream order.
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperienceStream {
    experiences: Vec<Experience>,
    num_classes: usize,
}

impl ExperienceStream {
    pub fn experiences(&self) -> &[Experience] {
        &self.experiences
    }

    pub fn len(&self) -> usize {
        self.experiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn first(&self) -> &Experience {
        &self.experiences[0]
    }

    /// Index of the experience that introduces `class`.
    pub fn experience_of(&self, class: usize) -> Option<usize> {
        self.experiences.iter().position(|e| e.classes.contains(&class))
    }

    /// Union of all training sets, in experience order.
    pub fn joint_train(&self) -> Result<LabeledDataset> {
        let mut it = self.experiences.iter();
        let first = it.next().ok_or_else(|| Error::invalid("empty stream"))?.train.clone();
        it.try_fold(first, |acc, e| acc.concat(&e.train))
    }
}

/// Splits a single labelled pool into a class-incremental stream. Each class
/// is split train/test 5:1 in dataset order.
pub fn build_stream(data: &LabeledDataset, experiences: usize, class_order: &[usize]) -> Result<ExperienceStream> {
    let mut train_idx = vec![Vec::new(); data.num_classes()];
    let mut test_idx = vec![Vec::new(); data.num_classes()];
    for c in 0..data.num_classes() {
        let all = data.indices_of(c);
        let n_train = all.len() * TRAIN_PARTS / (TRAIN_PARTS + TEST_PARTS);
        train_idx[c] = all[..n_train].to_vec();
        test_idx[c] = all[n_train..].to_vec();
    }
    assemble(data, data, &train_idx, &test_idx, experiences, class_order)
}

/// Builds a stream from pre-split train and test pools (e.g. the MNIST
/// training and test files).
pub fn build_stream_split(
    train: &LabeledDataset,
    test: &LabeledDataset,
    experiences: usize,
    class_order: &[usize],
) -> Result<ExperienceStream> {
    let classes = train.num_classes().max(test.num_classes());
    let train_idx: Vec<_> = (0..classes).map(|c| train.indices_of(c)).collect();
    let test_idx: Vec<_> = (0..classes).map(|c| test.indices_of(c)).collect();
    assemble(train, test, &train_idx, &test_idx, experiences, class_order)
}

fn assemble(
    train: &LabeledDataset,
    test: &LabeledDataset,
    train_idx: &[Vec<usize>],
    test_idx: &[Vec<usize>],
    experiences: usize,
    class_order: &[usize],
) -> Result<ExperienceStream> {
    let c = train_idx.len();
    if experiences == 0 || c % experiences != 0 {
        return Err(Error::invalid(format!(
            "{c} classes cannot be divided evenly into {experiences} experiences"
        )));
    }
    let mut seen = vec![false; c];
    if class_order.len() != c || class_order.iter().any(|&k| k >= c || std::mem::replace(&mut seen[k], true)) {
        return Err(Error::invalid(format!(
            "class order {class_order:?} is not a permutation of 0..{c}"
        )));
    }
    let per = c / experiences;
    let experiences = class_order
        .chunks(per)
        .map(|classes| {
            let tr: Vec<usize> = classes.iter().flat_map(|&k| train_idx[k].iter().copied()).collect();
            let te: Vec<usize> = classes.iter().flat_map(|&k| test_idx[k].iter().copied()).collect();
            Ok(Experience {
                train: train.subset(&tr)?,
                test: test.subset(&te)?,
                classes: classes.to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperienceStream {
        experiences,
        num_classes: c,
    })
}

/// Background pool and probe set on which explanations are tracked.
#[derive(Debug, Clone)]
pub struct EvaluationSlice {
    pub background: LabeledDataset,
    pub probes: LabeledDataset,
}

/// Samples `background_n` examples (without replacement) from the first
/// experience's training split and `probes_per_class` test examples of each
/// first-experience class.
pub fn make_slice(
    stream: &ExperienceStream,
    background_n: usize,
    probes_per_class: usize,
    seed: u64,
) -> Result<EvaluationSlice> {
    let first = stream.experiences().first().ok_or_else(|| Error::invalid("empty stream"))?;
    if background_n > first.train.len() {
        return Err(Error::Insufficient {
            what: "background".into(),
            needed: background_n,
            available: first.train.len(),
        });
    }
    let mut rng = rng::seeded(seed);
    let mut bg = index::sample(&mut rng, first.train.len(), background_n).into_vec();
    bg.sort_unstable();

    let mut probe_idx = Vec::with_capacity(probes_per_class * first.classes.len());
    for &class in &first.classes {
        let pool = first.test.indices_of(class);
        if pool.len() < probes_per_class {
            return Err(Error::Insufficient {
                what: format!("probes of class {class}"),
                needed: probes_per_class,
                available: pool.len(),
            });
        }
        let mut pick = index::sample(&mut rng, pool.len(), probes_per_class).into_vec();
        pick.sort_unstable();
        probe_idx.extend(pick.into_iter().map(|i| pool[i]));
    }
    Ok(EvaluationSlice {
        background: first.train.subset(&bg)?,
        probes: first.test.subset(&probe_idx)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_images;

    fn pool() -> LabeledDataset {
        synth_images(10, 12, 8, 3).unwrap()
    }

    #[test]
    fn identity_order_pairs_classes() {
        let s = build_stream(&pool(), 5, &(0..10).collect::<Vec<_>>()).unwrap();
        let sets: Vec<_> = s.experiences().iter().map(|e| e.classes.clone()).collect();
        assert_eq!(sets, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]);
        for e in s.experiences() {
            assert!(e.train.labels().iter().chain(e.test.labels()).all(|y| e.classes.contains(y)));
            assert_eq!(e.train.len(), 20);
            assert_eq!(e.test.len(), 4);
        }
    }

    #[test]
    fn singleton_and_reversed_orders() {
        let s = build_stream(&pool(), 10, &(0..10).collect::<Vec<_>>()).unwrap();
        assert!(s.experiences().iter().enumerate().all(|(i, e)| e.classes == vec![i]));
        let rev: Vec<_> = (0..10).rev().collect();
        let s = build_stream(&pool(), 5, &rev).unwrap();
        assert_eq!(s.first().classes, vec![9, 8]);
        assert_eq!(s.experiences()[4].classes, vec![1, 0]);
    }

    #[test]
    fn rejects_bad_partitions() {
        let order: Vec<_> = (0..10).collect();
        assert!(build_stream(&pool(), 3, &order).is_err());
        assert!(build_stream(&pool(), 5, &[0, 1, 2]).is_err());
        assert!(build_stream(&pool(), 5, &[0, 0, 2, 3, 4, 5, 6, 7, 8, 9]).is_err());
    }

    #[test]
    fn slice_counts_and_purity() {
        let s = build_stream(&pool(), 5, &(0..10).collect::<Vec<_>>()).unwrap();
        let sl = make_slice(&s, 15, 2, 0).unwrap();
        assert_eq!(sl.background.len(), 15);
        assert_eq!(sl.probes.labels(), &[0, 0, 1, 1]);
        let one = make_slice(&s, 1, 1, 0).unwrap();
        assert_eq!(one.probes.len(), 2);
        assert!(matches!(make_slice(&s, 21, 1, 0), Err(Error::Insufficient { .. })));
        assert!(matches!(make_slice(&s, 1, 3, 0), Err(Error::Insufficient { .. })));
    }
}
