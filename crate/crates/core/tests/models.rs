use nalgebra::DMatrix;
use rand::Rng as _;

use shapdrift::data::{build_stream, synth_sequences, InputKind};
use shapdrift::models::{esn_step, spectral_radius, Architecture, Model, ModelSpec};
use shapdrift::rng;
use shapdrift::strategies::{train_naive, OptConfig};
use shapdrift::Tensor;

fn esn(units: usize, seed: u64) -> Model {
    let spec = ModelSpec::new(Architecture::Esn, vec![units], 10, seed);
    Model::init(&spec, InputKind::Sequence { steps: 20, features: 6 }).unwrap()
}

fn reservoir(model: &Model) -> &Tensor {
    &model.parameters().iter().find(|p| p.name == "esn.w_reservoir").unwrap().value
}

fn eigen_radius(w: &Tensor) -> f64 {
    let n = w.shape()[0];
    let m = DMatrix::from_row_slice(n, n, w.data());
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Asymptotic growth rate of `‖A^k v‖`, an estimate that shares no code
/// with the library.
fn growth_rate(w: &Tensor) -> f64 {
    let n = w.shape()[0];
    let a = DMatrix::from_row_slice(n, n, w.data());
    let mut v = nalgebra::DVector::from_element(n, 1.0);
    let mut log_norm = 0.0;
    let mut at_500 = 0.0;
    for k in 1..=1000 {
        v = &a * v;
        let s = v.norm();
        log_norm += s.ln();
        v /= s;
        if k == 500 {
            at_500 = log_norm;
        }
    }
    ((log_norm - at_500) / 500.0).exp()
}

#[test]
fn reservoir_is_scaled_to_target_radius() {
    for seed in 0..5 {
        let w = reservoir(&esn(64, seed)).clone();
        let eig = eigen_radius(&w);
        assert!((0.899..=0.901).contains(&eig), "seed {seed}: eigenvalue radius {eig}");
        let growth = growth_rate(&w);
        assert!((0.899..=0.901).contains(&growth), "seed {seed}: growth rate {growth}");
        let ours = spectral_radius(&w).unwrap();
        assert!((ours - eig).abs() < 2e-3, "seed {seed}: {ours} vs {eig}");
    }
}

#[test]
fn echo_states_forget_their_start() {
    let model = esn(64, 7);
    let params = model.parameters();
    let (w_in, w_res) = (&params[0].value, &params[1].value);
    let mut r = rng::seeded(3);
    let mut a: Vec<f64> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut b: Vec<f64> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
    for _ in 0..200 {
        let u: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        a = esn_step(w_in, w_res, 0.5, &a, &u).unwrap();
        b = esn_step(w_in, w_res, 0.5, &b, &u).unwrap();
    }
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(gap < 1e-3, "states still {gap} apart");
}

#[test]
fn esn_training_only_moves_the_readout() {
    let data = synth_sequences(4, 30, 12, 6, 1).unwrap();
    let stream = build_stream(&data, 2, &[0, 1, 2, 3]).unwrap();
    let spec = ModelSpec::new(Architecture::Esn, vec![32], 4, 1);
    let model = Model::init(&spec, data.kind()).unwrap();
    let frozen = model.frozen_checksum();
    let head = model.checksum();
    let mut opt = OptConfig::new(0.3);
    opt.epochs = 2;
    let log = train_naive(model, &stream, &opt).unwrap();
    for snap in &log.snapshots {
        assert_eq!(snap.frozen_checksum(), frozen);
        assert_ne!(snap.checksum(), head);
    }
}

#[test]
fn trainable_counts() {
    let cases = [
        (Architecture::Mlp, vec![8], InputKind::Image { channels: 1, height: 4, width: 4 }, 16 * 8 + 8 + 8 * 3 + 3),
        (Architecture::Lstm, vec![5], InputKind::Sequence { steps: 4, features: 2 }, 2 * 20 + 5 * 20 + 20 + 5 * 3 + 3),
        (Architecture::Conv1d, vec![4], InputKind::Sequence { steps: 6, features: 2 }, 4 * 6 + 4 + 4 * 3 + 3),
        (Architecture::Esn, vec![10], InputKind::Sequence { steps: 4, features: 2 }, 10 * 3 + 3),
    ];
    for (arch, widths, input, want) in cases {
        let model = Model::init(&ModelSpec::new(arch, widths, 3, 0), input).unwrap();
        assert_eq!(model.trainable_count(), want, "{}", arch.name());
    }
}

#[test]
fn logits_do_not_depend_on_batch_companions() {
    let spec = ModelSpec::new(Architecture::Lstm, vec![6], 3, 2);
    let model = Model::init(&spec, InputKind::Sequence { steps: 5, features: 2 }).unwrap();
    let mut r = rng::seeded(1);
    let xs: Vec<Tensor> = (0..4)
        .map(|_| Tensor::new(vec![5, 2], (0..10).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let together = model.logits(&Tensor::stack(&xs).unwrap()).unwrap();
    for (i, x) in xs.iter().enumerate() {
        let alone = model.logits(&Tensor::stack(std::slice::from_ref(x)).unwrap()).unwrap();
        for (a, b) in alone.data().iter().zip(&together.data()[i * 3..i * 3 + 3]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
