//! Acceptance suite. Runs as a plain binary (no libtest harness) so every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use shapdrift::data::{build_stream, make_slice, synth_images, synth_sequences, ExperienceStream, InputKind};
use shapdrift::explainers::{
    exact_shapley_all, gradient_shap_all, sampling_shapley_all, Engine, Explainable, Explainer, LinearModel, ShapConfig,
};
use shapdrift::models::{argmax, Architecture, Model, ModelSpec};
use shapdrift::protocol::{metric_m, metric_m_pool, metric_m_pool_processed, run_protocol, MetricName, ProtocolConfig, ProtocolOutcome};
use shapdrift::rng;
use shapdrift::runner::{self, RunConfig};
use shapdrift::strategies::{OptConfig, Strategy};
use shapdrift::{Error, Result, Tape, Tensor};

type Check = std::result::Result<String, String>;

fn main() -> ExitCode {
    let start = Instant::now();
    let runs = SharedRuns::compute();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("metric correctness", Box::new(metric_correctness)),
        ("shapley oracles", Box::new(shapley_oracles)),
        ("autodiff vs finite differences", Box::new(autodiff_soundness)),
        ("gradientshap completeness", Box::new(gradient_completeness)),
        ("forgetting regime", Box::new(|| forgetting_regime(&runs))),
        ("naive drifts more than replay on target classes", Box::new(|| target_ordering(&runs))),
        ("naive preserves last classes better than er", Box::new(|| last_class_ordering(&runs))),
        ("lstm drifts more than esn under er", Box::new(|| recurrent_ordering(&runs))),
        ("joint against itself is zero", Box::new(|| joint_self_consistency(&runs))),
        ("reproducible drift csv", Box::new(reproducibility)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal_tensor(shape: Vec<usize>, scale: f64, r: &mut rng::Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, r)).collect();
    Tensor::new(shape, data).unwrap()
}

// ---------------------------------------------------------------- metrics

fn oracle_m(s: &[f64], j: &[f64]) -> f64 {
    let clamp = |v: &[f64]| v.iter().map(|x| if *x > 0.0 { *x } else { 0.0 }).collect::<Vec<_>>();
    let (s, j) = (clamp(s), clamp(j));
    let mut ds = 0.0;
    let mut dj = 0.0;
    for i in 0..s.len() {
        ds += s[i];
        dj += j[i];
    }
    (ds - dj) * (ds - dj) / s.len() as f64
}

fn oracle_pool(map: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    let var = map.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = (var + 1e-8).sqrt();
    let z: Vec<f64> = map.iter().map(|v| ((v - mean) / sd).max(0.0)).collect();
    let mut out = Vec::new();
    for oy in 0..h / k {
        for ox in 0..w / k {
            let mut acc = 0.0;
            for dy in 0..k {
                for dx in 0..k {
                    acc += z[(oy * k + dy) * w + ox * k + dx];
                }
            }
            out.push(acc / (k * k) as f64);
        }
    }
    out
}

fn oracle_m_pool(s: &[f64], j: &[f64], h: usize, w: usize, k: usize) -> f64 {
    let (ps, pj) = (oracle_pool(s, h, w, k), oracle_pool(j, h, w, k));
    ps.iter().zip(&pj).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / ps.len() as f64
}

fn metric_correctness() -> Check {
    let t = |v: &[f64]| Tensor::from_vec(v.to_vec());
    let m1 = metric_m(&t(&[1.0, 2.0, 3.0]), &t(&[0.0, 1.0, 2.0])).map_err(|e| e.to_string())?;
    let m2 = metric_m(&t(&[3.0, 2.0, 1.0]), &t(&[0.0, 1.0, 2.0])).map_err(|e| e.to_string())?;
    ensure(m1 == 3.0 && m2 == 3.0, || format!("hand M cases gave {m1} and {m2}"))?;
    let mut block = vec![0.0; 64];
    for y in 0..4 {
        for x in 0..4 {
            block[y * 8 + x] = 1.0;
        }
    }
    let s = Tensor::new(vec![8, 8], block).unwrap();
    let p = metric_m_pool_processed(&s, &Tensor::zeros(vec![8, 8]), 4).map_err(|e| e.to_string())?;
    ensure(p == 0.25, || format!("pooling fixture gave {p}"))?;

    let mut r = rng::seeded(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (h, w) = (r.random_range(4..=20), r.random_range(4..=20));
        let n = h * w;
        let s = normal_tensor(vec![h, w], r.random_range(0.01..3.0), &mut r);
        let j = normal_tensor(vec![h, w], r.random_range(0.01..3.0), &mut r);
        let clamped = |x: &Tensor| x.map(|v| v.max(0.0));
        let got_m = metric_m(&clamped(&s), &clamped(&j)).unwrap();
        let want_m = oracle_m(s.data(), j.data());
        let got_p = metric_m_pool(&s, &j, 4).unwrap();
        let want_p = oracle_m_pool(s.data(), j.data(), h, w, 4);
        for (g, w_) in [(got_m, want_m), (got_p, want_p)] {
            let err = (g - w_).abs() / w_.abs().max(1.0);
            worst = worst.max(err);
            ensure(err <= 1e-12, || format!("{n}-pixel pair: got {g}, oracle {w_}"))?;
        }
    }
    Ok(format!("hand cases exact, 1000 random pairs within {worst:.1e}"))
}

// ---------------------------------------------------------------- shapley

/// A game on `k` players given by a closure; only evaluation is supported.
struct Game<F: Fn(&[f64]) -> f64> {
    k: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64> Explainable for Game<F> {
    fn num_outputs(&self) -> usize {
        1
    }

    fn outputs(&self, batch: &Tensor) -> Result<Tensor> {
        let rows: Vec<f64> = batch.data().chunks(self.k).map(&self.f).collect();
        let n = rows.len();
        Tensor::new(vec![n, 1], rows)
    }

    fn output_gradients(&self, _: &Tensor, _: &[usize]) -> Result<(Tensor, Vec<Tensor>)> {
        Err(Error::InvalidArgument("game has no gradient".into()))
    }
}

fn check_axioms() -> std::result::Result<usize, String> {
    // x0 and x1 are symmetric, x6 is a dummy, and the rest interact.
    let game = Game {
        k: 7,
        f: |x: &[f64]| x[0] * x[1] + 2.0 * x[2] + x[3] * x[4] * x[5] + (x[0] + x[1] + x[3] - 1.0).max(0.0),
    };
    let mut r = rng::seeded(5);
    let mut checked = 0;
    for _ in 0..50 {
        let mut x = normal_tensor(vec![7], 1.0, &mut r);
        let v = x.data()[0];
        x.data_mut()[1] = v;
        let mut b = normal_tensor(vec![7], 1.0, &mut r);
        let v = b.data()[0];
        b.data_mut()[1] = v;
        let map = exact_shapley_all(&game, &x, &b).map_err(|e| e.to_string())?.remove(0);
        let fx = (game.f)(x.data());
        let fb = (game.f)(b.data());
        let phi = map.phi.data();
        ensure((map.phi0 - fb).abs() <= 1e-12, || format!("phi0 {} vs f(baseline) {fb}", map.phi0))?;
        ensure((map.total() - (fx - map.phi0)).abs() <= 1e-9, || format!("efficiency off by {}", map.total() - fx + map.phi0))?;
        ensure((phi[0] - phi[1]).abs() <= 1e-9, || format!("symmetric players differ: {} vs {}", phi[0], phi[1]))?;
        ensure(phi[6].abs() <= 1e-9, || format!("dummy got {}", phi[6]))?;
        checked += 1;
    }
    Ok(checked)
}

fn sampling_vs_exact() -> std::result::Result<String, String> {
    let mut r = rng::seeded(21);
    let mut inside = 0usize;
    let mut total = 0usize;
    let mut worst_sigma = 0.0f64;
    for m in 0..20u64 {
        let k = r.random_range(4..=12);
        let spec = ModelSpec::new(Architecture::Mlp, vec![8], 3, 100 + m);
        let model = Model::init(&spec, InputKind::Sequence { steps: 1, features: k }).map_err(|e| e.to_string())?;
        let x = normal_tensor(vec![1, k], 1.5, &mut r);
        let b = normal_tensor(vec![1, 1, k], 1.5, &mut r);
        let exact = exact_shapley_all(&model, &x, &b.reshape(vec![1, k]).unwrap()).map_err(|e| e.to_string())?;
        let cfg = ShapConfig {
            engine: Engine::Sampling,
            n_samples: 2000,
            noise_std: 0.0,
            seed: m,
        };
        let est = sampling_shapley_all(&model, &x, &b, &cfg).map_err(|e| e.to_string())?;
        for (e, s) in exact.iter().zip(&est) {
            for ((ev, sv), se) in e.phi.data().iter().zip(s.map.phi.data()).zip(s.stderr.data()) {
                let dev = (ev - sv).abs();
                total += 1;
                if dev <= 3.0 * se + 1e-9 {
                    inside += 1;
                }
                if *se > 0.0 {
                    worst_sigma = worst_sigma.max(dev / se);
                } else {
                    ensure(dev <= 1e-9, || format!("zero-variance feature off by {dev}"))?;
                }
            }
        }
    }
    // Hundreds of coordinates are compared, so a handful beyond 3 sigma is
    // expected; require 99% inside and nothing beyond 5 sigma.
    let frac = inside as f64 / total as f64;
    ensure(frac >= 0.99 && worst_sigma <= 5.0, || {
        format!("{inside}/{total} within 3 sigma, worst {worst_sigma:.2} sigma")
    })?;
    Ok(format!("{inside}/{total} within 3 sigma (worst {worst_sigma:.2})"))
}

fn engines_agree_on_linear() -> std::result::Result<f64, String> {
    let mut r = rng::seeded(8);
    let k = 6;
    let linear = LinearModel {
        weights: normal_tensor(vec![k, 3], 1.0, &mut r),
        bias: vec![0.3, -0.2, 1.1],
    };
    let affine = Model::init(&ModelSpec::new(Architecture::Mlp, vec![], 3, 4), InputKind::Sequence { steps: 1, features: k })
        .map_err(|e| e.to_string())?;
    let models: [&dyn Explainable; 2] = [&linear, &affine];
    let mut worst = 0.0f64;
    for model in models {
        for trial in 0..5 {
            let x = normal_tensor(vec![1, k], 1.0, &mut r);
            let bg = normal_tensor(vec![1, 1, k], 1.0, &mut r);
            let mut results = Vec::new();
            for engine in [Engine::Exact, Engine::Sampling, Engine::Gradient] {
                let cfg = ShapConfig {
                    engine,
                    n_samples: 64,
                    noise_std: 0.0,
                    seed: trial,
                };
                let ex = Explainer::new(model, &bg, &cfg).map_err(|e| e.to_string())?;
                results.push(ex.explain_raw(&x, 0).map_err(|e| e.to_string())?);
            }
            for other in &results[1..] {
                for (a, b) in results[0].iter().zip(other) {
                    worst = worst.max((a.phi0 - b.phi0).abs());
                    for (u, v) in a.phi.data().iter().zip(b.phi.data()) {
                        worst = worst.max((u - v).abs());
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-9, || format!("engines disagree by {worst:.2e}"))?;
    Ok(worst)
}

fn shapley_oracles() -> Check {
    let games = check_axioms()?;
    let sampling = sampling_vs_exact()?;
    let worst = engines_agree_on_linear()?;
    Ok(format!("axioms on {games} games; sampling {sampling}; engines agree within {worst:.1e}"))
}

// ---------------------------------------------------------------- autodiff

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-6)
}

/// Mean cross-entropy plus a weighted sum of one logit column, evaluated
/// with plain forward passes.
fn objective(model: &Model, x: &Tensor, labels: &[usize], class: usize, weights: &[f64]) -> f64 {
    let logits = model.logits(x).unwrap();
    let c = model.classes();
    let mut total = 0.0;
    for (i, row) in logits.data().chunks(c).enumerate() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += (lse - row[labels[i]]) / labels.len() as f64;
        total += weights[i] * row[class];
    }
    total
}

fn gradcheck(arch: Architecture, widths: Vec<usize>, input: InputKind, instance: u64) -> std::result::Result<f64, String> {
    const H: f64 = 1e-5;
    let mut r = rng::seeded(rng::derive(instance, &[arch as u64]));
    let mut spec = ModelSpec::new(arch, widths, 3, instance);
    spec.leak = 0.6;
    let mut model = Model::init(&spec, input).map_err(|e| e.to_string())?;
    let n = 3;
    let mut shape = vec![n];
    shape.extend(input.example_shape());
    let x = normal_tensor(shape, 1.0, &mut r);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
    let class = r.random_range(0..3);
    let weights: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();

    let mut tape = Tape::new();
    let params = model.register(&mut tape, true);
    let xv = tape.var(x.clone(), true);
    let logits = model.forward(&mut tape, xv, &params).map_err(|e| e.to_string())?;
    let ce = tape.cross_entropy(logits, &labels).map_err(|e| e.to_string())?;
    let col = tape.column(logits, class).map_err(|e| e.to_string())?;
    let w = tape.constant(Tensor::new(tape.value(col).shape().to_vec(), weights.clone()).unwrap());
    let weighted = tape.mul(col, w).map_err(|e| e.to_string())?;
    let head = tape.sum(weighted);
    let loss = tape.add(ce, head).map_err(|e| e.to_string())?;
    let grads = tape.backward(loss).map_err(|e| e.to_string())?;

    let analytic_x = grads.get(xv).ok_or("no input gradient")?.data().to_vec();
    let mut numeric_x = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        numeric_x.push((objective(&model, &xp, &labels, class, &weights) - objective(&model, &xm, &labels, class, &weights)) / (2.0 * H));
    }
    let mut worst = rel_err(&analytic_x, &numeric_x);

    let mut analytic_p = Vec::new();
    let mut numeric_p = Vec::new();
    for (pi, var) in params.iter().enumerate() {
        if !model.parameters()[pi].trainable {
            ensure(grads.get(*var).is_none(), || "frozen parameter received a gradient".into())?;
            continue;
        }
        analytic_p.extend_from_slice(grads.get(*var).ok_or("missing parameter gradient")?.data());
        for j in 0..model.parameters()[pi].value.len() {
            let orig = model.parameters()[pi].value.data()[j];
            model.parameters_mut()[pi].value.data_mut()[j] = orig + H;
            let up = objective(&model, &x, &labels, class, &weights);
            model.parameters_mut()[pi].value.data_mut()[j] = orig - H;
            let down = objective(&model, &x, &labels, class, &weights);
            model.parameters_mut()[pi].value.data_mut()[j] = orig;
            numeric_p.push((up - down) / (2.0 * H));
        }
    }
    worst = worst.max(rel_err(&analytic_p, &numeric_p));
    Ok(worst)
}

fn autodiff_soundness() -> Check {
    let cases: Vec<(Architecture, Vec<usize>, InputKind)> = vec![
        (Architecture::Mlp, vec![6, 5], InputKind::Image { channels: 1, height: 4, width: 4 }),
        (Architecture::Cnn2d, vec![2, 3, 4], InputKind::Image { channels: 2, height: 10, width: 10 }),
        (Architecture::Conv1d, vec![4], InputKind::Sequence { steps: 6, features: 3 }),
        (Architecture::Lstm, vec![4], InputKind::Sequence { steps: 5, features: 3 }),
        (Architecture::Esn, vec![8], InputKind::Sequence { steps: 6, features: 3 }),
    ];
    let mut parts = Vec::new();
    for (arch, widths, input) in cases {
        let mut worst = 0.0f64;
        for instance in 0..100 {
            let err = gradcheck(arch, widths.clone(), input, instance)?;
            ensure(err <= 1e-4, || format!("{} instance {instance}: relative error {err:.2e}", arch.name()))?;
            worst = worst.max(err);
        }
        parts.push(format!("{} {worst:.1e}", arch.name()));
    }
    Ok(format!("worst relative error per architecture: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- completeness

fn gradient_completeness() -> Check {
    let mut r = rng::seeded(17);
    let k = 20;
    let input = InputKind::Sequence { steps: 1, features: k };
    let model = Model::init(&ModelSpec::new(Architecture::Mlp, vec![32], 4, 9), input).map_err(|e| e.to_string())?;
    let background = normal_tensor(vec![50, 1, k], 1.0, &mut r);
    let mut worst = 0.0f64;
    for probe in 0..20u64 {
        let x = normal_tensor(vec![1, k], 2.0, &mut r);
        let cfg = ShapConfig {
            engine: Engine::Gradient,
            n_samples: 2000,
            noise_std: 0.0,
            seed: probe,
        };
        let maps = gradient_shap_all(&model, &x, &background, &cfg).map_err(|e| e.to_string())?;
        let out = model.logits(&Tensor::stack(&[x.clone()]).unwrap()).map_err(|e| e.to_string())?;
        let class = argmax(out.data());
        let gap = out.data()[class] - maps[class].phi0;
        let rel = (maps[class].total() - gap).abs() / gap.abs();
        ensure(rel <= 0.05, || format!("probe {probe}: sum {} vs gap {gap} ({:.1}%)", maps[class].total(), rel * 100.0))?;
        worst = worst.max(rel);
    }
    Ok(format!("20 probes, worst gap error {:.3}%", worst * 100.0))
}

// ---------------------------------------------------------------- protocol runs

const SEEDS: [u64; 3] = [0, 1, 2];

struct SeedOutcome {
    stream: ExperienceStream,
    outcome: ProtocolOutcome,
}

struct SequenceOutcome {
    lstm: SeedOutcome,
    esn: SeedOutcome,
    esn_initial_checksum: u64,
}

struct SharedRuns {
    images: Vec<std::result::Result<SeedOutcome, String>>,
    sequences: Vec<std::result::Result<SequenceOutcome, String>>,
}

fn protocol_config(lr: f64, seed: u64) -> ProtocolConfig {
    let mut opt = OptConfig::new(lr);
    opt.batch_size = 32;
    opt.epochs = 4;
    opt.seed = seed;
    let shap = ShapConfig {
        n_samples: 50,
        seed,
        ..ShapConfig::default()
    };
    let mut cfg = ProtocolConfig::new(opt, 200, shap);
    cfg.joint_epochs = Some(16);
    cfg
}

fn run_one(stream: ExperienceStream, spec: &ModelSpec, strategies: &[Strategy], lr: f64, seed: u64) -> Result<SeedOutcome> {
    let slice = make_slice(&stream, 50, 10, seed)?;
    let outcome = run_protocol(&stream, strategies, spec, &slice, &protocol_config(lr, seed))?;
    Ok(SeedOutcome { stream, outcome })
}

fn image_run(seed: u64) -> Result<SeedOutcome> {
    let stream = build_stream(&synth_images(10, 120, 16, seed)?, 5, &(0..10).collect::<Vec<_>>())?;
    let spec = ModelSpec::new(Architecture::Mlp, vec![64], 10, seed);
    run_one(stream, &spec, &[Strategy::Naive, Strategy::Er, Strategy::Gss, Strategy::Joint], 0.1, seed)
}

fn sequence_run(seed: u64) -> Result<SequenceOutcome> {
    let data = synth_sequences(10, 120, 24, 12, seed)?;
    let order: Vec<usize> = (0..10).collect();
    let lstm_spec = ModelSpec::new(Architecture::Lstm, vec![32], 10, seed);
    let mut esn_spec = ModelSpec::new(Architecture::Esn, vec![64], 10, seed);
    esn_spec.leak = 0.3;
    let stream = build_stream(&data, 5, &order)?;
    let esn_initial_checksum = Model::init(&esn_spec, stream.first().train.kind())?.frozen_checksum();
    let (lstm, esn) = std::thread::scope(|s| {
        let lstm = s.spawn(|| run_one(stream.clone(), &lstm_spec, &[Strategy::Naive, Strategy::Er], 0.3, seed));
        let esn = s.spawn(|| run_one(stream.clone(), &esn_spec, &[Strategy::Naive, Strategy::Er], 0.3, seed));
        (lstm.join().expect("lstm run"), esn.join().expect("esn run"))
    });
    Ok(SequenceOutcome {
        lstm: lstm?,
        esn: esn?,
        esn_initial_checksum,
    })
}

impl SharedRuns {
    fn compute() -> Self {
        std::thread::scope(|s| {
            let images: Vec<_> = SEEDS.iter().map(|&seed| s.spawn(move || image_run(seed))).collect();
            let sequences: Vec<_> = SEEDS.iter().map(|&seed| s.spawn(move || sequence_run(seed))).collect();
            Self {
                images: images.into_iter().map(|h| h.join().expect("image run").map_err(|e| e.to_string())).collect(),
                sequences: sequences.into_iter().map(|h| h.join().expect("sequence run").map_err(|e| e.to_string())).collect(),
            }
        })
    }

    fn images(&self) -> std::result::Result<Vec<&SeedOutcome>, String> {
        self.images.iter().map(|r| r.as_ref().map_err(Clone::clone)).collect()
    }

    fn sequences(&self) -> std::result::Result<Vec<&SequenceOutcome>, String> {
        self.sequences.iter().map(|r| r.as_ref().map_err(Clone::clone)).collect()
    }
}

fn final_mean(o: &SeedOutcome, strategy: &str, classes: &[usize], metric: MetricName) -> f64 {
    let report = &o.outcome.report;
    let last = report.final_experience(strategy).expect("strategy present");
    report.mean_over(strategy, last, classes, metric).expect("metric present")
}

fn accuracy(o: &SeedOutcome, strategy: Strategy) -> &shapdrift::strategies::TrainLog {
    o.outcome.log(strategy).expect("strategy trained")
}

fn majority(passes: &[bool]) -> bool {
    passes.iter().filter(|p| **p).count() * 2 > passes.len()
}

fn forgetting_regime(runs: &SharedRuns) -> Check {
    let mut rows = Vec::new();
    let mut image_pass = Vec::new();
    for (seed, o) in SEEDS.iter().zip(runs.images()?) {
        let naive_e1 = accuracy(o, Strategy::Naive).final_accuracy_on(0);
        let er_avg = accuracy(o, Strategy::Er).final_average_accuracy();
        image_pass.push(naive_e1 < 0.2 && er_avg > 0.7);
        rows.push(format!("img s{seed} naive e1 {naive_e1:.2} er avg {er_avg:.2}"));
    }
    let mut seq_pass = Vec::new();
    for (seed, o) in SEEDS.iter().zip(runs.sequences()?) {
        let naive = accuracy(&o.lstm, Strategy::Naive).final_average_accuracy();
        let er = accuracy(&o.lstm, Strategy::Er).final_average_accuracy();
        seq_pass.push(naive < 0.3 && er > 0.6);
        rows.push(format!("lstm s{seed} naive {naive:.2} er {er:.2}"));
    }
    let detail = rows.join("; ");
    ensure(majority(&image_pass) && majority(&seq_pass), || detail.clone())?;
    Ok(detail)
}

fn target_ordering(runs: &SharedRuns) -> Check {
    let mut rows = Vec::new();
    let mut pass = Vec::new();
    for (seed, o) in SEEDS.iter().zip(runs.images()?) {
        let targets = o.stream.first().classes.clone();
        let m = |s: &str| final_mean(o, s, &targets, MetricName::M);
        let p = |s: &str| final_mean(o, s, &targets, MetricName::MPool);
        let ok = m("naive") > m("er") && m("naive") > m("gss") && p("naive") > p("er") && p("naive") > p("gss");
        pass.push(ok);
        rows.push(format!(
            "s{seed} M {:.2e}/{:.2e}/{:.2e} M_pool {:.2e}/{:.2e}/{:.2e}",
            m("naive"),
            m("er"),
            m("gss"),
            p("naive"),
            p("er"),
            p("gss")
        ));
    }
    let detail = format!("naive/er/gss: {}", rows.join("; "));
    ensure(majority(&pass), || detail.clone())?;
    Ok(detail)
}

fn last_class_ordering(runs: &SharedRuns) -> Check {
    let mut rows = Vec::new();
    let mut pass = Vec::new();
    for (seed, o) in SEEDS.iter().zip(runs.images()?) {
        let last = o.stream.experiences().last().expect("non-empty").classes.clone();
        let naive = final_mean(o, "naive", &last, MetricName::M);
        let er = final_mean(o, "er", &last, MetricName::M);
        pass.push(naive < er);
        rows.push(format!("s{seed} classes {last:?} naive {naive:.2e} er {er:.2e}"));
    }
    let detail = rows.join("; ");
    ensure(majority(&pass), || detail.clone())?;
    Ok(detail)
}

fn recurrent_ordering(runs: &SharedRuns) -> Check {
    let mut rows = Vec::new();
    let mut pass = Vec::new();
    for (seed, o) in SEEDS.iter().zip(runs.sequences()?) {
        let targets = o.lstm.stream.first().classes.clone();
        let m_lstm = final_mean(&o.lstm, "er", &targets, MetricName::M);
        let m_esn = final_mean(&o.esn, "er", &targets, MetricName::M);
        let a_lstm = accuracy(&o.lstm, Strategy::Er).final_average_accuracy();
        let a_esn = accuracy(&o.esn, Strategy::Er).final_average_accuracy();
        pass.push(m_lstm > m_esn && a_esn >= 0.9 * a_lstm);
        rows.push(format!("s{seed} M lstm {m_lstm:.2e} esn {m_esn:.2e} acc lstm {a_lstm:.2} esn {a_esn:.2}"));

        let logs = o.esn.outcome.logs.iter().chain(std::iter::once(&o.esn.outcome.joint));
        for log in logs {
            for (e, snap) in log.snapshots.iter().enumerate() {
                ensure(snap.frozen_checksum() == o.esn_initial_checksum, || {
                    format!("s{seed}: esn reservoir changed in {} after e{e}", log.strategy.name())
                })?;
            }
        }
    }
    let detail = format!("{}; reservoir checksums unchanged", rows.join("; "));
    ensure(majority(&pass), || detail.clone())?;
    Ok(detail)
}

fn joint_self_consistency(runs: &SharedRuns) -> Check {
    let mut rows = 0;
    for o in runs.images()? {
        let report = &o.outcome.report;
        let experiences = report.experiences("joint");
        ensure(experiences.len() == o.stream.len(), || format!("joint covers {} experiences", experiences.len()))?;
        for e in experiences {
            for c in 0..report.num_classes() {
                for metric in [MetricName::M, MetricName::MPool] {
                    let v = report.value("joint", e, c, metric).ok_or_else(|| format!("missing joint row e{e} c{c}"))?;
                    ensure(v == 0.0, || format!("joint e{e} class {c} {} = {v:e}", metric.as_str()))?;
                    rows += 1;
                }
            }
        }
    }
    // The same check through a fresh explainer: re-explaining the Joint model
    // and comparing with itself must also be exactly zero.
    let o = runs.images()?[0];
    let slice = make_slice(&o.stream, 50, 10, 0).map_err(|e| e.to_string())?;
    let shap = protocol_config(0.1, 0).shap;
    let joint = &o.outcome.joint.snapshots[0];
    let first = Explainer::new(joint, slice.background.inputs(), &shap).map_err(|e| e.to_string())?;
    let second = Explainer::new(joint, slice.background.inputs(), &shap).map_err(|e| e.to_string())?;
    for i in 0..slice.probes.len() {
        let x = slice.probes.example(i).unwrap();
        let a = first.explain_raw(&x, i).map_err(|e| e.to_string())?;
        let b = second.explain_raw(&x, i).map_err(|e| e.to_string())?;
        for (s, j) in a.iter().zip(&b) {
            let m = metric_m(&s.clamp_positive().phi, &j.clamp_positive().phi).unwrap();
            let p = metric_m_pool(&s.phi, &j.phi, 4).unwrap();
            ensure(m == 0.0 && p == 0.0, || format!("probe {i}: M {m:e} M_pool {p:e}"))?;
        }
    }
    Ok(format!("{rows} joint rows exactly 0; re-explained probes agree exactly"))
}

// ---------------------------------------------------------------- reproducibility

fn reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = |out: &std::path::Path| {
        RunConfig::from_toml(&format!(
            r#"
strategies = ["naive", "er", "gss", "joint"]
seeds = [3, 4]
out_dir = "{}"
[benchmark]
kind = "synth-images"
per_class = 40
side = 12
[model]
architecture = "mlp"
widths = [16]
[opt]
lr = 0.1
batch_size = 32
epochs = 2
[buffer]
capacity = 60
[shap]
n_samples = 20
background_n = 20
probes_per_class = 4
"#,
            out.display()
        ))
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    runner::run(&config(&a).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    runner::run(&config(&b).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut bytes = 0;
    for seed in [3, 4] {
        let read = |root: &std::path::Path| std::fs::read(root.join(format!("seed-{seed}")).join("drift.csv")).map_err(|e| e.to_string());
        let (x, y) = (read(&a)?, read(&b)?);
        ensure(!x.is_empty() && x == y, || format!("seed {seed}: drift.csv differs between runs"))?;
        bytes += x.len();
    }
    Ok(format!("two runs, 2 seeds, {bytes} identical bytes"))
}
