//! Explanation-drift protocol.
//!
//! Every strategy is trained over the stream. After each experience its
//! snapshot explains every probe for every class, and each map is compared
//! against the Joint snapshot's map for the same (probe, class) with [`metric_m`]
//! and, for images, [`metric_m_pool`]. Metrics are averaged over probes.

mod metrics;
mod report;

pub use metrics::{
    metric_m, metric_m_pool, metric_m_pool_processed, metric_m_pool_with, pool_map, pooled_mse, preprocess_for_pool,
    PoolConfig, PoolOrder,
};
pub use report::{write_accuracy_csv, AccuracyRecord, DriftRecord, DriftReport, MetricName};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{EvaluationSlice, ExperienceStream};
use crate::error::{Error, Result};
use crate::explainers::{Explainer, ShapConfig};
use crate::models::{Model, ModelSpec};
use crate::numerics::Tensor;
use crate::strategies::{train_joint, train_naive, train_replay, BufferPolicy, GssConfig, OptConfig, ReplayBuffer, Strategy, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub opt: OptConfig,
    /// Epochs for the Joint reference; defaults to `opt.epochs`.
    #[serde(default)]
    pub joint_epochs: Option<usize>,
    /// Replay memory size for ER and GSS.
    pub buffer_capacity: usize,
    #[serde(default)]
    pub gss: GssConfig,
    #[serde(default)]
    pub shap: ShapConfig,
    #[serde(default)]
    pub pool: PoolConfig,
    /// Number of probes whose clamped maps are kept for saliency grids.
    #[serde(default)]
    pub keep_maps: usize,
    /// Worker threads for training and explanation jobs.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl ProtocolConfig {
    pub fn new(opt: OptConfig, buffer_capacity: usize, shap: ShapConfig) -> Self {
        Self {
            opt,
            joint_epochs: None,
            buffer_capacity,
            gss: GssConfig::default(),
            shap,
            pool: PoolConfig::default(),
            keep_maps: 0,
            workers: default_workers(),
        }
    }
}

/// Clamped maps of one probe under one snapshot.
#[derive(Debug, Clone)]
pub struct SaliencyRecord {
    pub strategy: String,
    pub experience: usize,
    pub probe: usize,
    pub label: usize,
    pub input: Tensor,
    pub maps: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub report: DriftReport,
    pub accuracy: Vec<AccuracyRecord>,
    /// One log per requested strategy, with snapshots.
    pub logs: Vec<TrainLog>,
    /// The reference run.
    pub joint: TrainLog,
    pub saliency: Vec<SaliencyRecord>,
}

impl ProtocolOutcome {
    pub fn log(&self, strategy: Strategy) -> Option<&TrainLog> {
        self.logs.iter().find(|l| l.strategy == strategy)
    }
}

/// What one snapshot contributes against the reference: per probe and class,
/// the clamped-map sum and (for images) the pooled processed map.
struct Summary {
    sums: Vec<Vec<f64>>,
    pooled: Option<Vec<Vec<Tensor>>>,
    kept: Vec<(usize, Vec<Tensor>)>,
}

/// Trains every strategy and the Joint reference, then measures drift.
pub fn run_protocol(
    stream: &ExperienceStream,
    strategies: &[Strategy],
    spec: &ModelSpec,
    slice: &EvaluationSlice,
    config: &ProtocolConfig,
) -> Result<ProtocolOutcome> {
    if strategies.is_empty() {
        return Err(Error::Config {
            field: "strategies".into(),
            reason: "at least one strategy is required".into(),
        });
    }
    config.shap.validate()?;
    let kind = stream.first().train.kind();
    if slice.probes.kind() != kind || slice.background.kind() != kind {
        return Err(Error::invalid("evaluation slice does not match the stream's input shape"));
    }
    if slice.probes.is_empty() {
        return Err(Error::invalid("evaluation slice has no probes"));
    }
    let initial = Model::init(spec, kind)?;

    let mut jobs: Vec<Strategy> = vec![Strategy::Joint];
    jobs.extend(strategies.iter().copied().filter(|s| *s != Strategy::Joint));
    let trained = par_map(&jobs, config.workers, |&s| train(s, initial.clone(), stream, config))?;
    let mut trained = trained.into_iter();
    let joint = trained.next().expect("joint job");
    let others: Vec<TrainLog> = trained.collect();
    let logs: Vec<TrainLog> = strategies
        .iter()
        .map(|s| {
            if *s == Strategy::Joint {
                joint.clone()
            } else {
                others.iter().find(|l| l.strategy == *s).expect("trained").clone()
            }
        })
        .collect();

    let spatial = kind.is_image();
    let k = slice.probes.inputs().len() / slice.probes.len();
    let background = slice.background.inputs();
    let reference = summarize(&joint.snapshots[0], background, slice, config, spatial)?;

    // One explanation job per (strategy, snapshot); Joint reuses the reference.
    let snapshot_jobs: Vec<(usize, usize)> = logs
        .iter()
        .enumerate()
        .filter(|(_, l)| l.strategy != Strategy::Joint)
        .flat_map(|(li, l)| (0..l.snapshots.len()).map(move |e| (li, e)))
        .collect();
    let summaries = par_map(&snapshot_jobs, config.workers, |&(li, e)| {
        summarize(&logs[li].snapshots[e], background, slice, config, spatial)
    })?;

    let targets = &stream.first().classes;
    let classes = initial.classes();
    let mut records = Vec::new();
    let mut saliency = Vec::new();
    let mut accuracy = Vec::new();
    for (li, log) in logs.iter().enumerate() {
        let name = log.strategy.name().to_string();
        for rec in &log.records {
            let trained = if log.strategy == Strategy::Joint { stream.len() - 1 } else { rec.experience };
            for (j, &a) in rec.test_accuracy.iter().enumerate() {
                accuracy.push(AccuracyRecord {
                    strategy: name.clone(),
                    experience_trained: trained,
                    experience_evaluated: j,
                    accuracy: a,
                });
            }
        }
        let experiences: Vec<(usize, &Summary)> = if log.strategy == Strategy::Joint {
            (0..stream.len()).map(|e| (e, &reference)).collect()
        } else {
            snapshot_jobs
                .iter()
                .zip(&summaries)
                .filter(|((l, _), _)| *l == li)
                .map(|((_, e), s)| (log.records[*e].experience, s))
                .collect()
        };
        for (experience, summary) in experiences {
            let n = summary.sums.len() as f64;
            for class in 0..classes {
                let m = summary
                    .sums
                    .iter()
                    .zip(&reference.sums)
                    .map(|(s, j)| {
                        let d = s[class] - j[class];
                        d * d / k as f64
                    })
                    .sum::<f64>()
                    / n;
                records.push(DriftRecord {
                    strategy: name.clone(),
                    experience,
                    class,
                    metric_name: MetricName::M,
                    value: m,
                    is_target_class: targets.contains(&class),
                });
                if let (Some(sp), Some(jp)) = (&summary.pooled, &reference.pooled) {
                    let mut total = 0.0;
                    for (s, j) in sp.iter().zip(jp) {
                        total += pooled_mse(&s[class], &j[class])?;
                    }
                    records.push(DriftRecord {
                        strategy: name.clone(),
                        experience,
                        class,
                        metric_name: MetricName::MPool,
                        value: total / n,
                        is_target_class: targets.contains(&class),
                    });
                }
            }
            for (p, maps) in &summary.kept {
                saliency.push(SaliencyRecord {
                    strategy: name.clone(),
                    experience,
                    probe: *p,
                    label: slice.probes.labels()[*p],
                    input: slice.probes.example(*p)?,
                    maps: maps.clone(),
                });
            }
        }
    }
    Ok(ProtocolOutcome {
        report: DriftReport::new(records)?,
        accuracy,
        logs,
        joint,
        saliency,
    })
}

fn train(strategy: Strategy, model: Model, stream: &ExperienceStream, config: &ProtocolConfig) -> Result<TrainLog> {
    match strategy {
        Strategy::Naive => train_naive(model, stream, &config.opt),
        Strategy::Joint => {
            let opt = OptConfig {
                epochs: config.joint_epochs.unwrap_or(config.opt.epochs),
                ..config.opt.clone()
            };
            train_joint(model, stream, &opt)
        }
        Strategy::Er => train_replay(model, stream, ReplayBuffer::new(config.buffer_capacity, BufferPolicy::ClassBalanced)?, &config.opt),
        Strategy::Gss => train_replay(
            model,
            stream,
            ReplayBuffer::new(config.buffer_capacity, BufferPolicy::GssGreedy)?.with_gss(config.gss),
            &config.opt,
        ),
    }
}

fn summarize(model: &Model, background: &Tensor, slice: &EvaluationSlice, config: &ProtocolConfig, spatial: bool) -> Result<Summary> {
    let explainer = Explainer::new(model, background, &config.shap)?;
    let mut sums = Vec::with_capacity(slice.probes.len());
    let mut pooled = spatial.then(Vec::new);
    let mut kept = Vec::new();
    let n = slice.probes.len();
    // Evenly spaced over the probe list, which is grouped by class.
    let keep: Vec<usize> = (0..config.keep_maps.min(n)).map(|j| j * n / config.keep_maps.min(n)).collect();
    for i in 0..n {
        let raw = explainer.explain_raw(&slice.probes.example(i)?, i)?;
        let clamped: Vec<Tensor> = raw.iter().map(|m| m.clamp_positive().phi).collect();
        sums.push(clamped.iter().map(Tensor::sum).collect());
        if let Some(p) = pooled.as_mut() {
            p.push(
                raw.iter()
                    .map(|m| pool_map(&preprocess_for_pool(&m.phi, config.pool.order), config.pool.kernel))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        if keep.contains(&i) {
            kept.push((i, clamped));
        }
    }
    Ok(Summary { sums, pooled, kept })
}

/// Order-preserving parallel map over at most `workers` scoped threads.
fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// M over class index for one strategy after one experience.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftCurve {
    pub strategy: String,
    pub experience: usize,
    pub values: Vec<f64>,
}

/// Drift of one target class after the final experience.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub class: usize,
    pub m: f64,
    pub m_pool: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub curves: Vec<DriftCurve>,
    pub target_classes: Vec<usize>,
    pub summary: Vec<SummaryRow>,
}

impl Aggregate {
    pub fn curves_for<'a>(&'a self, strategy: &'a str) -> impl Iterator<Item = &'a DriftCurve> {
        self.curves.iter().filter(move |c| c.strategy == strategy)
    }
}

pub fn aggregate(report: &DriftReport) -> Result<Aggregate> {
    if report.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty drift report"));
    }
    let c = report.num_classes();
    let targets = report.target_classes();
    let mut curves = Vec::new();
    let mut summary = Vec::new();
    for s in report.strategies() {
        for e in report.experiences(&s) {
            let values = (0..c)
                .map(|class| report.value(&s, e, class, MetricName::M).unwrap_or(0.0))
                .collect();
            curves.push(DriftCurve {
                strategy: s.clone(),
                experience: e,
                values,
            });
        }
        let last = report.final_experience(&s).expect("strategy has rows");
        for &class in &targets {
            summary.push(SummaryRow {
                strategy: s.clone(),
                class,
                m: report.value(&s, last, class, MetricName::M).unwrap_or(0.0),
                m_pool: report.value(&s, last, class, MetricName::MPool),
            });
        }
    }
    Ok(Aggregate {
        curves,
        target_classes: targets,
        summary,
    })
}
