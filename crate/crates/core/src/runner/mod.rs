//! End-to-end runs from a [`RunConfig`]: data, training, drift measurement
//! and artifacts on disk.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.json            config hash, seeds, file list
//! config.json              the parsed config with defaults filled in
//! INCOMPLETE               present only while running or after a failure
//! seed-<s>/drift.csv       strategy,experience,class,metric_name,value,is_target_class
//! seed-<s>/accuracy.csv    strategy,experience_trained,experience_evaluated,accuracy
//! seed-<s>/summary.csv     target-class drift after the final experience
//! seed-<s>/logs/<strategy>.json
//! seed-<s>/checkpoints/<strategy>-e<k>.sdar
//! seed-<s>/grids/<strategy>-e<k>.pgm     image benchmarks only
//! seed-<s>/plots/<strategy>_curves.svg
//! ```

pub mod config;
mod pgm;
mod svg;

pub use config::{
    Benchmark, BufferConfig, ModelConfig, OptSettings, OutputSettings, ProtocolSettings, RunConfig, SaliencyScale,
    ShapSettings,
};
pub use pgm::{emit_saliency_grid, saliency_grid, write_grid, GrayImage};
pub use svg::{curves_svg, emit_curves};

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{build_stream, build_stream_split, load_idx, load_sequences, make_slice, synth_images, synth_sequences, ExperienceStream};
use crate::error::{Error, Result};
use crate::models::write_arrays;
use crate::protocol::{aggregate, run_protocol, write_accuracy_csv, DriftReport, ProtocolOutcome};

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Builds the experience stream for one seed.
pub fn load_benchmark(benchmark: &Benchmark, seed: u64) -> Result<ExperienceStream> {
    let order = benchmark.class_order();
    let e = benchmark.experiences();
    match benchmark {
        Benchmark::MnistIdx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            build_stream_split(&train, &test, e, &order)
        }
        Benchmark::SynthImages {
            classes, per_class, side, ..
        } => build_stream(&synth_images(*classes, *per_class, *side, seed)?, e, &order),
        Benchmark::SynthSequences {
            classes,
            per_class,
            steps,
            features,
            ..
        } => build_stream(&synth_sequences(*classes, *per_class, *steps, *features, seed)?, e, &order),
        Benchmark::UserSequences { train, test, .. } => {
            build_stream_split(&load_sequences(train)?, &load_sequences(test)?, e, &order)
        }
    }
}

#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub outcome: ProtocolOutcome,
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub seeds: Vec<SeedRun>,
    /// Files written, relative to `out_dir`, sorted.
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: &'a str,
    benchmark: &'static str,
    seeds: &'a [u64],
    strategies: &'a [String],
    files: Vec<String>,
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(p, bytes).map_err(|e| Error::io(p, e))
}

/// Validates `config`, then runs every seed and writes all artifacts. On a
/// mid-run failure the directory keeps an `INCOMPLETE` marker holding the
/// error.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let out = &config.out_dir;
    create_dir(out)?;
    let marker = out.join(INCOMPLETE_MARKER);
    write_file(&marker, "run in progress\n")?;
    match run_inner(config) {
        Ok(summary) => {
            std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
            Ok(summary)
        }
        Err(e) => {
            let _ = std::fs::write(&marker, format!("run failed: {e}\n"));
            Err(e)
        }
    }
}

fn run_inner(config: &RunConfig) -> Result<RunSummary> {
    let out = &config.out_dir;
    let strategies = config.parsed_strategies()?;
    let hash = config.hash();
    let mut files = Vec::new();
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        let stream = load_benchmark(&config.benchmark, seed)?;
        let slice = make_slice(&stream, config.shap.background_n, config.shap.probes_per_class, seed)?;
        let spec = config.model.spec(config.benchmark.classes(), seed);
        let outcome = run_protocol(&stream, &strategies, &spec, &slice, &config.protocol_config(seed))?;
        let dir = out.join(format!("seed-{seed}"));
        files.extend(write_seed_artifacts(&dir, config, &outcome)?.into_iter().map(|p| rel(out, &p)));
        seeds.push(SeedRun { seed, dir, outcome });
    }

    let cfg_path = out.join("config.json");
    write_file(&cfg_path, serde_json::to_string_pretty(config).expect("config serializes") + "\n")?;
    files.push(rel(out, &cfg_path));
    files.sort();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: &hash,
        benchmark: config.benchmark.name(),
        seeds: &config.seeds,
        strategies: &config.strategies,
        files: files.iter().map(|p| p.to_string_lossy().replace('\\', "/")).collect(),
    };
    write_file(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
    Ok(RunSummary {
        out_dir: out.clone(),
        config_hash: hash,
        seeds,
        files,
    })
}

fn rel(base: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(base).unwrap_or(p).to_path_buf()
}

fn write_seed_artifacts(dir: &Path, config: &RunConfig, outcome: &ProtocolOutcome) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    create_dir(dir)?;

    let drift = dir.join("drift.csv");
    outcome.report.save_csv(&drift)?;
    written.push(drift);

    let acc = dir.join("accuracy.csv");
    let mut buf = Vec::new();
    write_accuracy_csv(&outcome.accuracy, &mut buf)?;
    write_file(&acc, buf)?;
    written.push(acc);

    written.push(write_summary(&outcome.report, &dir.join("summary.csv"))?);

    let logs = dir.join("logs");
    create_dir(&logs)?;
    let mut all_logs: Vec<_> = outcome.logs.iter().collect();
    if !all_logs.iter().any(|l| l.strategy == outcome.joint.strategy) {
        all_logs.push(&outcome.joint);
    }
    for log in &all_logs {
        let p = logs.join(format!("{}.json", log.strategy.name()));
        write_file(&p, serde_json::to_string_pretty(log).expect("log serializes") + "\n")?;
        written.push(p);
    }

    if config.output.checkpoints {
        let ck = dir.join("checkpoints");
        create_dir(&ck)?;
        for log in &all_logs {
            for (k, model) in log.snapshots.iter().enumerate() {
                let p = ck.join(format!("{}-e{k}.sdar", log.strategy.name()));
                write_arrays(&p, &model.to_arrays())?;
                written.push(p);
            }
        }
    }

    if !outcome.saliency.is_empty() && outcome.saliency[0].input.ndim() == 3 {
        let grids = dir.join("grids");
        create_dir(&grids)?;
        let mut keys: Vec<(String, usize)> = Vec::new();
        for s in &outcome.saliency {
            let key = (s.strategy.clone(), s.experience);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        for (strategy, experience) in keys {
            let rows: Vec<_> = outcome
                .saliency
                .iter()
                .filter(|s| s.strategy == strategy && s.experience == experience)
                .map(|s| (s.input.clone(), s.maps.clone()))
                .collect();
            let p = grids.join(format!("{strategy}-e{experience}.pgm"));
            write_grid(&rows, &p, config.output.saliency_scale)?;
            written.push(p);
        }
    }

    written.extend(emit_curves(&outcome.report, dir.join("plots"), config.benchmark.name())?);
    Ok(written)
}

/// Target-class drift after each strategy's final experience.
pub fn write_summary(report: &DriftReport, path: &Path) -> Result<PathBuf> {
    let agg = aggregate(report)?;
    let mut text = String::from("strategy,class,M,M_pool\n");
    for row in &agg.summary {
        let pool = row.m_pool.map(|v| v.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{},{}\n", row.strategy, row.class, row.m, pool));
    }
    write_file(path, text)?;
    Ok(path.to_path_buf())
}

/// Re-emits plots and the summary table from an existing drift CSV.
pub fn report(csv: impl AsRef<Path>, out_dir: impl AsRef<Path>, title: &str) -> Result<Vec<PathBuf>> {
    let report = DriftReport::load_csv(csv)?;
    if report.is_empty() {
        return Err(Error::invalid("drift report is empty"));
    }
    let out = out_dir.as_ref();
    let mut written = emit_curves(&report, out, title)?;
    written.push(write_summary(&report, &out.join("summary.csv"))?);
    Ok(written)
}
