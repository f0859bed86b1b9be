//! The full drift protocol in code: train Joint and the continual strategies,
//! explain the first experience's probes after every experience and compare
//! against Joint.

use shapdrift::data::{build_stream, make_slice, synth_images};
use shapdrift::explainers::ShapConfig;
use shapdrift::models::{Architecture, ModelSpec};
use shapdrift::protocol::{aggregate, run_protocol, ProtocolConfig};
use shapdrift::strategies::{OptConfig, Strategy};
use shapdrift::Result;

fn main() -> Result<()> {
    let seed = 0;
    let stream = build_stream(&synth_images(10, 120, 16, seed)?, 5, &(0..10).collect::<Vec<_>>())?;
    let slice = make_slice(&stream, 50, 10, seed)?;
    let spec = ModelSpec::new(Architecture::Mlp, vec![64], 10, seed);
    let mut opt = OptConfig::new(0.1);
    opt.batch_size = 32;
    let shap = ShapConfig { n_samples: 50, seed, ..ShapConfig::default() };
    let mut cfg = ProtocolConfig::new(opt, 200, shap);
    cfg.joint_epochs = Some(16);
    cfg.workers = 4;

    let outcome = run_protocol(&stream, &[Strategy::Naive, Strategy::Er, Strategy::Gss], &spec, &slice, &cfg)?;
    let agg = aggregate(&outcome.report)?;
    println!("target classes {:?}", agg.target_classes);
    for curve in &agg.curves {
        let vals: Vec<String> = curve.values.iter().map(|v| format!("{v:.1e}")).collect();
        println!("{:6} after e{}: {}", curve.strategy, curve.experience + 1, vals.join(" "));
    }
    for row in &agg.summary {
        println!("{:6} class {} M {:.3e} M_pool {:.3e}", row.strategy, row.class, row.m, row.m_pool.unwrap_or(f64::NAN));
    }
    Ok(())
}
