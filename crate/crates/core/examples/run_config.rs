//! Drives a complete run from a TOML config, as the `shapdrift run` command
//! does. Takes a config path, defaulting to the bundled synthetic-image one.

use std::path::PathBuf;

use shapdrift::runner::{self, RunConfig};
use shapdrift::Result;

fn main() -> Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/synth-images.toml"));
    let mut cfg = RunConfig::load(&path)?;
    cfg.seeds.truncate(1);
    cfg.out_dir = std::env::temp_dir().join("shapdrift-example");
    let summary = runner::run(&cfg)?;
    println!("config {}", summary.config_hash);
    for file in &summary.files {
        println!("  {}", file.display());
    }
    println!("written under {}", summary.out_dir.display());
    Ok(())
}
