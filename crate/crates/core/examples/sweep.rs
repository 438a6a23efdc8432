//! Run a sweep config and print the result table.
//!
//! cargo run --example sweep -- [CONFIG.json]   (default: data/heavy_sweep.json)

use std::path::PathBuf;

use otest::harness::{run_sweep, write_csv, ExperimentConfig};
use otest::io::read_json;

fn main() -> otest::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/heavy_sweep.json"));
    let mut config: ExperimentConfig = read_json(&path)?;
    config.trials = config.trials.min(5000);
    let rows = run_sweep(&config, path.parent())?;
    write_csv(&rows, std::io::stdout())
}
