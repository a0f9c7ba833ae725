//! Baseline vs fixed weighting vs learned weighting over a few seeds.
//!
//! cargo run --release --example ablation_sweep

use rrtn::config::RunConfig;
use rrtn::sweep::{relative_gain, run_sweep};
use rrtn::Result;

fn main() -> Result<()> {
    let cfg = RunConfig::parse("{}", &["train.epochs=8".into(), "sweep.seeds=[0,1,2]".into()])?;
    let data = cfg.data.load()?;
    let summary = run_sweep(&cfg, &data, |row| eprintln!("{} seed {} done", row.mode, row.seed))?;
    print!("{}", summary.to_text());

    // Same arithmetic on a pair of published-style scores.
    println!(
        "\ngain of 0.678 over 0.647: {:.1}%",
        100.0 * relative_gain(0.678, 0.647)
    );
    Ok(())
}
