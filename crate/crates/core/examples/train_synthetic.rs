//! Train on the synthetic dataset in one mode and report dev CCC per epoch.
//!
//! cargo run --release --example train_synthetic -- rrtn_ruwl

use rrtn::augment::AugmentConfig;
use rrtn::data::{gen_synth, SynthConfig};
use rrtn::losses::RuwlParams;
use rrtn::model::ModelConfig;
use rrtn::train::{train_with, Mode, TrainConfig, TrainSetup};
use rrtn::Result;

fn main() -> Result<()> {
    let mode = match std::env::args().nth(1).as_deref() {
        Some("baseline") => Mode::Baseline,
        Some("rrtn_fixed") => Mode::RrtnFixed,
        _ => Mode::RrtnRuwl,
    };
    let data = gen_synth(&SynthConfig::default())?;
    let setup = TrainSetup {
        model: ModelConfig::default(),
        train: TrainConfig {
            mode,
            ..TrainConfig::default()
        },
        augment: AugmentConfig::default(),
        ruwl: RuwlParams::default(),
    };
    let report = train_with(&setup, &data, |r| {
        println!(
            "epoch {:>2}  l_ccc {:.4}  l_bt {:.3}  weights {:.3?}  dev {:.4}",
            r.epoch, r.l_ccc, r.l_bt, r.weights, r.dev_ccc
        );
        Ok(())
    })?;
    println!(
        "{mode}: dev CCC {:.4} -> {:.4}, best {:.4} at epoch {}",
        report.initial_dev_ccc, report.final_dev_ccc, report.best_dev_ccc, report.best_epoch
    );
    Ok(())
}
