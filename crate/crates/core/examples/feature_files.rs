//! Write a dataset to an RRTN-FEAT file, read it back, and refit the frame
//! count on load.
//!
//! cargo run --example feature_files

use rrtn::data::{gen_synth, load_features, save_features, SynthConfig};
use rrtn::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("rrtn-feature-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("synth.feat");

    let data = gen_synth(&SynthConfig {
        n_samples: 20,
        ..SynthConfig::default()
    })?;
    save_features(&data, &path)?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let back = load_features(&path, None)?;
    println!("round trip equal at f32 precision: {}", back == data.to_f32_precision());

    let cropped = load_features(&path, Some(24))?;
    let padded = load_features(&path, Some(40))?;
    println!(
        "frames: file {}, cropped {}, padded {}",
        back.frames(),
        cropped.frames(),
        padded.frames()
    );
    Ok(())
}
