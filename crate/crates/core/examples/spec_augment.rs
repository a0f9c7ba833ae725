//! Mask random time and frequency stripes of one spectrogram-like sample
//! and print the result as a character grid (`.` = masked).
//!
//! cargo run --example spec_augment -- 7

use rrtn::augment::{spec_augment, AugmentConfig};
use rrtn::seeding;
use rrtn::{Result, Tensor};

fn main() -> Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (frames, bins) = (20, 12);
    let x = Tensor::new(vec![1, frames, bins], vec![1.0; frames * bins])?;
    let cfg = AugmentConfig {
        time_drop_width: 4,
        time_stripes: 2,
        freq_drop_width: 3,
        freq_stripes: 1,
        mask_value: 0.0,
    };
    let mut rng = seeding::stream(seed, &[seeding::tag::AUGMENT]);
    let y = spec_augment(&x, &cfg, &mut rng)?;
    for t in 0..frames {
        let row: String = (0..bins)
            .map(|f| if y.data()[t * bins + f] == 0.0 { '.' } else { '#' })
            .collect();
        println!("{t:>3} {row}");
    }
    Ok(())
}
