//! Compare reverse-mode gradients against central differences: first for
//! one hand-written function, then for the whole built-in suite.
//!
//! cargo run --example gradient_check

use rrtn::autodiff::{finite_diff_check, DEFAULT_STEP};
use rrtn::checks::{run_suite, suite, DEFAULT_SEEDS, DEFAULT_TOLERANCE};
use rrtn::losses::ccc_loss;
use rrtn::{Result, Tensor};

fn main() -> Result<()> {
    let pred = Tensor::matrix(&[vec![0.1, 0.9], vec![0.4, 0.3], vec![0.8, 0.5], vec![0.2, 0.7]])?;
    let target = Tensor::matrix(&[vec![0.0, 1.0], vec![0.5, 0.2], vec![0.9, 0.6], vec![0.3, 0.6]])?;
    let err = finite_diff_check(|_, v| ccc_loss(v[0], v[1]), &[pred, target], DEFAULT_STEP)?;
    println!("ccc_loss: max relative error {err:.2e}\n");

    let report = run_suite(&suite(), &DEFAULT_SEEDS, DEFAULT_TOLERANCE, &mut std::io::stdout())?;
    println!("\nall passed: {}", report.passed());
    Ok(())
}
