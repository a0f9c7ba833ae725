//! The three training losses and the weighting objective on small inputs
//! whose values can be checked by hand.
//!
//! cargo run --example loss_functions

use rrtn::losses::{bt_loss, ccc, ccc_loss, cross_correlation, ruwl, weighted_sum_loss, RuwlParams};
use rrtn::{Graph, Result, Tensor};

fn main() -> Result<()> {
    let x = [0.1, 0.4, 0.35, 0.8];
    let y = [0.0, 0.5, 0.3, 0.9];
    println!("ccc(x, y) = {:.6}", ccc(&x, &y)?);
    println!("ccc(x, x) = {:.6}", ccc(&x, &x)?);

    let g = Graph::new();
    let pred = g.constant(Tensor::matrix(&[vec![0.0], vec![1.0]])?);
    let flipped = g.constant(Tensor::matrix(&[vec![1.0], vec![0.0]])?);
    println!("ccc_loss of anti-correlated pair = {}", ccc_loss(pred, flipped)?.item());

    let c = g.constant(Tensor::matrix(&[vec![1.0, 0.5], vec![0.5, 1.0]])?);
    println!("bt_loss([[1, .5], [.5, 1]], 1e-3) = {:e}", bt_loss(c, 1e-3)?.item());

    let za = g.constant(Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 1.0]])?);
    let zb = g.constant(Tensor::matrix(&[vec![1.1, 0.2], vec![-0.1, 0.9], vec![2.0, 1.2]])?);
    println!(
        "cross-correlation = {:?}",
        cross_correlation(za, zb, true)?.value().data()
    );

    let losses = [0.2, 0.3, 1.5].map(|v| g.scalar(v));
    println!("weighted sum = {}", weighted_sum_loss(losses, [1.0, 1.0, 0.1])?.item());

    let init = RuwlParams::default();
    let c = g.constant(Tensor::vector(init.c.to_vec()));
    println!(
        "restraint at c = {:?}: {}",
        init.c,
        ruwl(c, init.restraint_target).item()
    );
    let bundle = init.evaluate([1.0, 1.0, 1.0])?;
    println!("combined objective at unit losses: {bundle:#?}");
    Ok(())
}
