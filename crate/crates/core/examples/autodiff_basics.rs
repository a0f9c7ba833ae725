//! Build a small expression on a tape, run the reverse sweep and read
//! gradients back.
//!
//! cargo run --example autodiff_basics

use rrtn::{Graph, Result, Tensor};

fn main() -> Result<()> {
    let g = Graph::new();
    let w = g.leaf(Tensor::matrix(&[vec![0.5, -1.0], vec![2.0, 0.25]])?);
    let x = g.constant(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.5]])?);

    // mean(relu(x·w)²)
    let y = x.matmul(w)?.relu().square().mean();
    println!("y = {:.6}", y.item());

    let grads = g.backward(y)?;
    println!("dy/dw = {:?}", grads.wrt(w).data());
    println!("x is a constant: has gradient = {}", grads.get(x).is_some());
    println!("tape holds {} nodes", g.len());
    Ok(())
}
