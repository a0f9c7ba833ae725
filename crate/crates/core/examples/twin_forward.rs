//! One twin forward pass: an original batch and its masked copy go through
//! the shared encoder, giving predictions, embeddings and the three losses.
//!
//! cargo run --example twin_forward

use rrtn::augment::{augment_batch, AugmentConfig};
use rrtn::data::{gen_synth, SynthConfig};
use rrtn::model::{init_params, rrtn_step_losses, BtSettings, ModelConfig};
use rrtn::{Graph, Result};

fn main() -> Result<()> {
    let data = gen_synth(&SynthConfig {
        n_samples: 8,
        ..SynthConfig::default()
    })?;
    let (xa, y) = data.gather(&[0, 1, 2, 3, 4, 5, 6, 7]);
    let xb = augment_batch(&xa, &AugmentConfig::default(), 0, 0)?;

    let params = init_params(&ModelConfig::default(), 0)?;
    println!("{} parameters", params.num_scalars());

    let g = Graph::new();
    let bound = params.bind(&g);
    let out = bound.forward_twin(g.constant(xa), g.constant(xb))?;
    println!("representation {:?}", out.rep_a.shape());
    println!("embedding      {:?}", out.emb_a.shape());
    println!("prediction     {:?}", out.pred_a.shape());

    let [l_ccc, l_ccc_a, l_bt] = rrtn_step_losses(&out, g.constant(y), BtSettings::default())?;
    println!(
        "L_ccc {:.4}  L_ccc_a {:.4}  L_bt {:.4}",
        l_ccc.item(),
        l_ccc_a.item(),
        l_bt.item()
    );

    let grads = g.backward(l_bt)?;
    let (name, var) = bound
        .vars()
        .find(|(n, _)| n.starts_with("projector"))
        .expect("projector");
    let norm: f64 = grads.wrt(var).data().iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("|dL_bt/d {name}| = {norm:.4}");
    Ok(())
}
