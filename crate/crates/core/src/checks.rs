//! Finite-difference gradient suite behind `rrtn gradcheck`.
//!
//! Every check draws its inputs from a seed, so one check run over several
//! seeds compares gradients at several unrelated points.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::{augment_batch, AugmentConfig};
use crate::autodiff::{finite_diff_check, Graph, Var, DEFAULT_STEP};
use crate::error::Result;
use crate::losses::{
    bt_loss, ccc_loss, combined_loss, cross_correlation, ruwl, weighted_sum_loss, LambdaPosition, RuwlParams,
};
use crate::model::{init_params, rrtn_step_losses, BoundParams, BtSettings, EncoderKind, ModelConfig};
use crate::seeding;
use crate::tensor::Tensor;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

/// One named gradient check: returns the largest relative error for a seed.
#[derive(Clone, Copy)]
pub struct Check {
    pub name: &'static str,
    pub run: fn(u64) -> Result<f64>,
}

impl std::fmt::Debug for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Check").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    /// Set when a check could not be evaluated at all.
    pub error: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub seeds: Vec<u64>,
    pub results: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.results.iter().filter(|r| !r.passed).map(|r| r.name).collect()
    }
}

/// Runs every check once per seed, printing one line per check to `out`.
pub fn run_suite(checks: &[Check], seeds: &[u64], tolerance: f64, out: &mut dyn Write) -> Result<SuiteReport> {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut results = Vec::with_capacity(checks.len());
    for check in checks {
        let mut worst = 0.0f64;
        let mut error = None;
        for &seed in seeds {
            match (check.run)(seed) {
                Ok(e) if e.is_nan() => worst = f64::NAN,
                Ok(e) => worst = worst.max(e),
                Err(e) => {
                    error = Some(format!("seed {seed}: {e}"));
                    break;
                }
            }
        }
        let passed = error.is_none() && worst < tolerance;
        let status = if passed { "ok" } else { "FAIL" };
        match &error {
            Some(msg) => writeln!(out, "{:<width$}  {status}  {msg}", check.name)?,
            None => writeln!(out, "{:<width$}  {status}  max rel err {worst:.3e}", check.name)?,
        }
        results.push(CheckResult {
            name: check.name,
            max_rel_error: worst,
            error,
            passed,
        });
    }
    Ok(SuiteReport {
        tolerance,
        seeds: seeds.to_vec(),
        results,
    })
}

pub fn suite() -> Vec<Check> {
    macro_rules! check {
        ($name:literal, $f:expr) => {
            Check { name: $name, run: $f }
        };
    }
    vec![
        check!("elementwise", elementwise),
        check!("unary_ops", unary_ops),
        check!("matmul", matmul),
        check!("reductions", reductions),
        check!("conv2d", conv2d),
        check!("avg_pool2d", avg_pool2d),
        check!("ccc_loss", ccc),
        check!("cross_correlation", xcorr),
        check!("bt_loss", bt),
        check!("weighted_sum_loss", weighted),
        check!("ruwl", restraint),
        check!("combined_loss_numerator", |s| combined(s, LambdaPosition::Numerator)),
        check!("combined_loss_denominator", |s| combined(
            s,
            LambdaPosition::Denominator
        )),
        check!("model_mlp", |s| model(s, EncoderKind::Mlp)),
        check!("model_tiny_cnn", |s| model(s, EncoderKind::TinyCnn)),
    ]
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    seeding::stream(seed, &[seeding::tag::GRADCHECK, salt])
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("valid shape")
}

/// Values with magnitude in `[lo, hi)` and random sign, away from kinks at 0.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = uniform(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// Contracts `v` against a fixed random tensor so every output entry matters.
fn probe<'g>(v: Var<'g>, rng: &mut ChaCha8Rng) -> Result<Var<'g>> {
    let w = uniform(rng, &v.shape(), -1.0, 1.0);
    Ok(v.mul(v.graph().constant(w))?.sum())
}

fn check_with(
    seed: u64,
    salt: u64,
    inputs: Vec<Tensor>,
    f: impl for<'g> Fn(&'g Graph, &[Var<'g>], &mut ChaCha8Rng) -> Result<Var<'g>>,
) -> Result<f64> {
    finite_diff_check(|g, v| f(g, v, &mut rng(seed, salt ^ 0xff)), &inputs, DEFAULT_STEP)
}

fn elementwise(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 1);
    let a = uniform(&mut r, &[3, 4], -2.0, 2.0);
    let b = signed(&mut r, &[3, 4], 0.5, 2.0);
    let s = uniform(&mut r, &[], -1.0, 1.0);
    check_with(seed, 1, vec![a, b, s], |_, v, r| {
        let (a, b, s) = (v[0], v[1], v[2]);
        let e = a.add(b)?.mul(a)?.sub(a.div(b)?)?.add(b.mul(s)?)?;
        probe(e.add_scalar(0.3).mul_scalar(-1.7).rsub_scalar(2.0), r)
    })
}

fn unary_ops(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 2);
    let pos = uniform(&mut r, &[5], 0.2, 3.0);
    let any = signed(&mut r, &[5], 0.05, 2.0);
    check_with(seed, 2, vec![pos, any], |g, v, r| {
        let (p, x) = (v[0], v[1]);
        let terms = [
            p.sqrt(),
            p.log(),
            x.square(),
            x.abs(),
            x.relu(),
            x.sigmoid(),
            x.neg(),
            p.clamp_min(1.0),
            x.clamp_abs_min(0.5),
        ];
        let joined = g.concat(&terms)?;
        probe(joined, r)
    })
}

fn matmul(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 3);
    let a = uniform(&mut r, &[4, 3], -1.0, 1.0);
    let b = uniform(&mut r, &[3, 5], -1.0, 1.0);
    check_with(seed, 3, vec![a, b], |_, v, r| probe(v[0].matmul(v[1])?.square(), r))
}

fn reductions(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 4);
    let a = uniform(&mut r, &[4, 3], -1.0, 1.0);
    check_with(seed, 4, vec![a], |g, v, r| {
        let a = v[0];
        let parts = [
            a.sum_axis(0)?,
            a.mean_axis(1)?,
            a.t()?.reshape(&[12])?,
            a.sum().reshape(&[1])?,
            a.square().mean().reshape(&[1])?,
        ];
        probe(g.concat(&parts)?.square(), r)
    })
}

fn conv2d(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 5);
    let x = uniform(&mut r, &[2, 1, 5, 4], -1.0, 1.0);
    let k = uniform(&mut r, &[3, 1, 3, 3], -1.0, 1.0);
    check_with(seed, 5, vec![x, k], |_, v, r| probe(v[0].conv2d(v[1])?.square(), r))
}

fn avg_pool2d(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 6);
    let x = uniform(&mut r, &[2, 3, 5, 4], -1.0, 1.0);
    check_with(seed, 6, vec![x], |_, v, r| probe(v[0].avg_pool2d((2, 2))?.square(), r))
}

fn ccc(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 7);
    let pred = uniform(&mut r, &[6, 3], -1.0, 1.0);
    let target = uniform(&mut r, &[6, 3], 0.0, 1.0);
    check_with(seed, 7, vec![pred, target], |_, v, _| ccc_loss(v[0], v[1]))
}

fn xcorr(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 8);
    let za = uniform(&mut r, &[6, 4], -1.0, 1.0);
    let zb = uniform(&mut r, &[6, 4], -1.0, 1.0);
    let center = seed.is_multiple_of(2);
    check_with(seed, 8, vec![za, zb], move |_, v, r| {
        probe(cross_correlation(v[0], v[1], center)?, r)
    })
}

fn bt(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 9);
    let za = uniform(&mut r, &[6, 4], -1.0, 1.0);
    let zb = uniform(&mut r, &[6, 4], -1.0, 1.0);
    let lambda = r.random_range(1e-3..1.0);
    check_with(seed, 9, vec![za, zb], move |_, v, _| {
        bt_loss(cross_correlation(v[0], v[1], true)?, lambda)
    })
}

fn weighted(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 10);
    let l = uniform(&mut r, &[3], 0.1, 2.0);
    let w = [r.random(), r.random(), r.random()];
    check_with(seed, 10, vec![l], move |_, v, _| {
        let parts = [v[0].sum(), v[0].square().sum().mul_scalar(0.5), v[0].sqrt().sum()];
        weighted_sum_loss(parts, w)
    })
}

fn restraint(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 11);
    let c = signed(&mut r, &[3], 0.05, 1.5);
    check_with(seed, 11, vec![c], |_, v, _| Ok(ruwl(v[0], 2.0)))
}

fn combined(seed: u64, position: LambdaPosition) -> Result<f64> {
    let mut r = rng(seed, 12);
    let losses = uniform(&mut r, &[3], 0.1, 2.0);
    let c = signed(&mut r, &[3], 0.2, 1.5);
    let params = RuwlParams {
        lambda_position: position,
        lambda: [1.0, r.random_range(0.5..2.0), 1e-2],
        ..RuwlParams::default()
    };
    check_with(seed, 12, vec![losses, c], move |g, v, _| {
        let l = [0, 1, 2].map(|i| v[0].mul(g.constant(unit(i))).map(|x| x.sum()));
        let [a, b, d] = l;
        Ok(combined_loss([a?, b?, d?], v[1], &params)?.total)
    })
}

fn unit(i: usize) -> Tensor {
    let mut t = Tensor::zeros(&[3]);
    t.data_mut()[i] = 1.0;
    t
}

/// The training objective end to end: twin forward of an original and a
/// masked batch, then a random mix of the three losses.
fn model(seed: u64, kind: EncoderKind) -> Result<f64> {
    let cfg = ModelConfig {
        encoder_kind: kind,
        encoder_dims: vec![6],
        cnn_channels: 2,
        cnn_kernel: 3,
        cnn_pool: [2, 2],
        rep_dim: 8,
        emb_dim: 8,
        head_sigmoid: seed % 2 == 1,
        frames: 6,
        bins: 4,
        n_outputs: 3,
    };
    let params = init_params(&cfg, seed)?;
    let mut r = rng(seed, 13);
    let xa = uniform(&mut r, &[4, 1, 6, 4], 0.0, 1.0);
    let aug = AugmentConfig {
        time_drop_width: 2,
        time_stripes: 1,
        freq_drop_width: 1,
        freq_stripes: 1,
        mask_value: 0.0,
    };
    let xb = augment_batch(&xa, &aug, seed, 0)?;
    let y = uniform(&mut r, &[4, 3], 0.0, 1.0);
    let mix: [f64; 3] = [
        r.random_range(0.5..1.5),
        r.random_range(0.5..1.5),
        r.random_range(0.01..0.5),
    ];
    // Zero biases can put a ReLU exactly on its kink, where central
    // differences see half the slope.
    let inputs: Vec<Tensor> = params
        .entries()
        .iter()
        .map(|(name, t)| {
            if name.ends_with(".bias") {
                signed(&mut r, t.shape(), 0.05, 0.2)
            } else {
                t.clone()
            }
        })
        .collect();
    finite_diff_check(
        |g, v| {
            let bound = BoundParams::from_vars(&cfg, v)?;
            let out = bound.forward_twin(g.constant(xa.clone()), g.constant(xb.clone()))?;
            let losses = rrtn_step_losses(&out, g.constant(y.clone()), BtSettings::default())?;
            weighted_sum_loss(losses, mix)
        },
        &inputs,
        DEFAULT_STEP,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_has_distinct_names() {
        let s = suite();
        let mut names: Vec<_> = s.iter().map(|c| c.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), s.len());
        assert!(s.len() >= 10);
    }

    #[test]
    fn a_failing_check_is_named() {
        let broken = Check {
            name: "broken",
            run: |_| Ok(0.5),
        };
        let fine = Check {
            name: "fine",
            run: |_| Ok(1e-9),
        };
        let mut out = Vec::new();
        let report = run_suite(&[fine, broken], &[0], DEFAULT_TOLERANCE, &mut out).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures(), vec!["broken"]);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("broken  FAIL"), "{text}");
    }

    #[test]
    fn nan_error_fails() {
        let nan = Check {
            name: "nan",
            run: |_| Ok(f64::NAN),
        };
        let report = run_suite(&[nan], &[0, 1], DEFAULT_TOLERANCE, &mut Vec::new()).unwrap();
        assert!(!report.passed());
    }
}
