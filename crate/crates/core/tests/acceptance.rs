//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Built with `harness = false`, so it is an ordinary program.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rrtn::augment::{augment_batch, AugmentConfig, Masks};
use rrtn::checks;
use rrtn::config::RunConfig;
use rrtn::data::{gen_synth, Split, SynthConfig};
use rrtn::losses::{bt_loss, ccc_loss, combined_loss, ruwl, CrossCorrMatrix, LambdaPosition, RuwlParams};
use rrtn::optim::{adamw_step, AdamWConfig, AdamWState};
use rrtn::sweep::{relative_gain, run_sweep};
use rrtn::train::{evaluate, train, Mode, TrainConfig, TrainSetup};
use rrtn::{Graph, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure(
        (got - want).abs() <= tol,
        format!("{name}: got {got:.12}, want {want:.12}"),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let suite = checks::suite();
    let mut out = Vec::new();
    let code = rrtn::cli::cmd_gradcheck(&suite, &checks::DEFAULT_SEEDS, checks::DEFAULT_TOLERANCE, &mut out)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out);
    ensure(code == 0, format!("exit {code}:\n{text}"))?;
    let names: Vec<&str> = suite.iter().map(|c| c.name).collect();
    for needed in [
        "ccc_loss",
        "bt_loss",
        "cross_correlation",
        "ruwl",
        "combined_loss_numerator",
        "combined_loss_denominator",
        "model_mlp",
        "model_tiny_cnn",
    ] {
        ensure(names.contains(&needed), format!("suite lacks {needed}"))?;
    }
    ensure(checks::DEFAULT_SEEDS.len() == 3, "expected 3 seeds")?;
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "{} checks x 3 seeds below {:e} in {elapsed:.1?}",
        names.len(),
        checks::DEFAULT_TOLERANCE
    ))
}

fn closed_forms() -> Outcome {
    let tol = 1e-9;
    let g = Graph::new();
    let t = g.constant(Tensor::new(vec![4, 2], vec![0.1, 0.9, 0.4, 0.3, 0.7, 0.5, 0.2, 0.8]).unwrap());
    close(
        "ccc identity",
        ccc_loss(t, t).map_err(|e| e.to_string())?.item(),
        0.0,
        tol,
    )?;

    let p = g.constant(Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap());
    let y = g.constant(Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap());
    close(
        "ccc anti-correlated",
        ccc_loss(p, y).map_err(|e| e.to_string())?.item(),
        2.0,
        tol,
    )?;

    let eye = g.constant(Tensor::identity(3));
    close("bt(I)", bt_loss(eye, 1e-3).map_err(|e| e.to_string())?.item(), 0.0, tol)?;
    let m = g.constant(Tensor::matrix(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap());
    // two off-diagonal entries of 0.5², scaled by λ
    close(
        "bt(half)",
        bt_loss(m, 1e-3).map_err(|e| e.to_string())?.item(),
        1e-3 * 2.0 * 0.25,
        tol,
    )?;

    let c = g.constant(Tensor::vector(vec![1.0, 1.0, 0.01]));
    close("ruwl", ruwl(c, 2.0).item(), 0.01, tol)?;

    let params = RuwlParams {
        c: [1.0; 3],
        lambda: [1.0; 3],
        restraint_target: 2.0,
        lambda_position: LambdaPosition::Numerator,
    };
    let l = [0.5, 0.5, 1.0].map(|v| g.scalar(v));
    let terms = combined_loss(l, g.constant(Tensor::vector(vec![1.0; 3])), &params).map_err(|e| e.to_string())?;
    // |2 - 3| + (0.5 + 0.5 + 1) + 3 ln 2
    let want = 1.0 + 2.0 + 3.0 * 2f64.ln();
    close("combined", terms.total.item(), want, tol)?;
    Ok(format!(
        "six values within {tol:e}; combined = {:.4}",
        terms.total.item()
    ))
}

fn xcorr_loop(b: usize, d: usize, za: &[f64], zb: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    let mean = |z: &[f64], j: usize| (0..b).map(|r| z[r * d + j]).sum::<f64>() / b as f64;
    for i in 0..d {
        for j in 0..d {
            let (mi, mj) = (mean(za, i), mean(zb, j));
            let (mut num, mut sa, mut sb) = (0.0, 0.0, 0.0);
            for r in 0..b {
                let (a, c) = (za[r * d + i] - mi, zb[r * d + j] - mj);
                num += a * c;
                sa += a * a;
                sb += c * c;
            }
            out[i * d + j] = num / (sa.sqrt() * sb.sqrt() + 1e-12);
        }
    }
    out
}

fn bt_of(b: usize, d: usize, za: &[f64], zb: &[f64]) -> f64 {
    let g = Graph::new();
    let za = g.constant(Tensor::new(vec![b, d], za.to_vec()).unwrap());
    let zb = g.constant(Tensor::new(vec![b, d], zb.to_vec()).unwrap());
    let c = rrtn::losses::cross_correlation(za, zb, true).unwrap();
    bt_loss(c, 5e-3).unwrap().item()
}

fn properties() -> Outcome {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (b, d) = (rng.random_range(2..9), rng.random_range(1..7));
        let za: Vec<f64> = (0..b * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let zb: Vec<f64> = (0..b * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = CrossCorrMatrix::compute(
            &Tensor::new(vec![b, d], za.clone()).unwrap(),
            &Tensor::new(vec![b, d], zb.clone()).unwrap(),
            true,
        )
        .map_err(|e| e.to_string())?;
        for (x, y) in got.values.data().iter().zip(xcorr_loop(b, d, &za, &zb)) {
            worst = worst.max((x - y).abs());
        }
        ensure(worst < 1e-12, format!("xcorr case {case}: error {worst:e}"))?;

        let base = bt_of(b, d, &za, &zb);
        let mut rows: Vec<usize> = (0..b).collect();
        rows.shuffle(&mut rng);
        let by_row = |z: &[f64]| -> Vec<f64> { rows.iter().flat_map(|&r| z[r * d..(r + 1) * d].to_vec()).collect() };
        let shuffled = bt_of(b, d, &by_row(&za), &by_row(&zb));
        ensure(
            (base - shuffled).abs() < 1e-10 * base.max(1.0),
            format!("batch order changed bt, case {case}"),
        )?;
        let mut cols: Vec<usize> = (0..d).collect();
        cols.shuffle(&mut rng);
        let by_col = |z: &[f64]| -> Vec<f64> { (0..b).flat_map(|r| cols.iter().map(move |&j| z[r * d + j])).collect() };
        let permuted = bt_of(b, d, &by_col(&za), &by_col(&zb));
        ensure(
            (base - permuted).abs() < 1e-10 * base.max(1.0),
            format!("dimension order changed bt, case {case}"),
        )?;
    }

    let cfg = AugmentConfig::default();
    let (frames, bins) = (32, 16);
    for seed in 0..100 {
        let m = Masks::sample(&cfg, frames, bins, &mut ChaCha8Rng::seed_from_u64(seed));
        ensure(
            m.time.len() == cfg.time_stripes && m.freq.len() == cfg.freq_stripes,
            "stripe count",
        )?;
        ensure(
            m.time.iter().all(|r| r.end <= frames && r.len() <= cfg.time_drop_width),
            "time stripe out of bounds",
        )?;
        ensure(
            m.freq.iter().all(|r| r.end <= bins && r.len() <= cfg.freq_drop_width),
            "freq stripe out of bounds",
        )?;
    }
    let x = Tensor::new(
        vec![4, 1, frames, bins],
        (0..4 * frames * bins).map(|i| 1.0 + i as f64).collect(),
    )
    .unwrap();
    let a = augment_batch(&x, &cfg, 11, 3).map_err(|e| e.to_string())?;
    ensure(
        a == augment_batch(&x, &cfg, 11, 3).map_err(|e| e.to_string())?,
        "masking not deterministic",
    )?;
    ensure(a != x, "default masking changed nothing")?;

    let opt = AdamWConfig {
        lr: 0.01,
        weight_decay: 0.05,
        ..AdamWConfig::default()
    };
    let init: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut p = Tensor::vector(init.clone());
    let mut state = AdamWState::default();
    let (mut theta, mut m, mut v) = (init, [0.0; 5], [0.0; 5]);
    for t in 1..=10 {
        let g: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        adamw_step(&mut [&mut p], &[Tensor::vector(g.clone())], &mut state, &opt).map_err(|e| e.to_string())?;
        for i in 0..5 {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - opt.beta1.powf(t as f64));
            let vh = v[i] / (1.0 - opt.beta2.powf(t as f64));
            theta[i] -= opt.lr * mh / (vh.sqrt() + opt.eps) + opt.lr * opt.weight_decay * theta[i];
        }
    }
    let adam_err = p
        .data()
        .iter()
        .zip(&theta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(adam_err < 1e-12, format!("AdamW differs by {adam_err:e}"))?;
    Ok(format!(
        "xcorr max err {worst:.1e} over 100 cases; bt invariances, masks, AdamW err {adam_err:.1e}"
    ))
}

fn overfit() -> Outcome {
    let data = gen_synth(&SynthConfig {
        n_samples: 40,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let n_train = data.indices(Split::Train).len();
    ensure(n_train == 32, format!("training split has {n_train} samples"))?;
    let cfg = RunConfig::default();
    let mut setup = cfg.setup_for(&data).map_err(|e| e.to_string())?;
    setup.train = TrainConfig {
        epochs: 200,
        mode: Mode::Baseline,
        ..setup.train
    };
    ensure(setup.model.rep_dim == 64, "model is not the rep_dim 64 default")?;
    let start = Instant::now();
    let report = train(&setup, &data).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let fit = evaluate(&report.final_params, &data, Split::Train).map_err(|e| e.to_string())?;
    let detail = format!("train C {:.4} after 200 epochs in {elapsed:.1?}", fit.mean_ccc);
    ensure(fit.mean_ccc > 0.95, detail.clone())?;
    ensure(elapsed < Duration::from_secs(120), detail.clone())?;
    Ok(detail)
}

fn desk_setup() -> Result<(RunConfig, rrtn::data::Dataset, TrainSetup), String> {
    let cfg = RunConfig::default();
    let data = cfg.data.load().map_err(|e| e.to_string())?;
    let setup = cfg.setup_for(&data).map_err(|e| e.to_string())?;
    Ok((cfg, data, setup))
}

fn desk() -> Outcome {
    let (_, data, base) = desk_setup()?;
    ensure(
        (data.len(), data.frames(), data.bins(), data.n_targets()) == (512, 32, 16, 10),
        "default data is not 512 x 32 x 16 x 10",
    )?;
    ensure(
        base.train.epochs == 20 && base.train.batch_size == 16,
        "default schedule is not 20 x 16",
    )?;
    let mut parts = Vec::new();
    for mode in Mode::ALL {
        let mut setup = base.clone();
        setup.train.mode = mode;
        let start = Instant::now();
        let r = train(&setup, &data).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let part = format!("{mode} {:.3} ({elapsed:.1?})", r.final_dev_ccc);
        ensure(r.halted.is_none() && r.final_dev_ccc >= 0.5, part.clone())?;
        ensure(elapsed < Duration::from_secs(300), part.clone())?;
        parts.push(part);
    }
    Ok(format!("final dev C: {}", parts.join(", ")))
}

fn ablation() -> Outcome {
    // the published arithmetic: 0.678 over 0.647 is a 4.8% gain
    let pct = (1000.0 * relative_gain(0.678, 0.647)).round() / 10.0;
    ensure(pct == 4.8, format!("published gain recomputes to {pct}%"))?;

    let (cfg, data, _) = desk_setup()?;
    ensure(cfg.sweep.seeds.len() == 5, "default sweep is not 5 seeds")?;
    let summary = run_sweep(&cfg, &data, |_| {}).map_err(|e| e.to_string())?;
    ensure(summary.rows.len() == 15, format!("{} rows", summary.rows.len()))?;
    let modes: Vec<Mode> = summary.aggregates.iter().map(|a| a.mode).collect();
    ensure(modes == Mode::ALL, format!("aggregates for {modes:?}"))?;
    let mean_of = |mode: Mode| {
        let s: Vec<f64> = summary
            .rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.best_dev_ccc)
            .collect();
        s.iter().sum::<f64>() / s.len() as f64
    };
    let base = mean_of(Mode::Baseline);
    let mut parts = vec![format!("baseline {base:.4}")];
    for a in &summary.aggregates {
        ensure((a.mean - mean_of(a.mode)).abs() < 1e-12, format!("{} mean", a.mode))?;
        if a.mode == Mode::Baseline {
            ensure(a.relative_gain.is_none(), "baseline has a gain")?;
            continue;
        }
        let want = (mean_of(a.mode) - base) / base;
        let got = a.relative_gain.ok_or(format!("{} has no gain", a.mode))?;
        ensure((got - want).abs() < 1e-12, format!("{} gain {got} vs {want}", a.mode))?;
        parts.push(format!("{} {:.4} ({:+.1}%)", a.mode, a.mean, 100.0 * got));
    }
    Ok(parts.join(", "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |out: &str| -> Result<(), String> {
        let o = Command::new(env!("CARGO_BIN_EXE_rrtn"))
            .args(["train", "--out", out])
            .current_dir(dir.path())
            .env_remove("RRTN_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), String::from_utf8_lossy(&o.stderr).into_owned())
    };
    run("a")?;
    run("b")?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    let files = ["metrics.jsonl", "final.ckpt", "best.ckpt"];
    for file in files {
        let a = read(&dir.path().join("a").join(file))?;
        let b = read(&dir.path().join("b").join(file))?;
        ensure(a == b, format!("{file} differs"))?;
    }
    Ok(format!("{} identical across two default train runs", files.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("gradient correctness", gradients),
        ("closed-form loss values", closed_forms),
        ("property suites", properties),
        ("overfit oracle", overfit),
        ("desk-scale learning", desk),
        ("ablation structure", ablation),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}  [{secs:.1}s]  {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}  [{secs:.1}s]  {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
