//! Epoch loop, evaluation and the three training modes.
//!
//! * `baseline`: only the original-view CCC loss is optimised.
//! * `rrtn_fixed`: fixed weighted sum of the three losses.
//! * `rrtn_ruwl`: restrained uncertainty weighting, with the weighting
//!   parameters `c` trained by the same optimizer as the network.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugmentConfig};
use crate::autodiff::Graph;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{clamp_c, combined_loss, mean_ccc_metric, per_dim_ccc, weighted_sum_loss, LossBundle, RuwlParams};
use crate::model::{self, init_params, rrtn_step_losses, BtSettings, ModelConfig, ModelParams};
use crate::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::seeding;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    RrtnFixed,
    RrtnRuwl,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::RrtnFixed, Mode::RrtnRuwl];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::RrtnFixed => "rrtn_fixed",
            Mode::RrtnRuwl => "rrtn_ruwl",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Loss weights used by `rrtn_fixed`.
    pub fixed_weights: [f64; 3],
    /// Off-diagonal weight inside the Barlow Twins loss.
    pub bt_lambda: f64,
    /// Mean-centre embedding columns before cross-correlating.
    pub center: bool,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            seed: 0,
            mode: Mode::RrtnRuwl,
            fixed_weights: [1.0, 1.0, 0.01],
            bt_lambda: crate::losses::DEFAULT_BT_LAMBDA,
            center: true,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "train.batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.fixed_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "train.fixed_weights must be finite and non-negative".into(),
            ));
        }
        if !(self.bt_lambda >= 0.0 && self.bt_lambda.is_finite()) {
            return Err(Error::Config("train.bt_lambda must be non-negative".into()));
        }
        self.optimizer.validate()
    }
}

/// Everything a training run depends on besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetup {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub ruwl: RuwlParams,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate(self.model.frames, self.model.bins)?;
        self.ruwl.validate()
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ccc: f64,
    pub l_ccc_a: f64,
    pub l_bt: f64,
    pub l_w: f64,
    pub l_total: f64,
    /// Weighting parameters after the epoch; only in `rrtn_ruwl`.
    pub c: Option<[f64; 3]>,
    pub weights: [f64; 3],
    pub dev_ccc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halted: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub mode: Mode,
    pub initial_dev_ccc: f64,
    pub records: Vec<EpochRecord>,
    pub final_params: ModelParams,
    pub final_dev_ccc: f64,
    /// Epoch with the highest dev CCC (0 = before training).
    pub best_epoch: usize,
    pub best_dev_ccc: f64,
    pub best_params: ModelParams,
    pub final_c: [f64; 3],
    /// Set when the run stopped on a non-finite loss or gradient.
    pub halted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_ccc: f64,
    pub per_dim: Vec<f64>,
}

/// Corpus-level CCC of view-A predictions over one split.
pub fn evaluate(params: &ModelParams, data: &Dataset, split: Split) -> Result<EvalReport> {
    check_compatible(params.config(), data)?;
    let idx = data.indices(split);
    if idx.len() < 2 {
        return Err(Error::Usage(format!(
            "{split:?} split has {} samples; evaluation needs at least 2",
            idx.len()
        )));
    }
    let (x, y) = data.gather(&idx);
    let pred = model::predict(params, &x)?;
    Ok(EvalReport {
        mean_ccc: mean_ccc_metric(&pred, &y)?,
        per_dim: per_dim_ccc(&pred, &y)?,
    })
}

pub fn check_compatible(cfg: &ModelConfig, data: &Dataset) -> Result<()> {
    if (cfg.frames, cfg.bins, cfg.n_outputs) != (data.frames(), data.bins(), data.n_targets()) {
        return Err(Error::Load(format!(
            "model expects {}×{} inputs with {} outputs, data has {}×{} with {}",
            cfg.frames,
            cfg.bins,
            cfg.n_outputs,
            data.frames(),
            data.bins(),
            data.n_targets()
        )));
    }
    Ok(())
}

/// Result of one optimisation step.
struct StepOutcome {
    bundle: LossBundle,
}

struct Run<'a> {
    setup: &'a TrainSetup,
    params: ModelParams,
    c: Tensor,
    state: AdamWState,
}

impl Run<'_> {
    fn step(&mut self, x: &Tensor, y: &Tensor, stream: u64) -> Result<StepOutcome> {
        let cfg = &self.setup.train;
        let xb = augment_batch(x, &self.setup.augment, cfg.seed, stream)?;

        let g = Graph::new();
        let bound = self.params.bind(&g);
        let c_var = g.leaf(self.c.clone());
        let out = bound.forward_twin(g.constant(x.clone()), g.constant(xb))?;
        let bt = BtSettings {
            lambda_offdiag: cfg.bt_lambda,
            center: cfg.center,
        };
        let losses = rrtn_step_losses(&out, g.constant(y.clone()), bt)?;
        let values = losses.map(|l| l.item());

        let (total, mut bundle) = match cfg.mode {
            Mode::Baseline => (losses[0], LossBundle::weighted(values, [1.0, 0.0, 0.0])),
            Mode::RrtnFixed => (
                weighted_sum_loss(losses, cfg.fixed_weights)?,
                LossBundle::weighted(values, cfg.fixed_weights),
            ),
            Mode::RrtnRuwl => {
                let terms = combined_loss(losses, c_var, &self.setup.ruwl)?;
                (terms.total, terms.bundle(values))
            }
        };
        bundle.l_total = total.item();
        if !bundle.l_total.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("loss {bundle:?}")));
        }
        let drift = (bundle.recomputed_total() - bundle.l_total).abs();
        if drift > 1e-10 * bundle.l_total.abs().max(1.0) {
            return Err(Error::Check(format!(
                "loss parts do not add up to the total: {bundle:?}"
            )));
        }

        let grads = g.backward(total)?;
        let mut grad_list: Vec<Tensor> = bound.vars().map(|(_, v)| grads.wrt(v).clone()).collect();
        if cfg.mode == Mode::Baseline {
            for (name, v) in bound.vars() {
                if name.starts_with("projector.") && grads.wrt(v).data().iter().any(|&d| d != 0.0) {
                    return Err(Error::Check(format!("baseline mode produced a gradient on {name}")));
                }
            }
        }
        let train_c = cfg.mode == Mode::RrtnRuwl;
        if train_c {
            grad_list.push(grads.wrt(c_var).clone());
        }
        drop(bound);

        let mut targets: Vec<&mut Tensor> = self.params.tensors_mut().collect();
        if train_c {
            targets.push(&mut self.c);
        }
        adamw_step(&mut targets, &grad_list, &mut self.state, &cfg.optimizer)?;
        if train_c {
            self.c.data_mut().iter_mut().for_each(|v| *v = clamp_c(*v));
        }
        Ok(StepOutcome { bundle })
    }
}

/// Trains with `setup` on the training split, reporting every finished epoch to `on_epoch`.
pub fn train_with(
    setup: &TrainSetup,
    data: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainReport> {
    setup.validate()?;
    check_compatible(&setup.model, data)?;
    let cfg = &setup.train;
    let params = init_params(&setup.model, cfg.seed)?;
    let initial_dev_ccc = evaluate(&params, data, Split::Dev)?.mean_ccc;

    let mut run = Run {
        setup,
        params,
        c: Tensor::vector(setup.ruwl.c.to_vec()),
        state: AdamWState::default(),
    };
    let mut best = (0, initial_dev_ccc, run.params.clone());
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut halted = None;
    let mut train_idx = data.indices(Split::Train);
    if train_idx.len() < 2 {
        return Err(Error::Usage(format!(
            "training split has {} samples; need at least 2",
            train_idx.len()
        )));
    }

    'epochs: for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut seeding::stream(cfg.seed, &[seeding::tag::SHUFFLE, epoch as u64]));
        let mut sums = [0.0f64; 5];
        let mut weights = [0.0f64; 3];
        let mut steps = 0usize;
        for (b, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = data.gather(chunk);
            let stream = ((epoch as u64) << 32) | b as u64;
            match run.step(&x, &y, stream) {
                Ok(StepOutcome { bundle }) => {
                    let parts = [bundle.l_ccc, bundle.l_ccc_a, bundle.l_bt, bundle.l_w, bundle.l_total];
                    sums.iter_mut().zip(parts).for_each(|(s, p)| *s += p);
                    weights = bundle.effective_weights;
                    steps += 1;
                }
                Err(e @ Error::NonFinite(_)) => {
                    let reason = format!("epoch {epoch}, batch {b}: {e}");
                    let record = EpochRecord {
                        epoch,
                        l_ccc: f64::NAN,
                        l_ccc_a: f64::NAN,
                        l_bt: f64::NAN,
                        l_w: f64::NAN,
                        l_total: f64::NAN,
                        c: (cfg.mode == Mode::RrtnRuwl).then(|| c_array(&run.c)),
                        weights,
                        dev_ccc: f64::NAN,
                        halted: Some(reason.clone()),
                    };
                    on_epoch(&record)?;
                    records.push(record);
                    halted = Some(reason);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let n = steps.max(1) as f64;
        let dev_ccc = evaluate(&run.params, data, Split::Dev)?.mean_ccc;
        let record = EpochRecord {
            epoch,
            l_ccc: sums[0] / n,
            l_ccc_a: sums[1] / n,
            l_bt: sums[2] / n,
            l_w: sums[3] / n,
            l_total: sums[4] / n,
            c: (cfg.mode == Mode::RrtnRuwl).then(|| c_array(&run.c)),
            weights,
            dev_ccc,
            halted: None,
        };
        on_epoch(&record)?;
        records.push(record);
        if dev_ccc > best.1 {
            best = (epoch, dev_ccc, run.params.clone());
        }
    }

    let final_dev_ccc = evaluate(&run.params, data, Split::Dev)?.mean_ccc;
    Ok(TrainReport {
        mode: cfg.mode,
        initial_dev_ccc,
        records,
        final_dev_ccc,
        best_epoch: best.0,
        best_dev_ccc: best.1,
        best_params: best.2,
        final_c: c_array(&run.c),
        final_params: run.params,
        halted,
    })
}

pub fn train(setup: &TrainSetup, data: &Dataset) -> Result<TrainReport> {
    train_with(setup, data, |_| Ok(()))
}

fn c_array(c: &Tensor) -> [f64; 3] {
    [c.data()[0], c.data()[1], c.data()[2]]
}
