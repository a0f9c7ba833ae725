//! Shared-weight twin network.
//!
//! One encoder maps each view to a representation. A linear regression
//! head turns representations into predictions, and a single linear
//! projector turns them into embeddings for the redundancy-reduction loss.
//! Both views run through the same parameter tensors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::losses::{bt_loss, ccc_loss, cross_correlation};
use crate::seeding;
use crate::tensor::Tensor;

pub mod checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Flatten, then ReLU layers of `encoder_dims` followed by a ReLU layer
    /// of `rep_dim`.
    Mlp,
    /// conv → ReLU → average pool → flatten → linear to `rep_dim`.
    TinyCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_kind: EncoderKind,
    /// Hidden layer widths of the MLP encoder.
    pub encoder_dims: Vec<usize>,
    pub cnn_channels: usize,
    /// Odd square kernel size of the CNN encoder.
    pub cnn_kernel: usize,
    pub cnn_pool: [usize; 2],
    pub rep_dim: usize,
    pub emb_dim: usize,
    pub head_sigmoid: bool,
    pub frames: usize,
    pub bins: usize,
    pub n_outputs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_kind: EncoderKind::TinyCnn,
            encoder_dims: vec![128],
            cnn_channels: 4,
            cnn_kernel: 3,
            cnn_pool: [2, 2],
            rep_dim: 64,
            emb_dim: 64,
            head_sigmoid: false,
            frames: 32,
            bins: 16,
            n_outputs: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rep_dim", self.rep_dim),
            ("emb_dim", self.emb_dim),
            ("frames", self.frames),
            ("bins", self.bins),
            ("n_outputs", self.n_outputs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        match self.encoder_kind {
            EncoderKind::Mlp => {
                if self.encoder_dims.contains(&0) {
                    return Err(Error::Config("model.encoder_dims must be positive".into()));
                }
            }
            EncoderKind::TinyCnn => {
                if self.cnn_channels == 0 || self.cnn_kernel.is_multiple_of(2) {
                    return Err(Error::Config(
                        "model.cnn_channels must be positive and model.cnn_kernel odd".into(),
                    ));
                }
                let [ph, pw] = self.cnn_pool;
                if ph == 0 || pw == 0 || ph > self.frames || pw > self.bins {
                    return Err(Error::Config(format!(
                        "model.cnn_pool {:?} does not fit a {}×{} input",
                        self.cnn_pool, self.frames, self.bins
                    )));
                }
            }
        }
        Ok(())
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let linear = |out: &mut Vec<(String, Vec<usize>)>, name: &str, i: usize, o: usize| {
            out.push((format!("{name}.weight"), vec![i, o]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        match self.encoder_kind {
            EncoderKind::Mlp => {
                let mut fan_in = self.frames * self.bins;
                for (i, &d) in self.encoder_dims.iter().chain([&self.rep_dim]).enumerate() {
                    linear(&mut out, &format!("encoder.{i}"), fan_in, d);
                    fan_in = d;
                }
            }
            EncoderKind::TinyCnn => {
                let k = self.cnn_kernel;
                out.push(("encoder.conv.kernel".into(), vec![self.cnn_channels, 1, k, k]));
                linear(&mut out, "encoder.fc", self.pooled_len(), self.rep_dim);
            }
        }
        linear(&mut out, "projector", self.rep_dim, self.emb_dim);
        linear(&mut out, "head", self.rep_dim, self.n_outputs);
        out
    }

    fn pooled_len(&self) -> usize {
        let [ph, pw] = self.cnn_pool;
        self.cnn_channels * (self.frames / ph) * (self.bins / pw)
    }
}

/// Named parameter tensors plus the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    entries: Vec<(String, Tensor)>,
}

impl ModelParams {
    /// Checks `entries` against the configuration's layout.
    pub fn from_entries(config: ModelConfig, entries: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != entries.len() {
            return Err(Error::Load(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                entries.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&entries) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Load(format!(
                    "expected parameter {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(ModelParams { config, entries })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers every tensor as a trainable leaf of `g`.
    pub fn bind<'g>(&self, g: &'g Graph) -> BoundParams<'g> {
        BoundParams {
            config: self.config.clone(),
            vars: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), g.leaf(t.clone())))
                .collect(),
        }
    }
}

/// Linear weights ~ U(−1/√fan_in, 1/√fan_in); biases zero.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = seeding::stream(seed, &[seeding::tag::INIT]);
    let entries = config
        .layout()
        .into_iter()
        .map(|(name, shape)| {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = if shape.len() == 4 {
                    shape[1..].iter().product()
                } else {
                    shape[0]
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data).expect("layout shape")
            };
            (name, t)
        })
        .collect();
    ModelParams::from_entries(config.clone(), entries)
}

/// Parameters registered on one graph.
#[derive(Debug, Clone)]
pub struct BoundParams<'g> {
    config: ModelConfig,
    vars: Vec<(String, Var<'g>)>,
}

impl<'g> BoundParams<'g> {
    /// Uses existing graph values as parameters, one per layout entry in order.
    pub fn from_vars(config: &ModelConfig, vars: &[Var<'g>]) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != vars.len() {
            return Err(Error::Load(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                vars.len()
            )));
        }
        let mut named = Vec::with_capacity(vars.len());
        for ((name, shape), &v) in layout.into_iter().zip(vars) {
            if v.shape() != shape {
                return Err(Error::Load(format!(
                    "expected parameter {name} {shape:?}, found {:?}",
                    v.shape()
                )));
            }
            named.push((name, v));
        }
        Ok(BoundParams {
            config: config.clone(),
            vars: named,
        })
    }

    pub fn var(&self, name: &str) -> Var<'g> {
        self.vars
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var<'g>)> + '_ {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }

    fn linear(&self, name: &str, x: Var<'g>) -> Result<Var<'g>> {
        let w = self.var(&format!("{name}.weight"));
        let b = self.var(&format!("{name}.bias"));
        let rows = x.shape()[0];
        let out = b.shape()[0];
        let ones = x.graph().constant(Tensor::full(&[rows, 1], 1.0));
        x.matmul(w)?.add(ones.matmul(b.reshape(&[1, out])?)?)
    }

    /// Representations `B×rep_dim` of a `B×1×T×F` batch.
    pub fn encode(&self, x: Var<'g>) -> Result<Var<'g>> {
        let cfg = &self.config;
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.frames || shape[3] != cfg.bins {
            return Err(Error::dim(format!(
                "model expects B×1×{}×{} input, got {shape:?}",
                cfg.frames, cfg.bins
            )));
        }
        let b = shape[0];
        match cfg.encoder_kind {
            EncoderKind::Mlp => {
                let mut h = x.reshape(&[b, cfg.frames * cfg.bins])?;
                for i in 0..=cfg.encoder_dims.len() {
                    h = self.linear(&format!("encoder.{i}"), h)?.relu();
                }
                Ok(h)
            }
            EncoderKind::TinyCnn => {
                let [ph, pw] = cfg.cnn_pool;
                let h = x
                    .conv2d(self.var("encoder.conv.kernel"))?
                    .relu()
                    .avg_pool2d((ph, pw))?
                    .reshape(&[b, cfg.pooled_len()])?;
                self.linear("encoder.fc", h)
            }
        }
    }

    pub fn predict(&self, rep: Var<'g>) -> Result<Var<'g>> {
        let y = self.linear("head", rep)?;
        Ok(if self.config.head_sigmoid { y.sigmoid() } else { y })
    }

    pub fn project(&self, rep: Var<'g>) -> Result<Var<'g>> {
        self.linear("projector", rep)
    }

    /// Runs both views through the shared encoder, head and projector.
    pub fn forward_twin(&self, xa: Var<'g>, xb: Var<'g>) -> Result<TwinOutput<'g>> {
        if xa.shape() != xb.shape() {
            return Err(Error::dim(format!(
                "twin views differ in shape: {:?} vs {:?}",
                xa.shape(),
                xb.shape()
            )));
        }
        let rep_a = self.encode(xa)?;
        let rep_b = self.encode(xb)?;
        Ok(TwinOutput {
            pred_a: self.predict(rep_a)?,
            pred_b: self.predict(rep_b)?,
            emb_a: self.project(rep_a)?,
            emb_b: self.project(rep_b)?,
            rep_a,
            rep_b,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TwinOutput<'g> {
    pub rep_a: Var<'g>,
    pub rep_b: Var<'g>,
    pub emb_a: Var<'g>,
    pub emb_b: Var<'g>,
    pub pred_a: Var<'g>,
    pub pred_b: Var<'g>,
}

/// Settings of the redundancy-reduction term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BtSettings {
    pub lambda_offdiag: f64,
    pub center: bool,
}

impl Default for BtSettings {
    fn default() -> Self {
        BtSettings {
            lambda_offdiag: crate::losses::DEFAULT_BT_LAMBDA,
            center: true,
        }
    }
}

/// `[ccc_loss(pred_a), ccc_loss(pred_b), bt_loss(C(emb_a, emb_b))]`
pub fn rrtn_step_losses<'g>(out: &TwinOutput<'g>, targets: Var<'g>, bt: BtSettings) -> Result<[Var<'g>; 3]> {
    let c = cross_correlation(out.emb_a, out.emb_b, bt.center)?;
    Ok([
        ccc_loss(out.pred_a, targets)?,
        ccc_loss(out.pred_b, targets)?,
        bt_loss(c, bt.lambda_offdiag)?,
    ])
}

/// Predictions for a batch without recording gradients.
pub fn predict(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let g = Graph::new();
    let bound = BoundParams {
        config: params.config.clone(),
        vars: params
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), g.constant(t.clone())))
            .collect(),
    };
    let rep = bound.encode(g.constant(x.clone()))?;
    Ok(bound.predict(rep)?.value())
}
