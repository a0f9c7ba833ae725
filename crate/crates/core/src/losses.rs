//! Regression, redundancy-reduction and loss-weighting objectives.
//!
//! The differentiable forms take [`Var`]s on a [`Graph`]; the reporting
//! metric ([`mean_ccc_metric`]) works on plain tensors.
//!
//! Three scalar losses are produced per twin step: CCC loss on the original
//! view, CCC loss on the masked view, and the Barlow Twins loss between the
//! two views' embeddings. They are combined either by a fixed weighted sum
//! or by the restrained uncertainty weighting in [`combined_loss`].

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower bound on the CCC denominator.
pub const CCC_EPS: f64 = 1e-8;
/// Added to the cross-correlation denominator.
pub const XCORR_EPS: f64 = 1e-12;
/// Smallest magnitude a weighting parameter may take inside the combined loss.
pub const C_MIN: f64 = 1e-6;
/// Off-diagonal weight of the Barlow Twins loss.
pub const DEFAULT_BT_LAMBDA: f64 = 1e-3;

/// Population moments of one prediction/target column pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CccMoments {
    pub mu_x: f64,
    pub mu_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov_xy: f64,
}

impl CccMoments {
    pub fn from_slices(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::dim(format!("ccc: lengths {} and {}", x.len(), y.len())));
        }
        if x.len() < 2 {
            return Err(Error::Usage(format!("ccc needs at least 2 samples, got {}", x.len())));
        }
        let n = x.len() as f64;
        let mu_x = x.iter().sum::<f64>() / n;
        let mu_y = y.iter().sum::<f64>() / n;
        let (mut var_x, mut var_y, mut cov_xy) = (0.0, 0.0, 0.0);
        for (&a, &b) in x.iter().zip(y) {
            let (da, db) = (a - mu_x, b - mu_y);
            var_x += da * da;
            var_y += db * db;
            cov_xy += da * db;
        }
        Ok(CccMoments {
            mu_x,
            mu_y,
            var_x: var_x / n,
            var_y: var_y / n,
            cov_xy: cov_xy / n,
        })
    }

    pub fn ccc(&self) -> f64 {
        let d = self.mu_x - self.mu_y;
        2.0 * self.cov_xy / (self.var_x + self.var_y + d * d).max(CCC_EPS)
    }
}

/// Concordance correlation coefficient of two equal-length samples.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    CccMoments::from_slices(x, y).map(|m| m.ccc())
}

fn check_pair(pred: &[usize], target: &[usize]) -> Result<(usize, usize)> {
    if pred != target || pred.len() != 2 {
        return Err(Error::dim(format!(
            "prediction {pred:?} and target {target:?} must be equal 2-D shapes"
        )));
    }
    if pred[0] < 2 {
        return Err(Error::Usage(format!("ccc needs at least 2 rows, got {}", pred[0])));
    }
    Ok((pred[0], pred[1]))
}

/// CCC of every column of an `N×K` prediction against its target column.
pub fn per_dim_ccc(pred: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
    let (n, k) = check_pair(pred.shape(), target.shape())?;
    (0..k)
        .map(|j| {
            let x: Vec<f64> = (0..n).map(|i| pred.at2(i, j)).collect();
            let y: Vec<f64> = (0..n).map(|i| target.at2(i, j)).collect();
            ccc(&x, &y)
        })
        .collect()
}

/// Mean CCC over output dimensions, computed over a whole evaluation split.
pub fn mean_ccc_metric(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let per_dim = per_dim_ccc(pred, target)?;
    Ok(per_dim.iter().sum::<f64>() / per_dim.len() as f64)
}

/// `I - 11ᵀ/n`, which mean-centres the columns of anything it left-multiplies.
fn centering<'g>(g: &'g Graph, n: usize) -> Var<'g> {
    let mut h = Tensor::full(&[n, n], -1.0 / n as f64);
    for i in 0..n {
        h.data_mut()[i * n + i] += 1.0;
    }
    g.constant(h)
}

/// `1 - mean_k ccc(pred[:, k], target[:, k])` with per-batch population moments.
pub fn ccc_loss<'g>(pred: Var<'g>, target: Var<'g>) -> Result<Var<'g>> {
    let (b, _) = check_pair(&pred.shape(), &target.shape())?;
    let g = pred.graph();
    let h = centering(g, b);
    let pc = h.matmul(pred)?;
    let tc = h.matmul(target)?;
    let var_p = pc.square().mean_axis(0)?;
    let var_t = tc.square().mean_axis(0)?;
    let cov = pc.mul(tc)?.mean_axis(0)?;
    let mean_gap = pred.mean_axis(0)?.sub(target.mean_axis(0)?)?.square();
    let denom = var_p.add(var_t)?.add(mean_gap)?.clamp_min(CCC_EPS);
    let per_dim = cov.mul_scalar(2.0).div(denom)?;
    Ok(per_dim.mean().rsub_scalar(1.0))
}

/// Normalised `D×D` cross-correlation between the embedding columns of two
/// `B×D` views. Columns are mean-centred over the batch first when `center`
/// is set.
pub fn cross_correlation<'g>(za: Var<'g>, zb: Var<'g>, center: bool) -> Result<Var<'g>> {
    let (sa, sb) = (za.shape(), zb.shape());
    if sa != sb || sa.len() != 2 {
        return Err(Error::dim(format!("cross-correlation of {sa:?} and {sb:?}")));
    }
    let (b, d) = (sa[0], sa[1]);
    if b < 2 {
        return Err(Error::Usage(format!(
            "cross-correlation needs at least 2 rows, got {b}"
        )));
    }
    let (za, zb) = if center {
        let h = centering(za.graph(), b);
        (h.matmul(za)?, h.matmul(zb)?)
    } else {
        (za, zb)
    };
    let num = za.t()?.matmul(zb)?;
    let norm_a = za.square().sum_axis(0)?.sqrt().reshape(&[d, 1])?;
    let norm_b = zb.square().sum_axis(0)?.sqrt().reshape(&[1, d])?;
    let denom = norm_a.matmul(norm_b)?.add_scalar(XCORR_EPS);
    num.div(denom)
}

/// A cross-correlation matrix evaluated outside any training graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrMatrix {
    pub values: Tensor,
    pub d: usize,
}

impl CrossCorrMatrix {
    pub fn compute(za: &Tensor, zb: &Tensor, center: bool) -> Result<Self> {
        let g = Graph::new();
        let c = cross_correlation(g.constant(za.clone()), g.constant(zb.clone()), center)?;
        let values = c.value();
        Ok(CrossCorrMatrix {
            d: values.shape()[0],
            values,
        })
    }
}

/// `Σ_i (1 - C_ii)² + λ Σ_{i≠j} C_ij²`
pub fn bt_loss<'g>(c: Var<'g>, lambda_offdiag: f64) -> Result<Var<'g>> {
    let shape = c.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::dim(format!("bt_loss needs a square matrix, got {shape:?}")));
    }
    let g = c.graph();
    let d = shape[0];
    let eye = Tensor::identity(d);
    let off = eye.map(|v| 1.0 - v);
    let err = c.sub(g.constant(eye.clone()))?.square();
    let on_diag = err.mul(g.constant(eye))?.sum();
    let off_diag = err.mul(g.constant(off))?.sum();
    on_diag.add(off_diag.mul_scalar(lambda_offdiag))
}

/// `w₁·L_ccc + w₂·L_ccc_a + w₃·L_BT`
pub fn weighted_sum_loss<'g>(losses: [Var<'g>; 3], weights: [f64; 3]) -> Result<Var<'g>> {
    let g = losses[0].graph();
    let l = g.concat(&losses)?;
    Ok(l.mul(g.constant(Tensor::vector(weights.to_vec())))?.sum())
}

/// Where the per-loss constant sits in the uncertainty weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPosition {
    /// `w = 1 / (λ c²)`
    Denominator,
    /// `w = λ / c²`
    Numerator,
}

/// Weighting parameters `c`, per-loss constants `λ`, and the restraint
/// target for the combined objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuwlParams {
    pub c: [f64; 3],
    pub lambda: [f64; 3],
    pub restraint_target: f64,
    pub lambda_position: LambdaPosition,
}

impl Default for RuwlParams {
    fn default() -> Self {
        RuwlParams {
            c: [1.0, 1.0, 0.01],
            lambda: [1.0, 1.0, 1e-8],
            restraint_target: 2.0,
            lambda_position: LambdaPosition::Numerator,
        }
    }
}

impl RuwlParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!(
                "ruwl.lambda entries must be positive, got {:?}",
                self.lambda
            )));
        }
        if self.c.iter().chain([&self.restraint_target]).any(|v| !v.is_finite()) {
            return Err(Error::Config("ruwl.c and ruwl.restraint_target must be finite".into()));
        }
        Ok(())
    }

    /// `c` with every magnitude pushed up to at least [`C_MIN`].
    pub fn clamped_c(&self) -> [f64; 3] {
        self.c.map(clamp_c)
    }

    /// Evaluates the combined objective for fixed loss values.
    pub fn evaluate(&self, losses: [f64; 3]) -> Result<LossBundle> {
        let g = Graph::new();
        let l = losses.map(|v| g.scalar(v));
        let c = g.constant(Tensor::vector(self.c.to_vec()));
        let terms = combined_loss(l, c, self)?;
        Ok(terms.bundle(losses))
    }
}

/// Magnitude clamp used on `c` inside the combined objective.
pub fn clamp_c(c: f64) -> f64 {
    if c.abs() >= C_MIN {
        c
    } else if c < 0.0 {
        -C_MIN
    } else {
        C_MIN
    }
}

/// Restraint `|target - Σ|c_τ||` keeping the weight magnitudes near a fixed sum.
pub fn ruwl<'g>(c: Var<'g>, restraint_target: f64) -> Var<'g> {
    c.abs().sum().rsub_scalar(restraint_target).abs()
}

/// Graph nodes of one combined-objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CombinedTerms<'g> {
    pub total: Var<'g>,
    pub restraint: Var<'g>,
    pub weights: Var<'g>,
    pub regularizer: Var<'g>,
}

impl CombinedTerms<'_> {
    pub fn bundle(&self, losses: [f64; 3]) -> LossBundle {
        let w = self.weights.value();
        LossBundle {
            l_ccc: losses[0],
            l_ccc_a: losses[1],
            l_bt: losses[2],
            l_w: self.restraint.item(),
            regularizer: self.regularizer.item(),
            l_total: self.total.item(),
            effective_weights: [w.data()[0], w.data()[1], w.data()[2]],
        }
    }
}

/// Restraint plus uncertainty-weighted losses plus `Σ ln(1 + c_τ²)`.
///
/// `c` is a 3-vector. Its magnitudes are clamped to [`C_MIN`] for the
/// weights and log terms; the restraint sees the raw values.
pub fn combined_loss<'g>(losses: [Var<'g>; 3], c: Var<'g>, params: &RuwlParams) -> Result<CombinedTerms<'g>> {
    if c.shape() != [3] {
        return Err(Error::dim(format!(
            "weighting parameters must be a 3-vector, got {:?}",
            c.shape()
        )));
    }
    let g = c.graph();
    let lambda = g.constant(Tensor::vector(params.lambda.to_vec()));
    let c_sq = c.clamp_abs_min(C_MIN).square();
    let weights = match params.lambda_position {
        LambdaPosition::Denominator => g.constant(Tensor::full(&[3], 1.0)).div(lambda.mul(c_sq)?)?,
        LambdaPosition::Numerator => lambda.div(c_sq)?,
    };
    let restraint = ruwl(c, params.restraint_target);
    let weighted = g.concat(&losses)?.mul(weights)?.sum();
    let regularizer = c_sq.add_scalar(1.0).log().sum();
    let total = restraint.add(weighted)?.add(regularizer)?;
    Ok(CombinedTerms {
        total,
        restraint,
        weights,
        regularizer,
    })
}

/// Scalar summary of one step's objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_ccc: f64,
    pub l_ccc_a: f64,
    pub l_bt: f64,
    /// Restraint term; 0 outside uncertainty weighting.
    pub l_w: f64,
    /// `Σ ln(1 + c²)`; 0 outside uncertainty weighting.
    pub regularizer: f64,
    pub l_total: f64,
    pub effective_weights: [f64; 3],
}

impl LossBundle {
    /// Bundle for a fixed weighted sum.
    pub fn weighted(losses: [f64; 3], weights: [f64; 3]) -> Self {
        LossBundle {
            l_ccc: losses[0],
            l_ccc_a: losses[1],
            l_bt: losses[2],
            l_w: 0.0,
            regularizer: 0.0,
            l_total: losses.iter().zip(&weights).map(|(l, w)| l * w).sum(),
            effective_weights: weights,
        }
    }

    pub fn losses(&self) -> [f64; 3] {
        [self.l_ccc, self.l_ccc_a, self.l_bt]
    }

    /// `l_total` rebuilt from the other fields.
    pub fn recomputed_total(&self) -> f64 {
        let weighted: f64 = self
            .losses()
            .iter()
            .zip(&self.effective_weights)
            .map(|(l, w)| l * w)
            .sum();
        self.l_w + weighted + self.regularizer
    }
}
