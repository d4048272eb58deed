//! Reconstruction losses and the flip-and-log (FL) transform.
//!
//! Every loss here is a mean over all `N` elements. LMSE applies the
//! flip-and-log map to each squared error `e = (y - yhat)^2`:
//!
//! ```text
//! lmse = mean( -ln(1 + eps - e) )
//! ```
//!
//! `e` must stay in `[0, 1]`, which holds whenever targets and predictions
//! both lie in `[0, 1]`. The `eps` offset caps each term at `C = -ln(eps)`.
//!
//! The general FL transform wraps any non-negative per-element base loss
//! `L` as `-ln(1 - L)`. With the scale trick on, `L` is first divided by its
//! batch maximum and multiplied by `1 - eps`, so the argument of the log never
//! reaches zero no matter how large the raw losses are.
//!
//! The slice functions below are the reference evaluations. [`LossSpec::apply`]
//! builds the same quantities on [`Tensor`]s for training.

mod surface;

use serde::{Deserialize, Serialize};

pub use surface::{surface_grid, SurfaceGrid, SurfaceQuantity};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-7;

/// Per-element distances the FL transform can wrap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseLoss {
    Mse,
    Mae,
    Msle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
    Msle,
    Lmse,
    Fl(BaseLoss),
}

impl LossKind {
    pub fn name(&self) -> String {
        match self {
            LossKind::Mse => "mse".into(),
            LossKind::Mae => "mae".into(),
            LossKind::Msle => "msle".into(),
            LossKind::Lmse => "lmse".into(),
            LossKind::Fl(b) => format!("fl-{}", LossKind::from(*b).name()),
        }
    }
}

impl From<BaseLoss> for LossKind {
    fn from(b: BaseLoss) -> Self {
        match b {
            BaseLoss::Mse => LossKind::Mse,
            BaseLoss::Mae => LossKind::Mae,
            BaseLoss::Msle => LossKind::Msle,
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "msle" => Ok(LossKind::Msle),
            "lmse" => Ok(LossKind::Lmse),
            "fl-mse" => Ok(LossKind::Fl(BaseLoss::Mse)),
            "fl-mae" => Ok(LossKind::Fl(BaseLoss::Mae)),
            "fl-msle" => Ok(LossKind::Fl(BaseLoss::Msle)),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Normalise FL base losses by their maximum before the log.
    #[serde(default)]
    pub scale_trick: bool,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            epsilon: DEFAULT_EPSILON,
            scale_trick: false,
        }
    }

    pub fn mse() -> Self {
        Self::new(LossKind::Mse)
    }

    pub fn lmse() -> Self {
        Self::new(LossKind::Lmse)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_scale_trick(mut self, on: bool) -> Self {
        self.scale_trick = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Finite per-element ceiling `-ln(eps)` of the log-scaled losses.
    pub fn ceiling(&self) -> f64 {
        -self.epsilon.ln()
    }

    /// Reference evaluation on flat slices.
    pub fn evaluate(&self, y: &[f64], yhat: &[f64]) -> Result<f64> {
        match self.kind {
            LossKind::Mse => mse(y, yhat),
            LossKind::Mae => mae(y, yhat),
            LossKind::Msle => msle(y, yhat),
            LossKind::Lmse => lmse(y, yhat, self.epsilon),
            LossKind::Fl(base) => {
                let values = base_elements(base, y, yhat)?;
                fl_transform(&values, self.epsilon, self.scale_trick)
            }
        }
    }

    /// Differentiable loss on tensors of identical shape.
    pub fn apply(&self, y: &Tensor, yhat: &Tensor) -> Result<Tensor> {
        if y.shape() != yhat.shape() {
            return Err(Error::Dimension(format!(
                "target shape {:?} != prediction shape {:?}",
                y.shape(),
                yhat.shape()
            )));
        }
        if y.is_empty() {
            return Err(Error::Dimension("loss over zero elements".into()));
        }
        let eps = self.epsilon;
        match self.kind {
            LossKind::Mse => Ok(yhat.sub(y)?.square().mean()),
            LossKind::Mae => Ok(yhat.sub(y)?.abs().mean()),
            LossKind::Msle => {
                check_msle_domain(&y.data())?;
                check_msle_domain(&yhat.data())?;
                Ok(yhat.ln_1p().sub(&y.ln_1p())?.square().mean())
            }
            LossKind::Lmse => {
                let e = yhat.sub(y)?.square();
                check_unit_interval(&e.data())?;
                Ok(flip_log_fixed(&e, eps).mean())
            }
            LossKind::Fl(base) => {
                let b = match base {
                    BaseLoss::Mse => yhat.sub(y)?.square(),
                    BaseLoss::Mae => yhat.sub(y)?.abs(),
                    BaseLoss::Msle => {
                        check_msle_domain(&y.data())?;
                        check_msle_domain(&yhat.data())?;
                        yhat.ln_1p().sub(&y.ln_1p())?.square()
                    }
                };
                if !self.scale_trick {
                    check_unit_interval(&b.data())?;
                    return Ok(flip_log_fixed(&b, eps).mean());
                }
                let max = b.max()?;
                if max.item()? == 0.0 {
                    return Ok(b.scale(0.0).mean());
                }
                let ratio = b.div(&max.broadcast(b.shape().to_vec()))?;
                // 1 - r(1 - eps) as (1 - r) + r eps, exact at r == 1
                let arg = ratio.neg().add_scalar(1.0).add(&ratio.scale(eps))?;
                Ok(arg.ln().neg().mean())
            }
        }
    }
}

/// `-ln(1 + eps - x)` elementwise.
fn flip_log_fixed(x: &Tensor, eps: f64) -> Tensor {
    x.neg().add_scalar(eps).ln_1p().neg()
}

fn check_len(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension(format!(
            "target has {} elements, prediction has {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Dimension("loss over zero elements".into()));
    }
    Ok(())
}

fn check_unit_interval(values: &[f64]) -> Result<()> {
    match values.iter().position(|&v| !(0.0..=1.0).contains(&v)) {
        Some(i) => Err(Error::domain(
            i,
            format!(
                "log-scaled loss needs base values in [0, 1], got {}",
                values[i]
            ),
        )),
        None => Ok(()),
    }
}

fn check_msle_domain(values: &[f64]) -> Result<()> {
    match values.iter().position(|&v| !(v > -1.0)) {
        Some(i) => Err(Error::domain(
            i,
            format!("msle needs values > -1, got {}", values[i]),
        )),
        None => Ok(()),
    }
}

fn mean(it: impl Iterator<Item = f64>, n: usize) -> f64 {
    it.sum::<f64>() / n as f64
}

/// Per-element squared errors `(y - yhat)^2`.
pub fn squared_errors(y: &[f64], yhat: &[f64]) -> Result<Vec<f64>> {
    check_len(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).collect())
}

/// Per-element base distances for the FL transform.
pub fn base_elements(base: BaseLoss, y: &[f64], yhat: &[f64]) -> Result<Vec<f64>> {
    check_len(y, yhat)?;
    match base {
        BaseLoss::Mse => squared_errors(y, yhat),
        BaseLoss::Mae => Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).collect()),
        BaseLoss::Msle => {
            check_msle_domain(y)?;
            check_msle_domain(yhat)?;
            Ok(y.iter()
                .zip(yhat)
                .map(|(a, b)| {
                    let d = a.ln_1p() - b.ln_1p();
                    d * d
                })
                .collect())
        }
    }
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len(y, yhat)?;
    Ok(mean(
        y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)),
        y.len(),
    ))
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len(y, yhat)?;
    Ok(mean(
        y.iter().zip(yhat).map(|(a, b)| (a - b).abs()),
        y.len(),
    ))
}

pub fn msle(y: &[f64], yhat: &[f64]) -> Result<f64> {
    let d = base_elements(BaseLoss::Msle, y, yhat)?;
    Ok(mean(d.iter().copied(), d.len()))
}

/// Flip-and-log of one squared error: `-ln(1 + eps - e)`.
pub fn lmse_element(e: f64, eps: f64) -> f64 {
    if e > 0.5 {
        // 1 - e is exact here
        -((1.0 - e) + eps).ln()
    } else {
        -(eps - e).ln_1p()
    }
}

/// Logarithmic MSE, `mean(-ln(1 + eps - (y - yhat)^2))`.
///
/// `eps` may be zero here (the unregularised form); [`LossSpec`] requires it
/// strictly positive.
pub fn lmse(y: &[f64], yhat: &[f64], eps: f64) -> Result<f64> {
    let e = squared_errors(y, yhat)?;
    check_unit_interval(&e)?;
    Ok(mean(e.iter().map(|&e| lmse_element(e, eps)), e.len()))
}

/// FL transform of per-element base losses, reduced by the mean.
///
/// Without the scale trick every value must already lie in `[0, 1]` and the
/// map is `-ln(1 + eps - L)`, identical to LMSE when `L` is the squared error.
/// With it, values are rescaled to `L / max(L) * (1 - eps)` first and the map
/// is `-ln(1 - L')`, bounded by `-ln(eps)` for any input magnitude.
pub fn fl_transform(base: &[f64], eps: f64, scale_trick: bool) -> Result<f64> {
    if base.is_empty() {
        return Err(Error::Dimension("fl_transform over zero elements".into()));
    }
    if let Some(i) = base.iter().position(|&v| !(v >= 0.0) || v.is_infinite()) {
        return Err(Error::domain(
            i,
            format!("base loss must be finite and non-negative, got {}", base[i]),
        ));
    }
    if !scale_trick {
        check_unit_interval(base)?;
        return Ok(mean(base.iter().map(|&v| lmse_element(v, eps)), base.len()));
    }
    let max = base.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(0.0);
    }
    let ceiling = -eps.ln();
    let total = mean(
        base.iter().map(|&v| {
            let r = v / max;
            // 1 - r(1 - eps) written so that r == 1 gives exactly eps
            -((1.0 - r) + r * eps).ln()
        }),
        base.len(),
    );
    // summation rounding can overshoot the exact bound by an ulp
    Ok(total.clamp(0.0, ceiling))
}

/// Analytic MSE gradient with respect to the prediction: `(2 yhat - 2 y) / N`.
pub fn grad_mse(y: &[f64], yhat: &[f64]) -> Result<Vec<f64>> {
    check_len(y, yhat)?;
    let n = y.len() as f64;
    Ok(y.iter()
        .zip(yhat)
        .map(|(a, b)| (-2.0 * a + 2.0 * b) / n)
        .collect())
}

/// Analytic LMSE gradient: `(2 yhat - 2 y) / (N (1 + eps - (y - yhat)^2))`.
pub fn grad_lmse(y: &[f64], yhat: &[f64], eps: f64) -> Result<Vec<f64>> {
    let e = squared_errors(y, yhat)?;
    check_unit_interval(&e)?;
    let n = y.len() as f64;
    Ok(y.iter()
        .zip(yhat)
        .zip(&e)
        .map(|((a, b), e)| (-2.0 * a + 2.0 * b) / (n * (1.0 + eps - e)))
        .collect())
}
