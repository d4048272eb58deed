//! Numeric checks for the linear-model convexity and stationarity argument,
//! the series expansion of `-ln`, and end-to-end gradient agreement.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, LossKind, LossSpec, DEFAULT_EPSILON};
use crate::rng::{derive_seed, run_rng, RunRng};
use crate::tensor::Tensor;

/// Largest absolute residual any tested `W` may produce.
pub const RESIDUAL_CEILING: f64 = 0.9;
const MAX_CONDITION: f64 = 1e6;
const LAMBDAS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest observed error statistic (meaning depends on the check).
    pub worst: f64,
    pub passed: bool,
    /// Named auxiliary statistics.
    #[serde(default)]
    pub stats: BTreeMap<String, f64>,
}

impl CheckReport {
    fn new(name: impl Into<String>, trials: usize, violations: usize, worst: f64) -> Self {
        CheckReport {
            name: name.into(),
            trials,
            violations,
            worst,
            passed: violations == 0,
            stats: BTreeMap::new(),
        }
    }

    fn stat(mut self, key: &str, value: f64) -> Self {
        self.stats.insert(key.into(), value);
        self
    }
}

/// Linear model `Y ≈ X W` with `X: N×f`, `Y: N×k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearInstance {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl LinearInstance {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() || x.nrows() < x.ncols() || x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "X is {}x{}, Y is {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        Ok(LinearInstance { x, y })
    }

    /// Uniform `X`, targets `X W_true + noise`. `X` is redrawn until its
    /// condition number is below 1e6.
    pub fn random(rng: &mut RunRng, n: usize, f: usize, k: usize, noise: f64) -> Result<Self> {
        let x = loop {
            let x = DMatrix::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0));
            if condition_number(&x) < MAX_CONDITION {
                break x;
            }
        };
        let w = DMatrix::from_fn(f, k, |_, _| rng.random_range(-0.5..0.5));
        let y = &x * w + DMatrix::from_fn(n, k, |_, _| rng.random_range(-noise..=noise));
        Self::new(x, y)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.x.nrows(), self.x.ncols(), self.y.ncols())
    }

    /// Solution of the normal equations `XᵀX W = XᵀY`.
    pub fn normal_equation_solution(&self) -> Result<DMatrix<f64>> {
        let gram = self.x.transpose() * &self.x;
        let rhs = self.x.transpose() * &self.y;
        let chol = gram.cholesky().ok_or(Error::Singular)?;
        Ok(chol.solve(&rhs))
    }

    pub fn prediction(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        &self.x * w
    }

    pub fn max_residual(&self, w: &DMatrix<f64>) -> f64 {
        (&self.y - self.prediction(w)).amax()
    }

    pub fn loss(&self, kind: LossKind, w: &DMatrix<f64>, eps: f64) -> Result<f64> {
        let p = self.prediction(w);
        match kind {
            LossKind::Mse => losses::mse(self.y.as_slice(), p.as_slice()),
            LossKind::Lmse => losses::lmse(self.y.as_slice(), p.as_slice(), eps),
            other => Err(Error::Config(format!(
                "linear checks cover mse and lmse, not {}",
                other.name()
            ))),
        }
    }

    /// Gradient of the mean loss with respect to `W`.
    pub fn gradient(&self, kind: LossKind, w: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
        let p = self.prediction(w);
        let g = match kind {
            LossKind::Mse => losses::grad_mse(self.y.as_slice(), p.as_slice())?,
            LossKind::Lmse => losses::grad_lmse(self.y.as_slice(), p.as_slice(), eps)?,
            other => {
                return Err(Error::Config(format!(
                    "linear checks cover mse and lmse, not {}",
                    other.name()
                )))
            }
        };
        let g = DMatrix::from_column_slice(p.nrows(), p.ncols(), &g);
        Ok(self.x.transpose() * g)
    }
}

fn condition_number(x: &DMatrix<f64>) -> f64 {
    let s = x.singular_values();
    let min = s.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        s.max() / min
    }
}

/// `W* + d` with `d` redrawn (and shrunk) until every residual is within the ceiling.
fn sample_in_domain(
    rng: &mut RunRng,
    inst: &LinearInstance,
    center: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut radius = 1.0;
    loop {
        let d = DMatrix::from_fn(center.nrows(), center.ncols(), |_, _| {
            rng.random_range(-radius..radius)
        });
        let w = center + d;
        if inst.max_residual(&w) <= RESIDUAL_CEILING {
            return w;
        }
        radius *= 0.9;
    }
}

/// Jensen-inequality sampling on random in-domain linear instances.
pub fn check_convexity(kind: LossKind, trials: usize, tol: f64, seed: u64) -> Result<CheckReport> {
    if !matches!(kind, LossKind::Mse | LossKind::Lmse) {
        return Err(Error::Config(format!(
            "convexity check covers mse and lmse, not {}",
            kind.name()
        )));
    }
    let eps = DEFAULT_EPSILON;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for t in 0..trials {
        let mut rng = run_rng(derive_seed(seed, t as u64));
        let inst = LinearInstance::random(&mut rng, 20, 3, 2, 0.1)?;
        let center = inst.normal_equation_solution()?;
        let w1 = sample_in_domain(&mut rng, &inst, &center);
        let w2 = sample_in_domain(&mut rng, &inst, &center);
        let (l1, l2) = (inst.loss(kind, &w1, eps)?, inst.loss(kind, &w2, eps)?);
        let mut bad = false;
        for lam in LAMBDAS {
            let mid = &w1 * lam + &w2 * (1.0 - lam);
            let gap = inst.loss(kind, &mid, eps)? - (lam * l1 + (1.0 - lam) * l2);
            worst = worst.max(gap);
            bad |= gap > tol;
        }
        violations += usize::from(bad);
    }
    Ok(CheckReport::new(
        format!("convexity-{}", kind.name()),
        trials,
        violations,
        worst,
    ))
}

/// Infinity norms of both loss gradients at the normal-equation solution.
pub fn check_closed_form(instance: &LinearInstance, tol: f64) -> Result<CheckReport> {
    let w = instance.normal_equation_solution()?;
    let eps = DEFAULT_EPSILON;
    let g_mse = instance.gradient(LossKind::Mse, &w, eps)?.amax();
    let g_lmse = instance.gradient(LossKind::Lmse, &w, eps)?.amax();
    let violations = usize::from(!(g_mse < tol)) + usize::from(!(g_lmse < tol));
    Ok(
        CheckReport::new("closed-form", 2, violations, g_mse.max(g_lmse))
            .stat("mse_grad_inf", g_mse)
            .stat("lmse_grad_inf", g_lmse)
            .stat("max_residual", instance.max_residual(&w)),
    )
}

/// `check_closed_form` over `instances` random 50×5 problems; per-loss
/// worst norms and failure counts are kept in `stats`.
pub fn check_closed_form_suite(instances: usize, tol: f64, seed: u64) -> Result<CheckReport> {
    let mut violations = 0;
    let (mut worst_mse, mut worst_lmse) = (0.0f64, 0.0f64);
    let (mut fail_mse, mut fail_lmse) = (0usize, 0usize);
    for i in 0..instances {
        let mut rng = run_rng(derive_seed(seed, i as u64));
        let inst = LinearInstance::random(&mut rng, 50, 5, 2, 0.1)?;
        let r = check_closed_form(&inst, tol)?;
        let (m, l) = (r.stats["mse_grad_inf"], r.stats["lmse_grad_inf"]);
        worst_mse = worst_mse.max(m);
        worst_lmse = worst_lmse.max(l);
        fail_mse += usize::from(!(m < tol));
        fail_lmse += usize::from(!(l < tol));
        violations += usize::from(r.violations > 0);
    }
    Ok(CheckReport::new(
        "closed-form",
        instances,
        violations,
        worst_mse.max(worst_lmse),
    )
    .stat("mse_grad_inf_max", worst_mse)
    .stat("lmse_grad_inf_max", worst_lmse)
    .stat("mse_failures", fail_mse as f64)
    .stat("lmse_failures", fail_lmse as f64))
}

/// `Σ_{n=1..terms} (-1)^n (x-1)^n / n`, the expansion of `-ln x` around 1.
pub fn taylor_partial_sum(x: f64, terms: usize) -> Result<f64> {
    if !(x > 0.0 && x <= 2.0) {
        return Err(Error::domain(
            0,
            format!("series for -ln x diverges at x = {x}; need 0 < x <= 2"),
        ));
    }
    let u = x - 1.0;
    let mut power = 1.0;
    let mut sum = 0.0;
    for n in 1..=terms {
        power *= -u;
        sum += power / n as f64;
    }
    Ok(sum)
}

pub fn check_taylor(points: &[f64], terms: usize, tol: f64) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    let mut violations = 0;
    for &x in points {
        let err = (taylor_partial_sum(x, terms)? + x.ln()).abs();
        worst = worst.max(err);
        violations += usize::from(!(err < tol));
    }
    Ok(CheckReport::new("taylor", points.len(), violations, worst).stat("terms", terms as f64))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central_difference(spec: &LossSpec, y: &[f64], yhat: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut p = yhat.to_vec();
    let mut g = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let v = p[i];
        p[i] = v + h;
        let up = spec.evaluate(y, &p)?;
        p[i] = v - h;
        let down = spec.evaluate(y, &p)?;
        p[i] = v;
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// Analytic and autodiff gradients against central differences at
/// `samples` random points in `[0.05, 0.95]^dim`.
///
/// `worst` is the larger of the two finite-difference relative errors;
/// autodiff-vs-analytic agreement must stay below `agree_tol`.
pub fn check_gradients(
    kind: LossKind,
    samples: usize,
    dim: usize,
    h: f64,
    tol: f64,
    agree_tol: f64,
    seed: u64,
) -> Result<CheckReport> {
    let spec = LossSpec::new(kind);
    let mut rng = run_rng(seed);
    let (mut worst_analytic, mut worst_autodiff, mut worst_agree) = (0.0f64, 0.0f64, 0.0f64);
    let mut violations = 0;
    for _ in 0..samples {
        let y: Vec<f64> = (0..dim).map(|_| rng.random_range(0.05..0.95)).collect();
        let yhat: Vec<f64> = (0..dim).map(|_| rng.random_range(0.05..0.95)).collect();
        let analytic = match kind {
            LossKind::Mse => losses::grad_mse(&y, &yhat)?,
            LossKind::Lmse => losses::grad_lmse(&y, &yhat, spec.epsilon)?,
            other => {
                return Err(Error::Config(format!(
                    "gradient check covers mse and lmse, not {}",
                    other.name()
                )))
            }
        };
        let p = Tensor::param(vec![dim], yhat.clone())?;
        spec.apply(&Tensor::new(vec![dim], y.clone())?, &p)?
            .backward()?;
        let autodiff = p
            .grad()
            .ok_or_else(|| Error::Contract("no gradient reached the prediction".into()))?;
        let numeric = central_difference(&spec, &y, &yhat, h)?;

        let (ea, ed, eg) = (
            rel_err(&analytic, &numeric),
            rel_err(&autodiff, &numeric),
            rel_err(&autodiff, &analytic),
        );
        worst_analytic = worst_analytic.max(ea);
        worst_autodiff = worst_autodiff.max(ed);
        worst_agree = worst_agree.max(eg);
        violations += usize::from(!(ea < tol && ed < tol && eg < agree_tol));
    }
    Ok(CheckReport::new(
        format!("gradients-{}", kind.name()),
        samples,
        violations,
        worst_analytic.max(worst_autodiff),
    )
    .stat("analytic_vs_fd", worst_analytic)
    .stat("autodiff_vs_fd", worst_autodiff)
    .stat("autodiff_vs_analytic", worst_agree))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Gradients,
    Convexity,
    ClosedForm,
    Taylor,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradients" => Ok(Suite::Gradients),
            "convexity" => Ok(Suite::Convexity),
            "closed-form" => Ok(Suite::ClosedForm),
            "taylor" => Ok(Suite::Taylor),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!("unknown suite {other:?}"))),
        }
    }
}

/// Run a suite at the standard sizes and tolerances.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Gradients | Suite::All) {
        out.push(check_gradients(
            LossKind::Mse,
            100,
            16,
            1e-5,
            1e-6,
            1e-12,
            seed,
        )?);
        out.push(check_gradients(
            LossKind::Lmse,
            100,
            16,
            1e-5,
            1e-4,
            1e-12,
            seed,
        )?);
    }
    if matches!(suite, Suite::Convexity | Suite::All) {
        out.push(check_convexity(LossKind::Mse, 1000, 1e-9, seed)?);
        out.push(check_convexity(LossKind::Lmse, 1000, 1e-9, seed)?);
    }
    if matches!(suite, Suite::ClosedForm | Suite::All) {
        out.push(check_closed_form_suite(50, 1e-8, seed)?);
    }
    if matches!(suite, Suite::Taylor | Suite::All) {
        out.push(check_taylor(&[0.5, 0.75, 1.25, 1.5], 60, 1e-6)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_design_recovers_targets() {
        let y = DMatrix::from_row_slice(3, 2, &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
        let inst = LinearInstance::new(DMatrix::identity(3, 3), y.clone()).unwrap();
        assert_eq!(inst.normal_equation_solution().unwrap(), y);
        let r = check_closed_form(&inst, 1e-8).unwrap();
        assert!(r.passed);
        assert_eq!(r.stats["lmse_grad_inf"], 0.0);
    }

    #[test]
    fn mse_stationary_at_normal_solution() {
        let mut rng = run_rng(5);
        let inst = LinearInstance::random(&mut rng, 50, 5, 2, 0.1).unwrap();
        let r = check_closed_form(&inst, 1e-8).unwrap();
        assert!(r.stats["mse_grad_inf"] < 1e-8, "{r:?}");
        assert!(r.stats["max_residual"] <= RESIDUAL_CEILING);
    }

    #[test]
    fn lmse_gradient_vanishes_only_without_residual() {
        // zero-residual instance: W* fits exactly, so every residual term vanishes
        let mut rng = run_rng(6);
        let exact = LinearInstance::random(&mut rng, 50, 5, 2, 0.0).unwrap();
        let r = check_closed_form(&exact, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");

        // with noise, Xᵀ(R ⊘ (1 + eps - R²)) ≠ 0 even though XᵀR = 0
        let noisy = LinearInstance::random(&mut rng, 50, 5, 2, 0.1).unwrap();
        let r = check_closed_form(&noisy, 1e-8).unwrap();
        assert!(r.stats["mse_grad_inf"] < 1e-8);
        assert!(r.stats["lmse_grad_inf"] > 1e-6);
    }

    #[test]
    fn perturbation_breaks_stationarity() {
        let mut rng = run_rng(7);
        let inst = LinearInstance::random(&mut rng, 50, 5, 2, 0.1).unwrap();
        let mut w = inst.normal_equation_solution().unwrap();
        w[(2, 1)] += 0.01;
        assert!(
            inst.gradient(LossKind::Mse, &w, DEFAULT_EPSILON)
                .unwrap()
                .amax()
                > 1e-8
        );
    }

    #[test]
    fn gradient_matches_finite_difference_in_w() {
        let mut rng = run_rng(8);
        let inst = LinearInstance::random(&mut rng, 12, 3, 2, 0.1).unwrap();
        let w = sample_in_domain(&mut rng, &inst, &inst.normal_equation_solution().unwrap());
        for kind in [LossKind::Mse, LossKind::Lmse] {
            let g = inst.gradient(kind, &w, DEFAULT_EPSILON).unwrap();
            let h = 1e-6;
            for idx in 0..w.len() {
                let (mut up, mut down) = (w.clone(), w.clone());
                up[idx] += h;
                down[idx] -= h;
                let fd = (inst.loss(kind, &up, DEFAULT_EPSILON).unwrap()
                    - inst.loss(kind, &down, DEFAULT_EPSILON).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - g[idx]).abs() < 1e-8,
                    "{kind:?} {idx}: {fd} vs {}",
                    g[idx]
                );
            }
        }
    }

    #[test]
    fn equal_endpoints_give_equality() {
        let mut rng = run_rng(9);
        let inst = LinearInstance::random(&mut rng, 20, 3, 2, 0.1).unwrap();
        let w = inst.normal_equation_solution().unwrap();
        for kind in [LossKind::Mse, LossKind::Lmse] {
            let l = inst.loss(kind, &w, DEFAULT_EPSILON).unwrap();
            for lam in LAMBDAS {
                let mid = &w * lam + &w * (1.0 - lam);
                let lm = inst.loss(kind, &mid, DEFAULT_EPSILON).unwrap();
                assert!((lm - l).abs() <= 1e-15 * l.max(1.0));
            }
        }
    }

    #[test]
    fn convexity_small_run() {
        for kind in [LossKind::Mse, LossKind::Lmse] {
            let r = check_convexity(kind, 50, 1e-9, 3).unwrap();
            assert!(r.passed, "{r:?}");
        }
        assert!(check_convexity(LossKind::Mae, 1, 1e-9, 3).is_err());
    }

    #[test]
    fn taylor_examples() {
        for n in [1, 5, 60] {
            assert_eq!(taylor_partial_sum(1.0, n).unwrap(), 0.0);
        }
        assert!((taylor_partial_sum(0.5, 60).unwrap() - std::f64::consts::LN_2).abs() < 1e-6);
        assert!((taylor_partial_sum(1.5, 60).unwrap() + 0.4054651081081644).abs() < 1e-6);
        assert!(taylor_partial_sum(0.0, 10).is_err());
        assert!(taylor_partial_sum(2.5, 10).is_err());
    }

    #[test]
    fn taylor_error_shrinks_with_terms() {
        for x in [0.5, 0.75, 1.25, 1.5] {
            let errs: Vec<f64> = (5..60)
                .map(|n| (taylor_partial_sum(x, n).unwrap() + f64::ln(x)).abs())
                .take_while(|&e| e > 1e-14)
                .collect();
            assert!(errs.windows(2).all(|w| w[1] <= w[0]), "x = {x}");
        }
    }

    #[test]
    fn gradients_at_minimum_vanish() {
        let y = vec![0.2, 0.7, 0.4];
        for kind in [LossKind::Mse, LossKind::Lmse] {
            let spec = LossSpec::new(kind);
            let fd = central_difference(&spec, &y, &y, 1e-5).unwrap();
            assert!(fd.iter().all(|g| g.abs() < 1e-9));
            let a = match kind {
                LossKind::Mse => losses::grad_mse(&y, &y).unwrap(),
                _ => losses::grad_lmse(&y, &y, spec.epsilon).unwrap(),
            };
            assert!(a.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn suite_parsing() {
        assert_eq!("closed-form".parse::<Suite>().unwrap(), Suite::ClosedForm);
        assert!("nope".parse::<Suite>().is_err());
    }
}
