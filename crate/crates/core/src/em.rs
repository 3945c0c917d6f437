//! The EM/ECM iteration for (τ², σ²).
//!
//! Each step solves Henderson's equations at the current variance components
//! and then sets
//!
//! ```text
//! τ² ← (η̂′η̂ + tr T_τ) / q
//! σ² ← (r̂′r̂ + tr T_σ) / n
//! ```
//!
//! where `(T_τ, T_σ)` is `((M_ηη)⁻¹, Z(M_ηη)⁻¹Z′)` under ML and
//! `(C_ηη, [X Z]C[X Z]′)` under REML. Nothing else depends on the criterion.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::henderson::{HendersonSolution, HendersonSystem, MIN_VARIANCE};
use crate::likelihood::{self, LogLik};
use crate::model::{Criterion, ModelData, VarianceComponents};

/// Guard added to the denominators of the relative-change criterion.
const DELTA_GUARD: f64 = 1e-8;

/// A variance component below this ends the iteration with
/// [`StopReason::BoundaryApproached`]. Matches the assembly floor.
pub const BOUNDARY_VARIANCE: f64 = MIN_VARIANCE;

/// How trace adjustments are evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// From the (p+q)-dimensional cross-product blocks; no n×n matrix.
    #[default]
    CrossProduct,
    /// Forms `T_σ` as an explicit n×n matrix. Only useful for cross-checking.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub criterion: Criterion,
    pub maxit: usize,
    pub tol: f64,
    pub tau2_init: f64,
    pub sigma2_init: f64,
    /// Evaluate the criterion's log-likelihood at every iterate.
    pub trace_loglik: bool,
    pub trace_mode: TraceMode,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            criterion: Criterion::Ml,
            maxit: 100,
            tol: 1e-7,
            tau2_init: 1.0,
            sigma2_init: 1.0,
            trace_loglik: false,
            trace_mode: TraceMode::CrossProduct,
        }
    }
}

impl EmConfig {
    pub fn new(criterion: Criterion) -> Self {
        Self {
            criterion,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<VarianceComponents> {
        if self.maxit == 0 {
            return Err(Error::InvalidConfig("maxit must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        VarianceComponents::new(self.tau2_init, self.sigma2_init)
            .map_err(|_| Error::InvalidConfig("initial variance components must be > 0".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceAdjustments {
    pub tau: f64,
    pub sigma: f64,
}

/// Traces of the criterion's adjustment matrices.
///
/// `tr{A B′}`-type traces use the identity `tr{W A W′} = Σᵢⱼ (W′W)ᵢⱼ Aⱼᵢ`
/// with the cached cross-products.
pub fn trace_adjustments(
    criterion: Criterion,
    sol: &HendersonSolution,
    model: &ModelData,
) -> TraceAdjustments {
    match criterion {
        Criterion::Ml => TraceAdjustments {
            tau: sol.m_etaeta_inv.trace(),
            sigma: trace_of_product(&model.ztz(), &sol.m_etaeta_inv),
        },
        Criterion::Reml => TraceAdjustments {
            tau: sol.c_eta_eta().trace(),
            sigma: trace_of_product(model.cross_product(), &sol.c),
        },
    }
}

/// Same quantities as [`trace_adjustments`], forming `T_σ` as an n×n matrix
/// the way the textbook algorithm writes it.
pub fn trace_adjustments_dense(
    criterion: Criterion,
    sol: &HendersonSolution,
    model: &ModelData,
) -> TraceAdjustments {
    match criterion {
        Criterion::Ml => {
            let t_sigma = model.z() * &sol.m_etaeta_inv * model.z().transpose();
            TraceAdjustments {
                tau: sol.m_etaeta_inv.trace(),
                sigma: t_sigma.trace(),
            }
        }
        Criterion::Reml => {
            let (n, p, q) = (model.n(), model.p(), model.q());
            let mut w = DMatrix::zeros(n, p + q);
            w.columns_mut(0, p).copy_from(model.x());
            w.columns_mut(p, q).copy_from(model.z());
            let t_sigma = &w * &sol.c * w.transpose();
            TraceAdjustments {
                tau: sol.c_eta_eta().trace(),
                sigma: t_sigma.trace(),
            }
        }
    }
}

/// `tr{A B}` for symmetric `A`, `B` of equal shape.
fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmStepDiagnostics {
    pub trace_t_tau: f64,
    pub trace_t_sigma: f64,
    /// `r̂′r̂`
    pub rss: f64,
    /// `η̂′η̂`
    pub eta_ss: f64,
}

#[derive(Debug, Clone)]
pub struct EmStep {
    /// Updated variance components.
    pub vc: VarianceComponents,
    /// Henderson solve at the variance components the step started from.
    pub solution: HendersonSolution,
    pub diagnostics: EmStepDiagnostics,
}

pub fn em_step(model: &ModelData, vc: VarianceComponents, criterion: Criterion) -> Result<EmStep> {
    em_step_with(model, vc, criterion, TraceMode::CrossProduct)
}

pub fn em_step_with(
    model: &ModelData,
    vc: VarianceComponents,
    criterion: Criterion,
    mode: TraceMode,
) -> Result<EmStep> {
    let (n, q) = (model.n(), model.q());
    if q == 0 {
        return Err(Error::DimensionMismatch(
            "EM needs at least one random effect; use the OLS path for q = 0".into(),
        ));
    }
    let solution = HendersonSystem::assemble(model, vc)?.solve(model)?;
    let traces = match mode {
        TraceMode::CrossProduct => trace_adjustments(criterion, &solution, model),
        TraceMode::Dense => trace_adjustments_dense(criterion, &solution, model),
    };
    let rss = solution.r_hat.norm_squared();
    let eta_ss = solution.eta_hat.norm_squared();
    let tau2 = (eta_ss + traces.tau) / q as f64;
    let sigma2 = (rss + traces.sigma) / n as f64;
    let vc = VarianceComponents::new(tau2, sigma2).map_err(|_| {
        Error::NumericalFailure(format!(
            "EM update left the parameter space (tau2 = {tau2}, sigma2 = {sigma2})"
        ))
    })?;
    Ok(EmStep {
        vc,
        solution,
        diagnostics: EmStepDiagnostics {
            trace_t_tau: traces.tau,
            trace_t_sigma: traces.sigma,
            rss,
            eta_ss,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// τ² or σ² dropped below [`BOUNDARY_VARIANCE`]; EM only approaches zero
    /// asymptotically so the iteration is cut off.
    BoundaryApproached,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Variance components after this iteration's update.
    pub vc: VarianceComponents,
    pub diagnostics: EmStepDiagnostics,
    /// Max relative change in (τ², σ²) for this update.
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    pub eta_hat: DVector<f64>,
    pub vc: VarianceComponents,
    pub criterion: Criterion,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub loglik: LogLik,
    pub history: Vec<IterationRecord>,
    /// Criterion log-likelihood at the initial values and after every
    /// iteration (length `iterations + 1`); only with `trace_loglik`.
    pub loglik_trace: Option<Vec<f64>>,
    /// Henderson solve at the final variance components.
    pub solution: HendersonSolution,
}

impl FitResult {
    /// Variance components in effect at iteration `k`: the initial values for
    /// `k = 0`, otherwise the result of the k-th update.
    pub fn vc_at(&self, k: usize, config: &EmConfig) -> Option<VarianceComponents> {
        match k {
            0 => VarianceComponents::new(config.tau2_init, config.sigma2_init).ok(),
            k => self.history.get(k - 1).map(|r| r.vc),
        }
    }
}

fn relative_change(new: VarianceComponents, old: VarianceComponents) -> f64 {
    let ds = (new.sigma2() - old.sigma2()).abs() / (old.sigma2() + DELTA_GUARD);
    let dt = (new.tau2() - old.tau2()).abs() / (old.tau2() + DELTA_GUARD);
    ds.max(dt)
}

pub fn fit(model: &ModelData, config: &EmConfig) -> Result<FitResult> {
    let mut vc = config.validate()?;
    let criterion = config.criterion;
    let mut history = Vec::with_capacity(config.maxit.min(4096));
    let mut loglik_trace = if config.trace_loglik {
        Some(vec![likelihood::objective(model, vc, criterion)?])
    } else {
        None
    };
    let mut stop = StopReason::MaxIterations;
    let mut last_solution = None;

    for _ in 0..config.maxit {
        let step = em_step_with(model, vc, criterion, config.trace_mode)?;
        let delta = relative_change(step.vc, vc);
        vc = step.vc;
        history.push(IterationRecord {
            vc,
            diagnostics: step.diagnostics,
            delta,
        });
        last_solution = Some(step.solution);
        if let Some(trace) = loglik_trace.as_mut() {
            trace.push(likelihood::objective(model, vc, criterion)?);
        }
        if vc.tau2() < BOUNDARY_VARIANCE || vc.sigma2() < BOUNDARY_VARIANCE {
            stop = StopReason::BoundaryApproached;
            break;
        }
        if delta < config.tol {
            stop = StopReason::Converged;
            break;
        }
    }

    let solution = if vc.tau2() >= MIN_VARIANCE && vc.sigma2() >= MIN_VARIANCE {
        HendersonSystem::assemble(model, vc)?.solve(model)?
    } else {
        last_solution.expect("maxit >= 1")
    };
    let loglik = LogLik {
        criterion,
        value: likelihood::objective(model, vc, criterion)?,
    };

    Ok(FitResult {
        beta_hat: solution.beta_hat.clone(),
        eta_hat: solution.eta_hat.clone(),
        vc,
        criterion,
        iterations: history.len(),
        converged: stop == StopReason::Converged,
        stop,
        loglik,
        history,
        loglik_trace,
        solution,
    })
}

/// Linear-model REML variance `r̂′r̂ / (n − p)` with OLS residuals, for a
/// model without random effects.
pub fn ols_fixed_point(model: &ModelData) -> Result<f64> {
    let ols = Ols::new(model)?;
    Ok(ols.rss / (model.n() - model.p()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsIteration {
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The REML σ² update with Z = 0, `σ² ← r̂′r̂/n + tr{X C X′}/n` where
/// `C = σ²(X′X)⁻¹`, iterated from `sigma2_init` with the same relative-change
/// stopping rule as [`fit`].
pub fn ols_reml_iteration(
    model: &ModelData,
    sigma2_init: f64,
    tol: f64,
    maxit: usize,
) -> Result<OlsIteration> {
    if !(sigma2_init.is_finite() && sigma2_init > 0.0) {
        return Err(Error::InvalidConfig("sigma2_init must be > 0".into()));
    }
    let ols = Ols::new(model)?;
    let n = model.n() as f64;
    let xtx = model.cross_product();
    let mut sigma2 = sigma2_init;
    for it in 1..=maxit {
        let c = &ols.xtx_inv * sigma2;
        let trace = trace_of_product(xtx, &c);
        let next = (ols.rss + trace) / n;
        let delta = (next - sigma2).abs() / (sigma2 + DELTA_GUARD);
        sigma2 = next;
        if delta < tol {
            return Ok(OlsIteration {
                sigma2,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(OlsIteration {
        sigma2,
        iterations: maxit,
        converged: false,
    })
}

struct Ols {
    rss: f64,
    xtx_inv: DMatrix<f64>,
}

impl Ols {
    fn new(model: &ModelData) -> Result<Self> {
        let (n, p) = (model.n(), model.p());
        if model.q() != 0 {
            return Err(Error::DimensionMismatch(format!(
                "OLS reduction expects no random effects, got q = {}",
                model.q()
            )));
        }
        if n <= p {
            return Err(Error::InsufficientDf { n, p });
        }
        let chol = Cholesky::new(model.cross_product().clone())
            .ok_or_else(|| Error::NumericalFailure("X′X is not positive definite".into()))?;
        let beta = chol.solve(model.cross_response());
        let r = model.y() - model.x() * beta;
        Ok(Self {
            rss: r.norm_squared(),
            xtx_inv: chol.inverse(),
        })
    }
}
