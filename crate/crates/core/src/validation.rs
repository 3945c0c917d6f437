//! EM fit versus oracle comparison, laid out like a method × criterion table.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{Error, Result};
use crate::likelihood::LogLik;
use crate::model::{Criterion, VarianceComponents};
use crate::oracle::OracleResult;

/// Gate on every relative discrepancy.
pub const PASS_RELATIVE: f64 = 1e-3;
/// Allowed log-likelihood shortfall of the fit relative to the oracle.
pub const PASS_LOGLIK_SLACK: f64 = 1e-6;

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub method: String,
    pub likelihood: Criterion,
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub sigma2: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub criterion: Criterion,
    pub rows: [EstimateRow; 2],
    pub rel_tau2: f64,
    pub rel_sigma2: f64,
    pub rel_beta: Vec<f64>,
    /// `|ℓ_fit − ℓ_oracle|`
    pub loglik_abs_diff: f64,
    /// `ℓ_oracle − ℓ_fit`; positive when the fit falls short.
    pub loglik_deficit: f64,
    pub max_rel_discrepancy: f64,
    pub pass: bool,
}

fn rel(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / reference.abs().max(1e-8)
}

pub fn compare(fit: &FitResult, oracle: &OracleResult) -> Result<ValidationReport> {
    compare_estimates(&fit.beta_hat, fit.vc, fit.loglik, oracle)
}

/// [`compare`] for estimates that did not come from a live [`FitResult`],
/// e.g. a saved report. The criterion is taken from `loglik`.
pub fn compare_estimates(
    beta: &DVector<f64>,
    vc: VarianceComponents,
    loglik: LogLik,
    oracle: &OracleResult,
) -> Result<ValidationReport> {
    if loglik.criterion != oracle.criterion {
        return Err(Error::CriterionMismatch {
            fit: loglik.criterion,
            reference: oracle.criterion,
        });
    }
    if beta.len() != oracle.beta_star.len() {
        return Err(Error::DimensionMismatch(
            "fit and oracle disagree on p".into(),
        ));
    }
    let rel_tau2 = rel(vc.tau2(), oracle.vc_star.tau2());
    let rel_sigma2 = rel(vc.sigma2(), oracle.vc_star.sigma2());
    let rel_beta: Vec<f64> = beta
        .iter()
        .zip(oracle.beta_star.iter())
        .map(|(&a, &b)| rel(a, b))
        .collect();
    let loglik_deficit = oracle.loglik_star - loglik.value;
    let max_rel_discrepancy = rel_beta
        .iter()
        .copied()
        .fold(rel_tau2.max(rel_sigma2), f64::max);
    let pass = max_rel_discrepancy < PASS_RELATIVE && loglik_deficit <= PASS_LOGLIK_SLACK;

    Ok(ValidationReport {
        criterion: loglik.criterion,
        rows: [
            EstimateRow {
                method: "em".into(),
                likelihood: loglik.criterion,
                beta: beta.iter().copied().collect(),
                tau2: vc.tau2(),
                sigma2: vc.sigma2(),
                loglik: loglik.value,
            },
            EstimateRow {
                method: "oracle".into(),
                likelihood: oracle.criterion,
                beta: oracle.beta_star.iter().copied().collect(),
                tau2: oracle.vc_star.tau2(),
                sigma2: oracle.vc_star.sigma2(),
                loglik: oracle.loglik_star,
            },
        ],
        rel_tau2,
        rel_sigma2,
        rel_beta,
        loglik_abs_diff: loglik_deficit.abs(),
        loglik_deficit,
        max_rel_discrepancy,
        pass,
    })
}
