//! Marginal-model log-likelihoods.
//!
//! Under the model `y ~ N(Xβ, V)` with `V = τ²ZZ′ + σ²I`:
//!
//! ```text
//! ℓ_ML(β, θ) = −½ { log|V| + (y − Xβ)′V⁻¹(y − Xβ) + n log 2π }
//! ℓ_REML(θ)  = −½ { log|V| + log|X′V⁻¹X| + y′Py + (n − p) log 2π }
//! ```
//!
//! `y′Py` is evaluated as `(y − Xβ̂)′V⁻¹(y − Xβ̂)` at the GLS estimate, so the
//! projection P is never formed. Nothing here depends on the Henderson
//! solver.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Criterion, ModelData, VarianceComponents};

/// A log-likelihood value tagged with the scale it lives on. ML and REML
/// values are not comparable, so arithmetic between them is not offered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLik {
    pub criterion: Criterion,
    pub value: f64,
}

impl LogLik {
    /// `self − other` when both are on the same scale.
    pub fn difference(&self, other: &LogLik) -> Result<f64> {
        if self.criterion != other.criterion {
            return Err(Error::CriterionMismatch {
                fit: self.criterion,
                reference: other.criterion,
            });
        }
        Ok(self.value - other.value)
    }
}

/// Factorized marginal covariance `V = τ²ZZ′ + σ²I`.
#[derive(Debug, Clone)]
pub struct MarginalModel {
    v: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    log_det_v: f64,
}

impl MarginalModel {
    pub fn new(model: &ModelData, vc: VarianceComponents) -> Result<Self> {
        let n = model.n();
        let z = model.z();
        let mut v = (z * z.transpose()) * vc.tau2();
        for i in 0..n {
            v[(i, i)] += vc.sigma2();
        }
        let factor = Cholesky::new(v.clone())
            .ok_or_else(|| Error::NumericalFailure("V is not positive definite".into()))?;
        let log_det_v = log_det(&factor);
        Ok(Self {
            v,
            factor,
            log_det_v,
        })
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn log_det_v(&self) -> f64 {
        self.log_det_v
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    /// `r′V⁻¹r`.
    pub fn quad_form(&self, r: &DVector<f64>) -> f64 {
        let l_inv_r = self
            .factor
            .l_dirty()
            .solve_lower_triangular(r)
            .expect("Cholesky factor has a positive diagonal");
        l_inv_r.norm_squared()
    }
}

/// Shorthand for [`MarginalModel::new`].
pub fn marginal(model: &ModelData, vc: VarianceComponents) -> Result<MarginalModel> {
    MarginalModel::new(model, vc)
}

fn log_det(factor: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * factor
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
}

struct Gls {
    beta: DVector<f64>,
    log_det_xtvx: f64,
}

fn gls(model: &ModelData, mm: &MarginalModel) -> Result<Gls> {
    let x = model.x();
    let vinv_x = mm.solve_mat(x);
    let xtvx = x.tr_mul(&vinv_x);
    let xtvy = vinv_x.tr_mul(model.y());
    let chol = Cholesky::new(xtvx)
        .ok_or_else(|| Error::NumericalFailure("X′V⁻¹X is not positive definite".into()))?;
    Ok(Gls {
        beta: chol.solve(&xtvy),
        log_det_xtvx: log_det(&chol),
    })
}

/// Generalized least squares `(X′V⁻¹X)⁻¹X′V⁻¹y`.
pub fn gls_beta(model: &ModelData, mm: &MarginalModel) -> Result<DVector<f64>> {
    Ok(gls(model, mm)?.beta)
}

pub fn loglik_ml(model: &ModelData, beta: &DVector<f64>, vc: VarianceComponents) -> Result<f64> {
    if beta.len() != model.p() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, X has {} columns",
            beta.len(),
            model.p()
        )));
    }
    let mm = marginal(model, vc)?;
    let r = model.y() - model.x() * beta;
    Ok(ml_from_parts(model.n(), &mm, &r))
}

fn ml_from_parts(n: usize, mm: &MarginalModel, resid: &DVector<f64>) -> f64 {
    -0.5 * (mm.log_det_v() + mm.quad_form(resid) + n as f64 * (2.0 * PI).ln())
}

/// ML log-likelihood with β profiled out at its GLS value.
pub fn loglik_ml_profiled(model: &ModelData, vc: VarianceComponents) -> Result<f64> {
    let mm = marginal(model, vc)?;
    let g = gls(model, &mm)?;
    let r = model.y() - model.x() * &g.beta;
    Ok(ml_from_parts(model.n(), &mm, &r))
}

pub fn loglik_reml(model: &ModelData, vc: VarianceComponents) -> Result<f64> {
    let (n, p) = (model.n(), model.p());
    if n <= p {
        return Err(Error::InsufficientDf { n, p });
    }
    let mm = marginal(model, vc)?;
    let g = gls(model, &mm)?;
    let r = model.y() - model.x() * &g.beta;
    let ypy = mm.quad_form(&r);
    Ok(-0.5 * (mm.log_det_v() + g.log_det_xtvx + ypy + (n - p) as f64 * (2.0 * PI).ln()))
}

/// The objective a criterion maximizes over θ: profiled ℓ_ML or ℓ_REML.
pub fn objective(model: &ModelData, vc: VarianceComponents, criterion: Criterion) -> Result<f64> {
    match criterion {
        Criterion::Ml => loglik_ml_profiled(model, vc),
        Criterion::Reml => loglik_reml(model, vc),
    }
}

/// Central finite-difference gradient of [`objective`] in (τ², σ²), with
/// step `rel_step · value` in each coordinate.
pub fn fd_score(
    model: &ModelData,
    vc: VarianceComponents,
    criterion: Criterion,
    rel_step: f64,
) -> Result<[f64; 2]> {
    if !(rel_step > 0.0 && rel_step <= 1e-2) {
        return Err(Error::InvalidConfig(format!(
            "rel_step must lie in (0, 1e-2], got {rel_step}"
        )));
    }
    let (t, s) = (vc.tau2(), vc.sigma2());
    let f = |t: f64, s: f64| objective(model, VarianceComponents::new(t, s)?, criterion);
    let ht = rel_step * t;
    let hs = rel_step * s;
    let d_tau = (f(t + ht, s)? - f(t - ht, s)?) / (2.0 * ht);
    let d_sigma = (f(t, s + hs)? - f(t, s - hs)?) / (2.0 * hs);
    Ok([d_tau, d_sigma])
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2PI: f64 = 1.8378770664093453;

    fn tiny() -> ModelData {
        ModelData::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn marginal_without_random_signal() {
        let model = ModelData::new(
            DVector::from_vec(vec![0.1, 0.2, 0.3]),
            DMatrix::from_element(3, 1, 1.0),
            DMatrix::zeros(3, 2),
        )
        .unwrap();
        let mm = marginal(&model, VarianceComponents::new(5.0, 2.0).unwrap()).unwrap();
        assert_eq!(mm.v(), &(DMatrix::identity(3, 3) * 2.0));
        assert!((mm.log_det_v() - 3.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn marginal_tiny() {
        let mm = marginal(&tiny(), VarianceComponents::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(
            mm.v(),
            &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])
        );
        assert!((mm.log_det_v() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gls_tiny_is_weighted_mean() {
        let model = tiny();
        let mm = marginal(&model, VarianceComponents::new(1.0, 1.0).unwrap()).unwrap();
        let b = gls_beta(&model, &mm).unwrap();
        // (1/2 * 1 + 1 * 2) / (1/2 + 1)
        assert!((b[0] - 5.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn gls_with_identity_v_is_ols() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 2.0, 5.0]);
        let model = ModelData::new(y.clone(), x.clone(), DMatrix::zeros(4, 1)).unwrap();
        let mm = marginal(&model, VarianceComponents::new(1.0, 1.0).unwrap()).unwrap();
        let b = gls_beta(&model, &mm).unwrap();
        let ols = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y;
        assert!((b - ols).amax() < 1e-12);
    }

    fn single_point(y: f64) -> ModelData {
        ModelData::new(
            DVector::from_vec(vec![y]),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_density() {
        let vc = VarianceComponents::new(1.0, 1.0).unwrap();
        let zero = DVector::from_vec(vec![0.0]);
        let at0 = loglik_ml(&single_point(0.0), &zero, vc).unwrap();
        assert!((at0 + 0.5 * LN_2PI).abs() < 1e-15);
        assert!((at0 + 0.9189385).abs() < 1e-7);
        let at1 = loglik_ml(&single_point(1.0), &zero, vc).unwrap();
        assert!((at1 + 1.4189385).abs() < 1e-7);
    }

    #[test]
    fn reml_needs_residual_df() {
        let vc = VarianceComponents::new(1.0, 1.0).unwrap();
        assert!(matches!(
            loglik_reml(&single_point(0.0), vc),
            Err(Error::InsufficientDf { n: 1, p: 1 })
        ));
        // n = p + 1
        assert!(loglik_reml(&tiny(), vc).unwrap().is_finite());
    }

    #[test]
    fn fd_score_step_bounds() {
        let vc = VarianceComponents::new(1.0, 1.0).unwrap();
        assert!(fd_score(&tiny(), vc, Criterion::Reml, 0.0).is_err());
        assert!(fd_score(&tiny(), vc, Criterion::Reml, 0.1).is_err());
        assert!(fd_score(&tiny(), vc, Criterion::Reml, 1e-2).is_ok());
    }

    #[test]
    fn scale_guard() {
        let a = LogLik {
            criterion: Criterion::Ml,
            value: -3.0,
        };
        let b = LogLik {
            criterion: Criterion::Reml,
            value: -4.0,
        };
        assert!(matches!(
            a.difference(&b),
            Err(Error::CriterionMismatch { .. })
        ));
        assert_eq!(a.difference(&a).unwrap(), 0.0);
    }
}
