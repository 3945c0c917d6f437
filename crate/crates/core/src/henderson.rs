//! Henderson's mixed-model equations.
//!
//! With G = τ²I and R = σ²I the coefficient matrix is
//!
//! ```text
//! M = [ X′X/σ²   X′Z/σ²        ]     rhs = [ X′y/σ² ]
//!     [ Z′X/σ²   Z′Z/σ² + I/τ² ]           [ Z′y/σ² ]
//! ```
//!
//! so it is assembled from the cached `[X Z]′[X Z]` by scalar scaling plus a
//! diagonal shift; neither R⁻¹ nor G⁻¹ is ever formed.

use nalgebra::{Cholesky, DMatrix, DMatrixView, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{ModelData, VarianceComponents};

/// Variances below this are refused at assembly.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct HendersonSystem {
    m: DMatrix<f64>,
    rhs: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    p: usize,
    q: usize,
    vc: VarianceComponents,
}

impl HendersonSystem {
    pub fn assemble(model: &ModelData, vc: VarianceComponents) -> Result<Self> {
        if vc.tau2() < MIN_VARIANCE || vc.sigma2() < MIN_VARIANCE {
            return Err(Error::NumericalFailure(format!(
                "variance component below {MIN_VARIANCE:e} (tau2 = {}, sigma2 = {})",
                vc.tau2(),
                vc.sigma2()
            )));
        }
        let (p, q) = (model.p(), model.q());
        let r_inv = 1.0 / vc.sigma2();
        let g_inv = 1.0 / vc.tau2();

        let mut m = model.cross_product() * r_inv;
        for i in p..p + q {
            m[(i, i)] += g_inv;
        }
        let rhs = model.cross_response() * r_inv;
        let factor = Cholesky::new(m.clone()).ok_or_else(|| {
            Error::NumericalFailure("Henderson matrix M is not positive definite".into())
        })?;
        Ok(Self {
            m,
            rhs,
            factor,
            p,
            q,
            vc,
        })
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn variance_components(&self) -> VarianceComponents {
        self.vc
    }

    pub fn m_beta_beta(&self) -> DMatrixView<'_, f64> {
        self.m.view((0, 0), (self.p, self.p))
    }

    pub fn m_beta_eta(&self) -> DMatrixView<'_, f64> {
        self.m.view((0, self.p), (self.p, self.q))
    }

    pub fn m_eta_beta(&self) -> DMatrixView<'_, f64> {
        self.m.view((self.p, 0), (self.q, self.p))
    }

    pub fn m_eta_eta(&self) -> DMatrixView<'_, f64> {
        self.m.view((self.p, self.p), (self.q, self.q))
    }

    /// BLUE, BLUP, conditional residuals and both covariance matrices.
    pub fn solve(&self, model: &ModelData) -> Result<HendersonSolution> {
        let (p, q) = (self.p, self.q);
        if model.p() != p || model.q() != q {
            return Err(Error::DimensionMismatch(format!(
                "system is for p = {p}, q = {q}; model has p = {}, q = {}",
                model.p(),
                model.q()
            )));
        }
        let sol = self.factor.solve(&self.rhs);
        let beta_hat = sol.rows(0, p).into_owned();
        let eta_hat = sol.rows(p, q).into_owned();
        let r_hat = model.y() - model.x() * &beta_hat - model.z() * &eta_hat;

        let c = symmetrize(self.factor.inverse());
        let m_etaeta_inv = spd_inverse(self.m_eta_eta().into_owned(), "M_etaeta")?;

        Ok(HendersonSolution {
            beta_hat,
            eta_hat,
            r_hat,
            c,
            m_etaeta_inv,
            p,
            q,
        })
    }

    /// `C_ηη` computed as the inverse Schur complement of `M_ββ`,
    /// `(M_ηη − M_ηβ M_ββ⁻¹ M_βη)⁻¹`, without going through the full inverse.
    pub fn schur_c_etaeta(&self) -> Result<DMatrix<f64>> {
        let mbb = Cholesky::new(self.m_beta_beta().into_owned())
            .ok_or_else(|| Error::NumericalFailure("M_betabeta is not positive definite".into()))?;
        let mbb_inv_mbe = mbb.solve(&self.m_beta_eta().into_owned());
        let schur = self.m_eta_eta() - self.m_eta_beta() * mbb_inv_mbe;
        spd_inverse(symmetrize(schur), "Schur complement")
    }
}

/// One Henderson solve at fixed variance components.
#[derive(Debug, Clone, PartialEq)]
pub struct HendersonSolution {
    pub beta_hat: DVector<f64>,
    pub eta_hat: DVector<f64>,
    /// Conditional residuals `y − Xβ̂ − Zη̂`.
    pub r_hat: DVector<f64>,
    /// `C = M⁻¹`, the prediction-error covariance of `(β̂, η̂ − η)`.
    pub c: DMatrix<f64>,
    /// `(M_ηη)⁻¹ = Var(η | y)`.
    pub m_etaeta_inv: DMatrix<f64>,
    p: usize,
    q: usize,
}

impl HendersonSolution {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn c_beta_beta(&self) -> DMatrixView<'_, f64> {
        self.c.view((0, 0), (self.p, self.p))
    }

    pub fn c_beta_eta(&self) -> DMatrixView<'_, f64> {
        self.c.view((0, self.p), (self.p, self.q))
    }

    pub fn c_eta_beta(&self) -> DMatrixView<'_, f64> {
        self.c.view((self.p, 0), (self.q, self.p))
    }

    pub fn c_eta_eta(&self) -> DMatrixView<'_, f64> {
        self.c.view((self.p, self.p), (self.q, self.q))
    }
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

fn spd_inverse(a: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::NumericalFailure(format!("{what} is not positive definite")))?;
    Ok(symmetrize(chol.inverse()))
}
