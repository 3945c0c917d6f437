//! Model data, variance-component parameterization and the data simulator.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Validated `(y, X, Z)` triple.
///
/// The cross-product matrix `W′W` and vector `W′y` for `W = [X Z]` are
/// computed once here; everything downstream that needs `X′X`, `X′Z`, `Z′Z`
/// or the Henderson right-hand side reads them from these blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    wtw: DMatrix<f64>,
    wty: DVector<f64>,
}

impl ModelData {
    /// Validates a mixed-model design with at least one random effect.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        if z.ncols() == 0 {
            return Err(Error::EmptyInput("Z has no columns"));
        }
        Self::build(y, x, z)
    }

    /// A model with no random effects (q = 0). Only the OLS reduction path
    /// accepts this.
    pub fn fixed_only(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        Self::build(y, x, DMatrix::zeros(n, 0))
    }

    fn build(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyInput("y"));
        }
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "len(y) = {n}, rows(X) = {}, rows(Z) = {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::EmptyInput("X has no columns"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("y"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("X"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("Z"));
        }
        let rank = column_rank(&x);
        if rank < x.ncols() {
            return Err(Error::RankDeficientX { rank, p: x.ncols() });
        }

        let (p, q) = (x.ncols(), z.ncols());
        let mut w = DMatrix::zeros(n, p + q);
        w.columns_mut(0, p).copy_from(&x);
        w.columns_mut(p, q).copy_from(&z);
        let wtw = w.tr_mul(&w);
        let wty = w.tr_mul(&y);

        Ok(Self { y, x, z, wtw, wty })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// `[X Z]′[X Z]`, shape (p+q)×(p+q).
    pub fn cross_product(&self) -> &DMatrix<f64> {
        &self.wtw
    }

    /// `[X Z]′y`, length p+q.
    pub fn cross_response(&self) -> &DVector<f64> {
        &self.wty
    }

    /// `Z′Z`, the lower-right block of [`cross_product`](Self::cross_product).
    pub fn ztz(&self) -> DMatrix<f64> {
        let (p, q) = (self.p(), self.q());
        self.wtw.view((p, p), (q, q)).into_owned()
    }

    /// Same design with a different response vector.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Self::build(y, self.x.clone(), self.z.clone())
    }
}

/// Numerical column rank of `x` from column-pivoted QR, with tolerance
/// `max(n, p) · ε · (largest column norm)`.
pub fn column_rank(x: &DMatrix<f64>) -> usize {
    let (n, p) = x.shape();
    let max_norm = x.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return 0;
    }
    let tol = n.max(p) as f64 * f64::EPSILON * max_norm;
    let r = x.clone().col_piv_qr().r();
    (0..n.min(p)).filter(|&i| r[(i, i)].abs() > tol).count()
}

/// Variance components θ = (τ², σ²) with G = τ²I_q and R = σ²I_n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVarianceComponents", into = "RawVarianceComponents")]
pub struct VarianceComponents {
    tau2: f64,
    sigma2: f64,
}

#[derive(Serialize, Deserialize)]
struct RawVarianceComponents {
    tau2: f64,
    sigma2: f64,
}

impl TryFrom<RawVarianceComponents> for VarianceComponents {
    type Error = Error;
    fn try_from(raw: RawVarianceComponents) -> Result<Self> {
        Self::new(raw.tau2, raw.sigma2)
    }
}

impl From<VarianceComponents> for RawVarianceComponents {
    fn from(vc: VarianceComponents) -> Self {
        Self {
            tau2: vc.tau2,
            sigma2: vc.sigma2,
        }
    }
}

impl VarianceComponents {
    pub fn new(tau2: f64, sigma2: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(tau2) && ok(sigma2) {
            Ok(Self { tau2, sigma2 })
        } else {
            Err(Error::InvalidVarianceComponents { tau2, sigma2 })
        }
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "REML")]
    Reml,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::Ml => f.write_str("ML"),
            Criterion::Reml => f.write_str("REML"),
        }
    }
}

impl FromStr for Criterion {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ml" => Ok(Criterion::Ml),
            "reml" => Ok(Criterion::Reml),
            other => Err(format!("unknown criterion '{other}' (expected ml or reml)")),
        }
    }
}

/// One-way random-intercept design: the n×q 0/1 indicator matrix whose
/// columns follow the order in which groups first appear.
pub fn z_from_groups<S: AsRef<str>>(labels: &[S]) -> Result<DMatrix<f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("group labels"));
    }
    let (index, levels) = group_index(labels);
    let mut z = DMatrix::zeros(labels.len(), levels.len());
    for (row, &col) in index.iter().enumerate() {
        z[(row, col)] = 1.0;
    }
    Ok(z)
}

/// Per-row column index and the distinct labels in first-appearance order.
pub fn group_index<S: AsRef<str>>(labels: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut levels = Vec::new();
    let index = labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            *seen.entry(l).or_insert_with(|| {
                levels.push(l.to_string());
                levels.len() - 1
            })
        })
        .collect();
    (index, levels)
}

/// How the fixed-effect columns are generated. Column 1 is always the
/// intercept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSpec {
    /// Remaining p−1 columns i.i.d. N(0, 1).
    #[default]
    InterceptStdNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    /// Total sample size; optional, but when present it must equal the sum of
    /// `group_sizes`.
    #[serde(default)]
    pub n: Option<usize>,
    pub n_groups: usize,
    pub group_sizes: Vec<usize>,
    pub beta_true: Vec<f64>,
    pub tau2_true: f64,
    pub sigma2_true: f64,
    pub seed: u64,
    #[serde(default)]
    pub covariate_spec: CovariateSpec,
}

impl SimulationSpec {
    /// `groups` equal groups of `size`.
    pub fn balanced(
        groups: usize,
        size: usize,
        beta_true: Vec<f64>,
        tau2_true: f64,
        sigma2_true: f64,
        seed: u64,
    ) -> Self {
        Self {
            n: None,
            n_groups: groups,
            group_sizes: vec![size; groups],
            beta_true,
            tau2_true,
            sigma2_true,
            seed,
            covariate_spec: CovariateSpec::InterceptStdNormal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_groups == 0 {
            return bad("n_groups must be positive".into());
        }
        if self.group_sizes.len() != self.n_groups {
            return bad(format!(
                "group_sizes has {} entries but n_groups = {}",
                self.group_sizes.len(),
                self.n_groups
            ));
        }
        if self.group_sizes.contains(&0) {
            return bad("group sizes must be positive".into());
        }
        let total: usize = self.group_sizes.iter().sum();
        if let Some(n) = self.n {
            if n != total {
                return bad(format!("sum(group_sizes) = {total} but n = {n}"));
            }
        }
        if self.beta_true.is_empty() {
            return bad("beta_true must have at least the intercept".into());
        }
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return bad("beta_true must be finite".into());
        }
        if !(self.tau2_true.is_finite() && self.tau2_true > 0.0) {
            return bad(format!("tau2_true must be > 0, got {}", self.tau2_true));
        }
        if !(self.sigma2_true.is_finite() && self.sigma2_true > 0.0) {
            return bad(format!("sigma2_true must be > 0, got {}", self.sigma2_true));
        }
        Ok(())
    }

    pub fn total_n(&self) -> usize {
        self.group_sizes.iter().sum()
    }
}

/// Simulated data together with the latent draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: ModelData,
    /// Group label of each row (`g1`, `g2`, ...).
    pub groups: Vec<String>,
    pub eta: DVector<f64>,
    pub eps: DVector<f64>,
}

/// Draws `y = Xβ + Zη + ε` from the spec.
///
/// Uses ChaCha20 seeded from `spec.seed`; draw order is covariates
/// (row-major), then η, then ε.
pub fn simulate(spec: &SimulationSpec) -> Result<Simulation> {
    spec.validate()?;
    let n = spec.total_n();
    let p = spec.beta_true.len();
    let q = spec.n_groups;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..p {
            x[(i, j)] = normal();
        }
    }
    let tau = spec.tau2_true.sqrt();
    let sigma = spec.sigma2_true.sqrt();
    let eta = DVector::from_fn(q, |_, _| tau * normal());
    let eps = DVector::from_fn(n, |_, _| sigma * normal());

    let groups: Vec<String> = spec
        .group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &size)| std::iter::repeat_n(format!("g{}", g + 1), size))
        .collect();
    let z = z_from_groups(&groups)?;

    let beta = DVector::from_column_slice(&spec.beta_true);
    let y = &x * beta + &z * &eta + &eps;
    let data = ModelData::new(y, x, z)?;
    Ok(Simulation {
        data,
        groups,
        eta,
        eps,
    })
}
