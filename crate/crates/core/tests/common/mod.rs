#![allow(dead_code)]

use mixed_em_core::{simulate, ModelData, SimulationSpec, VarianceComponents};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub model: ModelData,
    pub vc: VarianceComponents,
}

/// Random instance with n ≤ `max_n`, p ≤ 4, q ≤ 8. Z alternates between a
/// group-indicator design and a dense Gaussian design; a single-group
/// indicator would duplicate the intercept, so q = 1 always gets dense Z.
pub fn random_instance(seed: u64, max_n: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(1..=4);
    let q = rng.random_range(1..=8);
    let n = rng.random_range((p + 2).max(q)..=max_n);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };

    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { normal() });
    let z = if seed.is_multiple_of(2) && q > 1 {
        DMatrix::from_fn(n, q, |i, j| if i % q == j { 1.0 } else { 0.0 })
    } else {
        DMatrix::from_fn(n, q, |_, _| normal())
    };
    let y = DVector::from_fn(n, |_, _| normal() * 2.0 + 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let tau2 = 10f64.powf(rng.random_range(-1.0..1.0));
    let sigma2 = 10f64.powf(rng.random_range(-1.0..1.0));
    Instance {
        model: ModelData::new(y, x, z).unwrap(),
        vc: VarianceComponents::new(tau2, sigma2).unwrap(),
    }
}

pub fn pinned_spec() -> SimulationSpec {
    SimulationSpec::balanced(6, 5, vec![2.0, 1.0, -0.5], 1.0, 1.0, 20240131)
}

pub fn pinned() -> ModelData {
    simulate(&pinned_spec()).unwrap().data
}

/// Simulated one-way instances with random sizes and truths.
pub fn simulated_instance(seed: u64) -> ModelData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = rng.random_range(4..=8);
    let size = rng.random_range(3..=7);
    let tau2 = 10f64.powf(rng.random_range(-0.5..0.5));
    let sigma2 = 10f64.powf(rng.random_range(-0.5..0.5));
    let spec = SimulationSpec::balanced(groups, size, vec![1.0, -0.5], tau2, sigma2, seed);
    simulate(&spec).unwrap().data
}

pub fn tiny() -> ModelData {
    ModelData::new(
        DVector::from_vec(vec![1.0, 2.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
    )
    .unwrap()
}

pub fn unit() -> VarianceComponents {
    VarianceComponents::new(1.0, 1.0).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Max entrywise error relative to the largest entry of `b`.
pub fn rel_max(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

// ---- dense oracles: explicit LU inverses and determinants ----

pub fn dense_v(model: &ModelData, vc: VarianceComponents) -> DMatrix<f64> {
    let n = model.n();
    let g = DMatrix::<f64>::identity(model.q(), model.q()) * vc.tau2();
    let r = DMatrix::<f64>::identity(n, n) * vc.sigma2();
    model.z() * g * model.z().transpose() + r
}

pub fn dense_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().lu().try_inverse().expect("invertible")
}

/// `(β̂, η̂)` by the GLS / BLUP formulas with an explicit V⁻¹.
pub fn dense_gls_blup(model: &ModelData, vc: VarianceComponents) -> (DVector<f64>, DVector<f64>) {
    let vinv = dense_inverse(&dense_v(model, vc));
    let x = model.x();
    let xtvx = x.transpose() * &vinv * x;
    let beta = dense_inverse(&xtvx) * x.transpose() * &vinv * model.y();
    let eta = model.z().transpose() * vc.tau2() * &vinv * (model.y() - x * &beta);
    (beta, eta)
}

pub fn dense_cov_beta(model: &ModelData, vc: VarianceComponents) -> DMatrix<f64> {
    let vinv = dense_inverse(&dense_v(model, vc));
    dense_inverse(&(model.x().transpose() * vinv * model.x()))
}

/// Henderson M by explicit products with dense R⁻¹ and G⁻¹.
pub fn dense_m(model: &ModelData, vc: VarianceComponents) -> DMatrix<f64> {
    let (n, p, q) = (model.n(), model.p(), model.q());
    let r_inv = DMatrix::<f64>::identity(n, n) / vc.sigma2();
    let g_inv = DMatrix::<f64>::identity(q, q) / vc.tau2();
    let (x, z) = (model.x(), model.z());
    let mut m = DMatrix::zeros(p + q, p + q);
    m.view_mut((0, 0), (p, p))
        .copy_from(&(x.transpose() * &r_inv * x));
    m.view_mut((0, p), (p, q))
        .copy_from(&(x.transpose() * &r_inv * z));
    m.view_mut((p, 0), (q, p))
        .copy_from(&(z.transpose() * &r_inv * x));
    m.view_mut((p, p), (q, q))
        .copy_from(&(z.transpose() * &r_inv * z + g_inv));
    m
}

pub const LN_2PI: f64 = 1.8378770664093453;

/// Multivariate normal log-density with explicit inverse and LU determinant.
pub fn dense_loglik_ml(model: &ModelData, beta: &DVector<f64>, vc: VarianceComponents) -> f64 {
    let v = dense_v(model, vc);
    let r = model.y() - model.x() * beta;
    let quad = (r.transpose() * dense_inverse(&v) * &r)[(0, 0)];
    -0.5 * (v.determinant().ln() + quad + model.n() as f64 * LN_2PI)
}

/// REML log-likelihood with the projection P materialized.
pub fn dense_loglik_reml(model: &ModelData, vc: VarianceComponents) -> f64 {
    let v = dense_v(model, vc);
    let vinv = dense_inverse(&v);
    let x = model.x();
    let xtvx = x.transpose() * &vinv * x;
    let p_mat = &vinv - &vinv * x * dense_inverse(&xtvx) * x.transpose() * &vinv;
    let ypy = (model.y().transpose() * p_mat * model.y())[(0, 0)];
    let df = (model.n() - model.p()) as f64;
    -0.5 * (v.determinant().ln() + xtvx.determinant().ln() + ypy + df * LN_2PI)
}
