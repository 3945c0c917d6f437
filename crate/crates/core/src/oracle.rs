//! Brute-force maximizer of the ML/REML objectives.
//!
//! Evaluates the objective on a log₁₀-spaced grid over a box in (τ², σ²),
//! re-centres a box ten times narrower on the best point, and repeats. No
//! derivatives and no Henderson solves: only [`crate::likelihood`] is used,
//! which keeps this route independent of the EM code it is meant to check.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood;
use crate::model::{Criterion, ModelData, VarianceComponents};

/// Axis-aligned box in (log₁₀ τ², log₁₀ σ²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub log10_tau2: (f64, f64),
    pub log10_sigma2: (f64, f64),
}

impl SearchBox {
    /// Box from variance bounds on the natural scale.
    pub fn from_bounds(tau2: (f64, f64), sigma2: (f64, f64)) -> Result<Self> {
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi > lo && hi.is_finite();
        if !ok(tau2) || !ok(sigma2) {
            return Err(Error::InvalidConfig(format!(
                "oracle bounds must satisfy 0 < lo < hi (tau2 {tau2:?}, sigma2 {sigma2:?})"
            )));
        }
        Ok(Self {
            log10_tau2: (tau2.0.log10(), tau2.1.log10()),
            log10_sigma2: (sigma2.0.log10(), sigma2.1.log10()),
        })
    }
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            log10_tau2: (-4.0, 4.0),
            log10_sigma2: (-4.0, 4.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub bounds: SearchBox,
    pub levels: usize,
    /// Points per axis.
    pub grid: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            bounds: SearchBox::default(),
            levels: 6,
            grid: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub vc_star: VarianceComponents,
    pub loglik_star: f64,
    pub criterion: Criterion,
    /// GLS fixed effects at `vc_star`.
    pub beta_star: DVector<f64>,
    pub evaluations: usize,
    /// Box searched at each level.
    pub grid_trace: Vec<SearchBox>,
}

fn linspace(lo: f64, hi: f64, k: usize, count: usize) -> f64 {
    if count == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * k as f64 / (count - 1) as f64
    }
}

/// Interval of width `width` centred on `center`, shifted to stay inside
/// `outer`.
fn recenter(center: f64, width: f64, outer: (f64, f64)) -> (f64, f64) {
    let mut lo = center - 0.5 * width;
    let mut hi = center + 0.5 * width;
    if lo < outer.0 {
        lo = outer.0;
        hi = outer.0 + width;
    } else if hi > outer.1 {
        hi = outer.1;
        lo = outer.1 - width;
    }
    (lo, hi)
}

pub fn maximize(
    model: &ModelData,
    criterion: Criterion,
    config: &OracleConfig,
) -> Result<OracleResult> {
    if config.levels == 0 || config.grid < 2 {
        return Err(Error::InvalidConfig(
            "oracle needs levels >= 1 and grid >= 2".into(),
        ));
    }
    let outer = config.bounds;
    for (lo, hi) in [outer.log10_tau2, outer.log10_sigma2] {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidConfig("empty oracle search box".into()));
        }
    }

    let mut current = outer;
    let mut best: Option<(f64, f64, f64)> = None; // (loglik, log τ², log σ²)
    let mut evaluations = 0;
    let mut grid_trace = Vec::with_capacity(config.levels);

    for level in 0..config.levels {
        grid_trace.push(current);
        for i in 0..config.grid {
            let lt = linspace(current.log10_tau2.0, current.log10_tau2.1, i, config.grid);
            for j in 0..config.grid {
                let ls = linspace(
                    current.log10_sigma2.0,
                    current.log10_sigma2.1,
                    j,
                    config.grid,
                );
                let vc = VarianceComponents::new(10f64.powf(lt), 10f64.powf(ls))?;
                let value = likelihood::objective(model, vc, criterion)?;
                evaluations += 1;
                if best.is_none_or(|(b, _, _)| value > b) {
                    best = Some((value, lt, ls));
                }
            }
        }
        if level + 1 < config.levels {
            let (_, lt, ls) = best.expect("grid is non-empty");
            let wt = (current.log10_tau2.1 - current.log10_tau2.0) / 10.0;
            let ws = (current.log10_sigma2.1 - current.log10_sigma2.0) / 10.0;
            current = SearchBox {
                log10_tau2: recenter(lt, wt, outer.log10_tau2),
                log10_sigma2: recenter(ls, ws, outer.log10_sigma2),
            };
        }
    }

    let (loglik_star, lt, ls) = best.expect("grid is non-empty");
    let vc_star = VarianceComponents::new(10f64.powf(lt), 10f64.powf(ls))?;
    let mm = likelihood::marginal(model, vc_star)?;
    let beta_star = likelihood::gls_beta(model, &mm)?;
    let result = OracleResult {
        vc_star,
        loglik_star,
        criterion,
        beta_star,
        evaluations,
        grid_trace,
    };

    let on_edge = |v: f64, (lo, hi): (f64, f64)| v <= lo || v >= hi;
    if on_edge(lt, outer.log10_tau2) || on_edge(ls, outer.log10_sigma2) {
        return Err(Error::BoundaryHit(Box::new(result)));
    }
    Ok(result)
}
