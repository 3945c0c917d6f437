//! JSON report schemas. Every float is a [`Num`] so reports re-parse to the
//! exact same bits.

use mixed_em_core::em::trace_adjustments;
use mixed_em_core::{
    Criterion, EmConfig, FitResult, HendersonSystem, ModelData, Simulation, SimulationSpec,
    StopReason, TraceMode, ValidationReport,
};
use serde::{Deserialize, Serialize};

use crate::csv_io::{InputDigest, LoadedData};
use crate::num::{matrix, nums, Num};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub criterion: Criterion,
    pub maxit: usize,
    pub tol: Num,
    pub tau2_init: Num,
    pub sigma2_init: Num,
    pub trace_loglik: bool,
    pub trace_mode: TraceMode,
}

impl From<&EmConfig> for ConfigEcho {
    fn from(c: &EmConfig) -> Self {
        Self {
            criterion: c.criterion,
            maxit: c.maxit,
            tol: Num(c.tol),
            tau2_init: Num(c.tau2_init),
            sigma2_init: Num(c.sigma2_init),
            trace_loglik: c.trace_loglik,
            trace_mode: c.trace_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub beta_names: Vec<String>,
    pub beta: Vec<Num>,
    pub eta_names: Vec<String>,
    pub eta: Vec<Num>,
    pub tau2: Num,
    pub sigma2: Num,
}

/// Log-likelihood together with the scale it is on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedLogLik {
    pub criterion: Criterion,
    pub value: Num,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub tau2: Num,
    pub sigma2: Num,
    pub trace_t_tau: Num,
    pub trace_t_sigma: Num,
    pub rss: Num,
    pub eta_ss: Num,
    pub delta: Num,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik: Option<Num>,
}

/// Final-iteration matrices, only with `--inspect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub m: Vec<Vec<Num>>,
    pub c: Vec<Vec<Num>>,
    pub c_etaeta: Vec<Vec<Num>>,
    pub m_etaeta_inv: Vec<Vec<Num>>,
    pub trace_t_tau: Num,
    pub trace_t_sigma: Num,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub input: InputDigest,
    pub config: ConfigEcho,
    pub criterion: Criterion,
    pub estimates: Estimates,
    pub loglik: TaggedLogLik,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik_initial: Option<Num>,
    pub history: Vec<HistoryRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<MatrixDump>,
}

impl FitReport {
    pub fn build(data: &LoadedData, config: &EmConfig, fit: &FitResult, inspect: bool) -> Self {
        let trace = fit.loglik_trace.as_deref();
        let history = fit
            .history
            .iter()
            .enumerate()
            .map(|(k, r)| HistoryRow {
                iteration: k + 1,
                tau2: Num(r.vc.tau2()),
                sigma2: Num(r.vc.sigma2()),
                trace_t_tau: Num(r.diagnostics.trace_t_tau),
                trace_t_sigma: Num(r.diagnostics.trace_t_sigma),
                rss: Num(r.diagnostics.rss),
                eta_ss: Num(r.diagnostics.eta_ss),
                delta: Num(r.delta),
                loglik: trace.map(|t| Num(t[k + 1])),
            })
            .collect();
        let matrices = inspect.then(|| dump(&data.model, fit));
        Self {
            input: data.digest.clone(),
            config: config.into(),
            criterion: fit.criterion,
            estimates: Estimates {
                beta_names: data.x_names.clone(),
                beta: nums(fit.beta_hat.iter()),
                eta_names: data.z_names.clone(),
                eta: nums(fit.eta_hat.iter()),
                tau2: Num(fit.vc.tau2()),
                sigma2: Num(fit.vc.sigma2()),
            },
            loglik: TaggedLogLik {
                criterion: fit.loglik.criterion,
                value: Num(fit.loglik.value),
            },
            iterations: fit.iterations,
            converged: fit.converged,
            stop: fit.stop,
            loglik_initial: trace.map(|t| Num(t[0])),
            history,
            matrices,
        }
    }
}

fn dump(model: &ModelData, fit: &FitResult) -> MatrixDump {
    let sol = &fit.solution;
    let m = HendersonSystem::assemble(model, fit.vc)
        .map(|s| s.m().clone())
        .unwrap_or_else(|_| nalgebra::DMatrix::zeros(0, 0));
    let traces = trace_adjustments(fit.criterion, sol, model);
    MatrixDump {
        m: matrix(&m),
        c: matrix(&sol.c),
        c_etaeta: matrix(&sol.c_eta_eta().into_owned()),
        m_etaeta_inv: matrix(&sol.m_etaeta_inv),
        trace_t_tau: Num(traces.tau),
        trace_t_sigma: Num(traces.sigma),
    }
}

/// Sidecar written next to simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub seed: u64,
    pub n: usize,
    pub group_sizes: Vec<usize>,
    pub beta_true: Vec<Num>,
    pub tau2_true: Num,
    pub sigma2_true: Num,
    pub eta: Vec<Num>,
    pub eps: Vec<Num>,
}

impl TruthRecord {
    pub fn new(spec: &SimulationSpec, sim: &Simulation) -> Self {
        Self {
            seed: spec.seed,
            n: spec.total_n(),
            group_sizes: spec.group_sizes.clone(),
            beta_true: nums(spec.beta_true.iter()),
            tau2_true: Num(spec.tau2_true),
            sigma2_true: Num(spec.sigma2_true),
            eta: nums(sim.eta.iter()),
            eps: nums(sim.eps.iter()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub method: String,
    pub likelihood: Criterion,
    pub beta: Vec<Num>,
    pub tau2: Num,
    pub sigma2: Num,
    pub loglik: Num,
}

/// One criterion's comparison; ML and REML blocks are kept separate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationBlock {
    pub criterion: Criterion,
    pub rows: Vec<ValidationRow>,
    pub rel_tau2: Num,
    pub rel_sigma2: Num,
    pub rel_beta: Vec<Num>,
    pub loglik_abs_diff: Num,
    pub loglik_deficit: Num,
    pub max_rel_discrepancy: Num,
    pub oracle_boundary_hit: bool,
    pub pass: bool,
}

impl ValidationBlock {
    pub fn new(report: &ValidationReport, oracle_boundary_hit: bool) -> Self {
        Self {
            criterion: report.criterion,
            rows: report
                .rows
                .iter()
                .map(|r| ValidationRow {
                    method: r.method.clone(),
                    likelihood: r.likelihood,
                    beta: nums(r.beta.iter()),
                    tau2: Num(r.tau2),
                    sigma2: Num(r.sigma2),
                    loglik: Num(r.loglik),
                })
                .collect(),
            rel_tau2: Num(report.rel_tau2),
            rel_sigma2: Num(report.rel_sigma2),
            rel_beta: nums(report.rel_beta.iter()),
            loglik_abs_diff: Num(report.loglik_abs_diff),
            loglik_deficit: Num(report.loglik_deficit),
            max_rel_discrepancy: Num(report.max_rel_discrepancy),
            oracle_boundary_hit,
            pass: report.pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub input: InputDigest,
    pub blocks: Vec<ValidationBlock>,
    pub pass: bool,
}
