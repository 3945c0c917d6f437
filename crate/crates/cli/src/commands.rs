use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixed_em_core::em::trace_adjustments;
use mixed_em_core::likelihood::LogLik;
use mixed_em_core::oracle::{self, OracleConfig, OracleResult, SearchBox};
use mixed_em_core::{
    compare, compare_estimates, fit, simulate, Criterion, EmConfig, Error as CoreError, FitResult,
    HendersonSystem, SimulationSpec, TraceMode, ValidationReport, VarianceComponents,
};
use nalgebra::{DMatrix, DVector};

use crate::csv_io::{self, Layout, LoadedData};
use crate::error::{exit, CliError};
use crate::report::{FitReport, TruthRecord, ValidationBlock, ValidationSummary};

/// Overrides the seed in a simulation spec file (a `--seed` flag wins).
pub const SEED_ENV: &str = "MIXED_EM_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "mixed-em",
    version,
    about = "EM fitting of one-way linear mixed models (ML and REML)"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a one-way random-intercept data set from a JSON spec.
    Simulate(SimulateArgs),
    /// Fit by EM and write a JSON report.
    Fit(FitArgs),
    /// Fit by EM and compare against the grid-search oracle.
    Validate(ValidateArgs),
    /// Print Henderson matrices and trace adjustments at one iteration.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Truth sidecar path [default: <out>.truth.json]
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub response_col: String,
    /// Explicit X columns (comma separated) instead of x1, x2, ...
    #[arg(long, value_delimiter = ',')]
    pub design_cols: Option<Vec<String>>,
    /// Explicit Z columns (comma separated) instead of the grp column.
    #[arg(long, value_delimiter = ',')]
    pub z_cols: Option<Vec<String>>,
    #[arg(long)]
    pub no_intercept: bool,
}

impl DataArgs {
    fn layout(&self) -> Layout {
        Layout {
            response: self.response_col.clone(),
            design_cols: self.design_cols.clone(),
            z_cols: self.z_cols.clone(),
            no_intercept: self.no_intercept,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EmArgs {
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub maxit: usize,
    #[arg(long = "tau2-init", default_value_t = 1.0)]
    pub tau2_init: f64,
    #[arg(long = "sigma2-init", default_value_t = 1.0)]
    pub sigma2_init: f64,
    /// Form the n×n trace matrices explicitly (cross-check only).
    #[arg(long)]
    pub dense_traces: bool,
}

impl EmArgs {
    fn config(&self, criterion: Criterion, trace_loglik: bool) -> EmConfig {
        EmConfig {
            criterion,
            maxit: self.maxit,
            tol: self.tol,
            tau2_init: self.tau2_init,
            sigma2_init: self.sigma2_init,
            trace_loglik,
            trace_mode: if self.dense_traces {
                TraceMode::Dense
            } else {
                TraceMode::CrossProduct
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Ml,
    Reml,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Ml => Criterion::Ml,
            CriterionArg::Reml => Criterion::Reml,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionChoice {
    Ml,
    Reml,
    Both,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "ml")]
    pub criterion: CriterionArg,
    #[command(flatten)]
    pub em: EmArgs,
    /// Include the final-iteration matrices in the report.
    #[arg(long)]
    pub inspect: bool,
    /// Record the log-likelihood at every iterate.
    #[arg(long)]
    pub trace_loglik: bool,
    /// Report path [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write y, X and Z as ingested to this CSV.
    #[arg(long)]
    pub dump_design: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 6)]
    pub levels: usize,
    #[arg(long, default_value_t = 41)]
    pub grid: usize,
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1e-4, 1e4])]
    pub tau2_bounds: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1e-4, 1e4])]
    pub sigma2_bounds: Vec<f64>,
}

impl OracleArgs {
    fn config(&self) -> Result<OracleConfig, CliError> {
        let bounds = SearchBox::from_bounds(
            (self.tau2_bounds[0], self.tau2_bounds[1]),
            (self.sigma2_bounds[0], self.sigma2_bounds[1]),
        )?;
        Ok(OracleConfig {
            bounds,
            levels: self.levels,
            grid: self.grid,
        })
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub criterion: CriterionChoice,
    #[command(flatten)]
    pub em: EmArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Validate estimates from a saved fit report instead of refitting.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the comparison as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "ml")]
    pub criterion: CriterionArg,
    #[command(flatten)]
    pub em: EmArgs,
    /// Iteration to inspect; 0 is the starting values [default: final]
    #[arg(long)]
    pub iteration: Option<usize>,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, std::env::var(SEED_ENV).ok().as_deref(), out),
        Command::Fit(a) => cmd_fit(&a, out, err),
        Command::Validate(a) => cmd_validate(&a, out, err),
        Command::Inspect(a) => cmd_inspect(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("cannot parse {}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(
    path: Option<&Path>,
    value: &T,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n")?,
        None => writeln!(out, "{text}")?,
    }
    Ok(())
}

pub fn cmd_simulate(
    args: &SimulateArgs,
    env_seed: Option<&str>,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let mut spec: SimulationSpec = read_json(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    } else if let Some(raw) = env_seed {
        spec.seed = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("{SEED_ENV} is not a u64: {raw:?}")))?;
    }
    let sim = simulate(&spec)?;

    let mut file = BufWriter::new(fs::File::create(&args.out)?);
    csv_io::write_simulation(&mut file, &sim)?;
    file.flush()?;

    let truth_path = args
        .truth
        .clone()
        .unwrap_or_else(|| args.out.with_extension("truth.json"));
    write_json(Some(&truth_path), &TruthRecord::new(&spec, &sim), out)?;
    writeln!(
        out,
        "wrote {} rows, {} groups to {} (truth: {})",
        sim.data.n(),
        sim.data.q(),
        args.out.display(),
        truth_path.display()
    )?;
    Ok(exit::OK)
}

pub fn cmd_fit(args: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8, CliError> {
    let data = csv_io::load(&args.data.data, &args.data.layout())?;
    if let Some(path) = &args.dump_design {
        let mut file = BufWriter::new(fs::File::create(path)?);
        csv_io::write_design(&mut file, &data)?;
        file.flush()?;
    }
    let config = args.em.config(args.criterion.into(), args.trace_loglik);
    let result = fit(&data.model, &config)?;
    let report = FitReport::build(&data, &config, &result, args.inspect);
    write_json(args.out.as_deref(), &report, out)?;
    if result.converged {
        Ok(exit::OK)
    } else {
        writeln!(
            err,
            "warning: {} fit did not converge after {} iterations ({:?})",
            result.criterion, result.iterations, result.stop
        )?;
        Ok(exit::NOT_CONVERGED)
    }
}

fn run_oracle(
    data: &LoadedData,
    criterion: Criterion,
    config: &OracleConfig,
) -> Result<(OracleResult, bool), CliError> {
    match oracle::maximize(&data.model, criterion, config) {
        Ok(r) => Ok((r, false)),
        Err(CoreError::BoundaryHit(r)) => Ok((*r, true)),
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_validate(
    args: &ValidateArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<u8, CliError> {
    let data = csv_io::load(&args.data.data, &args.data.layout())?;
    let oracle_config = args.oracle.config()?;
    let mut blocks = Vec::new();

    if let Some(path) = &args.report {
        let saved: FitReport = read_json(path)?;
        if saved.input.sha256 != data.digest.sha256 {
            writeln!(
                err,
                "warning: report was produced from a different data file"
            )?;
        }
        let requested = match args.criterion {
            CriterionChoice::Ml => Criterion::Ml,
            CriterionChoice::Reml => Criterion::Reml,
            CriterionChoice::Both => saved.criterion,
        };
        let (oracle, boundary) = run_oracle(&data, requested, &oracle_config)?;
        let beta = DVector::from_iterator(
            saved.estimates.beta.len(),
            saved.estimates.beta.iter().map(|b| b.0),
        );
        let vc = VarianceComponents::new(saved.estimates.tau2.0, saved.estimates.sigma2.0)?;
        let loglik = LogLik {
            criterion: saved.loglik.criterion,
            value: saved.loglik.value.0,
        };
        let report = compare_estimates(&beta, vc, loglik, &oracle)?;
        blocks.push((report, boundary, None));
    } else {
        let criteria = match args.criterion {
            CriterionChoice::Ml => vec![Criterion::Ml],
            CriterionChoice::Reml => vec![Criterion::Reml],
            CriterionChoice::Both => vec![Criterion::Ml, Criterion::Reml],
        };
        for criterion in criteria {
            let result = fit(&data.model, &args.em.config(criterion, false))?;
            let (oracle, boundary) = run_oracle(&data, criterion, &oracle_config)?;
            let report = compare(&result, &oracle)?;
            blocks.push((report, boundary, Some(result)));
        }
    }

    let mut text = String::new();
    for (report, boundary, result) in &blocks {
        render_block(&mut text, report, &data.x_names, *boundary, result.as_ref());
    }
    let pass = blocks.iter().all(|(r, _, _)| r.pass);
    let _ = writeln!(text, "overall: {}", if pass { "PASS" } else { "FAIL" });
    out.write_all(text.as_bytes())?;

    if let Some(path) = &args.out {
        let summary = ValidationSummary {
            input: data.digest.clone(),
            blocks: blocks
                .iter()
                .map(|(r, b, _)| ValidationBlock::new(r, *b))
                .collect(),
            pass,
        };
        write_json(Some(path), &summary, out)?;
    }
    Ok(if pass {
        exit::OK
    } else {
        exit::VALIDATION_FAIL
    })
}

/// One criterion's rows: method, likelihood, β..., τ², σ², logLik.
fn render_block(
    text: &mut String,
    report: &ValidationReport,
    beta_names: &[String],
    boundary: bool,
    fit: Option<&FitResult>,
) {
    let _ = write!(text, "{:<8} {:<10}", "method", "likelihood");
    for name in beta_names {
        let _ = write!(text, " {name:>12}");
    }
    let _ = writeln!(text, " {:>12} {:>12} {:>14}", "tau2", "sigma2", "logLik");
    for row in &report.rows {
        let _ = write!(text, "{:<8} {:<10}", row.method, row.likelihood.to_string());
        for b in &row.beta {
            let _ = write!(text, " {b:>12.6}");
        }
        let _ = writeln!(
            text,
            " {:>12.6} {:>12.6} {:>14.6}",
            row.tau2, row.sigma2, row.loglik
        );
    }
    if let Some(f) = fit {
        let _ = writeln!(text, "em iterations: {} ({:?})", f.iterations, f.stop);
    }
    if boundary {
        let _ = writeln!(text, "note: oracle optimum lies on the search-box boundary");
    }
    let _ = writeln!(
        text,
        "{} discrepancy: max relative {:.3e}, |logLik diff| {:.3e}, logLik deficit {:.3e} -> {}\n",
        report.criterion,
        report.max_rel_discrepancy,
        report.loglik_abs_diff,
        report.loglik_deficit,
        if report.pass { "PASS" } else { "FAIL" }
    );
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<u8, CliError> {
    let data = csv_io::load(&args.data.data, &args.data.layout())?;
    let config = args.em.config(args.criterion.into(), false);
    let result = fit(&data.model, &config)?;
    let k = args.iteration.unwrap_or(result.iterations);
    let vc = result.vc_at(k, &config).ok_or_else(|| {
        CliError::Input(format!(
            "iteration {k} out of range (fit ran {} iterations)",
            result.iterations
        ))
    })?;
    let text = render_inspection(&data, vc, k, &result)?;
    out.write_all(text.as_bytes())?;
    Ok(exit::OK)
}

fn render_matrix(text: &mut String, title: &str, m: &DMatrix<f64>) {
    let _ = writeln!(text, "{title} ({}×{}):", m.nrows(), m.ncols());
    for row in m.row_iter() {
        for v in row.iter() {
            let _ = write!(text, " {v:>16.10}");
        }
        text.push('\n');
    }
}

fn render_inspection(
    data: &LoadedData,
    vc: VarianceComponents,
    k: usize,
    result: &FitResult,
) -> Result<String, CliError> {
    let model = &data.model;
    let system = HendersonSystem::assemble(model, vc)?;
    let sol = system.solve(model)?;
    let schur = system.schur_c_etaeta()?;
    let c_ee = sol.c_eta_eta().into_owned();
    let residual = (&schur - &c_ee).amax();

    let mut text = String::new();
    let _ = writeln!(
        text,
        "iteration {k} of {} ({} fit); tau2 = {:.10}, sigma2 = {:.10}",
        result.iterations,
        result.criterion,
        vc.tau2(),
        vc.sigma2()
    );
    let _ = writeln!(
        text,
        "n = {}, p = {}, q = {}\n",
        model.n(),
        model.p(),
        model.q()
    );
    render_matrix(&mut text, "M", system.m());
    render_matrix(&mut text, "C = M^-1", &sol.c);
    render_matrix(&mut text, "C_etaeta", &c_ee);
    render_matrix(&mut text, "(M_etaeta)^-1", &sol.m_etaeta_inv);

    let ml = trace_adjustments(Criterion::Ml, &sol, model);
    let reml = trace_adjustments(Criterion::Reml, &sol, model);
    let _ = writeln!(text, "\ntrace adjustments");
    let _ = writeln!(text, "{:<8} {:>34} {:>34}", "update", "ML", "REML");
    let _ = writeln!(
        text,
        "{:<8} {:>34} {:>34}",
        "tau2",
        format!("tr{{(M_etaeta)^-1}} = {:.10}", ml.tau),
        format!("tr{{C_etaeta}} = {:.10}", reml.tau)
    );
    let _ = writeln!(
        text,
        "{:<8} {:>34} {:>34}",
        "sigma2",
        format!("tr{{Z (M_etaeta)^-1 Z'}} = {:.10}", ml.sigma),
        format!("tr{{[X Z] C [X Z]'}} = {:.10}", reml.sigma)
    );
    let _ = writeln!(
        text,
        "\nschur residual max|schur - C_etaeta| = {residual:.3e}"
    );
    Ok(text)
}
