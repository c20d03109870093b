//! Sweep runner: turns one [`ExperimentConfig`] into replicated estimation
//! records, per-cell summaries and certificate tables.
//!
//! Every random stream is derived from the master seed and the (cell,
//! replicate) coordinates, so a sweep is reproducible record-for-record
//! regardless of thread count or execution order. Failures of individual
//! grid cells (an unsupported operator/dictionary pairing, a certificate
//! that demands more samples than the desk budget) are collected alongside
//! the records instead of aborting the sweep.

pub mod config;

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{
    oc_schedule, projection_error_certificate, required_m_gram, required_m_structure,
    verify_coverage, BoundKind, CoverageSetup, OperatorConstants,
};
use crate::dictionary::{self, Dictionary, MeshSpec, OperatorKind};
use crate::error::{Error, Result};
use crate::estimator::{
    galerkin_matrix, matrix_error, operator_norm, reference_matrices, solve_estimator,
    AssemblyOptions, EstimationResult, IbpMode, MatrixNorm, ReferenceMatrices, ReferenceMethod,
};
use crate::noise::{
    gaussian_admissibility, noisy_oc_schedule, noisy_projection_certificate,
    perturbed_matrices_sampled, NoiseModel,
};
use crate::rng::{mix, purpose};
use crate::systems::{DynamicalSystem, SamplingMeasure};

pub use config::{noise_model_for, ExperimentConfig, Scale};
use config::DictionaryConfig;

/// Largest certificate-driven sample size the coupled sweep will actually
/// run; schedules beyond it are reported as failures, not executed.
pub const COUPLED_M_CAP: u64 = 10_000_000;

// ---------------------------------------------------------------------------
// output rows
// ---------------------------------------------------------------------------

/// One estimator evaluation at one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub system: String,
    pub operator: &'static str,
    pub dictionary: &'static str,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub sigma: f64,
    pub replicate: usize,
    /// `|Ahat - Aref|_2`.
    pub abs_error: f64,
    /// `|Ahat - Aref|_2 / |Aref|_2`.
    pub norm_error: f64,
    pub gram_rank: usize,
    pub trunc_count: usize,
    pub wall_ms: f64,
}

/// Replicate aggregate for one grid cell. `mean_error` is the arithmetic
/// mean of the normalized errors; the interval is a 95% normal interval for
/// the log2 error, exponentiated, so it is centered on the geometric mean
/// and always contains it.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub system: String,
    pub operator: &'static str,
    pub dictionary: &'static str,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub sigma: f64,
    pub replicates: usize,
    pub mean_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Mean error in the Gram-weighted operator norm, normalized by the
    /// reference operator norm (dictionary and coupled sweeps only).
    pub mean_op_error: Option<f64>,
    /// Certificate-derived error level at this cell's sample size, relative
    /// to the reference operator norm and capped at 1 (dictionary and
    /// coupled sweeps only).
    pub bound: Option<f64>,
}

/// A grid cell (or single replicate) that could not be evaluated.
#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub cell: String,
    pub replicate: Option<usize>,
    pub message: String,
}

/// Everything one sweep produced.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub records: Vec<ExperimentRecord>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in rows {
        wtr.serialize(row)?;
    }
    let data = wtr
        .into_inner()
        .map_err(|e| Error::Numerical(format!("csv buffer: {e}")))?;
    String::from_utf8(data).map_err(|e| Error::Numerical(format!("csv utf-8: {e}")))
}

impl SweepOutput {
    pub fn records_csv(&self) -> Result<String> {
        csv_string(&self.records)
    }

    pub fn summary_csv(&self) -> Result<String> {
        csv_string(&self.summary)
    }
}

// ---------------------------------------------------------------------------
// the grid executor
// ---------------------------------------------------------------------------

/// One grid cell, fully prepared: the runner only draws samples and solves.
struct CellPlan {
    /// Stable coordinate the replicate streams are derived from. Must be
    /// unique within a sweep and independent of which cells succeed.
    cell: u64,
    dict_idx: usize,
    m: usize,
    sigma: f64,
    model: NoiseModel,
    a_ref: DMatrix<f64>,
    g_ref: DMatrix<f64>,
    /// `|Aref|` in the Gram-weighted operator norm, when op-errors are on.
    op_norm_ref: Option<f64>,
    bound: Option<f64>,
}

struct SweepContext<'a> {
    sys: &'a DynamicalSystem,
    op: OperatorKind,
    measure: &'a SamplingMeasure,
    system_label: &'a str,
    master: u64,
    replicates: usize,
    want_op_error: bool,
}

enum TaskOutcome {
    Done(Box<ExperimentRecord>, Option<f64>),
    Failed(usize, String),
}

fn cell_label(dict: &Dictionary, m: usize, sigma: f64) -> String {
    format!("{} N={} M={m} sigma={sigma}", dict.family_name(), dict.len())
}

fn execute(
    ctx: &SweepContext<'_>,
    dicts: &[Dictionary],
    plans: &[CellPlan],
    mut failures: Vec<CellFailure>,
) -> SweepOutput {
    let tasks: Vec<(usize, usize)> = plans
        .iter()
        .enumerate()
        .flat_map(|(pi, _)| (0..ctx.replicates).map(move |rep| (pi, rep)))
        .collect();

    // Indexed parallel map keeps the output in task order, so the record
    // stream is already sorted by (cell, replicate).
    let outcomes: Vec<TaskOutcome> = tasks
        .par_iter()
        .map(|&(pi, rep)| {
            let plan = &plans[pi];
            let dict = &dicts[plan.dict_idx];
            let opts = AssemblyOptions {
                koopman_seed: mix(ctx.master, &[plan.cell, rep as u64, 2]),
                ..AssemblyOptions::default()
            };
            let sample_seed = mix(ctx.master, &[plan.cell, rep as u64, 0]);
            let noise_seed = mix(ctx.master, &[plan.cell, rep as u64, 1]);
            let started = Instant::now();
            let run = || -> Result<(ExperimentRecord, Option<f64>)> {
                let gp = perturbed_matrices_sampled(
                    dict,
                    ctx.sys,
                    ctx.op,
                    ctx.measure,
                    plan.m,
                    sample_seed,
                    &plan.model,
                    noise_seed,
                    &opts,
                )?;
                let est = solve_estimator(gp, None);
                let (abs_error, norm_error) =
                    matrix_error(&est.a, &plan.a_ref, MatrixNorm::Spectral)?;
                let op_error = if ctx.want_op_error {
                    let diff = (&est.a - &plan.a_ref).transpose();
                    let raw = operator_norm(&diff, &plan.g_ref)?;
                    Some(match plan.op_norm_ref {
                        Some(denom) if denom > 0.0 => raw / denom,
                        _ => raw,
                    })
                } else {
                    None
                };
                let record = ExperimentRecord {
                    system: ctx.system_label.to_string(),
                    operator: ctx.op.label(),
                    dictionary: dict.family_name(),
                    n: dict.len(),
                    m: plan.m,
                    sigma: plan.sigma,
                    replicate: rep,
                    abs_error,
                    norm_error,
                    gram_rank: est.rank,
                    trunc_count: est.truncated,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                };
                Ok((record, op_error))
            };
            match run() {
                Ok((record, op_error)) => TaskOutcome::Done(Box::new(record), op_error),
                Err(e) => TaskOutcome::Failed(rep, e.to_string()),
            }
        })
        .collect();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut summary = Vec::with_capacity(plans.len());
    let mut cursor = 0usize;
    for (pi, plan) in plans.iter().enumerate() {
        let dict = &dicts[plan.dict_idx];
        let mut errs = Vec::with_capacity(ctx.replicates);
        let mut op_errs = Vec::new();
        for _ in 0..ctx.replicates {
            match &outcomes[cursor] {
                TaskOutcome::Done(record, op_error) => {
                    errs.push(record.norm_error);
                    if let Some(oe) = op_error {
                        op_errs.push(*oe);
                    }
                    records.push(record.as_ref().clone());
                }
                TaskOutcome::Failed(rep, message) => failures.push(CellFailure {
                    cell: cell_label(dict, plan.m, plan.sigma),
                    replicate: Some(*rep),
                    message: message.clone(),
                }),
            }
            cursor += 1;
        }
        if !errs.is_empty() {
            summary.push(summarize(ctx, dict, plan, &errs, &op_errs));
        }
        debug_assert_eq!(cursor, (pi + 1) * ctx.replicates);
    }
    SweepOutput {
        records,
        summary,
        failures,
    }
}

fn summarize(
    ctx: &SweepContext<'_>,
    dict: &Dictionary,
    plan: &CellPlan,
    errs: &[f64],
    op_errs: &[f64],
) -> SummaryRow {
    let r = errs.len() as f64;
    let mean_error = errs.iter().sum::<f64>() / r;
    // Exact replicates produce zero error; clamp so the log statistics stay
    // finite (the interval then collapses onto the clamp, which is fine).
    let logs: Vec<f64> = errs
        .iter()
        .map(|e| e.max(f64::MIN_POSITIVE).log2())
        .collect();
    let mean_log = logs.iter().sum::<f64>() / r;
    let half = if logs.len() >= 2 {
        let var = logs.iter().map(|l| (l - mean_log).powi(2)).sum::<f64>() / (r - 1.0);
        1.96 * (var / r).sqrt()
    } else {
        0.0
    };
    let mean_op_error = if op_errs.is_empty() {
        None
    } else {
        Some(op_errs.iter().sum::<f64>() / op_errs.len() as f64)
    };
    SummaryRow {
        system: ctx.system_label.to_string(),
        operator: ctx.op.label(),
        dictionary: dict.family_name(),
        n: dict.len(),
        m: plan.m,
        sigma: plan.sigma,
        replicates: errs.len(),
        mean_error,
        ci_lo: (mean_log - half).exp2(),
        ci_hi: (mean_log + half).exp2(),
        mean_op_error,
        bound: plan.bound,
    }
}

// ---------------------------------------------------------------------------
// references and certificates
// ---------------------------------------------------------------------------

/// Substitute the derived per-cell seed into a Monte Carlo reference.
fn seeded_method(method: &ReferenceMethod, seed: u64) -> ReferenceMethod {
    match method {
        ReferenceMethod::MonteCarlo { m_ref, .. } => ReferenceMethod::MonteCarlo {
            m_ref: *m_ref,
            seed,
        },
        other => other.clone(),
    }
}

fn build_reference(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    measure: &SamplingMeasure,
    method: &ReferenceMethod,
    master: u64,
    cell: u64,
) -> Result<(ReferenceMatrices, DMatrix<f64>)> {
    let method = seeded_method(method, mix(master, &[purpose::REFERENCE, cell]));
    let refm = reference_matrices(dict, sys, op, measure, IbpMode::Off, &method)?;
    let a_ref = galerkin_matrix(&refm)?;
    Ok((refm, a_ref))
}

/// Evaluation sup-bound for certificates: the configured override, or the
/// larger of the identity and operator-row bounds.
fn certificate_gamma(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    override_gamma: Option<f64>,
) -> Result<f64> {
    if let Some(g) = override_gamma {
        return Ok(g);
    }
    let id = dict.gamma_identity(&sys.domain);
    let rows = dict.gamma_operator(sys, op, true)?;
    Ok(id.max(rows))
}

/// Smallest certified operator-error level reachable with `m_budget`
/// samples at confidence `p`: inverts the sample-size schedule by bisection
/// (it is monotone in epsilon). `None` when even the loosest admissible
/// target is out of reach.
fn certified_epsilon_at(consts: &OperatorConstants, m_budget: u64, p: f64) -> Option<f64> {
    let feasible = |eps: f64| -> bool {
        oc_schedule(consts, eps, p)
            .map(|r| r.required_m <= m_budget)
            .unwrap_or(false)
    };
    let hi = consts.rho() * (1.0 - 1e-9);
    if !feasible(hi) {
        return None;
    }
    let mut lo = hi * 1e-18;
    if feasible(lo) {
        return Some(lo);
    }
    let mut hi = hi;
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Certificate column for one cell: the certified error level at the cell's
/// sample size, normalized by the reference operator norm and capped at 1.
/// Out-of-reach budgets plainly report the cap.
fn bound_column(consts: &OperatorConstants, m: usize, p: f64, op_norm_ref: f64) -> f64 {
    match certified_epsilon_at(consts, m as u64, p) {
        Some(eps) if op_norm_ref > 0.0 => (eps / op_norm_ref).min(1.0),
        _ => 1.0,
    }
}

// ---------------------------------------------------------------------------
// one-shot estimation
// ---------------------------------------------------------------------------

/// A config resolved all the way to a reference: the starting point for the
/// one-shot commands (single estimate, eigenvalue trajectories) and for
/// callers that drive the estimator directly.
pub struct PreparedExperiment {
    pub system: DynamicalSystem,
    pub operator: OperatorKind,
    pub dict: Dictionary,
    pub measure: SamplingMeasure,
    pub reference: ReferenceMatrices,
    pub a_ref: DMatrix<f64>,
}

/// Resolve the config's system, operator, dictionary and reference, seeding
/// a Monte Carlo reference from the master seed.
pub fn prepare(cfg: &ExperimentConfig, scale: Scale) -> Result<PreparedExperiment> {
    let rex = cfg.resolve()?;
    let dict = cfg.dictionary.build(&rex.system)?;
    let measure = SamplingMeasure::uniform(&rex.system.domain);
    let method = cfg.reference_method(scale)?;
    let (reference, a_ref) = build_reference(
        &dict,
        &rex.system,
        rex.operator,
        &measure,
        &method,
        cfg.seed,
        0,
    )?;
    Ok(PreparedExperiment {
        system: rex.system,
        operator: rex.operator,
        dict,
        measure,
        reference,
        a_ref,
    })
}

/// One estimation at sample size `m` under the config's noise model, with
/// the same stream derivation a sweep would use at coordinates
/// (`cell`, replicate 0).
pub fn estimate_once(
    prep: &PreparedExperiment,
    cfg: &ExperimentConfig,
    m: usize,
    cell: u64,
) -> Result<EstimationResult> {
    let opts = AssemblyOptions {
        koopman_seed: mix(cfg.seed, &[cell, 0, 2]),
        ..AssemblyOptions::default()
    };
    let gp = perturbed_matrices_sampled(
        &prep.dict,
        &prep.system,
        prep.operator,
        &prep.measure,
        m,
        mix(cfg.seed, &[cell, 0, 0]),
        &cfg.noise_model(),
        mix(cfg.seed, &[cell, 0, 1]),
        &opts,
    )?;
    Ok(solve_estimator(gp, None))
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

/// Dispatch on the configured sweep kind.
pub fn run_sweep(cfg: &ExperimentConfig, scale: Scale) -> Result<SweepOutput> {
    match cfg.sweep.kind.as_str() {
        "data" => run_data_sweep(cfg, scale),
        "dictionary" => run_dictionary_sweep(cfg, scale),
        "noise" => run_noise_sweep(cfg, scale),
        "coupled" => run_coupled_sweep(cfg, scale),
        other => Err(Error::Config(format!("unknown sweep kind '{other}'"))),
    }
}

/// Error versus sample size at a fixed dictionary.
pub fn run_data_sweep(cfg: &ExperimentConfig, scale: Scale) -> Result<SweepOutput> {
    let rex = cfg.resolve()?;
    let dict = cfg.dictionary.build(&rex.system)?;
    let measure = SamplingMeasure::uniform(&rex.system.domain);
    let method = cfg.reference_method(scale)?;
    let (refm, a_ref) = build_reference(
        &dict,
        &rex.system,
        rex.operator,
        &measure,
        &method,
        cfg.seed,
        0,
    )?;
    let m_grid = cfg.sweep.m.clone().unwrap_or_else(|| scale.default_m_grid());
    let model = cfg.noise_model();
    let plans: Vec<CellPlan> = m_grid
        .iter()
        .enumerate()
        .map(|(mi, &m)| CellPlan {
            cell: mi as u64,
            dict_idx: 0,
            m,
            sigma: cfg.noise.sigma,
            model: model.clone(),
            a_ref: a_ref.clone(),
            g_ref: refm.g.clone(),
            op_norm_ref: None,
            bound: None,
        })
        .collect();
    let ctx = SweepContext {
        sys: &rex.system,
        op: rex.operator,
        measure: &measure,
        system_label: &cfg.system,
        master: cfg.seed,
        replicates: cfg.replicates.unwrap_or_else(|| scale.default_replicates()),
        want_op_error: false,
    };
    Ok(execute(&ctx, std::slice::from_ref(&dict), &plans, Vec::new()))
}

/// Error versus noise level, crossed with the sample-size grid. The zero
/// level reproduces the data sweep exactly: cell coordinates are chosen so
/// the derived streams coincide.
pub fn run_noise_sweep(cfg: &ExperimentConfig, scale: Scale) -> Result<SweepOutput> {
    let rex = cfg.resolve()?;
    let dict = cfg.dictionary.build(&rex.system)?;
    let measure = SamplingMeasure::uniform(&rex.system.domain);
    let method = cfg.reference_method(scale)?;
    let (refm, a_ref) = build_reference(
        &dict,
        &rex.system,
        rex.operator,
        &measure,
        &method,
        cfg.seed,
        0,
    )?;
    let m_grid = cfg.sweep.m.clone().unwrap_or_else(|| scale.default_m_grid());
    let sigmas = cfg.sweep.sigma.clone().expect("validated: noise sweep");
    let mut plans = Vec::with_capacity(sigmas.len() * m_grid.len());
    for (si, &sigma) in sigmas.iter().enumerate() {
        for (mi, &m) in m_grid.iter().enumerate() {
            plans.push(CellPlan {
                cell: ((si as u64) << 32) | mi as u64,
                dict_idx: 0,
                m,
                sigma,
                model: noise_model_for(sigma, cfg.noise.fem_sparse),
                a_ref: a_ref.clone(),
                g_ref: refm.g.clone(),
                op_norm_ref: None,
                bound: None,
            });
        }
    }
    let ctx = SweepContext {
        sys: &rex.system,
        op: rex.operator,
        measure: &measure,
        system_label: &cfg.system,
        master: cfg.seed,
        replicates: cfg.replicates.unwrap_or_else(|| scale.default_replicates()),
        want_op_error: false,
    };
    Ok(execute(&ctx, std::slice::from_ref(&dict), &plans, Vec::new()))
}

/// Instantiate the configured family at one size-parameter value: total
/// degree for monomials, total center count (a d-th power) for Gaussians,
/// interior vertices per axis for hats.
fn dict_for_size(base: &DictionaryConfig, sys: &DynamicalSystem, size: usize) -> Result<Dictionary> {
    match base.family.as_str() {
        "monomials" => Ok(dictionary::monomials(sys.dim, size)),
        "gaussians" => {
            let counts = axis_counts_for_total(size, sys.dim)?;
            config::build_grid_gaussians(sys, &counts, base.theta)
        }
        "fem" => {
            let mesh = MeshSpec::new(&sys.domain, vec![size; sys.dim])?;
            Ok(dictionary::fem_linear(mesh))
        }
        other => Err(Error::Config(format!("unknown dictionary family '{other}'"))),
    }
}

fn axis_counts_for_total(total: usize, dim: usize) -> Result<Vec<usize>> {
    if total == 0 {
        return Err(Error::Config("dictionary size must be >= 1".into()));
    }
    let root = (total as f64).powf(1.0 / dim as f64).round().max(1.0) as usize;
    for cand in [root.saturating_sub(1), root, root + 1] {
        if cand > 0 && cand.pow(dim as u32) == total {
            return Ok(vec![cand; dim]);
        }
    }
    Err(Error::Config(format!(
        "dictionary sweep size {total} is not a {dim}-th power, so it cannot be laid out \
         on an equal grid"
    )))
}

struct SizedCell {
    dict: Dictionary,
    refm: ReferenceMatrices,
    a_ref: DMatrix<f64>,
    op_norm_ref: f64,
    consts: Option<OperatorConstants>,
}

/// Prepare one per-size cell: dictionary, reference, operator norm and (when
/// the sup-bounds are available) the certificate constants.
fn build_sized_cell(
    cfg: &ExperimentConfig,
    sys: &DynamicalSystem,
    op: OperatorKind,
    measure: &SamplingMeasure,
    method: &ReferenceMethod,
    size: usize,
    cell: u64,
    failures: &mut Vec<CellFailure>,
) -> Result<SizedCell> {
    let dict = dict_for_size(&cfg.dictionary, sys, size)?;
    let (refm, a_ref) = build_reference(&dict, sys, op, measure, method, cfg.seed, cell)?;
    let op_norm_ref = operator_norm(&a_ref.transpose(), &refm.g)?;
    let consts = match certificate_gamma(&dict, sys, op, None)
        .and_then(|gamma| OperatorConstants::from_reference(&refm, gamma))
    {
        Ok(c) => Some(c),
        Err(e) => {
            failures.push(CellFailure {
                cell: format!("{} N={}", dict.family_name(), dict.len()),
                replicate: None,
                message: format!("no certificate constants: {e}"),
            });
            None
        }
    };
    Ok(SizedCell {
        dict,
        refm,
        a_ref,
        op_norm_ref,
        consts,
    })
}

/// Error versus dictionary size at a fixed sample size, with the certified
/// error level alongside.
pub fn run_dictionary_sweep(cfg: &ExperimentConfig, scale: Scale) -> Result<SweepOutput> {
    let rex = cfg.resolve()?;
    let measure = SamplingMeasure::uniform(&rex.system.domain);
    let n_list = cfg.sweep.n.clone().expect("validated: dictionary sweep");
    let m_fixed = cfg.sweep.m_fixed.unwrap_or_else(|| scale.default_m_fixed());
    // Dictionary sweeps pin the estimate against a much larger reference
    // run, so the Monte Carlo default is the dedicated (larger) size.
    let method = match cfg.reference_method(scale)? {
        ReferenceMethod::MonteCarlo { .. } if cfg.reference.m_ref.is_none() => {
            ReferenceMethod::MonteCarlo {
                m_ref: scale.default_dict_m_ref(),
                seed: 0,
            }
        }
        other => other,
    };
    let mut failures = Vec::new();
    let mut dicts = Vec::with_capacity(n_list.len());
    let mut plans = Vec::with_capacity(n_list.len());
    for (ni, &size) in n_list.iter().enumerate() {
        let cell = ni as u64;
        let sized = build_sized_cell(
            cfg,
            &rex.system,
            rex.operator,
            &measure,
            &method,
            size,
            cell,
            &mut failures,
        )?;
        let bound = sized
            .consts
            .as_ref()
            .map(|c| bound_column(c, m_fixed, cfg.sweep.p, sized.op_norm_ref));
        plans.push(CellPlan {
            cell,
            dict_idx: dicts.len(),
            m: m_fixed,
            sigma: cfg.noise.sigma,
            model: cfg.noise_model(),
            a_ref: sized.a_ref,
            g_ref: sized.refm.g.clone(),
            op_norm_ref: Some(sized.op_norm_ref),
            bound,
        });
        dicts.push(sized.dict);
    }
    let ctx = SweepContext {
        sys: &rex.system,
        op: rex.operator,
        measure: &measure,
        system_label: &cfg.system,
        master: cfg.seed,
        replicates: cfg.replicates.unwrap_or_else(|| scale.default_replicates()),
        want_op_error: true,
    };
    Ok(execute(&ctx, &dicts, &plans, failures))
}

/// Dictionary sweep where each size runs at the sample size its certificate
/// demands for a fixed operator-error target.
pub fn run_coupled_sweep(cfg: &ExperimentConfig, scale: Scale) -> Result<SweepOutput> {
    let rex = cfg.resolve()?;
    let measure = SamplingMeasure::uniform(&rex.system.domain);
    let n_list = cfg.sweep.n.clone().expect("validated: coupled sweep");
    let epsilon = cfg.sweep.epsilon.expect("validated: coupled sweep");
    let method = match cfg.reference_method(scale)? {
        ReferenceMethod::MonteCarlo { .. } if cfg.reference.m_ref.is_none() => {
            ReferenceMethod::MonteCarlo {
                m_ref: scale.default_dict_m_ref(),
                seed: 0,
            }
        }
        other => other,
    };
    let mut failures = Vec::new();
    let mut dicts = Vec::with_capacity(n_list.len());
    let mut plans = Vec::with_capacity(n_list.len());
    for (ni, &size) in n_list.iter().enumerate() {
        let cell = ni as u64;
        let sized = build_sized_cell(
            cfg,
            &rex.system,
            rex.operator,
            &measure,
            &method,
            size,
            cell,
            &mut failures,
        )?;
        let label = format!("{} N={}", sized.dict.family_name(), sized.dict.len());
        let Some(consts) = sized.consts.as_ref() else {
            continue;
        };
        let schedule = match oc_schedule(consts, epsilon, cfg.sweep.p) {
            Ok(report) => report,
            Err(e) => {
                failures.push(CellFailure {
                    cell: label,
                    replicate: None,
                    message: format!("no schedule at epsilon = {epsilon}: {e}"),
                });
                continue;
            }
        };
        if schedule.required_m > COUPLED_M_CAP {
            failures.push(CellFailure {
                cell: label,
                replicate: None,
                message: format!(
                    "certified sample size {} exceeds the execution cap {COUPLED_M_CAP}",
                    schedule.required_m
                ),
            });
            continue;
        }
        let bound = if sized.op_norm_ref > 0.0 {
            (epsilon / sized.op_norm_ref).min(1.0)
        } else {
            1.0
        };
        plans.push(CellPlan {
            cell,
            dict_idx: dicts.len(),
            m: schedule.required_m as usize,
            sigma: cfg.noise.sigma,
            model: cfg.noise_model(),
            a_ref: sized.a_ref,
            g_ref: sized.refm.g.clone(),
            op_norm_ref: Some(sized.op_norm_ref),
            bound: Some(bound),
        });
        dicts.push(sized.dict);
    }
    let ctx = SweepContext {
        sys: &rex.system,
        op: rex.operator,
        measure: &measure,
        system_label: &cfg.system,
        master: cfg.seed,
        replicates: cfg.replicates.unwrap_or_else(|| scale.default_replicates()),
        want_op_error: true,
    };
    Ok(execute(&ctx, &dicts, &plans, failures))
}

// ---------------------------------------------------------------------------
// certificate tables
// ---------------------------------------------------------------------------

/// One certificate evaluated at one deviation level.
#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub kind: &'static str,
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub p: f64,
    pub required_m: Option<u64>,
    pub radius: Option<f64>,
    /// Fraction of re-runs in which the certified event held (only when
    /// coverage trials are configured).
    pub coverage: Option<f64>,
    /// Why the certificate does not apply at this level, when it does not.
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BoundTable {
    pub rows: Vec<BoundRow>,
}

impl BoundTable {
    pub fn to_csv(&self) -> Result<String> {
        csv_string(&self.rows)
    }
}

/// Turn a certificate result into a row, flagging validity and overflow
/// failures instead of aborting the table.
fn certificate_row(
    kind: BoundKind,
    delta: f64,
    p: f64,
    outcome: Result<(Option<f64>, u64, f64)>,
) -> Result<BoundRow> {
    match outcome {
        Ok((epsilon, required_m, radius)) => Ok(BoundRow {
            kind: kind.label(),
            delta,
            epsilon,
            p,
            required_m: Some(required_m),
            radius: Some(radius),
            coverage: None,
            note: None,
        }),
        Err(Error::Validity(msg)) | Err(Error::Numerical(msg)) => Ok(BoundRow {
            kind: kind.label(),
            delta,
            epsilon: None,
            p,
            required_m: None,
            radius: None,
            coverage: None,
            note: Some(msg),
        }),
        Err(other) => Err(other),
    }
}

/// Evaluate every certificate over the configured deviation grid, with
/// noisy-data counterparts when a noise level is set and empirical coverage
/// frequencies when trials are requested.
pub fn run_bound_report(cfg: &ExperimentConfig, scale: Scale) -> Result<BoundTable> {
    let bounds_cfg = cfg
        .bounds
        .as_ref()
        .ok_or_else(|| Error::Config("bound report needs a [bounds] section".into()))?;
    let rex = cfg.resolve()?;
    let dict = cfg.dictionary.build(&rex.system)?;
    let measure = SamplingMeasure::uniform(&rex.system.domain);
    let method = cfg.reference_method(scale)?;
    let (refm, _) = build_reference(
        &dict,
        &rex.system,
        rex.operator,
        &measure,
        &method,
        cfg.seed,
        0,
    )?;
    let gamma = certificate_gamma(&dict, &rex.system, rex.operator, bounds_cfg.gamma)?;
    let consts = OperatorConstants::from_reference(&refm, gamma)?;
    let p = bounds_cfg.p;
    let n = consts.n;

    let mut rows = Vec::new();
    for &delta in &bounds_cfg.delta {
        let gram = required_m_gram(
            n,
            delta,
            p,
            consts.gamma,
            consts.norm_g,
            Some(consts.norm_g_inv),
        )
        .map(|m| {
            (
                None,
                m,
                2.0 * consts.norm_g_inv * consts.norm_g_inv * delta,
            )
        });
        rows.push(certificate_row(BoundKind::LemmaGram, delta, p, gram)?);

        let structure =
            required_m_structure(n, delta, p, consts.gamma, consts.norm_g, consts.norm_t)
                .map(|m| (None, m, delta));
        rows.push(certificate_row(
            BoundKind::LemmaStructure,
            delta,
            p,
            structure,
        )?);

        let projection = projection_error_certificate(&consts, delta, p)
            .map(|r| (r.epsilon, r.required_m, r.radius));
        rows.push(certificate_row(
            BoundKind::PropProjection,
            delta,
            p,
            projection,
        )?);

        // The schedule stated for the deviation's own operator radius: the
        // two rows agree on M and differ only in how the target is phrased.
        let epsilon = 2.0 * consts.rho() * consts.norm_g_inv * delta;
        let oc = oc_schedule(&consts, epsilon, p).map(|r| (r.epsilon, r.required_m, r.radius));
        rows.push(certificate_row(
            BoundKind::ThmOrderConvergence,
            delta,
            p,
            oc,
        )?);

        if bounds_cfg.sigma > 0.0 {
            let (gamma_tilde, p_tilde) = gaussian_admissibility(n, bounds_cfg.sigma, consts.gamma);
            let noisy = noisy_projection_certificate(&consts, delta, p, p_tilde, gamma_tilde)
                .map(|r| (r.epsilon, r.required_m, r.radius));
            rows.push(certificate_row(BoundKind::PropNoise, delta, p, noisy)?);
            let noisy_oc = noisy_oc_schedule(&consts, epsilon, p, p_tilde, gamma_tilde)
                .map(|r| (r.epsilon, r.required_m, r.radius));
            rows.push(certificate_row(
                BoundKind::ThmOrderConvergenceNoise,
                delta,
                p,
                noisy_oc,
            )?);
        }
    }

    if bounds_cfg.trials > 0 {
        let setup = CoverageSetup {
            dict: &dict,
            sys: &rex.system,
            op: rex.operator,
            measure: &measure,
            reference: &refm,
        };
        for (ri, row) in rows.iter_mut().enumerate() {
            if row.required_m.is_none() {
                continue;
            }
            let (kind, level) = match row.kind {
                k if k == BoundKind::LemmaGram.label() => (BoundKind::LemmaGram, row.delta),
                k if k == BoundKind::LemmaStructure.label() => {
                    (BoundKind::LemmaStructure, row.delta)
                }
                k if k == BoundKind::PropProjection.label() => {
                    (BoundKind::PropProjection, row.delta)
                }
                k if k == BoundKind::ThmOrderConvergence.label() => (
                    BoundKind::ThmOrderConvergence,
                    row.epsilon.expect("schedule rows carry epsilon"),
                ),
                // Noisy kinds are verified by the noise module's own tests.
                _ => continue,
            };
            row.coverage = Some(verify_coverage(
                kind,
                &setup,
                &consts,
                level,
                p,
                bounds_cfg.trials,
                mix(cfg.seed, &[purpose::COVERAGE, ri as u64]),
                None,
            )?);
        }
    }

    Ok(BoundTable { rows })
}

// ---------------------------------------------------------------------------
// slope fits
// ---------------------------------------------------------------------------

/// Least-squares slope of `log2 error` against `log2 M`, with its standard
/// error. This is the convergence-order diagnostic: Monte Carlo assembly
/// error decays like `M^(-1/2)`, so data sweeps should fit near -0.5.
#[derive(Debug, Clone, Copy)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
}

pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "slope fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(m, e)| !(m > 0.0) || !(e > 0.0)) {
        return Err(Error::InvalidArgument(
            "slope fit needs positive sample sizes and errors".into(),
        ));
    }
    let xs: Vec<f64> = points.iter().map(|&(m, _)| m.log2()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, e)| e.log2()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "slope fit needs at least two distinct sample sizes".into(),
        ));
    }
    let sxy = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>();
    let slope = sxy / sxx;
    let rss = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = my + slope * (x - mx);
            (y - fit).powi(2)
        })
        .sum::<f64>();
    let stderr = if points.len() > 2 {
        (rss / (k - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit { slope, stderr })
}

/// Slope fit over a summary's mean errors, restricted to a sample-size
/// window (`m_min..=m_max`) and one noise level.
pub fn summary_slope(
    rows: &[SummaryRow],
    sigma: f64,
    m_min: usize,
    m_max: usize,
) -> Result<SlopeFit> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.sigma == sigma && r.m >= m_min && r.m <= m_max)
        .map(|r| (r.m as f64, r.mean_error))
        .collect();
    fit_slope(&points)
}
