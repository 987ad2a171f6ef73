//! Newton correction of an approximate solution to an exact discrete
//! solution inside the Coulomb slice of a fixed reference field.
//!
//! Each step solves the assembled linearization in the minimum-norm
//! least-squares sense (CGLS from zero), so steps are orthogonal to the
//! near-kernel and play the role of the right inverse. The unknowns include
//! the values on the truncation boundary, which makes the linearization onto.
//! The ratio of step norm to residual norm is the measured right-inverse
//! bound `c`.

use crate::field::{coulomb_fix, energy, FieldDeformation, FieldError, GaugedField, CHART_RADIUS};
use crate::grid::{GluingGeometry, WeightFamily, WeightSpec};
use crate::linearized::{assemble_free_boundary, node_magnitudes, residual, ActiveNodes, LinearError};
use crate::norms::{eps_mixed_norm, linear_fit, lp_weighted, mixed_norm, NormError};
use crate::preglue::{preglue_with, prepare_components, ApproximateSolution, PreglueError, StableConfig};
use crate::reduce::max_abs;
use crate::sparse::{cgls, CsrMatrix, SolverError};
use crate::taubes::{solve_taubes, TaubesError, VortexData};
use crate::target_model::{norm_sqr, TargetModel};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

/// Slack on the step-norm contract `|x - x0| <= 2 c |F(x0)|`.
pub const CONTRACT_SLACK: f64 = 0.2;

const CGLS_MAX_ITER: usize = 50_000;
const MAX_BACKTRACK: usize = 12;

#[derive(Debug, Error)]
pub enum NewtonError {
    #[error("no convergence after {} iterations; residual trace {:?}", .0.iterates.len(), .0.residuals())]
    MaxIterExceeded(Box<NewtonTrace>),
    #[error("deformation left the chart: sup |u - u_approx| = {0}")]
    ChartExit(f64),
    #[error("no residual decrease along the Newton direction after {} iterations; residual trace {:?}", .0.iterates.len(), .0.residuals())]
    Stalled(Box<NewtonTrace>),
    #[error("correction {correction:e} exceeds 2 (1 + slack) c |F0| = {bound:e}")]
    ContractViolated { correction: f64, bound: f64 },
    #[error("tolerance {0} must be positive")]
    BadTolerance(f64),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Preglue(#[from] PreglueError),
    #[error(transparent)]
    Taubes(#[from] TaubesError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the linearization at the starting field for every step.
    pub frozen_jacobian: bool,
}

impl NewtonOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter, frozen_jacobian: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonIterate {
    /// Weighted `L^p` norm of the residual before the step.
    pub residual_norm: f64,
    pub residual_sup: f64,
    /// Mixed Sobolev norm of the accepted step.
    pub step_norm: f64,
    pub damping: f64,
    pub linear_iterations: usize,
    /// Sup of the Coulomb rows after the step.
    pub coulomb_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonTrace {
    pub iterates: Vec<NewtonIterate>,
    pub converged: bool,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub final_residual_sup: f64,
    /// Mixed Sobolev norm of `x - x0`.
    pub correction_norm: f64,
    /// Largest `step_norm / residual_norm` over the iterates.
    pub right_inverse_bound: f64,
    /// Largest ratio of consecutive residual norms after the first step.
    pub worst_contraction: f64,
}

impl NewtonTrace {
    pub fn residuals(&self) -> Vec<f64> {
        self.iterates.iter().map(|s| s.residual_norm).chain([self.final_residual]).collect()
    }

    /// `correction_norm <= 2 (1 + slack) c |F0|`.
    pub fn contract_holds(&self) -> bool {
        self.correction_norm <= contract_bound(self)
    }
}

fn contract_bound(t: &NewtonTrace) -> f64 {
    2.0 * (1.0 + CONTRACT_SLACK) * t.right_inverse_bound * t.initial_residual
}

/// Mixed Sobolev norm matching the weight family.
pub fn deformation_norm(d: &FieldDeformation, base: &GaugedField, model: &TargetModel, spec: &WeightSpec) -> Result<f64, NormError> {
    Ok(match spec.family {
        WeightFamily::RhoA => mixed_norm(d, base, model, spec).value,
        _ => eps_mixed_norm(d, base, model, spec)?.value,
    })
}

struct Evaluation {
    rows: Vec<f64>,
    norm: f64,
    sup: f64,
}

fn evaluate(v: &GaugedField, reference: &GaugedField, model: &TargetModel, spec: &WeightSpec, act: &ActiveNodes) -> Result<Evaluation, NewtonError> {
    let rows = residual(v, reference, model)?;
    let mags = node_magnitudes(act, v.n, v.nodes(), &rows);
    Ok(Evaluation { norm: lp_weighted(&v.grid, &mags, spec), sup: max_abs(&rows), rows })
}

fn coulomb_sup(rows: &[f64], n: usize) -> f64 {
    let w = 2 * n + 2;
    rows.chunks(w).map(|c| c[2 * n].abs()).fold(0.0, f64::max)
}

fn chart_distance(v: &GaugedField, reference: &GaugedField) -> f64 {
    (0..v.nodes())
        .map(|k| {
            let d: Vec<_> = v.u_at(k).iter().zip(reference.u_at(k)).map(|(a, b)| a - b).collect();
            norm_sqr(&d).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Newton iteration from `start` with the Coulomb condition relative to
/// `reference`. Converged means both the weighted and the sup norm of the
/// residual are below `opts.tol`.
pub fn correct_field(
    start: &GaugedField,
    reference: &GaugedField,
    model: &TargetModel,
    spec: &WeightSpec,
    opts: &NewtonOptions,
) -> Result<(GaugedField, NewtonTrace), NewtonError> {
    if !(opts.tol > 0.0) {
        return Err(NewtonError::BadTolerance(opts.tol));
    }
    let act = ActiveNodes::of(&start.grid);
    let n = start.n;
    let mut v = start.clone();
    let mut ev = evaluate(&v, reference, model, spec, &act)?;
    let initial = ev.norm;
    let mut iterates = Vec::new();
    let mut frozen: Option<(CsrMatrix, CsrMatrix)> = None;
    let mut bound: f64 = 0.0;
    while ev.norm.max(ev.sup) >= opts.tol {
        if iterates.len() == opts.max_iter {
            let trace = finish(start, &v, model, spec, iterates, false, initial, &ev, bound)?;
            return Err(NewtonError::MaxIterExceeded(Box::new(trace)));
        }
        let (a, at) = match (&frozen, opts.frozen_jacobian) {
            (Some(m), true) => m.clone(),
            _ => {
                let a = assemble_free_boundary(&v, reference, model)?;
                let at = a.transpose();
                let pair = (a, at);
                if opts.frozen_jacobian {
                    frozen = Some(pair.clone());
                }
                pair
            }
        };
        let rhs: Vec<f64> = ev.rows.iter().map(|r| -r).collect();
        // enough linear accuracy to land below tol, never worse than 1e-3
        let bmax = max_abs(&rhs);
        let lin_tol = (0.05 * opts.tol / bmax).clamp(1e-14, 1e-3);
        let (x, stats) = match cgls(&a, &at, &rhs, lin_tol, CGLS_MAX_ITER) {
            Ok(r) => r,
            Err(SolverError::NotConverged { .. }) if !iterates.is_empty() => {
                let trace = finish(start, &v, model, spec, iterates, false, initial, &ev, bound)?;
                return Err(NewtonError::Stalled(Box::new(trace)));
            }
            Err(e) => return Err(e.into()),
        };
        let step = FieldDeformation::unpack(n, &x);
        let step_norm_full = deformation_norm(&step, &v, model, spec)?;
        let mut damping = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial = step.scaled(damping).apply(&v);
            let dist = chart_distance(&trial, reference);
            if dist > CHART_RADIUS {
                if damping == 1.0 && iterates.is_empty() {
                    return Err(NewtonError::ChartExit(dist));
                }
                damping *= 0.5;
                continue;
            }
            let te = evaluate(&trial, reference, model, spec, &act)?;
            if te.norm.max(te.sup) < ev.norm.max(ev.sup) {
                accepted = Some((trial, te));
                break;
            }
            damping *= 0.5;
        }
        let Some((trial, te)) = accepted else {
            let dist = chart_distance(&step.apply(&v), reference);
            if dist > CHART_RADIUS {
                return Err(NewtonError::ChartExit(dist));
            }
            let trace = finish(start, &v, model, spec, iterates, false, initial, &ev, bound)?;
            return Err(NewtonError::Stalled(Box::new(trace)));
        };
        if ev.norm > 0.0 {
            bound = bound.max(step_norm_full / ev.norm);
        }
        iterates.push(NewtonIterate {
            residual_norm: ev.norm,
            residual_sup: ev.sup,
            step_norm: damping * step_norm_full,
            damping,
            linear_iterations: stats.iterations,
            coulomb_sup: coulomb_sup(&te.rows, n),
        });
        v = trial;
        ev = te;
    }
    let trace = finish(start, &v, model, spec, iterates, true, initial, &ev, bound)?;
    if !trace.iterates.is_empty() && !trace.contract_holds() {
        return Err(NewtonError::ContractViolated { correction: trace.correction_norm, bound: contract_bound(&trace) });
    }
    Ok((v, trace))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    start: &GaugedField,
    v: &GaugedField,
    model: &TargetModel,
    spec: &WeightSpec,
    iterates: Vec<NewtonIterate>,
    converged: bool,
    initial: f64,
    ev: &Evaluation,
    bound: f64,
) -> Result<NewtonTrace, NewtonError> {
    let d = FieldDeformation::between(v, start)?;
    let correction_norm = if iterates.is_empty() { 0.0 } else { deformation_norm(&d, start, model, spec)? };
    let res: Vec<f64> = iterates.iter().map(|s| s.residual_norm).chain([ev.norm]).collect();
    let worst_contraction = res.windows(2).skip(1).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    Ok(NewtonTrace {
        iterates,
        converged,
        initial_residual: initial,
        final_residual: ev.norm,
        final_residual_sup: ev.sup,
        correction_norm,
        right_inverse_bound: bound,
        worst_contraction,
    })
}

/// Corrects an approximate solution, which is also the Coulomb reference.
pub fn correct(
    approx: &ApproximateSolution,
    spec: &WeightSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(GaugedField, NewtonTrace), NewtonError> {
    let model = TargetModel::standard(approx.field.n);
    correct_field(&approx.field, &approx.field, &model, spec, &NewtonOptions::new(tol, max_iter))
}

// ---------------------------------------------------------------- end-to-end gluing

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlueReport {
    pub epsilon: f64,
    pub preglue_error: f64,
    /// Slope of `log(preglue_error)` against `log(sqrt(eps))` when several
    /// parameters were run.
    pub gamma_slope: Option<f64>,
    pub iterations: usize,
    pub correction_norm: f64,
    pub c_measured: f64,
    pub energy_total: f64,
    pub energy_components: Vec<f64>,
    pub matching_distances: Vec<f64>,
    /// `|E(glued) - sum of component energies| / E(glued)`.
    pub energy_defect: f64,
    pub marker_evaluations: Vec<Vec<[f64; 2]>>,
    pub trace: NewtonTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct GlueSettings {
    pub b: f64,
    pub e: f64,
    pub p: f64,
    pub spacing: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub frozen_jacobian: bool,
}

/// Standalone component radius covering the inner cut-off with room for the
/// decay of the tail.
pub fn component_radius(geometry_min_eps: f64, b: f64) -> f64 {
    (1.0 / (b * geometry_min_eps.sqrt()) + 6.0).max(12.0)
}

fn glue_one(
    config: &StableConfig,
    comps: &[crate::preglue::Component],
    eps: f64,
    settings: &GlueSettings,
) -> Result<(GaugedField, GlueReport, ApproximateSolution), NewtonError> {
    let markers: Vec<_> = config.vortices.iter().map(|v| v.marker).collect();
    let geometry = GluingGeometry::new(settings.b, settings.e, eps, &markers).map_err(PreglueError::from)?;
    let approx = preglue_with(config, comps, &geometry, settings.spacing)?;
    let spec = approx.weight_spec(settings.p);
    let preglue_error = crate::preglue::pregluing_error(&approx, &spec)?;
    let model = TargetModel::standard(approx.field.n);
    let opts = NewtonOptions { tol: settings.tol, max_iter: settings.max_iter, frozen_jacobian: settings.frozen_jacobian };
    let (field, trace) = correct_field(&approx.field, &approx.field, &model, &spec, &opts)?;
    let energy_total = energy(&field, &model, None).total;
    let energy_components: Vec<f64> = comps.iter().map(|c| c.energy).collect();
    let disk_energy = crate::preglue::disk_energy(config, &approx)?;
    let sum: f64 = energy_components.iter().sum::<f64>() + disk_energy;
    let energy_defect = if energy_total != 0.0 { (energy_total - sum).abs() / energy_total.abs() } else { (energy_total - sum).abs() };
    let report = GlueReport {
        epsilon: eps,
        preglue_error,
        gamma_slope: None,
        iterations: trace.iterates.len(),
        correction_norm: trace.correction_norm,
        c_measured: trace.right_inverse_bound,
        energy_total,
        energy_components,
        matching_distances: comps.iter().map(|c| c.matching_distance).collect(),
        energy_defect,
        marker_evaluations: approx
            .marker_values
            .iter()
            .map(|x| x.iter().map(|c| [c.re, c.im]).collect())
            .collect(),
        trace,
    };
    Ok((field, report, approx))
}

/// Pregluing followed by Newton correction at one gluing parameter.
pub fn glue(config: &StableConfig, eps: f64, settings: &GlueSettings) -> Result<(GaugedField, GlueReport, ApproximateSolution), NewtonError> {
    let comps = prepare_components(config, settings.spacing, component_radius(eps.min(1.0), settings.b), settings.tol)?;
    glue_one(config, &comps, eps, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub preglue_error: f64,
    /// Fitted slope over all rows so far; `None` on the first row.
    pub gamma_slope: Option<f64>,
    pub iterations: usize,
    pub correction_norm: f64,
    pub c_measured: f64,
    pub energy_defect: f64,
}

impl ConvergenceRow {
    pub const CSV_HEADER: &'static str = "epsilon,preglue_error,gamma_slope,iterations,correction_norm,c_measured,energy_defect";

    pub fn csv_row(&self) -> String {
        let slope = self.gamma_slope.map(|s| format!("{s:.16e}")).unwrap_or_default();
        format!(
            "{:.16e},{:.16e},{},{},{:.16e},{:.16e},{:.16e}",
            self.epsilon, self.preglue_error, slope, self.iterations, self.correction_norm, self.c_measured, self.energy_defect
        )
    }
}

/// Runs [`glue`] along a decreasing list of gluing parameters, sharing the
/// standalone components. `each` sees every glued field and report.
pub fn convergence_table<F>(
    config: &StableConfig,
    eps_list: &[f64],
    settings: &GlueSettings,
    mut each: F,
) -> Result<Vec<ConvergenceRow>, NewtonError>
where
    F: FnMut(&GaugedField, &GlueReport, &ApproximateSolution),
{
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(PreglueError::Invalid("epsilon list must be nonempty and strictly decreasing".into()).into());
    }
    let min_eps = eps_list.last().copied().unwrap_or(1.0).min(1.0);
    let comps = prepare_components(config, settings.spacing, component_radius(min_eps, settings.b), settings.tol)?;
    let mut rows = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &eps in eps_list {
        let (field, mut report, approx) = glue_one(config, &comps, eps, settings)?;
        xs.push(eps.sqrt().ln());
        ys.push(report.preglue_error.ln());
        let slope = (xs.len() > 1).then(|| linear_fit(&xs, &ys).0);
        report.gamma_slope = slope;
        each(&field, &report, &approx);
        rows.push(ConvergenceRow {
            epsilon: eps,
            preglue_error: report.preglue_error,
            gamma_slope: slope,
            iterations: report.iterations,
            correction_norm: report.correction_norm,
            c_measured: report.c_measured,
            energy_defect: report.energy_defect,
        });
    }
    Ok(rows)
}

/// Glued solution against a direct solve with prescribed zeros.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub zeros: Vec<[f64; 2]>,
    /// Sup distance after phase and Coulomb alignment.
    pub sup_distance: f64,
    pub oracle_iterations: usize,
    pub oracle_residual: f64,
    /// First-order estimate of each zero of the glued field minus the
    /// prescribed zero.
    pub zero_offsets: Vec<[f64; 2]>,
}

/// First-order location of the zero of `u` (first component) closest to the
/// node nearest `near`, from the value and central derivatives there.
pub fn locate_zero(field: &GaugedField, near: Complex64) -> Complex64 {
    let g = &field.grid;
    let n = field.n;
    let (i, j) = g.ij(g.nearest_node(near));
    let (i, j) = (i.clamp(1, g.nx - 2), j.clamp(1, g.ny - 2));
    let k = g.index(i, j);
    let h2 = 2.0 * g.spacing;
    let du_s = (field.u[(k + 1) * n] - field.u[(k - 1) * n]) / h2;
    let du_t = (field.u[(k + g.nx) * n] - field.u[(k - g.nx) * n]) / h2;
    let r = -field.u[k * n];
    let det = du_s.re * du_t.im - du_s.im * du_t.re;
    if det == 0.0 {
        return g.point(k);
    }
    let ds = (r.re * du_t.im - r.im * du_t.re) / det;
    let dt = (du_s.re * r.im - du_s.im * r.re) / det;
    g.point(k) + Complex64::new(ds, dt)
}

/// Solves the scalar equation with the given zeros on the grid of `glued`,
/// corrects the result into the same discrete system, rotates it to the best
/// constant phase, puts it in the Coulomb gauge relative to `glued` and
/// measures the sup distance.
pub fn oracle_comparison(
    glued: &GaugedField,
    zeros: &[Complex64],
    spec: &WeightSpec,
    opts: &NewtonOptions,
) -> Result<OracleComparison, NewtonError> {
    let data = VortexData::from_zeros(glued.grid.tag, zeros)?;
    let direct = solve_taubes(&data, &glued.grid, 0.1 * opts.tol)?;
    let model = TargetModel::standard(glued.n);
    let (exact, trace) = correct_field(&direct.field, &direct.field, &model, spec, opts)?;
    let overlap: Complex64 = exact.u.iter().zip(&glued.u).map(|(a, b)| a.conj() * b).sum();
    let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { Complex64::new(1.0, 0.0) };
    let aligned = coulomb_fix(&exact.rotated(phase), glued, &model)?;
    Ok(OracleComparison {
        zeros: zeros.iter().map(|z| [z.re, z.im]).collect(),
        sup_distance: aligned.sup_distance(glued),
        oracle_iterations: trace.iterates.len(),
        oracle_residual: trace.final_residual_sup,
        zero_offsets: zeros
            .iter()
            .map(|&z| {
                let d = locate_zero(glued, z) - z;
                [d.re, d.im]
            })
            .collect(),
    })
}
