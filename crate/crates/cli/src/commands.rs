//! Experiment commands. Each verb first turns the config into a [`Plan`] of
//! validated inputs, so every invariant is checked before the first solve.

use crate::config::{Degeneration, ExperimentConfig};
use crate::error::CliError;
use crate::output::{num, row, OutDir};
use crate::svg::{self, Axes, Series};
use clap::ValueEnum;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use vortex_core::field::{energy, write_snapshot, GaugedField};
use vortex_core::grid::{GluingGeometry, Grid, WeightSpec};
use vortex_core::linearized::{assemble, kernel_dimension, random_deformation};
use vortex_core::newton::{convergence_table, glue, oracle_comparison, ConvergenceRow, GlueReport, GlueSettings, NewtonOptions};
use vortex_core::norms::{aux_norm, disk_norm, mixed_norm, NormReport};
use vortex_core::preglue::{cluster_energies, preglue, pregluing_error, residual_magnitudes, StableConfig};
use vortex_core::taubes::{rank_two_sweep, separation_sweep, solve_taubes, vortex_flux, VortexData};
use vortex_core::target_model::TargetModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Verb {
    Solve,
    Degenerate,
    Preglue,
    Glue,
    GlueSweep,
    Spectrum,
    Norms,
}

pub enum Plan {
    Solve { data: VortexData, grid: Grid, tol: f64 },
    Degenerate { example: Degeneration, values: Vec<f64>, spacing: f64, tol: f64 },
    Preglue { stable: StableConfig, geometry: GluingGeometry, settings: GlueSettings },
    Glue { stable: StableConfig, eps: f64, settings: GlueSettings, oracle: Option<Vec<Complex64>> },
    GlueSweep { stable: StableConfig, eps: Vec<f64>, settings: GlueSettings },
    Spectrum { data: VortexData, grid: Grid, tol: f64, spec: WeightSpec, gap: f64 },
    Norms { data: VortexData, grid: Grid, tol: f64, p: f64, eps: f64, samples: usize, seed: u64 },
}

pub fn plan(verb: Verb, cfg: &ExperimentConfig) -> Result<Plan, CliError> {
    Ok(match verb {
        Verb::Solve => {
            let (data, tol) = cfg.vortex()?;
            Plan::Solve { data, grid: cfg.grid()?, tol }
        }
        Verb::Degenerate => {
            let d = cfg.degenerate()?;
            for v in &d.values {
                let ok = match d.example {
                    Degeneration::Separation => *v >= 0.0 && v.is_finite(),
                    Degeneration::RankTwo => *v > 0.0 && v.is_finite(),
                };
                if !ok {
                    return Err(CliError::Validation(format!("degenerate.values: {v} is out of range for {:?}", d.example)));
                }
            }
            Plan::Degenerate { example: d.example, values: d.values.clone(), spacing: cfg.grid.spacing, tol: d.tol }
        }
        Verb::Preglue => {
            let stable = cfg.stable_config()?;
            let settings = cfg.glue_settings()?;
            let eps = cfg.epsilon()?;
            let markers: Vec<Complex64> = stable.vortices.iter().map(|v| v.marker).collect();
            let geometry = GluingGeometry::new(settings.b, settings.e, eps, &markers)?;
            Plan::Preglue { stable, geometry, settings }
        }
        Verb::Glue => {
            let stable = cfg.stable_config()?;
            Plan::Glue { settings: cfg.glue_settings()?, eps: cfg.epsilon()?, oracle: cfg.oracle_zeros()?, stable }
        }
        Verb::GlueSweep => {
            let stable = cfg.stable_config()?;
            Plan::GlueSweep { settings: cfg.glue_settings()?, eps: cfg.epsilons()?, stable }
        }
        Verb::Spectrum => {
            let (data, tol) = cfg.vortex()?;
            let gap = cfg.spectrum.as_ref().map_or(10.0, |s| s.gap_factor);
            if !(gap >= 1.0) {
                return Err(CliError::Validation(format!("spectrum.gap_factor = {gap} must be at least 1")));
            }
            Plan::Spectrum { data, grid: cfg.grid()?, tol, spec: cfg.weight_spec()?, gap }
        }
        Verb::Norms => {
            let (data, tol) = cfg.vortex()?;
            let (eps, samples) = cfg.norms.as_ref().map_or((0.1, 1), |s| (s.epsilon, s.samples));
            if !(eps > 0.0) || samples == 0 {
                return Err(CliError::Validation("norms.epsilon must be positive and norms.samples nonzero".into()));
            }
            cfg.weight_spec()?;
            Plan::Norms { data, grid: cfg.grid()?, tol, p: cfg.weights.p, eps, samples, seed: cfg.seed }
        }
    })
}

/// Timestamp comment for SVG headers; absent under `--deterministic`.
fn stamp(out: &OutDir) -> Option<String> {
    if out.deterministic {
        return None;
    }
    let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    Some(format!("at unix time {secs}"))
}

fn extent(g: &Grid) -> [f64; 4] {
    [g.s(0), g.s(g.nx - 1), g.t(0), g.t(g.ny - 1)]
}

fn snapshot(field: &GaugedField, extra: Option<&[u8]>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_snapshot(field, &mut buf, extra)?;
    Ok(buf)
}

/// Heatmaps of `|u|`, `log10` of the energy density and the moment map.
fn field_plots(out: &OutDir, field: &GaugedField, prefix: &str) -> Result<(), CliError> {
    let g = &field.grid;
    let model = TargetModel::standard(field.n);
    let st = stamp(out);
    let abs_u = field.norm_u();
    out.write(&format!("{prefix}abs_u.svg"), svg::heatmap("|u|", g.nx, g.ny, &abs_u, extent(g), st.as_deref()).as_bytes())?;
    let density = energy(field, &model, None).density;
    let peak = density.iter().copied().fold(0.0, f64::max);
    let floor = if peak > 0.0 { peak * 1e-16 } else { f64::MIN_POSITIVE };
    let logd: Vec<f64> = density.iter().map(|e| e.max(floor).log10()).collect();
    out.write(
        &format!("{prefix}energy_density.svg"),
        svg::heatmap("log10 energy density", g.nx, g.ny, &logd, extent(g), st.as_deref()).as_bytes(),
    )?;
    let mu: Vec<f64> = (0..field.nodes()).map(|k| model.moment_map(field.u_at(k))).collect();
    out.write(&format!("{prefix}moment_map.svg"), svg::heatmap("moment map", g.nx, g.ny, &mu, extent(g), st.as_deref()).as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct SolveSidecar {
    residual_inf: f64,
    energy: f64,
    flux: Option<f64>,
    iterations: usize,
}

pub fn execute(plan: Plan, out: &OutDir) -> Result<String, CliError> {
    match plan {
        Plan::Solve { data, grid, tol } => solve(&data, &grid, tol, out),
        Plan::Degenerate { example, values, spacing, tol } => degenerate(example, &values, spacing, tol, out),
        Plan::Preglue { stable, geometry, settings } => preglue_cmd(&stable, &geometry, &settings, out),
        Plan::Glue { stable, eps, settings, oracle } => glue_cmd(&stable, eps, &settings, oracle.as_deref(), out),
        Plan::GlueSweep { stable, eps, settings } => glue_sweep(&stable, &eps, &settings, out),
        Plan::Spectrum { data, grid, tol, spec, gap } => spectrum(&data, &grid, tol, &spec, gap, out),
        Plan::Norms { data, grid, tol, p, eps, samples, seed } => norms(&data, &grid, tol, p, eps, samples, seed, out),
    }
}

fn solve(data: &VortexData, grid: &Grid, tol: f64, out: &OutDir) -> Result<String, CliError> {
    let sol = solve_taubes(data, grid, tol)?;
    let flux = match data.domain {
        vortex_core::grid::DomainTag::Plane => Some(vortex_flux(&sol)?),
        vortex_core::grid::DomainTag::HalfPlane => None,
    };
    let side = SolveSidecar {
        residual_inf: sol.residual_inf,
        energy: energy(&sol.field, &TargetModel::standard(data.n()), None).total,
        flux,
        iterations: sol.iterations,
    };
    out.write("field.vlab", &snapshot(&sol.field, None)?)?;
    out.write_json("solve.json", &side)?;
    field_plots(out, &sol.field, "")?;
    Ok(format!("solved in {} iterations, residual {:e}, energy {}", side.iterations, side.residual_inf, side.energy))
}

fn degenerate(example: Degeneration, values: &[f64], spacing: f64, tol: f64, out: &OutDir) -> Result<String, CliError> {
    let st = stamp(out);
    match example {
        Degeneration::Separation => {
            let rows = values
                .par_iter()
                .map(|s| separation_sweep(&[*s], spacing, tol).map(|mut r| r.remove(0)))
                .collect::<Result<Vec<_>, _>>()?;
            let lines: Vec<String> = rows
                .iter()
                .map(|r| row(&[r.separation, r.energy_total, r.energy_ball_left, r.energy_ball_right, r.energy_middle_strip]))
                .collect();
            out.write_csv("degenerate.csv", "separation,energy_total,energy_ball_left,energy_ball_right,energy_middle_strip", &lines)?;
            let col = |label: &str, f: &dyn Fn(&vortex_core::taubes::SeparationRow) -> f64| Series {
                label: label.into(),
                points: rows.iter().map(|r| (r.separation, f(r))).collect(),
            };
            let series = [
                col("total", &|r| r.energy_total),
                col("left ball", &|r| r.energy_ball_left),
                col("right ball", &|r| r.energy_ball_right),
                col("middle strip", &|r| r.energy_middle_strip),
            ];
            let axes = Axes { x_label: "separation".into(), y_label: "energy".into(), log_x: false, log_y: false };
            out.write("degenerate.svg", svg::curves("energy localization", &axes, &series, None, st.as_deref()).as_bytes())?;
            Ok(format!("{} separations", rows.len()))
        }
        Degeneration::RankTwo => {
            let rows = values
                .par_iter()
                .map(|n| rank_two_sweep(&[*n], spacing, tol).map(|mut r| r.remove(0)))
                .collect::<Result<Vec<_>, _>>()?;
            let lines: Vec<String> =
                rows.iter().map(|r| row(&[r.n, r.chordal_distance, r.lift_distance, r.energy_total])).collect();
            out.write_csv("degenerate.csv", "n,chordal_distance,lift_distance,energy_total", &lines)?;
            let series = [
                Series { label: "chordal distance".into(), points: rows.iter().map(|r| (r.n, r.chordal_distance)).collect() },
                Series { label: "lift distance".into(), points: rows.iter().map(|r| (r.n, r.lift_distance)).collect() },
            ];
            let axes = Axes { x_label: "n".into(), y_label: "sup over annulus".into(), log_x: true, log_y: true };
            out.write("degenerate.svg", svg::curves("rank-two degeneration", &axes, &series, None, st.as_deref()).as_bytes())?;
            Ok(format!("{} rank-two parameters", rows.len()))
        }
    }
}

#[derive(Serialize)]
struct PreglueSummary {
    epsilon: f64,
    preglue_error: f64,
    energy_total: f64,
    regions: Vec<vortex_core::preglue::RegionEnergy>,
    marker_evaluations: Vec<Vec<[f64; 2]>>,
}

fn pairs(x: &[Vec<Complex64>]) -> Vec<Vec<[f64; 2]>> {
    x.iter().map(|v| v.iter().map(|c| [c.re, c.im]).collect()).collect()
}

fn preglue_cmd(stable: &StableConfig, geometry: &GluingGeometry, settings: &GlueSettings, out: &OutDir) -> Result<String, CliError> {
    let approx = preglue(stable, geometry, settings.spacing, settings.tol)?;
    let err = pregluing_error(&approx, &approx.weight_spec(settings.p))?;
    let energies = cluster_energies(&approx);
    let summary = PreglueSummary {
        epsilon: geometry.epsilon,
        preglue_error: err,
        energy_total: energies.total,
        regions: energies.regions,
        marker_evaluations: pairs(&approx.marker_values),
    };
    out.write("preglue.vlab", &snapshot(&approx.field, Some(&approx.regions))?)?;
    out.write_json("preglue.json", &summary)?;
    let lines: Vec<String> = summary.regions.iter().map(|r| format!("{},{}", r.tag, num(r.energy))).collect();
    out.write_csv("regions.csv", "tag,energy", &lines)?;
    field_plots(out, &approx.field, "")?;
    let g = &approx.field.grid;
    let res: Vec<f64> = residual_magnitudes(&approx)?.iter().map(|r| r.max(1e-300).log10()).collect();
    let st = stamp(out);
    out.write("residual.svg", svg::heatmap("log10 residual", g.nx, g.ny, &res, extent(g), st.as_deref()).as_bytes())?;
    Ok(format!("pregluing error {err:e} at epsilon {}", geometry.epsilon))
}

fn newton_rows(report: &GlueReport) -> Vec<String> {
    report
        .trace
        .iterates
        .iter()
        .enumerate()
        .map(|(i, it)| {
            format!(
                "{i},{},{},{},{},{},{}",
                num(it.residual_norm),
                num(it.residual_sup),
                num(it.step_norm),
                num(it.damping),
                it.linear_iterations,
                num(it.coulomb_sup)
            )
        })
        .collect()
}

const NEWTON_HEADER: &str = "iteration,residual_norm,residual_sup,step_norm,damping,linear_iterations,coulomb_sup";

fn glue_cmd(
    stable: &StableConfig,
    eps: f64,
    settings: &GlueSettings,
    oracle: Option<&[Complex64]>,
    out: &OutDir,
) -> Result<String, CliError> {
    let (field, report, approx) = glue(stable, eps, settings)?;
    let mut json = serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?;
    let mut summary = format!("glued at epsilon {eps} in {} iterations, pregluing error {:e}", report.iterations, report.preglue_error);
    if let Some(zeros) = oracle {
        let opts = NewtonOptions { tol: settings.tol, max_iter: settings.max_iter, frozen_jacobian: settings.frozen_jacobian };
        let cmp = oracle_comparison(&field, zeros, &approx.weight_spec(settings.p), &opts)?;
        summary.push_str(&format!(", oracle sup distance {:e}", cmp.sup_distance));
        json["oracle"] = serde_json::to_value(&cmp).map_err(|e| CliError::Io(e.to_string()))?;
    }
    out.write_json("report.json", &json)?;
    out.write_csv("newton.csv", NEWTON_HEADER, &newton_rows(&report))?;
    out.write("glued.vlab", &snapshot(&field, Some(&approx.regions))?)?;
    field_plots(out, &field, "")?;
    let res = report.trace.residuals();
    let series = [Series { label: "residual".into(), points: res.iter().enumerate().map(|(i, r)| (i as f64, *r)).collect() }];
    let axes = Axes { x_label: "Newton iteration".into(), y_label: "weighted residual".into(), log_x: false, log_y: true };
    let st = stamp(out);
    out.write("newton.svg", svg::curves("Newton residuals", &axes, &series, None, st.as_deref()).as_bytes())?;
    Ok(summary)
}

fn glue_sweep(stable: &StableConfig, eps: &[f64], settings: &GlueSettings, out: &OutDir) -> Result<String, CliError> {
    let mut reports: Vec<GlueReport> = Vec::new();
    let rows = convergence_table(stable, eps, settings, |_, r, _| reports.push(r.clone()))?;
    out.write_csv("sweep.csv", ConvergenceRow::CSV_HEADER, &rows.iter().map(ConvergenceRow::csv_row).collect::<Vec<_>>())?;
    out.write_json("report.json", &reports)?;
    let slope = rows.last().and_then(|r| r.gamma_slope);
    let series = [Series { label: "pregluing error".into(), points: rows.iter().map(|r| (r.epsilon.sqrt(), r.preglue_error)).collect() }];
    let axes = Axes { x_label: "sqrt(epsilon)".into(), y_label: "pregluing error".into(), log_x: true, log_y: true };
    let note = slope.map(|s| format!("fitted slope {s:.4}"));
    let st = stamp(out);
    out.write("sweep.svg", svg::curves("pregluing error", &axes, &series, note.as_deref(), st.as_deref()).as_bytes())?;
    Ok(format!("{} gluing parameters, fitted slope {}", rows.len(), slope.map_or("n/a".into(), |s| format!("{s:.4}"))))
}

fn spectrum(data: &VortexData, grid: &Grid, tol: f64, spec: &WeightSpec, gap: f64, out: &OutDir) -> Result<String, CliError> {
    let sol = solve_taubes(data, grid, tol)?;
    let sys = assemble(&sol.field, &TargetModel::standard(data.n()), spec);
    let rep = kernel_dimension(&sys, gap)?;
    let lines: Vec<String> = rep.singular_values.iter().enumerate().map(|(i, s)| format!("{i},{}", num(*s))).collect();
    out.write_csv("spectrum.csv", "index,singular_value", &lines)?;
    out.write_json("spectrum.json", &rep)?;
    let series = [Series {
        label: "smallest singular values".into(),
        points: rep.singular_values.iter().enumerate().map(|(i, s)| (i as f64, *s)).collect(),
    }];
    let axes = Axes { x_label: "index".into(), y_label: "singular value".into(), log_x: false, log_y: true };
    let note = format!("kernel dimension {}", rep.dimension);
    let st = stamp(out);
    out.write("spectrum.svg", svg::curves("spectrum", &axes, &series, Some(&note), st.as_deref()).as_bytes())?;
    Ok(format!("kernel dimension {}, gap ratio {:e}", rep.dimension, rep.gap_ratio))
}

#[allow(clippy::too_many_arguments)]
fn norms(data: &VortexData, grid: &Grid, tol: f64, p: f64, eps: f64, samples: usize, seed: u64, out: &OutDir) -> Result<String, CliError> {
    let sol = solve_taubes(data, grid, tol)?;
    let base = &sol.field;
    let model = TargetModel::standard(data.n());
    let (plain, scaled) = (WeightSpec::rho_a(p), WeightSpec::inf_eps(p, eps));
    let mut tables: [(&str, Vec<NormReport>); 3] = [("mixed", vec![]), ("disk", vec![]), ("aux", vec![])];
    for s in 0..samples {
        let d = random_deformation(base, seed.wrapping_add(s as u64));
        tables[0].1.push(mixed_norm(&d, base, &model, &plain));
        tables[1].1.push(disk_norm(&d, base, &scaled));
        tables[2].1.push(aux_norm(&d, base, &plain, eps));
    }
    for (name, reports) in &tables {
        let header = format!("sample,{}", reports[0].csv_header());
        let lines: Vec<String> = reports.iter().enumerate().map(|(i, r)| format!("{i},{}", r.csv_row())).collect();
        out.write_csv(&format!("norms_{name}.csv"), &header, &lines)?;
    }
    Ok(format!("{samples} samples of {} norms", tables.len()))
}
