use std::sync::OnceLock;
use vortex_core::disk::DiskComponent;
use vortex_core::field::{coulomb_residual, GaugedField};
use vortex_core::grid::{DomainTag, GluingGeometry, Grid, WeightSpec};
use vortex_core::newton::{
    component_radius, convergence_table, correct, correct_field, locate_zero, GlueSettings, NewtonOptions,
};
use vortex_core::preglue::{
    cluster_energies, pregluing_error, prepare_components, preglue_with, residual_magnitudes, ApproximateSolution,
    Component, StableConfig,
};
use vortex_core::taubes::{solve_taubes, VortexData};
use vortex_core::target_model::TargetModel;
use vortex_core::Complex64;

const SPACING: f64 = 0.25;
const TOL: f64 = 1e-9;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn two_vortex_config(disk_value: Complex64) -> StableConfig {
    let disk = DiskComponent::constant(&[disk_value], vec![c(1.0, 0.0), c(-1.0, 0.0)]).unwrap();
    let at = |m: f64| {
        let mut v = VortexData::from_zeros(DomainTag::Plane, &[c(0.0, 0.0)]).unwrap();
        v.marker = c(m, 0.0);
        v
    };
    StableConfig { disk, vortices: vec![at(1.0), at(-1.0)], match_tolerance: 1e-3 }
}

fn settings() -> GlueSettings {
    GlueSettings { b: 1.2, e: 1.1, p: 3.0, spacing: SPACING, tol: TOL, max_iter: 30, frozen_jacobian: false }
}

fn components() -> &'static Vec<Component> {
    static COMPS: OnceLock<Vec<Component>> = OnceLock::new();
    COMPS.get_or_init(|| {
        prepare_components(&two_vortex_config(c(1.0, 0.0)), SPACING, component_radius(0.02, 1.2), 1e-10).unwrap()
    })
}

fn approx_at(eps: f64) -> ApproximateSolution {
    let geo = GluingGeometry::new(1.2, 1.1, eps, &[c(1.0, 0.0), c(-1.0, 0.0)]).unwrap();
    preglue_with(&two_vortex_config(c(1.0, 0.0)), components(), &geo, SPACING).unwrap()
}

/// Largest residual per region tag over nodes whose difference stencil stays
/// inside that region.
fn residual_by_region(a: &ApproximateSolution) -> Vec<(u8, f64)> {
    let r = residual_magnitudes(a).unwrap();
    let g = a.field.grid;
    let mut out: Vec<(u8, f64)> = Vec::new();
    for (k, &tag) in a.regions.iter().enumerate() {
        let (i, j) = g.ij(k);
        if i == 0 || j == 0 || i + 1 == g.nx || j + 1 == g.ny {
            continue;
        }
        if [k - 1, k + 1, k - g.nx, k + g.nx].iter().any(|&m| a.regions[m] != tag) {
            continue;
        }
        match out.iter_mut().find(|(t, _)| *t == tag) {
            Some(e) => e.1 = e.1.max(r[k]),
            None => out.push((tag, r[k])),
        }
    }
    out
}

#[test]
fn balls_are_exact_and_disk_region_is_second_order() {
    let coarse = residual_by_region(&approx_at(0.16));
    let fine = residual_by_region(&approx_at(0.04));
    for (tag, r) in fine.iter().chain(&coarse) {
        if *tag < 128 {
            assert!(*r < 1e-12, "ball {tag}: residual {r:e}");
        }
    }
    let disk = |rows: &[(u8, f64)]| rows.iter().find(|(t, _)| *t == 255).unwrap().1;
    let neck = |rows: &[(u8, f64)]| rows.iter().filter(|(t, _)| (128..255).contains(t)).map(|r| r.1).fold(0.0, f64::max);
    assert!(disk(&fine) < disk(&coarse));
    assert!(disk(&fine) < 1e-3 * neck(&fine).max(1e-2));
}

#[test]
fn neck_displacement_follows_the_cutoffs() {
    let a = approx_at(0.04);
    let geo = &a.geometry;
    let g = a.field.grid;
    let comps = components();
    for (i, anchor) in geo.anchors.iter().enumerate() {
        let lam = comps[i].holonomy as f64;
        let untwist = |z: Complex64| Complex64::from_polar(1.0, -lam * (z - anchor).arg());
        let neck: Vec<usize> = (0..g.len()).filter(|&k| a.regions[k] == 128 + i as u8).collect();
        // plateau between the supports of the two cut-offs
        let plateau: Vec<usize> = neck
            .iter()
            .copied()
            .filter(|&k| geo.beta_inner(g.point(k), i) == 0.0 && geo.beta_outer(g.point(k)) == 0.0)
            .collect();
        assert!(!plateau.is_empty());
        let y = a.field.u[plateau[0]] * untwist(g.point(plateau[0]));
        for &k in &plateau {
            assert!((a.field.u[k] * untwist(g.point(k)) - y).norm() < 1e-10);
        }
        for &k in &neck {
            let z = g.point(k);
            let (bi, bo) = (geo.beta_inner(z, i), geo.beta_outer(z));
            assert!(bi == 0.0 || bo == 0.0);
            let got = a.field.u[k] * untwist(z) - y;
            let want = if bi > 0.0 {
                let ck = comps[i].field.grid.node_at(z - anchor).unwrap();
                (comps[i].field.u[ck] * untwist(z) - y) * bi
            } else if bo > 0.0 {
                let twist: Complex64 = geo
                    .anchors
                    .iter()
                    .zip(comps)
                    .map(|(b, cp)| Complex64::from_polar(1.0, cp.holonomy as f64 * (z - b).arg()))
                    .product();
                (twist * untwist(z) - y) * bo
            } else {
                c(0.0, 0.0)
            };
            assert!((got - want).norm() < 1e-12, "node {z}: {got} vs {want}");
        }
    }
}

#[test]
fn region_energies_partition_the_total() {
    for eps in [0.16, 0.04] {
        let e = cluster_energies(&approx_at(eps));
        let sum: f64 = e.regions.iter().map(|r| r.energy).sum();
        assert!((sum - e.total).abs() <= 1e-12 * e.total.abs());
    }
}

#[test]
fn single_component_at_unit_parameter_passes_through() {
    let disk = DiskComponent::constant(&[c(1.0, 0.0)], vec![c(0.0, 0.0)]).unwrap();
    let config = StableConfig {
        disk,
        vortices: vec![VortexData::from_zeros(DomainTag::Plane, &[c(0.0, 0.0)]).unwrap()],
        match_tolerance: 1e-3,
    };
    let comps = prepare_components(&config, SPACING, 12.0, 1e-11).unwrap();
    let geo = GluingGeometry::new(1.2, 1.1, 1.0, &[c(0.0, 0.0)]).unwrap();
    let approx = preglue_with(&config, &comps, &geo, SPACING).unwrap();
    assert_eq!(approx.field, comps[0].field);
    let spec = approx.weight_spec(3.0);
    assert!(pregluing_error(&approx, &spec).unwrap() < TOL);
    let (field, trace) = correct(&approx, &spec, TOL, 10).unwrap();
    assert!(trace.iterates.is_empty());
    assert_eq!(trace.correction_norm, 0.0);
    assert_eq!(field, approx.field);
}

#[test]
fn pregluing_commutes_with_constant_rotation() {
    let phase = Complex64::from_polar(1.0, 0.7);
    let geo = GluingGeometry::new(1.2, 1.1, 0.16, &[c(1.0, 0.0), c(-1.0, 0.0)]).unwrap();
    let base = two_vortex_config(c(1.0, 0.0));
    let turned = two_vortex_config(phase);
    // the stabilized equations are not phase equivariant, so the rotated
    // components are rotated copies rather than fresh solves
    let comps_turned: Vec<Component> = components()
        .iter()
        .map(|cp| Component {
            field: cp.field.rotated(phase),
            asymptote: cp.asymptote.iter().map(|x| x * phase).collect(),
            rotation: cp.rotation * phase,
            ..cp.clone()
        })
        .collect();
    let a = preglue_with(&base, components(), &geo, SPACING).unwrap();
    let b = preglue_with(&turned, &comps_turned, &geo, SPACING).unwrap();
    let gap = a.field.u.iter().zip(&b.field.u).map(|(x, y)| (x * phase - y).norm()).fold(0.0, f64::max);
    assert!(gap < 1e-12, "{gap:e}");
    let (ea, eb) = (cluster_energies(&a), cluster_energies(&b));
    assert!((ea.total - eb.total).abs() < 1e-12 * ea.total);
}

#[test]
fn glue_sweep_decays_and_respects_the_contract() {
    let config = two_vortex_config(c(1.0, 0.0));
    let eps = [0.16, 0.08, 0.04, 0.02];
    let mut fields: Vec<GaugedField> = Vec::new();
    let mut reports = Vec::new();
    let rows = convergence_table(&config, &eps, &settings(), |f, r, a| {
        let model = TargetModel::standard(1);
        let slice = coulomb_residual(f, &a.field, &model).unwrap();
        assert!(slice.iter().fold(0.0f64, |m, x| m.max(x.abs())) < 10.0 * TOL);
        fields.push(f.clone());
        reports.push(r.clone());
    })
    .unwrap();
    for w in rows.windows(2) {
        assert!(w[1].preglue_error < w[0].preglue_error);
        assert!(w[1].energy_defect < w[0].energy_defect);
    }
    assert!(rows.last().unwrap().gamma_slope.unwrap() >= 0.25);
    assert!(rows.last().unwrap().energy_defect < 0.02);
    let cs: Vec<f64> = rows.iter().map(|r| r.c_measured).collect();
    let (cmin, cmax) = cs.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(cmax <= 3.0 * cmin);
    for r in &reports {
        assert!(r.trace.converged && r.trace.contract_holds());
        assert!(r.correction_norm <= 2.4 * r.c_measured * r.preglue_error);
        let res = r.trace.residuals();
        for w in res[1..].windows(2) {
            assert!(w[1] <= 0.5 * w[0], "contraction {res:?}");
        }
    }
    // distinct outputs at consecutive parameters, compared on shared nodes
    for w in fields.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let mut gap = 0.0f64;
        for k in 0..a.nodes() {
            if let Some(m) = b.grid.node_at(a.grid.point(k)) {
                gap = gap.max((a.u[k] - b.u[m]).norm());
            }
        }
        assert!(gap >= 10.0 * TOL);
    }
}

#[test]
fn exact_input_needs_no_iterations() {
    let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 8.0, SPACING).unwrap();
    let data = VortexData::from_zeros(DomainTag::Plane, &[c(0.0, 0.0)]).unwrap();
    let start = solve_taubes(&data, &g, 1e-11).unwrap().field;
    let model = TargetModel::standard(1);
    let spec = WeightSpec::rho_a(3.0);
    let (exact, first) = correct_field(&start, &start, &model, &spec, &NewtonOptions::new(1e-11, 20)).unwrap();
    assert!(first.converged && !first.iterates.is_empty());
    let (again, trace) = correct_field(&exact, &exact, &model, &spec, &NewtonOptions::new(1e-10, 20)).unwrap();
    assert!(trace.iterates.is_empty());
    assert_eq!(again, exact);
}

#[test]
fn zero_locator_is_first_order_accurate() {
    let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 8.0, SPACING).unwrap();
    let zero = c(0.05, -0.08);
    let data = VortexData::from_zeros(DomainTag::Plane, &[zero]).unwrap();
    let field = solve_taubes(&data, &g, 1e-11).unwrap().field;
    assert!((locate_zero(&field, c(0.0, 0.0)) - zero).norm() < 0.02);
}
