use vortex_core::field::{energy, holonomy_at_infinity, vortex_residual};
use vortex_core::grid::{DomainTag, Grid};
use vortex_core::poly::Polynomial;
use vortex_core::taubes::{
    moduli_compare, rank_two_sweep, separation_sweep, solution_energy, solve_taubes, vortex_flux, VortexData,
};
use vortex_core::target_model::TargetModel;
use vortex_core::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// RK4 integration of `h'' + h'/r = pi (exp(2h) r^2 - 1)` from a series start.
/// Returns +1 if the shot overshoots `-log r`, -1 if it undershoots.
fn shoot(h0: f64) -> i32 {
    let pi = std::f64::consts::PI;
    let rhs = |r: f64, h: f64, dh: f64| pi * ((2.0 * h).exp() * r * r - 1.0) - dh / r;
    let r0 = 1e-3;
    let a4 = pi * (2.0 * h0).exp() / 16.0;
    let mut h = h0 - pi * r0 * r0 / 4.0 + a4 * r0.powi(4);
    let mut dh = -pi * r0 / 2.0 + 4.0 * a4 * r0.powi(3);
    let mut r = r0;
    let step = 1e-3;
    while r < 12.0 {
        let k1 = (dh, rhs(r, h, dh));
        let k2 = (dh + 0.5 * step * k1.1, rhs(r + 0.5 * step, h + 0.5 * step * k1.0, dh + 0.5 * step * k1.1));
        let k3 = (dh + 0.5 * step * k2.1, rhs(r + 0.5 * step, h + 0.5 * step * k2.0, dh + 0.5 * step * k2.1));
        let k4 = (dh + step * k3.1, rhs(r + step, h + step * k3.0, dh + step * k3.1));
        h += step / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        dh += step / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        r += step;
        let gap = h + r.ln();
        if !h.is_finite() || h > 20.0 {
            return 1;
        }
        if r < 2.0 {
            continue;
        }
        if gap > 0.05 {
            return 1;
        }
        if gap < -0.05 {
            return -1;
        }
    }
    0
}

fn shooting_h0() -> f64 {
    let (mut lo, mut hi) = (-3.0, 3.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        match shoot(mid) {
            1 => hi = mid,
            -1 => lo = mid,
            _ => return mid,
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn unit_vortex_matches_radial_shooting() {
    let oracle = shooting_h0();
    let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 20.0, 0.125).unwrap();
    let data = VortexData::from_zeros(DomainTag::Plane, &[c(0.0, 0.0)]).unwrap();
    let sol = solve_taubes(&data, &g, 1e-9).unwrap();
    let center = g.node_at(c(0.0, 0.0)).unwrap();
    let diff = (sol.h[center] - oracle).abs();
    println!("h(0) = {}, oracle = {oracle}, diff = {diff:e}", sol.h[center]);
    assert!(diff < 1e-4);
    assert!(sol.residual_inf < 1e-9);
}

#[test]
fn assembled_residual_is_second_order() {
    let data = VortexData::from_zeros(DomainTag::Plane, &[c(0.0, 0.0)]).unwrap();
    let model = TargetModel::standard(1);
    let mut sups = Vec::new();
    for dx in [0.25, 0.125] {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 20.0, dx).unwrap();
        let sol = solve_taubes(&data, &g, 1e-9).unwrap();
        let r = vortex_residual(&sol.field, &model, None);
        sups.push(r.sup_where(1, |_| true));
    }
    let ratio = sups[0] / sups[1];
    println!("assembled residual {sups:?}, ratio {ratio}");
    assert!((3.5..=4.5).contains(&ratio));
}

#[test]
fn flux_and_energy_are_quantized() {
    let mut energies = Vec::new();
    for zeros in [vec![c(0.0, 0.0)], vec![c(1.0, 0.0), c(-1.0, 0.0)], (0..3).map(|k| Complex64::from_polar(2.0, 2.0 * std::f64::consts::PI * k as f64 / 3.0)).collect()] {
        let d = zeros.len() as f64;
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 20.0, 0.25).unwrap();
        let data = VortexData::from_zeros(DomainTag::Plane, &zeros).unwrap();
        let sol = solve_taubes(&data, &g, 1e-9).unwrap();
        let flux = vortex_flux(&sol).unwrap();
        println!("d = {d}: flux {flux}");
        assert!((flux.abs() - d).abs() < 0.02 * d);
        assert_eq!(holonomy_at_infinity(&sol.field).unwrap(), d as i64);
        energies.push(solution_energy(&sol));
    }
    for (i, e) in energies.iter().enumerate() {
        let d = (i + 1) as f64;
        println!("E({d}) = {e}, ratio {}", e / energies[0]);
        assert!((e / energies[0] - d).abs() < 0.05);
    }
}

#[test]
fn energy_density_decays_fast() {
    let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 20.0, 0.25).unwrap();
    let data = VortexData::from_zeros(DomainTag::Plane, &[c(0.0, 0.0)]).unwrap();
    let sol = solve_taubes(&data, &g, 1e-9).unwrap();
    let e = energy(&sol.field, &TargetModel::standard(1), None);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..g.len() {
        let r = g.point(k).norm();
        if (5.0..=15.0).contains(&r) && e.density[k] > 0.0 {
            xs.push(r.ln());
            ys.push(e.density[k].ln());
        }
    }
    let (slope, _) = vortex_core::norms::linear_fit(&xs, &ys);
    println!("decay slope {slope}");
    assert!(slope <= -3.5);
}

#[test]
fn rank_two_boundary_modulus() {
    let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 20.0, 0.25).unwrap();
    let one = c(1.0, 0.0);
    let polys = vec![Polynomial::new(vec![one, c(-5.0, 0.0)]), Polynomial::new(vec![one, c(0.0, 0.0)])];
    let data = VortexData::new(DomainTag::Plane, polys, c(0.0, 0.0)).unwrap();
    let sol = solve_taubes(&data, &g, 1e-9).unwrap();
    let worst = (0..g.len())
        .filter(|&k| !g.is_interior(k))
        .map(|k| (vortex_core::target_model::norm_sqr(sol.field.u_at(k)).sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3);
}

#[test]
fn translation_equivariance() {
    let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 24.0, 0.25).unwrap();
    let a = VortexData::from_zeros(DomainTag::Plane, &[c(0.0, 0.0)]).unwrap();
    let shift = c(2.0, 1.0);
    let b = a.translated(shift);
    let sa = solve_taubes(&a, &g, 1e-9).unwrap();
    let sb = solve_taubes(&b, &g, 1e-9).unwrap();
    let d = moduli_compare(&sa, &sb, shift).unwrap();
    println!("translation distance {d:e}");
    assert!(d < 5e-3);
    assert_eq!(moduli_compare(&sa, &sa, c(0.0, 0.0)).unwrap(), 0.0);
    let (ea, eb) = (solution_energy(&sa), solution_energy(&sb));
    println!("energies {ea} {eb}");
    assert!((ea - eb).abs() < 1e-6);
}

#[test]
fn degeneration_sweeps_localize() {
    let rows = separation_sweep(&[1.0, 2.0, 4.0], 0.5, 1e-9).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].energy_middle_strip < w[0].energy_middle_strip);
    }
    assert!(separation_sweep(&[], 0.5, 1e-9).is_err());
    let rows = rank_two_sweep(&[2.0, 4.0, 8.0], 0.5, 1e-9).unwrap();
    for r in &rows {
        // the projective class of (z - n, z) is exactly the target map
        assert!(r.chordal_distance < 1e-12);
    }
    for w in rows.windows(2) {
        assert!(w[1].lift_distance < w[0].lift_distance);
    }
}
