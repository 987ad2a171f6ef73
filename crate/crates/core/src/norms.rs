//! Weighted Lebesgue and mixed Sobolev-type norms of deformations, evaluated
//! by trapezoid quadrature with grid maxima for the sup terms.

use crate::field::{integrate, FieldDeformation, GaugedField};
use crate::grid::{Grid, WeightFamily, WeightSpec};
use crate::target_model::{herm, norm_sqr, TargetModel};
use num_complex::Complex64;
use serde::Serialize;
use std::fmt::Write as _;
use thiserror::Error;

/// Largest vertical part tolerated in a section declared horizontal.
pub const HORIZONTAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormError {
    #[error("section has a vertical part of size {0} at some node")]
    NotHorizontal(f64),
    #[error("weight family {0:?} does not define a rescaled norm")]
    WrongFamily(WeightFamily),
    #[error("deformation and base live on different grids")]
    GridMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NormName {
    LpWeighted,
    L1pMixed,
    L1pHorizontal,
    L1pVerticalG,
    L1pEpsMixed,
    L1pAux,
}

impl NormName {
    pub fn as_str(self) -> &'static str {
        match self {
            NormName::LpWeighted => "Lp_weighted",
            NormName::L1pMixed => "L1p_mixed",
            NormName::L1pHorizontal => "L1p_horizontal",
            NormName::L1pVerticalG => "L1p_vertical_g",
            NormName::L1pEpsMixed => "L1p_eps_mixed",
            NormName::L1pAux => "L1p_aux",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub name: NormName,
    pub value: f64,
    /// Summands in display order; `value` is their sum.
    pub breakdown: Vec<(&'static str, f64)>,
}

impl NormReport {
    fn from_terms(name: NormName, breakdown: Vec<(&'static str, f64)>) -> Self {
        let value = breakdown.iter().map(|(_, v)| v).sum();
        Self { name, value, breakdown }
    }

    pub fn term(&self, label: &str) -> Option<f64> {
        self.breakdown.iter().find(|(l, _)| *l == label).map(|(_, v)| *v)
    }

    pub fn csv_header(&self) -> String {
        let mut s = String::from("name,value");
        for (l, _) in &self.breakdown {
            s.push(',');
            s.push_str(l);
        }
        s
    }

    /// `name,value,term...` with 17 significant digits.
    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{:.16e}", self.name.as_str(), self.value);
        for (_, v) in &self.breakdown {
            let _ = write!(s, ",{v:.16e}");
        }
        s
    }
}

/// `[int |f|^p rho^(2p-4)]^(1/p)` for pointwise magnitudes `f`.
pub fn lp_weighted(grid: &Grid, mags: &[f64], spec: &WeightSpec) -> f64 {
    let w = spec.density_weights(grid);
    lp_with_weights(grid, mags, &w, spec.p)
}

fn lp_with_weights(grid: &Grid, mags: &[f64], w: &[f64], p: f64) -> f64 {
    let integrand: Vec<f64> = mags.iter().zip(w).map(|(f, w)| f.abs().powf(p) * w).collect();
    integrate(grid, &integrand).max(0.0).powf(1.0 / p)
}

/// Estimate of the `L^p` mass beyond the truncation boundary, from a power
/// fit `|f| ~ r^-q` of the integrand on the outer third of the grid. Returns
/// `([int_trunc + tail]^(1/p) - [int_trunc]^(1/p))`, or infinity when the fit
/// does not decay fast enough for the tail to converge.
pub fn lp_tail_estimate(grid: &Grid, mags: &[f64], spec: &WeightSpec) -> f64 {
    let w = spec.density_weights(grid);
    let p = spec.p;
    let r_max = grid.half_width;
    let c = grid.center;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..grid.len() {
        let r = (grid.point(k) - c).norm();
        let v = mags[k].abs().powf(p) * w[k];
        if r > 2.0 * r_max / 3.0 && r < r_max && v > 0.0 && grid.is_interior(k) {
            xs.push(r.ln());
            ys.push(v.ln());
        }
    }
    let base: f64 = {
        let integrand: Vec<f64> = mags.iter().zip(&w).map(|(f, w)| f.abs().powf(p) * w).collect();
        integrate(grid, &integrand).max(0.0)
    };
    if xs.len() < 8 {
        return 0.0;
    }
    let (slope, icpt) = linear_fit(&xs, &ys);
    if slope >= -2.0 {
        return f64::INFINITY;
    }
    // int_{r > R} A r^slope r dr dtheta, scaled by the fraction of the circle in the domain
    let frac = if grid.tag == crate::grid::DomainTag::HalfPlane { 0.5 } else { 1.0 };
    let tail = frac * 2.0 * std::f64::consts::PI * icpt.exp() * r_max.powf(slope + 2.0) / -(slope + 2.0);
    (base + tail).powf(1.0 / p) - base.powf(1.0 / p)
}

/// Least-squares line `y = a x + b`; returns `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let a = sxy / sxx;
    (a, my - a * mx)
}

fn sup_xi(d: &FieldDeformation) -> f64 {
    (0..d.nodes()).map(|k| norm_sqr(d.xi_at(k)).sqrt()).fold(0.0, f64::max)
}

/// Pointwise `|nabla^a (xi, eta, zeta)|` with `nabla^a_s xi = d_s xi + i phi xi`.
pub fn nabla_magnitude(d: &FieldDeformation, base: &GaugedField) -> Vec<f64> {
    let g = &base.grid;
    let n = d.n;
    let mut acc = vec![0.0; d.nodes()];
    for a in 0..n {
        let xs = g.ds_comp(&d.xi, n, a);
        let xt = g.dt_comp(&d.xi, n, a);
        for k in 0..acc.len() {
            let x = d.xi[k * n + a];
            acc[k] += (xs[k] + Complex64::new(0.0, base.phi[k]) * x).norm_sqr()
                + (xt[k] + Complex64::new(0.0, base.psi[k]) * x).norm_sqr();
        }
    }
    for f in [&d.eta, &d.zeta] {
        let fs = g.ds(f);
        let ft = g.dt(f);
        for k in 0..acc.len() {
            acc[k] += fs[k] * fs[k] + ft[k] * ft[k];
        }
    }
    acc.iter().map(|x| x.sqrt()).collect()
}

fn six_terms(d: &FieldDeformation, base: &GaugedField, model: &TargetModel, w: &[f64], p: f64) -> Vec<(&'static str, f64)> {
    let g = &base.grid;
    let m = d.nodes();
    let dmu: Vec<f64> = (0..m).map(|k| model.dmu(base.u_at(k), d.xi_at(k))).collect();
    let dmuj: Vec<f64> = (0..m).map(|k| model.dmu_j(base.u_at(k), d.xi_at(k))).collect();
    vec![
        ("xi_sup", sup_xi(d)),
        ("nabla", lp_with_weights(g, &nabla_magnitude(d, base), w, p)),
        ("dmu_xi", lp_with_weights(g, &dmu, w, p)),
        ("dmu_j_xi", lp_with_weights(g, &dmuj, w, p)),
        ("eta", lp_with_weights(g, &d.eta, w, p)),
        ("zeta", lp_with_weights(g, &d.zeta, w, p)),
    ]
}

/// Six-term mixed norm: `|xi|_inf + |nabla^a xi| + |dmu xi| + |dmu J xi| + |eta| + |zeta|`.
pub fn mixed_norm(d: &FieldDeformation, base: &GaugedField, model: &TargetModel, spec: &WeightSpec) -> NormReport {
    let w = spec.density_weights(&base.grid);
    NormReport::from_terms(NormName::L1pMixed, six_terms(d, base, model, &w, spec.p))
}

// ---------------------------------------------------------------- horizontal / vertical split

/// Orthogonal split of a deformation along a base with `u != 0`: the
/// horizontal part of `xi`, and the vertical data `(c, eta, zeta)` where the
/// vertical part of `xi` is `c u / |u|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDeformation {
    pub n: usize,
    pub horizontal: Vec<Complex64>,
    pub vertical_coeff: Vec<Complex64>,
    pub eta: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl SplitDeformation {
    pub fn new(d: &FieldDeformation, base: &GaugedField) -> Self {
        let n = d.n;
        let m = d.nodes();
        let mut horizontal = vec![Complex64::new(0.0, 0.0); n * m];
        let mut vertical_coeff = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..m {
            let u = base.u_at(k);
            let r = norm_sqr(u).sqrt();
            let c = if r > 0.0 { herm(u, d.xi_at(k)) / r } else { Complex64::new(0.0, 0.0) };
            vertical_coeff[k] = c;
            for a in 0..n {
                let vert = if r > 0.0 { u[a] * c / r } else { Complex64::new(0.0, 0.0) };
                horizontal[k * n + a] = d.xi[k * n + a] - vert;
            }
        }
        Self { n, horizontal, vertical_coeff, eta: d.eta.clone(), zeta: d.zeta.clone() }
    }

    /// Pointwise `|(c, eta, zeta)|`.
    pub fn vertical_magnitude(&self) -> Vec<f64> {
        (0..self.eta.len())
            .map(|k| (self.vertical_coeff[k].norm_sqr() + self.eta[k].powi(2) + self.zeta[k].powi(2)).sqrt())
            .collect()
    }

    /// Pointwise `|d (c, eta, zeta)|` in the frame `(u, iu)`.
    pub fn vertical_gradient(&self, grid: &Grid) -> Vec<f64> {
        let cs = grid.ds(&self.vertical_coeff);
        let ct = grid.dt(&self.vertical_coeff);
        let mut acc: Vec<f64> = cs.iter().zip(&ct).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).collect();
        for f in [&self.eta, &self.zeta] {
            let fs = grid.ds(f);
            let ft = grid.dt(f);
            for k in 0..acc.len() {
                acc[k] += fs[k] * fs[k] + ft[k] * ft[k];
            }
        }
        acc.iter().map(|x| x.sqrt()).collect()
    }
}

/// Pointwise `|P_H nabla^a xi_h|` for a section along `base`.
pub fn projected_gradient(xi_h: &[Complex64], base: &GaugedField) -> Vec<f64> {
    let g = &base.grid;
    let n = base.n;
    let m = base.nodes();
    let mut ds = vec![Complex64::new(0.0, 0.0); n * m];
    let mut dt = ds.clone();
    for a in 0..n {
        let xs = g.ds_comp(xi_h, n, a);
        let xt = g.dt_comp(xi_h, n, a);
        for k in 0..m {
            let x = xi_h[k * n + a];
            ds[k * n + a] = xs[k] + Complex64::new(0.0, base.phi[k]) * x;
            dt[k * n + a] = xt[k] + Complex64::new(0.0, base.psi[k]) * x;
        }
    }
    (0..m)
        .map(|k| {
            let u = base.u_at(k);
            let r2 = norm_sqr(u);
            let mut tot = 0.0;
            for w in [&ds[k * n..(k + 1) * n], &dt[k * n..(k + 1) * n]] {
                let c = if r2 > 0.0 { herm(u, w) / r2 } else { Complex64::new(0.0, 0.0) };
                tot += w.iter().zip(u).map(|(x, y)| (x - y * c).norm_sqr()).sum::<f64>();
            }
            tot.sqrt()
        })
        .collect()
}

fn horizontal_terms(xi_h: &[Complex64], base: &GaugedField, w: &[f64], p: f64) -> Vec<(&'static str, f64)> {
    let n = base.n;
    let sup = (0..base.nodes()).map(|k| norm_sqr(&xi_h[k * n..(k + 1) * n]).sqrt()).fold(0.0, f64::max);
    vec![("xi_h_sup", sup), ("proj_nabla", lp_with_weights(&base.grid, &projected_gradient(xi_h, base), w, p))]
}

/// Two-term horizontal norm `|xi_h|_inf + |P_H nabla^a xi_h|`; rejects sections with a vertical part.
pub fn horizontal_norm(xi_h: &[Complex64], base: &GaugedField, spec: &WeightSpec) -> Result<NormReport, NormError> {
    let n = base.n;
    if xi_h.len() != n * base.nodes() {
        return Err(NormError::GridMismatch);
    }
    let mut worst: f64 = 0.0;
    for k in 0..base.nodes() {
        let u = base.u_at(k);
        let r2 = norm_sqr(u);
        if r2 > 0.0 {
            worst = worst.max(herm(u, &xi_h[k * n..(k + 1) * n]).norm() / r2.sqrt());
        }
    }
    if worst > HORIZONTAL_TOL {
        return Err(NormError::NotHorizontal(worst));
    }
    let w = spec.density_weights(&base.grid);
    Ok(NormReport::from_terms(NormName::L1pHorizontal, horizontal_terms(xi_h, base, &w, spec.p)))
}

/// Vertical norm `|xi^G| + |nabla xi^G|` of the vertical data.
pub fn vertical_norm(split: &SplitDeformation, grid: &Grid, spec: &WeightSpec) -> NormReport {
    let w = spec.density_weights(grid);
    NormReport::from_terms(
        NormName::L1pVerticalG,
        vec![
            ("xi_g", lp_with_weights(grid, &split.vertical_magnitude(), &w, spec.p)),
            ("nabla_g", lp_with_weights(grid, &split.vertical_gradient(grid), &w, spec.p)),
        ],
    )
}

/// Split norm built from the diagonal part of the connection: horizontal
/// norm of `xi^H` plus vertical norm of `xi^G`.
pub fn diagonal_split_norm(d: &FieldDeformation, base: &GaugedField, spec: &WeightSpec) -> f64 {
    let split = SplitDeformation::new(d, base);
    let w = spec.density_weights(&base.grid);
    let h: f64 = horizontal_terms(&split.horizontal, base, &w, spec.p).iter().map(|t| t.1).sum();
    h + vertical_norm(&split, &base.grid, spec).value
}

/// Split norm with the full covariant derivative of the whole deformation.
pub fn full_split_norm(d: &FieldDeformation, base: &GaugedField, spec: &WeightSpec) -> f64 {
    let split = SplitDeformation::new(d, base);
    let g = &base.grid;
    let w = spec.density_weights(g);
    let n = base.n;
    let sup_h = (0..base.nodes()).map(|k| norm_sqr(&split.horizontal[k * n..(k + 1) * n]).sqrt()).fold(0.0, f64::max);
    sup_h
        + lp_with_weights(g, &split.vertical_magnitude(), &w, spec.p)
        + lp_with_weights(g, &nabla_magnitude(d, base), &w, spec.p)
}

// ---------------------------------------------------------------- rescaled norms

/// Gluing-scale norm. `RhoGlued`: the six-term mixed norm with the glued
/// weight. `RhoInfEps`: the three-term disk norm `|xi^G| + |nabla xi| + |xi^H|_inf`,
/// with the diagonal connection in the gradient term.
pub fn eps_mixed_norm(
    d: &FieldDeformation,
    base: &GaugedField,
    model: &TargetModel,
    spec: &WeightSpec,
) -> Result<NormReport, NormError> {
    let g = &base.grid;
    let w = spec.density_weights(g);
    match spec.family {
        WeightFamily::RhoGlued => Ok(NormReport::from_terms(NormName::L1pEpsMixed, six_terms(d, base, model, &w, spec.p))),
        WeightFamily::RhoInfEps => Ok(NormReport::from_terms(NormName::L1pEpsMixed, three_terms(d, base, &w, spec.p))),
        f => Err(NormError::WrongFamily(f)),
    }
}

/// The three-term disk norm evaluated with an arbitrary weight family.
pub fn disk_norm(d: &FieldDeformation, base: &GaugedField, spec: &WeightSpec) -> NormReport {
    let w = spec.density_weights(&base.grid);
    NormReport::from_terms(NormName::L1pEpsMixed, three_terms(d, base, &w, spec.p))
}

fn three_terms(d: &FieldDeformation, base: &GaugedField, w: &[f64], p: f64) -> Vec<(&'static str, f64)> {
    let g = &base.grid;
    let split = SplitDeformation::new(d, base);
    let ph = projected_gradient(&split.horizontal, base);
    let pg = split.vertical_gradient(g);
    let grad: Vec<f64> = ph.iter().zip(&pg).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let n = d.n;
    let sup_h = (0..d.nodes()).map(|k| norm_sqr(&split.horizontal[k * n..(k + 1) * n]).sqrt()).fold(0.0, f64::max);
    vec![
        ("xi_g", lp_with_weights(g, &split.vertical_magnitude(), w, p)),
        ("nabla", lp_with_weights(g, &grad, w, p)),
        ("xi_h_sup", sup_h),
    ]
}

/// Auxiliary disk-scale norm `|xi^H|_h + |xi^G| + eps |nabla xi^G|` with the
/// unscaled far weight of `spec` (family `RhoA`).
pub fn aux_norm(d: &FieldDeformation, base: &GaugedField, spec: &WeightSpec, eps: f64) -> NormReport {
    let g = &base.grid;
    let w = spec.density_weights(g);
    let split = SplitDeformation::new(d, base);
    let mut terms = horizontal_terms(&split.horizontal, base, &w, spec.p);
    terms.push(("xi_g", lp_with_weights(g, &split.vertical_magnitude(), &w, spec.p)));
    terms.push(("eps_nabla_g", eps * lp_with_weights(g, &split.vertical_gradient(g), &w, spec.p)));
    NormReport::from_terms(NormName::L1pAux, terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainTag;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_section_has_zero_norm() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 3.0, 0.25).unwrap();
        let base = GaugedField::covariantly_constant(g, &[c(1.0, 0.0)], 1, c(0.1, 0.1));
        let d = FieldDeformation::zeros(1, g.len());
        let m = TargetModel::standard(1);
        assert_eq!(mixed_norm(&d, &base, &m, &WeightSpec::rho_a(3.0)).value, 0.0);
        assert_eq!(lp_weighted(&g, &vec![0.0; g.len()], &WeightSpec::rho_a(3.0)), 0.0);
    }

    #[test]
    fn report_value_is_sum_of_terms() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 3.0, 0.25).unwrap();
        let base = GaugedField::covariantly_constant(g, &[c(1.0, 0.0)], 1, c(0.1, 0.1));
        let mut d = FieldDeformation::zeros(1, g.len());
        for k in 0..g.len() {
            let z = g.point(k);
            d.xi[k] = c((-z.norm_sqr()).exp(), 0.3 * z.re * (-z.norm_sqr()).exp());
            d.eta[k] = (-(z.norm_sqr())).exp() * 0.5;
        }
        let r = mixed_norm(&d, &base, &TargetModel::standard(1), &WeightSpec::rho_a(3.0));
        let s: f64 = r.breakdown.iter().map(|t| t.1).sum();
        assert!((r.value - s).abs() <= 1e-12 * r.value);
        assert_eq!(r.csv_row().split(',').count(), 8);
        assert!(r.csv_row().starts_with("L1p_mixed,"));
    }

    #[test]
    fn vertical_constant_deformation_hits_dmu_j_term() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 2.0, 0.25).unwrap();
        let base = GaugedField::constant(g, &[c(1.0, 0.0)]);
        let mut d = FieldDeformation::zeros(1, g.len());
        for k in 0..g.len() {
            d.xi[k] = Complex64::i() * base.u[k];
        }
        let spec = WeightSpec::rho_a(3.0);
        let r = mixed_norm(&d, &base, &TargetModel::standard(1), &spec);
        // dmu(u) J (i u) = -2 pi Im<u, i u> ... magnitude 2 pi everywhere
        let hand = lp_weighted(&g, &vec![2.0 * std::f64::consts::PI; g.len()], &spec);
        assert!((r.term("dmu_j_xi").unwrap() - hand).abs() < 1e-12 * hand);
        assert_eq!(r.term("dmu_xi").unwrap(), 0.0);
        let dominant = r.breakdown.iter().map(|t| t.1).fold(0.0, f64::max);
        assert_eq!(dominant, hand);
    }

    #[test]
    fn horizontal_norm_rejects_vertical_input() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 2.0, 0.25).unwrap();
        let base = GaugedField::constant(g, &[c(1.0, 0.0)]);
        let xi = vec![c(0.0, 1e-3); g.len()];
        assert!(matches!(horizontal_norm(&xi, &base, &WeightSpec::rho_a(3.0)), Err(NormError::NotHorizontal(_))));
        let zero = vec![c(0.0, 0.0); g.len()];
        assert_eq!(horizontal_norm(&zero, &base, &WeightSpec::rho_a(3.0)).unwrap().value, 0.0);
    }

    #[test]
    fn horizontal_constant_section_only_sup_term() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 2.0, 0.25).unwrap();
        let base = GaugedField::constant(g, &[c(0.6, 0.0), c(0.8, 0.0)]);
        let xi: Vec<Complex64> = (0..g.len()).flat_map(|_| [c(0.8 * 0.1, 0.0), c(-0.6 * 0.1, 0.0)]).collect();
        let r = horizontal_norm(&xi, &base, &WeightSpec::rho_a(3.0)).unwrap();
        assert!((r.value - 0.1).abs() < 1e-15);
        assert!(r.term("proj_nabla").unwrap() < 1e-14);
    }

    #[test]
    fn unit_rescaled_family_matches_rho_a() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 3.0, 0.25).unwrap();
        let base = GaugedField::constant(g, &[c(0.6, 0.0), c(0.0, 0.8)]);
        let mut d = FieldDeformation::zeros(2, g.len());
        for k in 0..g.len() {
            let z = g.point(k);
            d.xi[2 * k] = c(z.re, z.im) * (-z.norm_sqr()).exp();
            d.zeta[k] = (-z.norm_sqr()).exp();
        }
        let m = TargetModel::standard(2);
        let a = eps_mixed_norm(&d, &base, &m, &WeightSpec::inf_eps(3.0, 1.0)).unwrap();
        let b = disk_norm(&d, &base, &WeightSpec::rho_a(3.0));
        assert!((a.value - b.value).abs() < 1e-12);
        assert!(eps_mixed_norm(&d, &base, &m, &WeightSpec::rho_a(3.0)).is_err());
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, -1.0, -3.0, -5.0];
        let (a, b) = linear_fit(&xs, &ys);
        assert!((a + 2.0).abs() < 1e-14 && (b - 1.0).abs() < 1e-14);
    }
}
