//! The scalar reduction of the abelian vortex equations with prescribed
//! zeros: `Laplace(h) = pi (exp(2h) sum |f^a|^2 - 1)`, giving the vortex
//! `(exp(h) f, -d_t h, d_s h)`.
//!
//! The discretization is the compact nine-point scheme
//! `L9 h = (1 + dx^2/12 L5) g(h)`, fourth order for smooth data.

use crate::field::{energy, GaugedField};
use crate::grid::{DomainTag, Grid, GridError, NodeKind};
use crate::poly::Polynomial;
use crate::sparse::{bicgstab, CsrBuilder, SolverError};
use crate::target_model::TargetModel;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Required distance between every zero and the truncation boundary.
pub const ZERO_MARGIN: f64 = 5.0;
/// Radius of the ball used for a coincident cluster in the separation sweep.
pub const CLUSTER_RADIUS: f64 = 6.0;

#[derive(Debug, Error)]
pub enum TaubesError {
    #[error("invalid vortex data: {0}")]
    InvalidData(String),
    #[error("zero {0} lies within {ZERO_MARGIN} of the truncation boundary")]
    ZeroTooClose(Complex64),
    #[error("sum |f|^2 vanishes on the truncation boundary at {0}")]
    ZeroOnBoundary(Complex64),
    #[error("Newton iteration stalled; residual trace {0:?}")]
    NewtonDiverged(Vec<f64>),
    #[error("flux is defined on plane solutions only")]
    NotPlane,
    #[error("solutions live on grids with different spacing or domain")]
    GridsIncompatible,
    #[error(transparent)]
    Linear(#[from] SolverError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexData {
    pub domain: DomainTag,
    pub polys: Vec<Polynomial>,
    /// Marker position in a stable configuration; 0 when standalone.
    pub marker: Complex64,
}

impl VortexData {
    pub fn new(domain: DomainTag, polys: Vec<Polynomial>, marker: Complex64) -> Result<Self, TaubesError> {
        let d = Self { domain, polys, marker };
        d.validate()?;
        Ok(d)
    }

    /// Rank-one data `f = prod (z - z_i)`.
    pub fn from_zeros(domain: DomainTag, zeros: &[Complex64]) -> Result<Self, TaubesError> {
        Self::new(domain, vec![Polynomial::from_roots(zeros)], Complex64::new(0.0, 0.0))
    }

    pub fn n(&self) -> usize {
        self.polys.len()
    }

    pub fn degree(&self) -> usize {
        self.polys.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    /// Zeros of each component polynomial.
    pub fn zeros(&self) -> Vec<Complex64> {
        self.polys.iter().flat_map(|p| p.roots()).collect()
    }

    /// Common zeros: roots of the first nonconstant component at which all
    /// components vanish.
    pub fn common_zeros(&self) -> Vec<Complex64> {
        let Some(p) = self.polys.iter().find(|p| p.degree() > 0) else {
            return vec![];
        };
        p.roots()
            .into_iter()
            .filter(|z| {
                let scale = 1.0 + z.norm().powi(self.degree() as i32);
                self.polys.iter().all(|q| q.eval(*z).norm() < 1e-8 * scale)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), TaubesError> {
        if self.polys.is_empty() {
            return Err(TaubesError::InvalidData("no polynomials".into()));
        }
        if self.polys.iter().all(|p| p.is_zero()) {
            return Err(TaubesError::InvalidData("all polynomials vanish".into()));
        }
        if self.domain == DomainTag::HalfPlane {
            if self.n() != 1 {
                return Err(TaubesError::InvalidData("half-plane vortices need N = 1".into()));
            }
            for z in self.zeros() {
                if !(z.im > 1e-9) {
                    return Err(TaubesError::InvalidData(format!(
                        "zero {z} is not in the open upper half-plane (the Lagrangian boundary condition forces |u| = 1 on the real axis)"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn abs_sqr_at(&self, z: Complex64) -> f64 {
        self.polys.iter().map(|p| p.eval(z).norm_sqr()).sum()
    }

    pub fn eval(&self, z: Complex64) -> Vec<Complex64> {
        self.polys.iter().map(|p| p.eval(z)).collect()
    }

    /// The same data with every zero moved by `shift`.
    pub fn translated(&self, shift: Complex64) -> Self {
        Self { polys: self.polys.iter().map(|p| p.translated(shift)).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaubesSolution {
    pub data: VortexData,
    pub h: Vec<f64>,
    pub residual_inf: f64,
    pub iterations: usize,
    pub residual_trace: Vec<f64>,
    pub field: GaugedField,
}

fn check_coverage(data: &VortexData, grid: &Grid) -> Result<(), TaubesError> {
    let (s0, s1) = (grid.s(0), grid.s(grid.nx - 1));
    let (t0, t1) = (grid.t(0), grid.t(grid.ny - 1));
    for z in data.zeros() {
        let mut margin = (z.re - s0).min(s1 - z.re).min(t1 - z.im);
        if grid.tag == DomainTag::Plane {
            margin = margin.min(z.im - t0);
        }
        if margin < ZERO_MARGIN {
            return Err(TaubesError::ZeroTooClose(z));
        }
    }
    Ok(())
}

struct Scheme<'a> {
    grid: &'a Grid,
    f2: Vec<f64>,
    unknowns: Vec<usize>,
    slot: Vec<usize>,
}

impl Scheme<'_> {
    fn g(&self, h: &[f64]) -> Vec<f64> {
        h.iter().zip(&self.f2).map(|(h, f)| PI * ((2.0 * h).exp() * f - 1.0)).collect()
    }

    fn residual(&self, h: &[f64]) -> Vec<f64> {
        let g = self.g(h);
        let nx = self.grid.nx;
        let dx2 = self.grid.spacing * self.grid.spacing;
        self.unknowns
            .iter()
            .map(|&k| {
                let edge = h[k - 1] + h[k + 1] + h[k - nx] + h[k + nx];
                let corner = h[k - nx - 1] + h[k - nx + 1] + h[k + nx - 1] + h[k + nx + 1];
                let l9 = (4.0 * edge + corner - 20.0 * h[k]) / (6.0 * dx2);
                let l5g = g[k - 1] + g[k + 1] + g[k - nx] + g[k + nx] - 4.0 * g[k];
                -l9 + g[k] + l5g / 12.0
            })
            .collect()
    }

    fn jacobian(&self, h: &[f64]) -> crate::sparse::CsrMatrix {
        let nx = self.grid.nx;
        let dx2 = self.grid.spacing * self.grid.spacing;
        let gp: Vec<f64> = h.iter().zip(&self.f2).map(|(h, f)| 2.0 * PI * (2.0 * h).exp() * f).collect();
        let mut b = CsrBuilder::new(self.unknowns.len());
        for &k in &self.unknowns {
            let mut put = |node: usize, v: f64| {
                if self.slot[node] != usize::MAX {
                    b.push(self.slot[node], v);
                }
            };
            put(k, 20.0 / (6.0 * dx2) + 2.0 / 3.0 * gp[k]);
            for nb in [k - 1, k + 1, k - nx, k + nx] {
                put(nb, -4.0 / (6.0 * dx2) + gp[nb] / 12.0);
            }
            for nb in [k - nx - 1, k - nx + 1, k + nx - 1, k + nx + 1] {
                put(nb, -1.0 / (6.0 * dx2));
            }
            b.finish_row();
        }
        b.build()
    }
}

fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Damped Newton solve with Dirichlet data `h = -log |f|` on every boundary node.
pub fn solve_taubes(data: &VortexData, grid: &Grid, tol: f64) -> Result<TaubesSolution, TaubesError> {
    data.validate()?;
    if grid.tag != data.domain {
        return Err(TaubesError::InvalidData("grid domain differs from vortex domain".into()));
    }
    if !(tol > 0.0) {
        return Err(TaubesError::InvalidData(format!("tolerance {tol} must be positive")));
    }
    check_coverage(data, grid)?;
    let m = grid.len();
    let f2: Vec<f64> = (0..m).map(|k| data.abs_sqr_at(grid.point(k))).collect();
    let mut h = vec![0.0; m];
    let mut unknowns = Vec::new();
    let mut slot = vec![usize::MAX; m];
    for k in 0..m {
        if grid.kind(k) == NodeKind::Interior {
            slot[k] = unknowns.len();
            unknowns.push(k);
            h[k] = -0.5 * f2[k].max(1.0).ln();
        } else {
            if !(f2[k] > 0.0) {
                return Err(TaubesError::ZeroOnBoundary(grid.point(k)));
            }
            h[k] = -0.5 * f2[k].ln();
        }
    }
    let scheme = Scheme { grid, f2, unknowns, slot };
    let mut res = scheme.residual(&h);
    let mut trace = vec![sup(&res)];
    let mut iterations = 0;
    while *trace.last().unwrap() >= tol {
        if iterations == 60 {
            return Err(TaubesError::NewtonDiverged(trace));
        }
        let jac = scheme.jacobian(&h);
        let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
        let mut delta = vec![0.0; rhs.len()];
        bicgstab(&jac, &rhs, &mut delta, 1e-13, 50_000)?;
        let current = *trace.last().unwrap();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=20 {
            let mut trial = h.clone();
            for (p, &k) in scheme.unknowns.iter().enumerate() {
                trial[k] += step * delta[p];
            }
            let r = scheme.residual(&trial);
            let s = sup(&r);
            if s < current {
                accepted = Some((trial, r, s));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, r, s)) = accepted else {
            return Err(TaubesError::NewtonDiverged(trace));
        };
        h = trial;
        res = r;
        trace.push(s);
        iterations += 1;
    }
    let field = assemble_field(data, grid, &h);
    Ok(TaubesSolution {
        data: data.clone(),
        residual_inf: *trace.last().unwrap(),
        h,
        iterations,
        residual_trace: trace,
        field,
    })
}

/// `(exp(h) f, -d_t h, d_s h)` with the second-order stencils.
pub fn assemble_field(data: &VortexData, grid: &Grid, h: &[f64]) -> GaugedField {
    let m = grid.len();
    let n = data.n();
    let mut u = Vec::with_capacity(n * m);
    for k in 0..m {
        let e = h[k].exp();
        u.extend(data.eval(grid.point(k)).into_iter().map(|f| f * e));
    }
    let phi = grid.dt(h).into_iter().map(|x| -x).collect();
    let psi = grid.ds(h);
    let holonomy = if grid.tag == DomainTag::Plane { data.degree() as i64 } else { 0 };
    GaugedField { grid: *grid, n, u, phi, psi, holonomy }
}

/// `(1/2 pi)` times the outward normal derivative of `h` integrated over the
/// rectangle boundary; equals `-d` for degree `d`.
pub fn vortex_flux(sol: &TaubesSolution) -> Result<f64, TaubesError> {
    let g = &sol.field.grid;
    if g.tag != DomainTag::Plane {
        return Err(TaubesError::NotPlane);
    }
    let hs = g.ds(&sol.h);
    let ht = g.dt(&sol.h);
    let dx = g.spacing;
    let edge = |vals: Vec<f64>| -> f64 {
        let n = vals.len();
        vals.iter().enumerate().map(|(i, v)| if i == 0 || i + 1 == n { 0.5 * v } else { *v }).sum::<f64>() * dx
    };
    let bottom = edge((0..g.nx).map(|i| -ht[g.index(i, 0)]).collect());
    let top = edge((0..g.nx).map(|i| ht[g.index(i, g.ny - 1)]).collect());
    let left = edge((0..g.ny).map(|j| -hs[g.index(0, j)]).collect());
    let right = edge((0..g.ny).map(|j| hs[g.index(g.nx - 1, j)]).collect());
    Ok((bottom + top + left + right) / (2.0 * PI))
}

/// Sup distance between `a.h` sampled at `z - translation` and `b.h` at `z`,
/// over nodes of `b` whose preimage lies in `a`'s grid.
pub fn moduli_compare(a: &TaubesSolution, b: &TaubesSolution, translation: Complex64) -> Result<f64, TaubesError> {
    let (ga, gb) = (&a.field.grid, &b.field.grid);
    if ga.tag != gb.tag || (ga.spacing - gb.spacing).abs() > 1e-12 * ga.spacing {
        return Err(TaubesError::GridsIncompatible);
    }
    let mut worst: f64 = 0.0;
    for k in 0..gb.len() {
        let z = gb.point(k) - translation;
        if let Some(st) = ga.bilinear(z) {
            let v: f64 = st.iter().map(|(i, w)| w * a.h[*i]).sum();
            worst = worst.max((v - b.h[k]).abs());
        }
    }
    Ok(worst)
}

pub fn solution_energy(sol: &TaubesSolution) -> f64 {
    energy(&sol.field, &TargetModel::standard(sol.data.n()), None).total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationRow {
    pub separation: f64,
    pub energy_total: f64,
    pub energy_ball_left: f64,
    pub energy_ball_right: f64,
    pub energy_middle_strip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTwoRow {
    pub n: f64,
    /// Sup over the annulus of the chordal distance to `[w - 1 : w]`.
    pub chordal_distance: f64,
    /// Sup over the annulus of `| |u| - 1 |`, the distance to the unit lift.
    pub lift_distance: f64,
    pub energy_total: f64,
}

/// Two unit vortices at `+-s`: energy in the balls `B(+-s, s/2)` and in the
/// strip `|Re z| < s/2`. For `s = 0` both balls are `B(0, CLUSTER_RADIUS)`.
pub fn separation_sweep(separations: &[f64], spacing: f64, tol: f64) -> Result<Vec<SeparationRow>, TaubesError> {
    if separations.is_empty() {
        return Err(TaubesError::InvalidData("empty sweep list".into()));
    }
    if separations.iter().any(|s| !(*s >= 0.0)) {
        return Err(TaubesError::InvalidData("separations must be nonnegative".into()));
    }
    let mut rows = Vec::new();
    for &s in separations {
        let data = VortexData::from_zeros(DomainTag::Plane, &[Complex64::new(s, 0.0), Complex64::new(-s, 0.0)])?;
        let grid = Grid::new(DomainTag::Plane, Complex64::new(0.0, 0.0), s + 20.0, spacing)?;
        let sol = solve_taubes(&data, &grid, tol)?;
        let e = energy(&sol.field, &TargetModel::standard(1), None);
        let radius = if s > 0.0 { 0.5 * s } else { CLUSTER_RADIUS };
        let region = |pred: &dyn Fn(Complex64) -> bool| -> f64 {
            (0..grid.len()).filter(|&k| pred(grid.point(k))).map(|k| grid.quad_weight(k) * e.density[k]).sum()
        };
        rows.push(SeparationRow {
            separation: s,
            energy_total: e.total,
            energy_ball_left: region(&|z| (z + s).norm() < radius),
            energy_ball_right: region(&|z| (z - s).norm() < radius),
            energy_middle_strip: if s > 0.0 { region(&|z| z.re.abs() < 0.5 * s) } else { 0.0 },
        });
    }
    Ok(rows)
}

/// Rank-two data `f = (z - n, z)` compared, after rescaling `z = n w`, with
/// the map `w -> [w - 1 : w]` on the annulus `0.5 <= |w| <= 2`.
pub fn rank_two_sweep(ns: &[f64], spacing: f64, tol: f64) -> Result<Vec<RankTwoRow>, TaubesError> {
    if ns.is_empty() {
        return Err(TaubesError::InvalidData("empty sweep list".into()));
    }
    if ns.iter().any(|n| !(*n > 0.0)) {
        return Err(TaubesError::InvalidData("rank-two parameters must be positive".into()));
    }
    let one = Complex64::new(1.0, 0.0);
    let mut rows = Vec::new();
    for &n in ns {
        let polys = vec![Polynomial::new(vec![one, Complex64::new(-n, 0.0)]), Polynomial::new(vec![one, Complex64::new(0.0, 0.0)])];
        let data = VortexData::new(DomainTag::Plane, polys, Complex64::new(0.0, 0.0))?;
        let grid = Grid::new(DomainTag::Plane, Complex64::new(0.0, 0.0), 2.0 * n + 8.0, spacing)?;
        let sol = solve_taubes(&data, &grid, tol)?;
        let mut chordal: f64 = 0.0;
        let mut lift: f64 = 0.0;
        for k in 0..grid.len() {
            let w = grid.point(k) / n;
            let r = w.norm();
            if (0.5..=2.0).contains(&r) {
                let u = sol.field.u_at(k);
                let target = [w - one, w];
                chordal = chordal.max(crate::target_model::chordal_distance(u, &target));
                lift = lift.max((crate::target_model::norm_sqr(u).sqrt() - 1.0).abs());
            }
        }
        rows.push(RankTwoRow { n, chordal_distance: chordal, lift_distance: lift, energy_total: solution_energy(&sol) });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn trivial_data_gives_zero_solution() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 6.0, 0.5).unwrap();
        let data = VortexData::new(DomainTag::Plane, vec![Polynomial::constant(c(1.0, 0.0))], c(0.0, 0.0)).unwrap();
        let sol = solve_taubes(&data, &g, 1e-10).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.h.iter().all(|h| *h == 0.0));
        assert_eq!(vortex_flux(&sol).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_half_plane_data() {
        assert!(VortexData::from_zeros(DomainTag::HalfPlane, &[c(1.0, 0.0)]).is_err());
        assert!(VortexData::from_zeros(DomainTag::HalfPlane, &[c(1.0, -1.0)]).is_err());
        assert!(VortexData::from_zeros(DomainTag::HalfPlane, &[c(1.0, 2.0)]).is_ok());
    }

    #[test]
    fn rejects_zero_near_boundary() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 6.0, 0.5).unwrap();
        let data = VortexData::from_zeros(DomainTag::Plane, &[c(3.0, 0.0)]).unwrap();
        assert!(matches!(solve_taubes(&data, &g, 1e-9), Err(TaubesError::ZeroTooClose(_))));
    }

    #[test]
    fn unit_vortex_solves_and_is_bounded() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 10.0, 0.25).unwrap();
        let data = VortexData::from_zeros(DomainTag::Plane, &[c(0.0, 0.0)]).unwrap();
        let sol = solve_taubes(&data, &g, 1e-10).unwrap();
        assert!(sol.residual_inf < 1e-10);
        assert!(sol.residual_trace.windows(2).all(|w| w[1] < w[0]));
        let umax = (0..g.len()).map(|k| sol.field.u[k].norm()).fold(0.0, f64::max);
        assert!(umax <= 1.0 + 1e-8);
        assert_eq!(sol.field.holonomy, 1);
    }

    #[test]
    fn half_plane_boundary_on_torus() {
        let g = Grid::new(DomainTag::HalfPlane, c(0.0, 0.0), 10.0, 0.25).unwrap();
        let data = VortexData::from_zeros(DomainTag::HalfPlane, &[c(0.5, 2.0)]).unwrap();
        let sol = solve_taubes(&data, &g, 1e-10).unwrap();
        let worst = (0..g.nx).map(|i| (sol.field.u[g.index(i, 0)].norm() - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8);
        assert_eq!(sol.field.holonomy, 0);
    }
}
