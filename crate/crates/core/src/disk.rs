//! Disk components: holomorphic maps into the quotient given by polynomial
//! tuples, lifted to the unit sphere with the pulled-back canonical
//! connection, and their rescalings.

use crate::field::GaugedField;
use crate::grid::{DomainTag, Grid, GridError};
use crate::poly::Polynomial;
use crate::target_model::{herm, norm_sqr, TargetModel};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible `sum |f^a|^2` on the grid.
pub const COMMON_ZERO_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiskError {
    #[error("polynomial tuple nearly vanishes at {0} (sum |f|^2 = {1:e})")]
    CommonZero(Complex64, f64),
    #[error("point {0} lies outside the grid")]
    OutOfHull(Complex64),
    #[error("invalid disk component: {0}")]
    Invalid(String),
    #[error("boundary values miss the Lagrangian by {0:e}")]
    OffLagrangian(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskComponent {
    pub polys: Vec<Polynomial>,
    pub markers: Vec<Complex64>,
    pub boundary_lagrangian: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedDisk {
    pub disk: DiskComponent,
    pub field: GaugedField,
    /// Unit representatives of the quotient points at the markers.
    pub eval_at_markers: Vec<Vec<Complex64>>,
}

impl DiskComponent {
    pub fn new(polys: Vec<Polynomial>, markers: Vec<Complex64>, boundary_lagrangian: bool) -> Result<Self, DiskError> {
        let d = Self { polys, markers, boundary_lagrangian };
        d.validate()?;
        Ok(d)
    }

    /// Constant disk at the unit vector `x` (the only option when `N = 1`).
    pub fn constant(x: &[Complex64], markers: Vec<Complex64>) -> Result<Self, DiskError> {
        Self::new(x.iter().map(|c| Polynomial::constant(*c)).collect(), markers, false)
    }

    pub fn n(&self) -> usize {
        self.polys.len()
    }

    pub fn validate(&self) -> Result<(), DiskError> {
        if self.polys.is_empty() || self.polys.iter().all(|p| p.is_zero()) {
            return Err(DiskError::Invalid("polynomial tuple is zero".into()));
        }
        if self.n() == 1 && self.polys[0].degree() > 0 {
            return Err(DiskError::Invalid("for N = 1 the quotient is a point, so the disk must be constant".into()));
        }
        for i in 0..self.markers.len() {
            for j in i + 1..self.markers.len() {
                if self.markers[i] == self.markers[j] {
                    return Err(DiskError::Invalid(format!("markers {i} and {j} coincide")));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, z: Complex64) -> Vec<Complex64> {
        self.polys.iter().map(|p| p.eval(z)).collect()
    }

    /// Unit lift `f / |f|` and the connection `(phi, psi)` making its
    /// covariant derivatives orthogonal to the orbit, evaluated in closed form.
    pub fn lift_at(&self, z: Complex64) -> Result<(Vec<Complex64>, f64, f64), DiskError> {
        let f = self.eval(z);
        let r2 = norm_sqr(&f);
        if !(r2 >= COMMON_ZERO_THRESHOLD) {
            return Err(DiskError::CommonZero(z, r2));
        }
        let df: Vec<Complex64> = self.polys.iter().map(|p| p.derivative().eval(z)).collect();
        let c = herm(&f, &df) / r2;
        let r = r2.sqrt();
        // d_s f = f', d_t f = i f'; the |f| derivative is radial and drops out
        Ok((f.iter().map(|x| x / r).collect(), -c.im, -c.re))
    }
}

/// Lifts the disk onto `grid`.
pub fn lift(disk: &DiskComponent, grid: &Grid) -> Result<LiftedDisk, DiskError> {
    disk.validate()?;
    let n = disk.n();
    let m = grid.len();
    let mut u = Vec::with_capacity(n * m);
    let mut phi = vec![0.0; m];
    let mut psi = vec![0.0; m];
    for k in 0..m {
        let (x, p, q) = disk.lift_at(grid.point(k))?;
        u.extend(x);
        phi[k] = p;
        psi[k] = q;
    }
    let field = GaugedField { grid: *grid, n, u, phi, psi, holonomy: 0 };
    if disk.boundary_lagrangian {
        if grid.tag != DomainTag::HalfPlane {
            return Err(DiskError::Invalid("Lagrangian boundary needs a half-plane grid".into()));
        }
        let model = TargetModel::standard(n);
        let worst = (0..grid.nx)
            .map(|i| model.lagrangian_defect(field.u_at(grid.index(i, 0))))
            .fold(0.0, f64::max);
        if worst > 1e-8 {
            return Err(DiskError::OffLagrangian(worst));
        }
    }
    let eval_at_markers = disk
        .markers
        .iter()
        .map(|z| disk.lift_at(*z).map(|(x, _, _)| x))
        .collect::<Result<_, _>>()?;
    Ok(LiftedDisk { disk: disk.clone(), field, eval_at_markers })
}

/// Pullback under `z -> eps z` onto the grid with spacing and center divided
/// by `eps` and the same node counts: `u(eps z)`, `eps phi(eps z)`, `eps psi(eps z)`.
pub fn rescale(lifted: &LiftedDisk, eps: f64) -> Result<GaugedField, DiskError> {
    if !(eps > 0.0) {
        return Err(DiskError::Invalid(format!("epsilon {eps} must be positive")));
    }
    let g = &lifted.field.grid;
    let grid = Grid::with_dims(g.tag, g.center / eps, g.spacing / eps, g.nx, g.ny)?;
    let mut out = lifted.field.clone();
    out.grid = grid;
    for x in out.phi.iter_mut().chain(out.psi.iter_mut()) {
        *x *= eps;
    }
    Ok(out)
}

/// The rescaled lift evaluated in closed form on an arbitrary grid.
pub fn rescaled_field(disk: &DiskComponent, eps: f64, grid: &Grid) -> Result<GaugedField, DiskError> {
    let n = disk.n();
    let m = grid.len();
    let mut u = Vec::with_capacity(n * m);
    let mut phi = vec![0.0; m];
    let mut psi = vec![0.0; m];
    for k in 0..m {
        let (x, p, q) = disk.lift_at(grid.point(k) * eps)?;
        u.extend(x);
        phi[k] = eps * p;
        psi[k] = eps * q;
    }
    Ok(GaugedField { grid: *grid, n, u, phi, psi, holonomy: 0 })
}

/// Bilinear interpolation of the lift at `z`, projected back to the sphere.
pub fn evaluate_quotient(lifted: &LiftedDisk, z: Complex64) -> Result<Vec<Complex64>, DiskError> {
    let f = &lifted.field;
    let st = f.grid.bilinear(z).ok_or(DiskError::OutOfHull(z))?;
    let mut x = vec![Complex64::new(0.0, 0.0); f.n];
    for (k, w) in st {
        for (a, v) in x.iter_mut().enumerate() {
            *v += f.u[k * f.n + a] * w;
        }
    }
    let r = norm_sqr(&x).sqrt();
    if r == 0.0 {
        return Err(DiskError::CommonZero(z, 0.0));
    }
    Ok(x.iter().map(|v| v / r).collect())
}

/// Largest orbit-direction part `|<u, v>|` of the covariant derivatives,
/// computed from the closed-form derivative of the lift.
pub fn horizontality_defect(disk: &DiskComponent, grid: &Grid) -> Result<f64, DiskError> {
    let mut worst: f64 = 0.0;
    for k in 0..grid.len() {
        let z = grid.point(k);
        let f = disk.eval(z);
        let df: Vec<Complex64> = disk.polys.iter().map(|p| p.derivative().eval(z)).collect();
        let r2 = norm_sqr(&f);
        let r = r2.sqrt();
        let (u, phi, psi) = disk.lift_at(z)?;
        let fdf = herm(&f, &df);
        // d(f/|f|) = df/|f| - f Re<f, df>/|f|^3 with d_s f = f', d_t f = i f'
        for (dir, radial, conn) in [(Complex64::new(1.0, 0.0), fdf.re, phi), (Complex64::i(), -fdf.im, psi)] {
            let v: Vec<Complex64> = (0..f.len())
                .map(|a| dir * df[a] / r - f[a] * radial / (r2 * r) + Complex64::new(0.0, conn) * u[a])
                .collect();
            worst = worst.max(herm(&u, &v).norm());
        }
    }
    Ok(worst)
}
