//! Discrete gauged maps `(u, phi, psi)` and their pointwise geometry:
//! covariant derivatives, curvature, energy, gauge action, Coulomb gauge
//! fixing, holonomy, and the vortex residual.

use crate::grid::{DomainTag, Grid, GridError, NodeKind};
use crate::reduce::pairwise_sum;
use crate::sparse::{bicgstab, CsrBuilder, CsrMatrix, SolverError};
use crate::target_model::{herm, norm_sqr, TargetModel};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::{self, Read, Write};
use thiserror::Error;

/// Pointwise radius of the flat chart `exp_u(xi) = u + xi`.
pub const CHART_RADIUS: f64 = 0.5;

/// Coefficient of the doubler filter in the stabilized discrete equations.
/// It exceeds the largest zeroth-order coupling of the linearization in the
/// balanced scaling (`sqrt(2 pi)`), so checkerboard modes stay massive.
pub const DOUBLER_MASS: f64 = 5.0;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("array of length {got} does not match {expected} entries")]
    Shape { expected: usize, got: usize },
    #[error("half-plane fields carry zero holonomy")]
    HalfPlaneHolonomy,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("deformation leaves the chart: |u - u_ref| = {0} at some node")]
    NotInChart(f64),
    #[error("field vanishes on the outer loop (|u| = {0})")]
    FieldVanishesOnLoop(f64),
    #[error("holonomy is defined on plane fields only")]
    NotPlane,
    #[error("gauge fixing failed: {0}")]
    SolverDiverged(#[from] SolverError),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaugedField {
    pub grid: Grid,
    pub n: usize,
    /// Node-major: component `a` of node `k` is `u[k * n + a]`.
    pub u: Vec<Complex64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub holonomy: i64,
}

/// Tangent vector `(xi, eta, zeta)` at a gauged field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDeformation {
    pub n: usize,
    pub xi: Vec<Complex64>,
    pub eta: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl GaugedField {
    pub fn new(
        grid: Grid,
        n: usize,
        u: Vec<Complex64>,
        phi: Vec<f64>,
        psi: Vec<f64>,
        holonomy: i64,
    ) -> Result<Self, FieldError> {
        let m = grid.len();
        if u.len() != m * n {
            return Err(FieldError::Shape { expected: m * n, got: u.len() });
        }
        for a in [&phi, &psi] {
            if a.len() != m {
                return Err(FieldError::Shape { expected: m, got: a.len() });
            }
        }
        if grid.tag == DomainTag::HalfPlane && holonomy != 0 {
            return Err(FieldError::HalfPlaneHolonomy);
        }
        Ok(Self { grid, n, u, phi, psi, holonomy })
    }

    /// Constant map with trivial connection.
    pub fn constant(grid: Grid, x: &[Complex64]) -> Self {
        let m = grid.len();
        let u = (0..m).flat_map(|_| x.iter().copied()).collect();
        Self { grid, n: x.len(), u, phi: vec![0.0; m], psi: vec![0.0; m], holonomy: 0 }
    }

    /// `u = e^{i k theta} x`, `a = -k d theta`, with `theta` the angle about
    /// `center` (set to zero at the center itself).
    pub fn covariantly_constant(grid: Grid, x: &[Complex64], holonomy: i64, center: Complex64) -> Self {
        let m = grid.len();
        let n = x.len();
        let k = holonomy as f64;
        let mut u = Vec::with_capacity(m * n);
        let mut phi = vec![0.0; m];
        let mut psi = vec![0.0; m];
        for node in 0..m {
            let w = grid.point(node) - center;
            let r2 = w.norm_sqr();
            let (theta, ds, dt) = if r2 > 0.0 { (w.arg(), -w.im / r2, w.re / r2) } else { (0.0, 0.0, 0.0) };
            let g = Complex64::from_polar(1.0, k * theta);
            u.extend(x.iter().map(|c| g * c));
            phi[node] = -k * ds;
            psi[node] = -k * dt;
        }
        let hol = if grid.tag == DomainTag::HalfPlane { 0 } else { holonomy };
        Self { grid, n, u, phi, psi, holonomy: hol }
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn u_at(&self, k: usize) -> &[Complex64] {
        &self.u[k * self.n..(k + 1) * self.n]
    }

    pub fn same_grid(&self, other: &GaugedField) -> bool {
        self.grid == other.grid && self.n == other.n
    }

    pub fn norm_u(&self) -> Vec<f64> {
        (0..self.nodes()).map(|k| norm_sqr(self.u_at(k)).sqrt()).collect()
    }

    /// Sup over nodes of `max(|du|, |dphi|, |dpsi|)`.
    pub fn sup_distance(&self, other: &GaugedField) -> f64 {
        let du = self.u.iter().zip(&other.u).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let dp = self.phi.iter().zip(&other.phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dq = self.psi.iter().zip(&other.psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        du.max(dp).max(dq)
    }

    /// Constant phase rotation `u -> g u`.
    pub fn rotated(&self, g: Complex64) -> GaugedField {
        let mut out = self.clone();
        for x in &mut out.u {
            *x *= g;
        }
        out
    }
}

impl FieldDeformation {
    pub fn zeros(n: usize, nodes: usize) -> Self {
        Self { n, xi: vec![Complex64::new(0.0, 0.0); n * nodes], eta: vec![0.0; nodes], zeta: vec![0.0; nodes] }
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.eta.len()
    }

    #[inline]
    pub fn xi_at(&self, k: usize) -> &[Complex64] {
        &self.xi[k * self.n..(k + 1) * self.n]
    }

    /// Flat-chart logarithm `v - v_ref`.
    pub fn between(v: &GaugedField, v_ref: &GaugedField) -> Result<Self, FieldError> {
        if !v.same_grid(v_ref) {
            return Err(FieldError::GridMismatch);
        }
        let xi: Vec<Complex64> = v.u.iter().zip(&v_ref.u).map(|(a, b)| a - b).collect();
        let worst = (0..v.nodes())
            .map(|k| norm_sqr(&xi[k * v.n..(k + 1) * v.n]).sqrt())
            .fold(0.0, f64::max);
        if worst >= CHART_RADIUS {
            return Err(FieldError::NotInChart(worst));
        }
        Ok(Self {
            n: v.n,
            xi,
            eta: v.phi.iter().zip(&v_ref.phi).map(|(a, b)| a - b).collect(),
            zeta: v.psi.iter().zip(&v_ref.psi).map(|(a, b)| a - b).collect(),
        })
    }

    /// Flat-chart exponential `v + self`.
    pub fn apply(&self, v: &GaugedField) -> GaugedField {
        let mut out = v.clone();
        for (a, b) in out.u.iter_mut().zip(&self.xi) {
            *a += b;
        }
        for (a, b) in out.phi.iter_mut().zip(&self.eta) {
            *a += b;
        }
        for (a, b) in out.psi.iter_mut().zip(&self.zeta) {
            *a += b;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            xi: self.xi.iter().map(|x| x * c).collect(),
            eta: self.eta.iter().map(|x| x * c).collect(),
            zeta: self.zeta.iter().map(|x| x * c).collect(),
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self {
            n: self.n,
            xi: self.xi.iter().zip(&other.xi).map(|(a, b)| a + b).collect(),
            eta: self.eta.iter().zip(&other.eta).map(|(a, b)| a + b).collect(),
            zeta: self.zeta.iter().zip(&other.zeta).map(|(a, b)| a + b).collect(),
        }
    }

    /// Real unknowns per node: `Re xi^a, Im xi^a` for each component, then `eta, zeta`.
    pub fn vars_per_node(n: usize) -> usize {
        2 * n + 2
    }

    pub fn pack(&self) -> Vec<f64> {
        let w = Self::vars_per_node(self.n);
        let mut out = vec![0.0; w * self.nodes()];
        for k in 0..self.nodes() {
            let o = &mut out[k * w..(k + 1) * w];
            for (a, x) in self.xi_at(k).iter().enumerate() {
                o[2 * a] = x.re;
                o[2 * a + 1] = x.im;
            }
            o[2 * self.n] = self.eta[k];
            o[2 * self.n + 1] = self.zeta[k];
        }
        out
    }

    pub fn unpack(n: usize, packed: &[f64]) -> Self {
        let w = Self::vars_per_node(n);
        let nodes = packed.len() / w;
        let mut d = Self::zeros(n, nodes);
        for k in 0..nodes {
            let o = &packed[k * w..(k + 1) * w];
            for a in 0..n {
                d.xi[k * n + a] = Complex64::new(o[2 * a], o[2 * a + 1]);
            }
            d.eta[k] = o[2 * n];
            d.zeta[k] = o[2 * n + 1];
        }
        d
    }
}

/// `(v_s, v_t)` with `v_s = d_s u + i phi u`, `v_t = d_t u + i psi u`.
pub fn covariant_derivatives(v: &GaugedField) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = v.n;
    let m = v.nodes();
    let mut vs = vec![Complex64::new(0.0, 0.0); m * n];
    let mut vt = vs.clone();
    for a in 0..n {
        let us = v.grid.ds_comp(&v.u, n, a);
        let ut = v.grid.dt_comp(&v.u, n, a);
        for k in 0..m {
            let x = v.u[k * n + a];
            vs[k * n + a] = us[k] + Complex64::new(0.0, v.phi[k]) * x;
            vt[k * n + a] = ut[k] + Complex64::new(0.0, v.psi[k]) * x;
        }
    }
    (vs, vt)
}

/// `kappa = d_s psi - d_t phi`.
pub fn curvature(v: &GaugedField) -> Vec<f64> {
    let a = v.grid.ds(&v.psi);
    let b = v.grid.dt(&v.phi);
    a.iter().zip(&b).map(|(x, y)| x - y).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub total: f64,
    pub density: Vec<f64>,
}

/// Energy with the Lie-algebra terms weighted by the metric of
/// [`TargetModel::lie_metric`]; `sigma` is the conformal volume factor
/// (`None` for the flat metric).
pub fn energy(v: &GaugedField, model: &TargetModel, sigma: Option<&[f64]>) -> EnergyReport {
    let (vs, vt) = covariant_derivatives(v);
    let kappa = curvature(v);
    let c = model.lie_metric();
    let n = v.n;
    let density: Vec<f64> = (0..v.nodes())
        .map(|k| {
            let s = sigma.map_or(1.0, |x| x[k]);
            let mu = model.moment_map(v.u_at(k));
            let d = norm_sqr(&vs[k * n..(k + 1) * n]) + norm_sqr(&vt[k * n..(k + 1) * n]);
            0.5 * d + 0.5 * c * (kappa[k] * kappa[k] / s + s * mu * mu)
        })
        .collect();
    let total = integrate(&v.grid, &density);
    EnergyReport { total, density }
}

/// Trapezoid integral of a nodal array.
pub fn integrate(grid: &Grid, f: &[f64]) -> f64 {
    let terms: Vec<f64> = f.iter().enumerate().map(|(k, x)| grid.quad_weight(k) * x).collect();
    pairwise_sum(&terms)
}

/// `u -> e^{i chi} u`, `phi -> phi - d_s chi`, `psi -> psi - d_t chi`.
pub fn gauge_transform(v: &GaugedField, chi: &[f64]) -> GaugedField {
    let cs = v.grid.ds(chi);
    let ct = v.grid.dt(chi);
    let mut out = v.clone();
    for k in 0..v.nodes() {
        let g = Complex64::from_polar(1.0, chi[k]);
        for a in 0..v.n {
            out.u[k * v.n + a] *= g;
        }
        out.phi[k] -= cs[k];
        out.psi[k] -= ct[k];
    }
    out
}

/// Sparse `d/ds`, `d/dt` on all nodes of a grid.
pub fn difference_matrices(grid: &Grid) -> (CsrMatrix, CsrMatrix) {
    let m = grid.len();
    let mut bs = CsrBuilder::new(m);
    let mut bt = CsrBuilder::new(m);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            for (c, w) in grid.ds_stencil(i, j) {
                if w != 0.0 {
                    bs.push(c, w);
                }
            }
            bs.finish_row();
            for (c, w) in grid.dt_stencil(i, j) {
                if w != 0.0 {
                    bt.push(c, w);
                }
            }
            bt.finish_row();
        }
    }
    (bs.build(), bt.build())
}

/// Sparse [`Grid::doubler_filter`].
pub fn doubler_matrix(grid: &Grid) -> CsrMatrix {
    let mut b = CsrBuilder::new(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            for (c, w) in grid.doubler_stencil(i, j) {
                if w != 0.0 {
                    b.push(c, w);
                }
            }
            b.finish_row();
        }
    }
    b.build()
}

/// Coulomb-gauge expression `d_s eta + d_t zeta + dmu(u_ref) J xi + m W eta`
/// of `v = v_ref + (xi, eta, zeta)`, with `W` the doubler filter and
/// `m = DOUBLER_MASS`, at interior nodes (boundary nodes carry no gauge
/// condition and are reported as zero).
pub fn coulomb_residual(v: &GaugedField, v_ref: &GaugedField, model: &TargetModel) -> Result<Vec<f64>, FieldError> {
    if !v.same_grid(v_ref) {
        return Err(FieldError::GridMismatch);
    }
    let d = FieldDeformation::between(v, v_ref)?;
    Ok(coulomb_expression(&d, v_ref, model))
}

pub(crate) fn coulomb_expression(d: &FieldDeformation, v_ref: &GaugedField, model: &TargetModel) -> Vec<f64> {
    let g = &v_ref.grid;
    let es = g.ds(&d.eta);
    let zt = g.dt(&d.zeta);
    let ef = g.doubler_filter(&d.eta);
    (0..g.len())
        .map(|k| {
            if g.kind(k) != NodeKind::Interior {
                return 0.0;
            }
            es[k] + zt[k] + model.dmu_j(v_ref.u_at(k), d.xi_at(k)) + DOUBLER_MASS * ef[k]
        })
        .collect()
}

/// Gauge transformation making the Coulomb residual relative to `v_ref`
/// vanish; returns the transformed field and the gauge function.
/// `chi = 0` on the truncation boundary, `d_t chi = 0` on the real axis of a
/// half-plane (so `zeta` stays zero there).
pub fn coulomb_fix_with_gauge(
    v: &GaugedField,
    v_ref: &GaugedField,
    model: &TargetModel,
) -> Result<(GaugedField, Vec<f64>), FieldError> {
    if !v.same_grid(v_ref) {
        return Err(FieldError::GridMismatch);
    }
    let g = v.grid;
    let m = g.len();
    let (ds, dt) = difference_matrices(&g);
    let lap = ds.matmul(&ds).add_scaled(1.0, &dt.matmul(&dt), 1.0);
    // d/dchi of the filtered eta term: -DOUBLER_MASS * W d_s
    let filtered = doubler_matrix(&g).matmul(&ds).add_scaled(DOUBLER_MASS, &lap, 1.0);
    let unknowns: Vec<usize> = (0..m).filter(|&k| g.kind(k) != NodeKind::Truncation).collect();
    let mut slot = vec![usize::MAX; m];
    for (p, &k) in unknowns.iter().enumerate() {
        slot[k] = p;
    }
    let mut chi = vec![0.0; m];
    let tol = 1e-12;
    for _ in 0..40 {
        let w = gauge_transform(v, &chi);
        let d = FieldDeformation::between(&w, v_ref)?;
        let res = coulomb_expression(&d, v_ref, model);
        let chi_t = g.dt(&chi);
        let rhs: Vec<f64> = unknowns
            .iter()
            .map(|&k| if g.kind(k) == NodeKind::Physical { -chi_t[k] } else { -res[k] })
            .collect();
        let worst = rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if worst < tol {
            return Ok((w, chi));
        }
        let mut jb = CsrBuilder::new(unknowns.len());
        for &k in &unknowns {
            if g.kind(k) == NodeKind::Physical {
                let (c, vals) = dt.row(k);
                for (cc, vv) in c.iter().zip(vals) {
                    if slot[*cc] != usize::MAX {
                        jb.push(slot[*cc], *vv);
                    }
                }
            } else {
                let (c, vals) = filtered.row(k);
                for (cc, vv) in c.iter().zip(vals) {
                    if slot[*cc] != usize::MAX {
                        jb.push(slot[*cc], -vv);
                    }
                }
                let ur = v_ref.u_at(k);
                let uw = w.u_at(k);
                jb.push(slot[k], -2.0 * model.signed_scale() * herm(ur, uw).re);
            }
            jb.finish_row();
        }
        let jac = jb.build();
        let mut delta = vec![0.0; unknowns.len()];
        bicgstab(&jac, &rhs, &mut delta, 1e-13, 20_000)?;
        for (p, &k) in unknowns.iter().enumerate() {
            chi[k] += delta[p];
        }
    }
    Err(FieldError::SolverDiverged(SolverError::NotConverged {
        method: "coulomb newton",
        tol,
        iterations: 40,
        residual: f64::NAN,
    }))
}

pub fn coulomb_fix(v: &GaugedField, v_ref: &GaugedField, model: &TargetModel) -> Result<GaugedField, FieldError> {
    coulomb_fix_with_gauge(v, v_ref, model).map(|(w, _)| w)
}

/// Nodes of the outer boundary, counter-clockwise starting at the lower-left corner.
pub fn boundary_loop(grid: &Grid) -> Vec<usize> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = Vec::with_capacity(2 * (nx + ny));
    out.extend((0..nx - 1).map(|i| grid.index(i, 0)));
    out.extend((0..ny - 1).map(|j| grid.index(nx - 1, j)));
    out.extend((1..nx).rev().map(|i| grid.index(i, ny - 1)));
    out.extend((1..ny).rev().map(|j| grid.index(0, j)));
    out
}

fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Winding number of the first component of `u` that stays away from zero on
/// the outer boundary loop; `f = z^d` gives `d`.
pub fn holonomy_at_infinity(v: &GaugedField) -> Result<i64, FieldError> {
    if v.grid.tag != DomainTag::Plane {
        return Err(FieldError::NotPlane);
    }
    let lp = boundary_loop(&v.grid);
    let min_norm = lp.iter().map(|&k| norm_sqr(v.u_at(k)).sqrt()).fold(f64::INFINITY, f64::min);
    if min_norm <= 0.5 {
        return Err(FieldError::FieldVanishesOnLoop(min_norm));
    }
    let floor = 1e-3 * min_norm;
    let comp = (0..v.n)
        .find(|&a| lp.iter().all(|&k| v.u[k * v.n + a].norm() > floor))
        .ok_or(FieldError::FieldVanishesOnLoop(min_norm))?;
    Ok(winding(lp.iter().map(|&k| v.u[k * v.n + comp])))
}

/// Winding number of a closed sequence of nonzero complex numbers.
pub fn winding<I: Iterator<Item = Complex64>>(it: I) -> i64 {
    let pts: Vec<Complex64> = it.collect();
    let mut total = 0.0;
    for w in 0..pts.len() {
        let a = pts[w];
        let b = pts[(w + 1) % pts.len()];
        total += wrap_angle(b.arg() - a.arg());
    }
    (total / (2.0 * PI)).round() as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct VortexResidual {
    /// `v_s + J v_t`.
    pub first_order: Vec<Complex64>,
    /// `kappa + sigma mu(u)`.
    pub curvature_eq: Vec<f64>,
}

impl VortexResidual {
    /// Pointwise Euclidean magnitude of both rows.
    pub fn magnitude(&self, n: usize) -> Vec<f64> {
        self.curvature_eq
            .iter()
            .enumerate()
            .map(|(k, c)| (norm_sqr(&self.first_order[k * n..(k + 1) * n]) + c * c).sqrt())
            .collect()
    }

    /// Largest magnitude over nodes accepted by `keep`.
    pub fn sup_where<F: Fn(usize) -> bool>(&self, n: usize, keep: F) -> f64 {
        self.magnitude(n)
            .iter()
            .enumerate()
            .filter(|(k, _)| keep(*k))
            .fold(0.0, |m, (_, x)| m.max(*x))
    }
}

pub fn vortex_residual(v: &GaugedField, model: &TargetModel, sigma: Option<&[f64]>) -> VortexResidual {
    let (vs, vt) = covariant_derivatives(v);
    let kappa = curvature(v);
    let first_order = vs.iter().zip(&vt).map(|(a, b)| a + Complex64::i() * b).collect();
    let curvature_eq = (0..v.nodes())
        .map(|k| kappa[k] + sigma.map_or(1.0, |x| x[k]) * model.moment_map(v.u_at(k)))
        .collect();
    VortexResidual { first_order, curvature_eq }
}

// ---------------------------------------------------------------- snapshots

/// Writes the `VLAB1` snapshot: a text header line followed by little-endian
/// planes `Re u^1..Re u^N, Im u^1..Im u^N, phi, psi`, then `extra` bytes.
pub fn write_snapshot<W: Write>(v: &GaugedField, mut w: W, extra: Option<&[u8]>) -> Result<(), FieldError> {
    let g = &v.grid;
    writeln!(
        w,
        "VLAB1 {} {} {} {} {} {} {} {}",
        g.tag.as_str(),
        v.n,
        g.nx,
        g.ny,
        g.spacing,
        g.center.re,
        g.center.im,
        v.holonomy
    )?;
    let mut buf = Vec::with_capacity(8 * (2 * v.n + 2) * v.nodes());
    for a in 0..v.n {
        for k in 0..v.nodes() {
            buf.extend_from_slice(&v.u[k * v.n + a].re.to_le_bytes());
        }
    }
    for a in 0..v.n {
        for k in 0..v.nodes() {
            buf.extend_from_slice(&v.u[k * v.n + a].im.to_le_bytes());
        }
    }
    for plane in [&v.phi, &v.psi] {
        for x in plane.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    if let Some(bytes) = extra {
        if bytes.len() != v.nodes() {
            return Err(FieldError::Shape { expected: v.nodes(), got: bytes.len() });
        }
        w.write_all(bytes)?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<(GaugedField, Option<Vec<u8>>), FieldError> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    let nl = all.iter().position(|&b| b == b'\n').ok_or_else(|| FieldError::Snapshot("no header".into()))?;
    let header = std::str::from_utf8(&all[..nl]).map_err(|_| FieldError::Snapshot("header not utf-8".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 9 || parts[0] != "VLAB1" {
        return Err(FieldError::Snapshot(format!("bad header `{header}`")));
    }
    let bad = |what: &str| FieldError::Snapshot(format!("bad {what} in header"));
    let tag = DomainTag::parse(parts[1]).ok_or_else(|| bad("domain tag"))?;
    let n: usize = parts[2].parse().map_err(|_| bad("N"))?;
    let nx: usize = parts[3].parse().map_err(|_| bad("nx"))?;
    let ny: usize = parts[4].parse().map_err(|_| bad("ny"))?;
    let dx: f64 = parts[5].parse().map_err(|_| bad("spacing"))?;
    let cre: f64 = parts[6].parse().map_err(|_| bad("center"))?;
    let cim: f64 = parts[7].parse().map_err(|_| bad("center"))?;
    let hol: i64 = parts[8].parse().map_err(|_| bad("holonomy"))?;
    let grid = Grid::with_dims(tag, Complex64::new(cre, cim), dx, nx, ny)?;
    let m = grid.len();
    let body = &all[nl + 1..];
    let floats = (2 * n + 2) * m;
    if body.len() != 8 * floats && body.len() != 8 * floats + m {
        return Err(FieldError::Snapshot(format!("body has {} bytes, expected {}", body.len(), 8 * floats)));
    }
    let f = |i: usize| f64::from_le_bytes(body[8 * i..8 * i + 8].try_into().unwrap());
    let mut u = vec![Complex64::new(0.0, 0.0); n * m];
    for a in 0..n {
        for k in 0..m {
            u[k * n + a] = Complex64::new(f(a * m + k), f((n + a) * m + k));
        }
    }
    let phi = (0..m).map(|k| f(2 * n * m + k)).collect();
    let psi = (0..m).map(|k| f((2 * n + 1) * m + k)).collect();
    let extra = (body.len() > 8 * floats).then(|| body[8 * floats..].to_vec());
    Ok((GaugedField::new(grid, n, u, phi, psi, hol)?, extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn plane(r: f64, h: f64) -> Grid {
        Grid::new(DomainTag::Plane, c(0.0, 0.0), r, h).unwrap()
    }

    #[test]
    fn constant_map_is_flat() {
        let g = plane(2.0, 0.25);
        let v = GaugedField::constant(g, &[c(0.6, 0.8)]);
        let (vs, vt) = covariant_derivatives(&v);
        assert!(vs.iter().chain(&vt).all(|x| x.norm() < 1e-15));
        assert!(curvature(&v).iter().all(|x| *x == 0.0));
        assert!(energy(&v, &TargetModel::standard(1), None).total.abs() < 1e-12);
        assert_eq!(holonomy_at_infinity(&v).unwrap(), 0);
    }

    #[test]
    fn linear_connection_has_constant_curvature() {
        let g = plane(2.0, 0.25);
        let mut v = GaugedField::constant(g, &[c(1.0, 0.0)]);
        for k in 0..g.len() {
            let z = g.point(k);
            v.phi[k] = -z.im;
            v.psi[k] = z.re;
        }
        assert!(curvature(&v).iter().all(|x| (x - 2.0).abs() < 1e-12));
    }

    #[test]
    fn covariantly_constant_field_is_nearly_flat() {
        // off-center grid so no node sits on the singular point
        for (h, expect) in [(0.1, 0.0), (0.05, 0.0)] {
            let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 6.0, h).unwrap();
            let g = Grid::with_dims(DomainTag::Plane, c(0.5 * h, 0.5 * h), h, g.nx, g.ny).unwrap();
            let v = GaugedField::covariantly_constant(g, &[c(1.0, 0.0)], -1, c(0.0, 0.0));
            let (vs, vt) = covariant_derivatives(&v);
            let far = |k: usize| g.point(k).norm() > 2.0 && g.is_interior(k);
            let worst = (0..g.len()).filter(|k| far(*k)).map(|k| vs[k].norm().max(vt[k].norm())).fold(expect, f64::max);
            assert!(worst < h * h, "h = {h}: {worst}");
            assert_eq!(holonomy_at_infinity(&v).unwrap(), -1);
        }
    }

    #[test]
    fn winding_of_polynomial_phase() {
        let g = plane(3.0, 0.1);
        let mut v = GaugedField::constant(g, &[c(1.0, 0.0)]);
        for k in 0..g.len() {
            let z = g.point(k);
            let f = (z - c(0.5, 0.2)) * (z + c(1.0, 0.0)) * (z - c(0.0, 1.0));
            v.u[k] = f / f.norm();
        }
        assert_eq!(holonomy_at_infinity(&v).unwrap(), 3);
    }

    #[test]
    fn constant_gauge_rotates_only_u() {
        let g = plane(2.0, 0.25);
        let v = GaugedField::covariantly_constant(g, &[c(1.0, 0.0)], 1, c(0.1, 0.1));
        let w = gauge_transform(&v, &vec![0.7; g.len()]);
        assert!(w.phi.iter().zip(&v.phi).all(|(a, b)| (a - b).abs() < 1e-13));
        assert!(w.psi.iter().zip(&v.psi).all(|(a, b)| (a - b).abs() < 1e-13));
        assert!((w.u[5] - v.u[5] * Complex64::from_polar(1.0, 0.7)).norm() < 1e-15);
        assert_eq!(gauge_transform(&v, &vec![0.0; g.len()]), v);
    }

    #[test]
    fn coulomb_residual_trivial_cases() {
        let g = plane(2.0, 0.25);
        let m = TargetModel::standard(1);
        let v = GaugedField::covariantly_constant(g, &[c(1.0, 0.0)], 1, c(0.1, 0.1));
        assert!(coulomb_residual(&v, &v, &m).unwrap().iter().all(|x| *x == 0.0));
        let mut w = v.clone();
        for x in &mut w.phi {
            *x += 0.3;
        }
        assert!(coulomb_residual(&w, &v, &m).unwrap().iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn coulomb_fix_removes_gauge_dressing() {
        let g = plane(4.0, 0.25);
        let m = TargetModel::standard(1);
        let v = GaugedField::covariantly_constant(g, &[c(1.0, 0.0)], 1, c(0.1, 0.1));
        let chi: Vec<f64> = g
            .points()
            .iter()
            .map(|z| 0.2 * (-(z.norm_sqr()) / 4.0).exp() * (1.0 + z.re))
            .collect();
        let dressed = gauge_transform(&v, &chi);
        let fixed = coulomb_fix(&dressed, &v, &m).unwrap();
        let res = coulomb_residual(&fixed, &v, &m).unwrap();
        assert!(res.iter().all(|x| x.abs() < 1e-10));
        let again = coulomb_fix(&fixed, &v, &m).unwrap();
        assert!(again.sup_distance(&fixed) < 1e-11);
    }

    #[test]
    fn snapshot_round_trip() {
        let g = Grid::new(DomainTag::HalfPlane, c(0.3, 0.0), 1.0, 0.25).unwrap();
        let mut v = GaugedField::constant(g, &[c(0.6, 0.0), c(0.0, 0.8)]);
        v.phi[3] = 1.0 / 3.0;
        v.psi[7] = -2.5e-300;
        let tags: Vec<u8> = (0..g.len()).map(|k| (k % 256) as u8).collect();
        let mut buf = Vec::new();
        write_snapshot(&v, &mut buf, Some(&tags)).unwrap();
        let (w, extra) = read_snapshot(&buf[..]).unwrap();
        assert_eq!(w, v);
        assert_eq!(extra.unwrap(), tags);
        assert!(buf.starts_with(b"VLAB1 HalfPlane 2 9 5 0.25 0.3 0 0\n"));
    }

    #[test]
    fn deformation_pack_round_trip() {
        let mut d = FieldDeformation::zeros(2, 3);
        d.xi[3] = c(1.0, -2.0);
        d.eta[1] = 0.5;
        d.zeta[2] = -4.0;
        assert_eq!(FieldDeformation::unpack(2, &d.pack()), d);
    }
}
