//! The discrete linearized vortex operator: Cauchy-Riemann row, Coulomb row
//! and curvature row, assembled as a sparse real matrix over the non-truncation
//! nodes, plus the matching nonlinear residual and spectral diagnostics.
//!
//! Unknowns and equations are packed node-major with `2N + 2` reals per node.
//! At an interior node the rows are `[Re, Im]` of the Cauchy-Riemann row per
//! component, then the Coulomb row, then the curvature row. At a node on the
//! real axis of a half-plane the last two rows are replaced by the Lagrangian
//! constraint `(|u|^2 - 1) / 2` and `psi - psi_ref`. Truncation nodes carry
//! homogeneous Dirichlet data and are not unknowns.
//!
//! Central differences on a collocated grid also see checkerboard modes. The
//! stabilized equations add `m conj(W_A u)` to the Cauchy-Riemann row,
//! `m W eta` to the Coulomb row and `-m W psi` to the curvature row, where `W`
//! is the doubler filter of [`Grid::doubler_stencil`], `W_A` is the same
//! filter with neighbours parallel transported to the node, and `m` is
//! [`DOUBLER_MASS`]. Each term is `O(dx^2)` on smooth fields and gives the
//! checkerboard modes a mass that anticommutes with the principal symbol.
//! Transport makes the first term vanish on covariantly constant fields, so it
//! does not disturb the winding far field of a vortex.

use crate::disk::{DiskComponent, DiskError};
use crate::field::{FieldDeformation, GaugedField, DOUBLER_MASS};
use crate::grid::{Grid, NodeKind, WeightSpec};
use crate::reduce::{dot, norm2};
use crate::sparse::{BandedLu, CsrBuilder, CsrMatrix, SolverError};
use crate::target_model::{herm, norm_sqr, TargetModel};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::io::{self, Write};
use thiserror::Error;

/// Relative threshold below which a singular value counts as near-kernel.
pub const KERNEL_THRESHOLD: f64 = 1e-6;

/// Largest unknown count handled by dense SVD in [`kernel_dimension`].
pub const DENSE_LIMIT: usize = 3000;

/// Block size of the inverse subspace iteration.
const SPECTRAL_BLOCK: usize = 12;

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("no clean spectral gap; smallest singular values {0:?}")]
    NoSpectralGap(Vec<f64>),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("vector of length {got} where {expected} was expected")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Disk(#[from] DiskError),
}

/// Non-truncation nodes and their unknown slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveNodes {
    pub nodes: Vec<usize>,
    /// `slot[k]` is the position of node `k` in `nodes`, or `usize::MAX`.
    pub slot: Vec<usize>,
}

impl ActiveNodes {
    pub fn of(grid: &Grid) -> Self {
        let nodes: Vec<usize> = (0..grid.len()).filter(|&k| grid.kind(k) != NodeKind::Truncation).collect();
        let mut slot = vec![usize::MAX; grid.len()];
        for (p, &k) in nodes.iter().enumerate() {
            slot[k] = p;
        }
        Self { nodes, slot }
    }

    /// Every node of the grid, in index order.
    pub fn all(grid: &Grid) -> Self {
        Self { nodes: (0..grid.len()).collect(), slot: (0..grid.len()).collect() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Packs a deformation on the full grid into the active unknown vector.
    pub fn restrict(&self, d: &FieldDeformation) -> Vec<f64> {
        let w = FieldDeformation::vars_per_node(d.n);
        let full = d.pack();
        let mut out = vec![0.0; w * self.len()];
        for (p, &k) in self.nodes.iter().enumerate() {
            out[p * w..(p + 1) * w].copy_from_slice(&full[k * w..(k + 1) * w]);
        }
        out
    }

    /// Inverse of [`ActiveNodes::restrict`], zero on truncation nodes.
    pub fn extend(&self, n: usize, nodes: usize, x: &[f64]) -> FieldDeformation {
        let w = FieldDeformation::vars_per_node(n);
        let mut full = vec![0.0; w * nodes];
        for (p, &k) in self.nodes.iter().enumerate() {
            full[k * w..(k + 1) * w].copy_from_slice(&x[p * w..(p + 1) * w]);
        }
        FieldDeformation::unpack(n, &full)
    }
}

#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub base: GaugedField,
    /// Gauge reference of the Coulomb row.
    pub reference: GaugedField,
    pub model: TargetModel,
    pub weight_spec: WeightSpec,
    pub active: ActiveNodes,
    pub matrix: CsrMatrix,
}

/// Linearization at `base`, with `base` as its own gauge reference.
pub fn assemble(base: &GaugedField, model: &TargetModel, spec: &WeightSpec) -> LinearizedSystem {
    assemble_with_reference(base, base, model, spec).expect("base is its own reference")
}

pub fn assemble_with_reference(
    base: &GaugedField,
    reference: &GaugedField,
    model: &TargetModel,
    spec: &WeightSpec,
) -> Result<LinearizedSystem, LinearError> {
    if !base.same_grid(reference) {
        return Err(LinearError::GridMismatch);
    }
    let active = ActiveNodes::of(&base.grid);
    let w = FieldDeformation::vars_per_node(base.n);
    let ncols = w * active.len();
    let blocks: Vec<CsrMatrix> = active
        .nodes
        .par_chunks(2048)
        .map(|chunk| {
            let mut b = CsrBuilder::new(ncols);
            for &k in chunk {
                node_rows(&mut b, base, reference, model, &active, k);
            }
            b.build()
        })
        .collect();
    let matrix = CsrMatrix::from_row_blocks(ncols, blocks);
    Ok(LinearizedSystem {
        base: base.clone(),
        reference: reference.clone(),
        model: model.clone(),
        weight_spec: spec.clone(),
        active,
        matrix,
    })
}

/// Jacobian of [`residual`] with respect to the values at every grid node,
/// truncation nodes included. Rows are those of the square system; the extra
/// columns let a least-norm solve move the boundary data, which removes the
/// boundary-localized cokernel of the Dirichlet truncation.
pub fn assemble_free_boundary(
    base: &GaugedField,
    reference: &GaugedField,
    model: &TargetModel,
) -> Result<CsrMatrix, LinearError> {
    if !base.same_grid(reference) {
        return Err(LinearError::GridMismatch);
    }
    let rows = ActiveNodes::of(&base.grid);
    let all = ActiveNodes::all(&base.grid);
    let ncols = FieldDeformation::vars_per_node(base.n) * base.nodes();
    let blocks: Vec<CsrMatrix> = rows
        .nodes
        .par_chunks(2048)
        .map(|chunk| {
            let mut b = CsrBuilder::new(ncols);
            for &k in chunk {
                node_rows(&mut b, base, reference, model, &all, k);
            }
            b.build()
        })
        .collect();
    Ok(CsrMatrix::from_row_blocks(ncols, blocks))
}

fn node_rows(b: &mut CsrBuilder, v: &GaugedField, r: &GaugedField, model: &TargetModel, act: &ActiveNodes, k: usize) {
    let g = &v.grid;
    let n = v.n;
    let w = 2 * n + 2;
    let (i, j) = g.ij(k);
    let ds = g.ds_stencil(i, j);
    let dt = g.dt_stencil(i, j);
    let col = |node: usize, off: usize| -> Option<usize> {
        let p = act.slot[node];
        (p != usize::MAX).then(|| p * w + off)
    };
    let me = act.slot[k] * w;
    let u = v.u_at(k);
    let (phi, psi) = (v.phi[k], v.psi[k]);
    let ss2 = 2.0 * model.signed_scale();
    let filt = g.doubler_stencil(i, j);
    let links: Vec<Option<Link>> = filt.iter().map(|&(c, _)| link(v, k, c)).collect();
    let filtered = |b: &mut CsrBuilder, off: usize, sign: f64| {
        for &(c, wt) in &filt {
            if let Some(cc) = col(c, off) {
                b.push(cc, sign * DOUBLER_MASS * wt);
            }
        }
    };
    for a in 0..n {
        let (xr, xi) = (2 * a, 2 * a + 1);
        // Re: d_s x - d_t y - phi y - psi x - eta Im u - zeta Re u
        for &(c, wt) in &ds {
            if let Some(cc) = col(c, xr) {
                b.push(cc, wt);
            }
        }
        for &(c, wt) in &dt {
            if let Some(cc) = col(c, xi) {
                b.push(cc, -wt);
            }
        }
        b.push(me + xi, -phi);
        b.push(me + xr, -psi);
        b.push(me + 2 * n, -u[a].im);
        b.push(me + 2 * n + 1, -u[a].re);
        transported(b, v, &filt, &links, a, &col, false);
        b.finish_row();
        // Im: d_s y + d_t x + phi x - psi y + eta Re u - zeta Im u
        for &(c, wt) in &ds {
            if let Some(cc) = col(c, xi) {
                b.push(cc, wt);
            }
        }
        for &(c, wt) in &dt {
            if let Some(cc) = col(c, xr) {
                b.push(cc, wt);
            }
        }
        b.push(me + xr, phi);
        b.push(me + xi, -psi);
        b.push(me + 2 * n, u[a].re);
        b.push(me + 2 * n + 1, -u[a].im);
        transported(b, v, &filt, &links, a, &col, true);
        b.finish_row();
    }
    if g.kind(k) == NodeKind::Physical {
        for a in 0..n {
            b.push(me + 2 * a, u[a].re);
            b.push(me + 2 * a + 1, u[a].im);
        }
        b.finish_row();
        b.push(me + 2 * n + 1, 1.0);
        b.finish_row();
        return;
    }
    // Coulomb: d_s eta + d_t zeta - 2 ss Im<u_ref, xi>
    for &(c, wt) in &ds {
        if let Some(cc) = col(c, 2 * n) {
            b.push(cc, wt);
        }
    }
    for &(c, wt) in &dt {
        if let Some(cc) = col(c, 2 * n + 1) {
            b.push(cc, wt);
        }
    }
    let ur = r.u_at(k);
    for a in 0..n {
        b.push(me + 2 * a, ss2 * ur[a].im);
        b.push(me + 2 * a + 1, -ss2 * ur[a].re);
    }
    filtered(b, 2 * n, 1.0);
    b.finish_row();
    // curvature: d_s zeta - d_t eta + 2 ss Re<u, xi>
    for &(c, wt) in &ds {
        if let Some(cc) = col(c, 2 * n + 1) {
            b.push(cc, wt);
        }
    }
    for &(c, wt) in &dt {
        if let Some(cc) = col(c, 2 * n) {
            b.push(cc, -wt);
        }
    }
    for a in 0..n {
        b.push(me + 2 * a, ss2 * u[a].re);
        b.push(me + 2 * a + 1, ss2 * u[a].im);
    }
    filtered(b, 2 * n + 1, -1.0);
    b.finish_row();
}

/// Nonlinear residual of `v` in the row layout of the linearized system:
/// stabilized vortex equations plus the Coulomb condition relative to `reference`
/// (half-plane boundary rows as described in the module docs).
pub fn residual(v: &GaugedField, reference: &GaugedField, model: &TargetModel) -> Result<Vec<f64>, LinearError> {
    if !v.same_grid(reference) {
        return Err(LinearError::GridMismatch);
    }
    let g = &v.grid;
    let n = v.n;
    let w = 2 * n + 2;
    let act = ActiveNodes::of(g);
    let (vs, vt) = crate::field::covariant_derivatives(v);
    let kappa = crate::field::curvature(v);
    let eta: Vec<f64> = v.phi.iter().zip(&reference.phi).map(|(a, b)| a - b).collect();
    let zeta: Vec<f64> = v.psi.iter().zip(&reference.psi).map(|(a, b)| a - b).collect();
    let es = g.ds(&eta);
    let zt = g.dt(&zeta);
    let ef = g.doubler_filter(&eta);
    let pf = g.doubler_filter(&v.psi);
    let mut out = vec![0.0; w * act.len()];
    out.par_chunks_mut(w).zip(act.nodes.par_iter()).for_each(|(o, &k)| {
        for a in 0..n {
            let c = vs[k * n + a] + Complex64::i() * vt[k * n + a] + covariant_filter(v, k, a).conj() * DOUBLER_MASS;
            o[2 * a] = c.re;
            o[2 * a + 1] = c.im;
        }
        let u = v.u_at(k);
        if g.kind(k) == NodeKind::Physical {
            o[2 * n] = 0.5 * (norm_sqr(u) - 1.0);
            o[2 * n + 1] = zeta[k];
        } else {
            let ur = reference.u_at(k);
            let xi: Vec<Complex64> = u.iter().zip(ur).map(|(a, b)| a - b).collect();
            o[2 * n] = es[k] + zt[k] + model.dmu_j(ur, &xi) + DOUBLER_MASS * ef[k];
            o[2 * n + 1] = kappa[k] + model.moment_map(u) - DOUBLER_MASS * pf[k];
        }
    });
    Ok(out)
}

/// Direction of the lattice edge from a node to a stencil neighbour.
#[derive(Debug, Clone, Copy)]
struct Link {
    /// `+1` towards increasing coordinate.
    sign: f64,
    along_t: bool,
}

fn link(v: &GaugedField, k: usize, c: usize) -> Option<Link> {
    let w = v.grid.nx;
    match c {
        _ if c == k => None,
        _ if c == k + 1 => Some(Link { sign: 1.0, along_t: false }),
        _ if c + 1 == k => Some(Link { sign: -1.0, along_t: false }),
        _ if c == k + w => Some(Link { sign: 1.0, along_t: true }),
        _ => Some(Link { sign: -1.0, along_t: true }),
    }
}

/// Connection component along `l`, averaged over the edge `k`–`c`.
fn edge_connection(v: &GaugedField, k: usize, c: usize, l: Link) -> f64 {
    let a = if l.along_t { &v.psi } else { &v.phi };
    0.5 * (a[k] + a[c])
}

/// Component `a` of `u(c)` transported to node `k` along the lattice edge.
fn transport(v: &GaugedField, k: usize, c: usize, a: usize, l: Option<Link>) -> Complex64 {
    let uc = v.u[c * v.n + a];
    match l {
        None => uc,
        Some(l) => uc * Complex64::from_polar(1.0, l.sign * v.grid.spacing * edge_connection(v, k, c, l)),
    }
}

/// Doubler filter of component `a` with neighbours parallel transported to `k`.
fn covariant_filter(v: &GaugedField, k: usize, a: usize) -> Complex64 {
    let (i, j) = v.grid.ij(k);
    v.grid.doubler_stencil(i, j).iter().map(|&(c, wt)| transport(v, k, c, a, link(v, k, c)) * wt).sum()
}

/// Jacobian entries of `m conj(W_A u)` in the real (`imag = false`) or
/// imaginary row of component `a`.
fn transported(
    b: &mut CsrBuilder,
    v: &GaugedField,
    filt: &[(usize, f64); 5],
    links: &[Option<Link>],
    a: usize,
    col: &dyn Fn(usize, usize) -> Option<usize>,
    imag: bool,
) {
    let n = v.n;
    let k = filt[0].0;
    for (&(c, wt), &l) in filt.iter().zip(links) {
        if wt == 0.0 {
            continue;
        }
        let mw = DOUBLER_MASS * wt;
        // conj(L xi) = conj(L) (x - i y)
        let lc = match l {
            None => Complex64::new(1.0, 0.0),
            Some(l) => Complex64::from_polar(1.0, -l.sign * v.grid.spacing * edge_connection(v, k, c, l)),
        };
        let (cx, cy) = if imag { (lc.im, -lc.re) } else { (lc.re, lc.im) };
        if let Some(cc) = col(c, 2 * a) {
            b.push(cc, mw * cx);
        }
        if let Some(cc) = col(c, 2 * a + 1) {
            b.push(cc, mw * cy);
        }
        if let Some(l) = l {
            // d conj(T) / d(edge connection) = -i sign dx conj(T)
            let q = Complex64::new(0.0, -l.sign * v.grid.spacing) * transport(v, k, c, a, Some(l)).conj() * mw * 0.5;
            let qv = if imag { q.im } else { q.re };
            let off = if l.along_t { 2 * n + 1 } else { 2 * n };
            for node in [k, c] {
                if let Some(cc) = col(node, off) {
                    b.push(cc, qv);
                }
            }
        }
    }
}

/// Pointwise Euclidean magnitude of a packed row vector, on the full grid
/// (zero on truncation nodes).
pub fn node_magnitudes(act: &ActiveNodes, n: usize, nodes: usize, rows: &[f64]) -> Vec<f64> {
    let w = 2 * n + 2;
    let mut out = vec![0.0; nodes];
    for (p, &k) in act.nodes.iter().enumerate() {
        out[k] = norm2(&rows[p * w..(p + 1) * w]);
    }
    out
}

impl LinearizedSystem {
    pub fn n(&self) -> usize {
        self.base.n
    }

    pub fn vars_per_node(&self) -> usize {
        FieldDeformation::vars_per_node(self.base.n)
    }

    pub fn apply(&self, d: &FieldDeformation) -> Vec<f64> {
        self.matrix.mul_vec(&self.active.restrict(d))
    }

    /// Quadrature times `rho^(2p-4)` per unknown (or per row, same layout).
    pub fn inner_product_weights(&self) -> Vec<f64> {
        let g = &self.base.grid;
        let dens = self.weight_spec.density_weights(g);
        let w = self.vars_per_node();
        let mut out = Vec::with_capacity(w * self.active.len());
        for &k in &self.active.nodes {
            let q = g.quad_weight(k) * dens[k];
            out.extend(std::iter::repeat_n(q, w));
        }
        out
    }

    /// Adjoint `W^-1 A^T W` in the weighted inner products.
    pub fn adjoint_apply(&self, y: &[f64]) -> Vec<f64> {
        let wts = self.inner_product_weights();
        let wy: Vec<f64> = y.iter().zip(&wts).map(|(a, b)| a * b).collect();
        let at = self.matrix.transpose();
        at.mul_vec(&wy).iter().zip(&wts).map(|(a, b)| a / b).collect()
    }

    pub fn weighted_dot(&self, x: &[f64], y: &[f64]) -> f64 {
        let wts = self.inner_product_weights();
        let terms: Vec<f64> = x.iter().zip(y).zip(&wts).map(|((a, b), c)| a * b * c).collect();
        crate::reduce::pairwise_sum(&terms)
    }

    /// `(row, col, value)` lines, one per stored entry.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (r, c, v) in self.matrix.triplets() {
            writeln!(out, "{r} {c} {v:.17e}")?;
        }
        Ok(())
    }
}

/// Largest relative discrepancy between `A d` and the central difference of
/// the nonlinear residual along `d` with step `step`.
pub fn gradient_check(sys: &LinearizedSystem, d: &FieldDeformation, step: f64) -> Result<f64, LinearError> {
    let plus = d.scaled(step).apply(&sys.base);
    let minus = d.scaled(-step).apply(&sys.base);
    let rp = residual(&plus, &sys.reference, &sys.model)?;
    let rm = residual(&minus, &sys.reference, &sys.model)?;
    let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * step)).collect();
    let ad = sys.apply(d);
    let diff: Vec<f64> = fd.iter().zip(&ad).map(|(a, b)| a - b).collect();
    Ok(norm2(&diff) / norm2(&ad).max(f64::MIN_POSITIVE))
}

/// Smooth random deformation vanishing on the truncation boundary, with
/// `zeta = 0` and `xi` tangent to the circle on the real axis of a half-plane.
pub fn random_deformation(base: &GaugedField, seed: u64) -> FieldDeformation {
    let g = &base.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = base.n;
    let modes: Vec<(f64, f64, f64, Vec<f64>)> = (0..4)
        .map(|_| {
            let kx = rng.gen_range(0.5..2.0);
            let ky = rng.gen_range(0.5..2.0);
            let ph = rng.gen_range(0.0..std::f64::consts::TAU);
            let amps: Vec<f64> = (0..2 * n + 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (kx, ky, ph, amps)
        })
        .collect();
    let mut d = FieldDeformation::zeros(n, g.len());
    let scale = g.half_width.max(1.0);
    for k in 0..g.len() {
        if g.kind(k) == NodeKind::Truncation {
            continue;
        }
        let z = (g.point(k) - g.center) / scale;
        let env = (-4.0 * z.norm_sqr()).exp();
        let mut vals = vec![0.0; 2 * n + 2];
        for (kx, ky, ph, amps) in &modes {
            let wave = (kx * 3.0 * z.re + ky * 3.0 * z.im + ph).cos();
            for (v, a) in vals.iter_mut().zip(amps) {
                *v += env * wave * a;
            }
        }
        for a in 0..n {
            d.xi[k * n + a] = Complex64::new(vals[2 * a], vals[2 * a + 1]);
        }
        d.eta[k] = vals[2 * n];
        d.zeta[k] = vals[2 * n + 1];
        if g.kind(k) == NodeKind::Physical {
            d.zeta[k] = 0.0;
            let u = base.u_at(k);
            let r2 = norm_sqr(u);
            if r2 > 0.0 {
                let c = herm(u, d.xi_at(k)).re / r2;
                for a in 0..n {
                    d.xi[k * n + a] -= u[a] * c;
                }
            }
        }
    }
    d
}

// ---------------------------------------------------------------- spectrum

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelReport {
    pub dimension: usize,
    /// Smallest singular values, ascending.
    pub singular_values: Vec<f64>,
    pub sigma_max: f64,
    pub threshold: f64,
    pub gap_ratio: f64,
}

/// Largest singular value by power iteration on `A^T A`.
pub fn sigma_max(a: &CsrMatrix, iterations: usize, seed: u64) -> f64 {
    let at = a.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..a.ncols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut est = 0.0;
    for _ in 0..iterations {
        let nx = norm2(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let y = at.mul_vec(&a.mul_vec(&x));
        est = dot(&x, &y).max(0.0).sqrt();
        x = y;
    }
    est
}

fn orthonormalize(cols: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for i in 0..cols.len() {
            for j in 0..i {
                let (a, b) = cols.split_at_mut(i);
                let c = dot(&a[j], &b[0]);
                for (x, y) in b[0].iter_mut().zip(&a[j]) {
                    *x -= c * y;
                }
            }
            let nrm = norm2(&cols[i]);
            if nrm > 0.0 {
                cols[i].iter_mut().for_each(|v| *v /= nrm);
            }
        }
    }
}

/// The `count` smallest singular values of a square matrix by block inverse
/// iteration on `(A^T A)^-1` with a banded LU, followed by a Rayleigh-Ritz
/// step (thin SVD of `A Q`).
pub fn smallest_singular_values(a: &CsrMatrix, count: usize, iterations: usize, seed: u64) -> Result<Vec<f64>, LinearError> {
    let lu = BandedLu::factor(a)?;
    let n = a.ncols;
    let count = count.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = (0..count).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    orthonormalize(&mut q);
    for _ in 0..iterations {
        q.par_iter_mut().for_each(|x| {
            lu.solve_transpose_in_place(x);
            lu.solve_in_place(x);
        });
        orthonormalize(&mut q);
    }
    let aq: Vec<f64> = q.iter().flat_map(|x| a.mul_vec(x)).collect();
    let m = DMatrix::from_column_slice(a.nrows, count, &aq);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    Ok(sv)
}

/// All singular values by dense SVD, ascending. For small systems only.
pub fn dense_singular_values(a: &CsrMatrix) -> Vec<f64> {
    let mut m = DMatrix::zeros(a.nrows, a.ncols);
    for (r, c, v) in a.triplets() {
        m[(r, c)] = v;
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    sv
}

/// Counts singular values below `sigma_max * KERNEL_THRESHOLD` and checks that
/// the next one is at least `gap_factor` times larger than the last counted one
/// (and than the threshold when nothing is counted).
pub fn classify_spectrum(smallest: &[f64], sigma_max: f64, gap_factor: f64) -> Result<KernelReport, LinearError> {
    let threshold = sigma_max * KERNEL_THRESHOLD;
    let dim = smallest.iter().take_while(|s| **s < threshold).count();
    let report_err = || LinearError::NoSpectralGap(smallest.iter().take(10).copied().collect());
    if dim == smallest.len() {
        return Err(report_err());
    }
    let below = if dim == 0 { threshold } else { smallest[dim - 1].max(f64::MIN_POSITIVE) };
    let gap_ratio = smallest[dim] / below;
    if gap_ratio < gap_factor {
        return Err(report_err());
    }
    Ok(KernelReport { dimension: dim, singular_values: smallest.to_vec(), sigma_max, threshold, gap_ratio })
}

/// Near-kernel dimension of the assembled operator. Dense SVD up to
/// `DENSE_LIMIT` unknowns, inverse subspace iteration above.
pub fn kernel_dimension(sys: &LinearizedSystem, gap_factor: f64) -> Result<KernelReport, LinearError> {
    let a = &sys.matrix;
    if a.ncols <= DENSE_LIMIT {
        let sv = dense_singular_values(a);
        let smax = *sv.last().unwrap_or(&0.0);
        let head: Vec<f64> = sv.iter().take(SPECTRAL_BLOCK).copied().collect();
        return classify_spectrum(&head, smax, gap_factor);
    }
    let smax = sigma_max(a, 60, 7);
    let sv = smallest_singular_values(a, SPECTRAL_BLOCK, 30, 11)?;
    classify_spectrum(&sv, smax, gap_factor)
}

/// Infinitesimal translations in `s` and `t` as deformations in the Coulomb
/// slice: `(v_s, 0, kappa)` and `(v_t, -kappa, 0)`.
pub fn translation_witnesses(base: &GaugedField) -> [FieldDeformation; 2] {
    let (vs, vt) = crate::field::covariant_derivatives(base);
    let kappa = crate::field::curvature(base);
    let m = base.nodes();
    let zero = vec![0.0; m];
    [
        FieldDeformation { n: base.n, xi: vs, eta: zero.clone(), zeta: kappa.clone() },
        FieldDeformation { n: base.n, xi: vt, eta: kappa.iter().map(|x| -x).collect(), zeta: zero },
    ]
}

// ---------------------------------------------------------------- horizontal / vertical blocks

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockSplitReport {
    /// Horizontal to horizontal.
    pub d_h: f64,
    /// Vertical input to horizontal output.
    pub e1: f64,
    /// Horizontal input to vertical output.
    pub e2: f64,
    /// Vertical to vertical.
    pub d_g: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Part {
    Horizontal,
    Vertical,
}

/// Projects a packed vector (unknowns or rows) onto its horizontal or
/// vertical part along the base map.
fn project(sys: &LinearizedSystem, x: &[f64], part: Part) -> Vec<f64> {
    let n = sys.n();
    let w = 2 * n + 2;
    let mut out = vec![0.0; x.len()];
    for (p, &k) in sys.active.nodes.iter().enumerate() {
        let u = sys.base.u_at(k);
        let r2 = norm_sqr(u);
        let blk = &x[p * w..(p + 1) * w];
        let xi: Vec<Complex64> = (0..n).map(|a| Complex64::new(blk[2 * a], blk[2 * a + 1])).collect();
        let c = if r2 > 0.0 { herm(u, &xi) / r2 } else { Complex64::new(0.0, 0.0) };
        let o = &mut out[p * w..(p + 1) * w];
        for a in 0..n {
            let vert = u[a] * c;
            let keep = if part == Part::Horizontal { xi[a] - vert } else { vert };
            o[2 * a] = keep.re;
            o[2 * a + 1] = keep.im;
        }
        if part == Part::Vertical {
            o[2 * n] = blk[2 * n];
            o[2 * n + 1] = blk[2 * n + 1];
        }
    }
    out
}

fn block_norm(sys: &LinearizedSystem, at: &CsrMatrix, input: Part, output: Part, iterations: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..sys.matrix.ncols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    x = project(sys, &x, input);
    let mut est = 0.0;
    for _ in 0..iterations {
        let nx = norm2(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let y = project(sys, &sys.matrix.mul_vec(&x), output);
        est = norm2(&y);
        x = project(sys, &at.mul_vec(&y), input);
    }
    est
}

/// Randomized power-iteration estimates of the four blocks of the operator
/// split along the horizontal / vertical decomposition (Euclidean norms on
/// the packed unknowns and rows).
pub fn block_split_report(sys: &LinearizedSystem, iterations: usize, seed: u64) -> BlockSplitReport {
    let at = sys.matrix.transpose();
    BlockSplitReport {
        d_h: block_norm(sys, &at, Part::Horizontal, Part::Horizontal, iterations, seed),
        e1: block_norm(sys, &at, Part::Vertical, Part::Horizontal, iterations, seed + 1),
        e2: block_norm(sys, &at, Part::Horizontal, Part::Vertical, iterations, seed + 2),
        d_g: block_norm(sys, &at, Part::Vertical, Part::Vertical, iterations, seed + 3),
    }
}

/// Gaussian bump `exp(-|z - center|^2 / width^2) direction` used to perturb a
/// disk map in the quotient.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProbe {
    pub center: Complex64,
    pub width: f64,
    pub direction: Vec<Complex64>,
}

impl GaussianProbe {
    fn at(&self, z: Complex64) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
        let d = z - self.center;
        let w2 = self.width * self.width;
        let b = (-d.norm_sqr() / w2).exp();
        let (bs, bt) = (-2.0 * d.re / w2 * b, -2.0 * d.im / w2 * b);
        let f = |c: f64| self.direction.iter().map(|x| x * c).collect::<Vec<_>>();
        (f(b), f(bs), f(bt))
    }
}

/// Unit lift of `F = f + tau g` with the connection `-Im<F, dF> / |F|^2`.
fn perturbed_lift(disk: &DiskComponent, probe: &GaussianProbe, tau: f64, grid: &Grid) -> Result<GaugedField, LinearError> {
    let n = disk.n();
    let m = grid.len();
    let mut u = Vec::with_capacity(n * m);
    let mut phi = vec![0.0; m];
    let mut psi = vec![0.0; m];
    for k in 0..m {
        let z = grid.point(k);
        let (g, gs, gt) = probe.at(z);
        let f = disk.eval(z);
        let df: Vec<Complex64> = disk.polys.iter().map(|p| p.derivative().eval(z)).collect();
        let big: Vec<Complex64> = (0..n).map(|a| f[a] + g[a] * tau).collect();
        let fs: Vec<Complex64> = (0..n).map(|a| df[a] + gs[a] * tau).collect();
        let ft: Vec<Complex64> = (0..n).map(|a| Complex64::i() * df[a] + gt[a] * tau).collect();
        let r2 = norm_sqr(&big);
        if r2 < crate::disk::COMMON_ZERO_THRESHOLD {
            return Err(DiskError::CommonZero(z, r2).into());
        }
        let r = r2.sqrt();
        u.extend(big.iter().map(|x| x / r));
        phi[k] = -herm(&big, &fs).im / r2;
        psi[k] = -herm(&big, &ft).im / r2;
    }
    Ok(GaugedField { grid: *grid, n, u, phi, psi, holonomy: 0 })
}

/// Relative discrepancy between the horizontal block applied to the
/// horizontal part of a quotient variation and the central difference of the
/// horizontal Cauchy-Riemann vector along the perturbed family of lifts.
pub fn quotient_probe_error(disk: &DiskComponent, grid: &Grid, probe: &GaussianProbe, step: f64) -> Result<f64, LinearError> {
    let base = perturbed_lift(disk, probe, 0.0, grid)?;
    let plus = perturbed_lift(disk, probe, step, grid)?;
    let minus = perturbed_lift(disk, probe, -step, grid)?;
    let model = TargetModel::standard(disk.n());
    let sys = assemble(&base, &model, &WeightSpec::rho_a(3.0));
    let n = base.n;
    let m = base.nodes();
    let mut d = FieldDeformation::zeros(n, m);
    for q in 0..n * m {
        d.xi[q] = (plus.u[q] - minus.u[q]) / (2.0 * step);
    }
    let xh = project(&sys, &sys.active.restrict(&d), Part::Horizontal);
    let lhs = project(&sys, &sys.matrix.mul_vec(&xh), Part::Horizontal);
    let cr = |v: &GaugedField| -> Result<Vec<f64>, LinearError> {
        let r = residual(v, v, &model)?;
        Ok(project_at(&sys, v, &r))
    };
    let (rp, rm) = (cr(&plus)?, cr(&minus)?);
    let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * step)).collect();
    let fd = project(&sys, &fd, Part::Horizontal);
    let diff: Vec<f64> = fd.iter().zip(&lhs).map(|(a, b)| a - b).collect();
    Ok(norm2(&diff) / norm2(&lhs).max(f64::MIN_POSITIVE))
}

/// Horizontal Cauchy-Riemann part of a residual vector, projected along `v`.
fn project_at(sys: &LinearizedSystem, v: &GaugedField, rows: &[f64]) -> Vec<f64> {
    let mut tmp = sys.clone();
    tmp.base = v.clone();
    project(&tmp, rows, Part::Horizontal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainTag;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn bookkeeping_counts() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 2.0, 0.5).unwrap();
        let base = GaugedField::constant(g, &[c(1.0, 0.0)]);
        let sys = assemble(&base, &TargetModel::standard(1), &WeightSpec::rho_a(3.0));
        let interior = (0..g.len()).filter(|&k| g.is_interior(k)).count();
        assert_eq!(sys.matrix.nrows, 4 * interior);
        assert_eq!(sys.matrix.ncols, 4 * interior);
    }

    #[test]
    fn constant_base_decouples() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 2.0, 0.5).unwrap();
        let base = GaugedField::constant(g, &[c(1.0, 0.0)]);
        let sys = assemble(&base, &TargetModel::standard(1), &WeightSpec::rho_a(3.0));
        let k = g.index(4, 4);
        let p = sys.active.slot[k] * 4;
        // Re row of the Cauchy-Riemann pair touches Re xi along s, Im xi along t and zeta on the node
        let (cols, vals) = sys.matrix.row(p);
        let offs: Vec<usize> = cols.iter().zip(vals).filter(|(_, v)| **v != 0.0).map(|(c, _)| c % 4).collect();
        assert!(offs.iter().all(|o| [0, 1, 3].contains(o)));
        // curvature row: zeroth-order coupling only through Re xi on the node
        let (cols, vals) = sys.matrix.row(p + 3);
        for (cc, v) in cols.iter().zip(vals) {
            if cc / 4 == p / 4 && cc % 4 < 2 && *v != 0.0 {
                assert_eq!(cc % 4, 0);
                assert!((v + 2.0 * std::f64::consts::PI).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_check_on_covariantly_constant_base() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 3.0, 0.25).unwrap();
        let base = GaugedField::covariantly_constant(g, &[c(0.6, 0.8)], 1, c(0.1, 0.2));
        let sys = assemble(&base, &TargetModel::standard(1), &WeightSpec::rho_a(3.0));
        for seed in 0..3 {
            let d = random_deformation(&base, seed);
            assert!(gradient_check(&sys, &d, 1e-6).unwrap() < 1e-5);
        }
    }

    #[test]
    fn free_boundary_jacobian_matches_differences() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 2.0, 0.25).unwrap();
        let cc = GaugedField::covariantly_constant(g, &[c(0.6, 0.8)], 1, c(0.3, -0.2));
        let base = random_deformation(&cc, 7).scaled(0.3).apply(&cc);
        let m = TargetModel::standard(1);
        let a = assemble_free_boundary(&base, &cc, &m).unwrap();
        let mut d = random_deformation(&base, 8);
        for k in (0..g.len()).filter(|&k| g.kind(k) == NodeKind::Truncation) {
            let z = g.point(k);
            d.xi[k] = c(z.re.sin(), z.im.cos());
            d.eta[k] = (2.0 * z.re).cos();
            d.zeta[k] = z.im.sin();
        }
        let h = 1e-6;
        let rp = residual(&d.scaled(h).apply(&base), &cc, &m).unwrap();
        let rm = residual(&d.scaled(-h).apply(&base), &cc, &m).unwrap();
        let fd: Vec<f64> = rp.iter().zip(&rm).map(|(p, q)| (p - q) / (2.0 * h)).collect();
        let ad = a.mul_vec(&d.pack());
        let diff: Vec<f64> = fd.iter().zip(&ad).map(|(p, q)| p - q).collect();
        assert!(norm2(&diff) < 1e-6 * norm2(&ad));
    }

    #[test]
    fn adjoint_is_consistent() {
        let g = Grid::new(DomainTag::Plane, c(0.0, 0.0), 3.0, 0.25).unwrap();
        let base = GaugedField::covariantly_constant(g, &[c(1.0, 0.0)], 2, c(0.0, 0.0));
        let sys = assemble(&base, &TargetModel::standard(1), &WeightSpec::rho_a(3.0));
        let x = sys.active.restrict(&random_deformation(&base, 1));
        let y = sys.active.restrict(&random_deformation(&base, 2));
        let lhs = sys.weighted_dot(&sys.matrix.mul_vec(&x), &y);
        let rhs = sys.weighted_dot(&x, &sys.adjoint_apply(&y));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn spectral_gap_classification() {
        let r = classify_spectrum(&[1e-12, 2e-12, 0.5, 0.7], 10.0, 10.0).unwrap();
        assert_eq!(r.dimension, 2);
        assert!(classify_spectrum(&[1e-12, 5e-6, 1e-5], 10.0, 10.0).is_err());
        assert_eq!(classify_spectrum(&[0.3, 0.4], 10.0, 10.0).unwrap().dimension, 0);
    }

    #[test]
    fn sparsity_is_reproducible() {
        let g = Grid::new(DomainTag::HalfPlane, c(0.0, 0.0), 2.0, 0.25).unwrap();
        let base = GaugedField::constant(g, &[c(1.0, 0.0)]);
        let m = TargetModel::standard(1);
        let a = assemble(&base, &m, &WeightSpec::rho_a(3.0));
        let b = assemble(&base, &m, &WeightSpec::rho_a(3.0));
        assert_eq!(a.matrix, b.matrix);
        let (kl, ku) = a.matrix.bandwidths();
        assert!(kl.max(ku) <= 4 * (2 * g.nx + 1));
    }
}
