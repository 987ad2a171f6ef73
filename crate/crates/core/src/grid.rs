//! Uniform grids on truncated planes and half-planes, difference stencils,
//! the weight functions of the weighted norms, and the annulus geometry used
//! for gluing.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid spacing must be positive and finite, got {0}")]
    BadSpacing(f64),
    #[error("half width {half_width} is too small for spacing {spacing}")]
    TooSmall { half_width: f64, spacing: f64 },
    #[error("half-plane grids must be centered on the real axis")]
    OffAxisHalfPlane,
    #[error("invalid weight parameters: {0}")]
    BadWeight(String),
    #[error("invalid gluing geometry: {0}")]
    BadGeometry(String),
    #[error("annuli around anchors {0} and {1} overlap")]
    OverlappingAnnuli(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainTag {
    Plane,
    HalfPlane,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Plane => "Plane",
            DomainTag::HalfPlane => "HalfPlane",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Plane" => Some(DomainTag::Plane),
            "HalfPlane" => Some(DomainTag::HalfPlane),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    /// Artificial outer boundary of the truncated domain.
    Truncation,
    /// The real axis of a half-plane grid (corners excluded).
    Physical,
}

/// A uniform node lattice. Node `(i, j)` has index `j * nx + i`; `i` runs
/// along `s = Re z` and `j` along `t = Im z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub tag: DomainTag,
    pub center: Complex64,
    pub half_width: f64,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    /// Square window `center +- half_width` (the half-plane keeps only `t >= 0`).
    pub fn new(tag: DomainTag, center: Complex64, half_width: f64, spacing: f64) -> Result<Self, GridError> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(GridError::BadSpacing(spacing));
        }
        let cells = (2.0 * half_width / spacing).round();
        if !(cells >= 4.0) {
            return Err(GridError::TooSmall { half_width, spacing });
        }
        let nx = cells as usize + 1;
        let ny = match tag {
            DomainTag::Plane => nx,
            DomainTag::HalfPlane => {
                if center.im != 0.0 {
                    return Err(GridError::OffAxisHalfPlane);
                }
                (half_width / spacing).round() as usize + 1
            }
        };
        Ok(Self { tag, center, half_width, spacing, nx, ny })
    }

    /// Explicit node counts; `center` is the midpoint of the node box (for the
    /// half-plane only its real part is used).
    pub fn with_dims(tag: DomainTag, center: Complex64, spacing: f64, nx: usize, ny: usize) -> Result<Self, GridError> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(GridError::BadSpacing(spacing));
        }
        if nx < 5 || ny < 5 {
            return Err(GridError::TooSmall { half_width: 0.0, spacing });
        }
        if tag == DomainTag::HalfPlane && center.im != 0.0 {
            return Err(GridError::OffAxisHalfPlane);
        }
        let half_width = 0.5 * (nx - 1) as f64 * spacing;
        Ok(Self { tag, center, half_width, spacing, nx, ny })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn s(&self, i: usize) -> f64 {
        self.center.re + (i as f64 - 0.5 * (self.nx - 1) as f64) * self.spacing
    }

    #[inline]
    pub fn t(&self, j: usize) -> f64 {
        match self.tag {
            DomainTag::Plane => self.center.im + (j as f64 - 0.5 * (self.ny - 1) as f64) * self.spacing,
            DomainTag::HalfPlane => j as f64 * self.spacing,
        }
    }

    #[inline]
    pub fn point(&self, k: usize) -> Complex64 {
        let (i, j) = self.ij(k);
        Complex64::new(self.s(i), self.t(j))
    }

    /// Index of the node closest to `z`, clamped to the window.
    pub fn nearest_node(&self, z: Complex64) -> usize {
        let fi = (z.re - self.s(0)) / self.spacing;
        let fj = (z.im - self.t(0)) / self.spacing;
        let i = fi.round().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = fj.round().clamp(0.0, (self.ny - 1) as f64) as usize;
        self.index(i, j)
    }

    pub fn points(&self) -> Vec<Complex64> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    pub fn kind(&self, k: usize) -> NodeKind {
        let (i, j) = self.ij(k);
        let edge_s = i == 0 || i + 1 == self.nx;
        if self.tag == DomainTag::HalfPlane && j == 0 && !edge_s {
            return NodeKind::Physical;
        }
        if edge_s || j == 0 || j + 1 == self.ny {
            NodeKind::Truncation
        } else {
            NodeKind::Interior
        }
    }

    pub fn is_interior(&self, k: usize) -> bool {
        self.kind(k) == NodeKind::Interior
    }

    /// Trapezoid weight of node `k`.
    pub fn quad_weight(&self, k: usize) -> f64 {
        let (i, j) = self.ij(k);
        let ws = if i == 0 || i + 1 == self.nx { 0.5 } else { 1.0 };
        let wt = if j == 0 || j + 1 == self.ny { 0.5 } else { 1.0 };
        ws * wt * self.spacing * self.spacing
    }

    /// Index of the node at `z`, if `z` is a node up to `1e-9` spacings.
    pub fn node_at(&self, z: Complex64) -> Option<usize> {
        let fi = (z.re - self.s(0)) / self.spacing;
        let fj = (z.im - self.t(0)) / self.spacing;
        let (ri, rj) = (fi.round(), fj.round());
        if (fi - ri).abs() > 1e-9 || (fj - rj).abs() > 1e-9 {
            return None;
        }
        if ri < 0.0 || rj < 0.0 || ri as usize >= self.nx || rj as usize >= self.ny {
            return None;
        }
        Some(self.index(ri as usize, rj as usize))
    }

    pub fn contains(&self, z: Complex64) -> bool {
        let eps = 1e-12 * self.spacing;
        z.re >= self.s(0) - eps
            && z.re <= self.s(self.nx - 1) + eps
            && z.im >= self.t(0) - eps
            && z.im <= self.t(self.ny - 1) + eps
    }

    /// Bilinear interpolation stencil: four `(node, weight)` pairs.
    pub fn bilinear(&self, z: Complex64) -> Option<[(usize, f64); 4]> {
        if !self.contains(z) {
            return None;
        }
        let fi = ((z.re - self.s(0)) / self.spacing).clamp(0.0, (self.nx - 1) as f64);
        let fj = ((z.im - self.t(0)) / self.spacing).clamp(0.0, (self.ny - 1) as f64);
        let i0 = (fi.floor() as usize).min(self.nx - 2);
        let j0 = (fj.floor() as usize).min(self.ny - 2);
        let a = fi - i0 as f64;
        let b = fj - j0 as f64;
        Some([
            (self.index(i0, j0), (1.0 - a) * (1.0 - b)),
            (self.index(i0 + 1, j0), a * (1.0 - b)),
            (self.index(i0, j0 + 1), (1.0 - a) * b),
            (self.index(i0 + 1, j0 + 1), a * b),
        ])
    }

    /// Second-order first-derivative stencil in `s` at node `(i, j)`:
    /// central inside, one-sided at the two ends.
    #[inline]
    pub fn ds_stencil(&self, i: usize, j: usize) -> [(usize, f64); 3] {
        let h2 = 0.5 / self.spacing;
        let k = self.index(i, j);
        if i == 0 {
            [(k, -3.0 * h2), (k + 1, 4.0 * h2), (k + 2, -h2)]
        } else if i + 1 == self.nx {
            [(k, 3.0 * h2), (k - 1, -4.0 * h2), (k - 2, h2)]
        } else {
            [(k - 1, -h2), (k, 0.0), (k + 1, h2)]
        }
    }

    #[inline]
    pub fn dt_stencil(&self, i: usize, j: usize) -> [(usize, f64); 3] {
        let h2 = 0.5 / self.spacing;
        let k = self.index(i, j);
        let w = self.nx;
        if j == 0 {
            [(k, -3.0 * h2), (k + w, 4.0 * h2), (k + 2 * w, -h2)]
        } else if j + 1 == self.ny {
            [(k, 3.0 * h2), (k - w, -4.0 * h2), (k - 2 * w, h2)]
        } else {
            [(k - w, -h2), (k, 0.0), (k + w, h2)]
        }
    }

    /// Doubler filter `1 - (mean of the four neighbours)`, i.e.
    /// `-(dx^2 / 4)` times the compact Laplacian. It is `O(dx^2)` on smooth
    /// data and equals 1 on the checkerboard modes that central differences
    /// cannot see. Only the `s` direction is used on the real axis of a
    /// half-plane; zero on truncation nodes.
    #[inline]
    pub fn doubler_stencil(&self, i: usize, j: usize) -> [(usize, f64); 5] {
        let k = self.index(i, j);
        match self.kind(k) {
            NodeKind::Truncation => [(k, 0.0); 5],
            NodeKind::Physical => [(k, 0.5), (k - 1, -0.25), (k + 1, -0.25), (k, 0.0), (k, 0.0)],
            NodeKind::Interior => {
                let w = self.nx;
                [(k, 1.0), (k - 1, -0.25), (k + 1, -0.25), (k - w, -0.25), (k + w, -0.25)]
            }
        }
    }

    pub fn doubler_filter<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        let mut out = vec![T::default(); self.len()];
        for j in 0..self.ny {
            for i in 0..self.nx {
                let mut acc = T::default();
                for (m, w) in self.doubler_stencil(i, j) {
                    acc = acc + f[m] * w;
                }
                out[self.index(i, j)] = acc;
            }
        }
        out
    }

    /// `d/ds` of a scalar or complex nodal array.
    pub fn ds<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        self.apply_stencil(f, 1, 0, |i, j| self.ds_stencil(i, j))
    }

    pub fn dt<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        self.apply_stencil(f, 1, 0, |i, j| self.dt_stencil(i, j))
    }

    /// `d/ds` of component `comp` of an `n`-vector field stored node-major.
    pub fn ds_comp<T>(&self, f: &[T], n: usize, comp: usize) -> Vec<T>
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        self.apply_stencil(f, n, comp, |i, j| self.ds_stencil(i, j))
    }

    pub fn dt_comp<T>(&self, f: &[T], n: usize, comp: usize) -> Vec<T>
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        self.apply_stencil(f, n, comp, |i, j| self.dt_stencil(i, j))
    }

    fn apply_stencil<T, S>(&self, f: &[T], n: usize, comp: usize, stencil: S) -> Vec<T>
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
        S: Fn(usize, usize) -> [(usize, f64); 3],
    {
        let mut out = vec![T::default(); self.len()];
        for j in 0..self.ny {
            for i in 0..self.nx {
                let mut acc = T::default();
                for (m, w) in stencil(i, j) {
                    acc = acc + f[m * n + comp] * w;
                }
                out[self.index(i, j)] = acc;
            }
        }
        out
    }
}

// ---------------------------------------------------------------- weights

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightFamily {
    RhoA,
    RhoInfEps,
    RhoGlued,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub p: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub family: WeightFamily,
    /// Anchors `z_i / eps` in the blown-up coordinate.
    pub node_anchors: Vec<Complex64>,
    /// Radius of the disk on which the unscaled far weight equals one.
    pub core_radius: f64,
}

impl WeightSpec {
    pub fn rho_a(p: f64) -> Self {
        Self {
            p,
            delta: 2.0 - 4.0 / p,
            epsilon: 1.0,
            family: WeightFamily::RhoA,
            node_anchors: Vec::new(),
            core_radius: 1.0,
        }
    }

    pub fn inf_eps(p: f64, epsilon: f64) -> Self {
        Self { epsilon, family: WeightFamily::RhoInfEps, ..Self::rho_a(p) }
    }

    /// Glued weight for anchors `z_i / eps`; the far weight is flattened on a
    /// disk reaching past every ball `|z - z_i/eps| < 1/sqrt(eps)` so the two
    /// pieces agree on the ball boundaries.
    pub fn glued(p: f64, epsilon: f64, anchors: &[Complex64]) -> Self {
        let reach = anchors.iter().map(|a| (a * epsilon).norm()).fold(0.0, f64::max) + epsilon.sqrt();
        Self {
            epsilon,
            family: WeightFamily::RhoGlued,
            node_anchors: anchors.to_vec(),
            core_radius: reach.max(1.0),
            ..Self::rho_a(p)
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.p > 2.0 && self.p < 4.0) {
            return Err(GridError::BadWeight(format!("p = {} outside (2, 4)", self.p)));
        }
        if !(self.delta > 1.0 - 2.0 / self.p && self.delta < 1.0) {
            return Err(GridError::BadWeight(format!("delta = {} outside (1 - 2/p, 1)", self.delta)));
        }
        if self.family != WeightFamily::RhoA && !(self.epsilon > 0.0) {
            return Err(GridError::BadWeight("rescaled weights need epsilon > 0".into()));
        }
        if self.family == WeightFamily::RhoGlued && self.node_anchors.is_empty() {
            return Err(GridError::BadWeight("glued weight needs anchors".into()));
        }
        if !(self.core_radius >= 1.0) {
            return Err(GridError::BadWeight("core radius below one".into()));
        }
        Ok(())
    }

    /// Exponent `2p - 4` applied to the weight inside `L^p` integrals.
    #[inline]
    pub fn exponent(&self) -> f64 {
        2.0 * self.p - 4.0
    }

    pub fn weight_at(&self, z: Complex64) -> f64 {
        match self.family {
            WeightFamily::RhoA => rho_a(z.norm()),
            WeightFamily::RhoInfEps => self.rho_inf_eps(z),
            WeightFamily::RhoGlued => {
                let r_ball = 1.0 / self.epsilon.sqrt();
                for a in &self.node_anchors {
                    let d = (z - a).norm();
                    if d < r_ball {
                        return rho_a(d);
                    }
                }
                self.rho_inf_eps(z)
            }
        }
    }

    fn rho_inf_eps(&self, z: Complex64) -> f64 {
        rho_far((z * self.epsilon).norm(), self.core_radius) / self.epsilon.sqrt()
    }

    /// `weight^(2p-4)` at every node.
    pub fn density_weights(&self, grid: &Grid) -> Vec<f64> {
        let e = self.exponent();
        (0..grid.len()).map(|k| self.weight_at(grid.point(k)).powf(e)).collect()
    }
}

/// `max(1, r)`. A C^1 blend equal to one on `r <= 1/2` cannot reach `r` at
/// `r = 1` without dipping below one, so the corner is kept.
#[inline]
pub fn rho_a(r: f64) -> f64 {
    r.max(1.0)
}

/// Far weight: one on `r <= core`, linear up to `2 core` at `r = 2 core`, then `r`.
#[inline]
pub fn rho_far(r: f64, core: f64) -> f64 {
    if core <= 1.0 {
        return rho_a(r);
    }
    if r <= core {
        1.0
    } else if r >= 2.0 * core {
        r
    } else {
        1.0 + (r - core) * (2.0 * core - 1.0) / core
    }
}

// ---------------------------------------------------------------- gluing geometry

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluingGeometry {
    pub b: f64,
    pub e: f64,
    pub epsilon: f64,
    /// `z_i / eps`.
    pub anchors: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffKind {
    Inner,
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Innermost ball around anchor `i`, where the component is used as is.
    CheckBall(usize),
    /// Annulus around anchor `i` where the interpolation lives.
    Neck(usize),
    /// Everything outside the outer balls.
    HatComplement,
}

impl Region {
    pub fn tag(self) -> u8 {
        match self {
            Region::CheckBall(i) => i as u8,
            Region::Neck(i) => 128 + i as u8,
            Region::HatComplement => 255,
        }
    }
}

impl GluingGeometry {
    /// Geometry for markers `z_i` at gluing parameter `eps`.
    pub fn new(b: f64, e: f64, epsilon: f64, markers: &[Complex64]) -> Result<Self, GridError> {
        if !(b > 1.0 && b.is_finite()) {
            return Err(GridError::BadGeometry(format!("b = {b} must exceed 1")));
        }
        if !(e > 1.0 && e < b) {
            return Err(GridError::BadGeometry(format!("e = {e} must lie in (1, b)")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(GridError::BadGeometry(format!("epsilon = {epsilon} must be positive")));
        }
        if markers.len() > 127 {
            return Err(GridError::BadGeometry("at most 127 markers".into()));
        }
        let anchors: Vec<Complex64> = markers.iter().map(|z| z / epsilon).collect();
        let g = Self { b, e, epsilon, anchors };
        let min_sep = 2.0 * g.r_outer();
        for i in 0..g.anchors.len() {
            for j in i + 1..g.anchors.len() {
                if (g.anchors[i] - g.anchors[j]).norm() < min_sep {
                    return Err(GridError::OverlappingAnnuli(i, j));
                }
            }
        }
        Ok(g)
    }

    #[inline]
    fn rs(&self) -> f64 {
        self.epsilon.sqrt()
    }

    /// `1 / (2 b sqrt(eps))`: the component is copied inside this radius.
    pub fn r_core(&self) -> f64 {
        1.0 / (2.0 * self.b * self.rs())
    }

    /// `1 / (b sqrt(eps))`: the inner cut-off vanishes beyond this radius.
    pub fn r_inner(&self) -> f64 {
        1.0 / (self.b * self.rs())
    }

    /// `1 / sqrt(eps)`.
    pub fn r_mid(&self) -> f64 {
        1.0 / self.rs()
    }

    /// `b / sqrt(eps)`: the outer cut-off vanishes inside this radius.
    pub fn r_hat(&self) -> f64 {
        self.b / self.rs()
    }

    /// `2 b / sqrt(eps)`.
    pub fn r_outer(&self) -> f64 {
        2.0 * self.b / self.rs()
    }

    /// Cut-off equal to one near anchor `i`, vanishing beyond `r_inner`.
    /// Linear in the distance, which meets the gradient bound `2 b sqrt(eps)` exactly.
    pub fn beta_inner(&self, z: Complex64, i: usize) -> f64 {
        let r = (z - self.anchors[i]).norm();
        (2.0 - 2.0 * self.b * self.rs() * r).clamp(0.0, 1.0)
    }

    /// Cut-off vanishing inside every `r_hat` ball and equal to one outside
    /// every `r_outer` ball; gradient at most `sqrt(eps) / b`.
    pub fn beta_outer(&self, z: Complex64) -> f64 {
        self.anchors
            .iter()
            .map(|a| ((z - a).norm() * self.rs() / self.b - 1.0).clamp(0.0, 1.0))
            .fold(1.0, f64::min)
    }

    pub fn cutoff_beta(&self, z: Complex64, anchor: usize, kind: CutoffKind) -> f64 {
        match kind {
            CutoffKind::Inner => self.beta_inner(z, anchor),
            CutoffKind::Outer => self.beta_outer(z),
        }
    }

    /// Nearest anchor and its distance.
    pub fn nearest(&self, z: Complex64) -> Option<(usize, f64)> {
        self.anchors
            .iter()
            .enumerate()
            .map(|(i, a)| (i, (z - a).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn classify_region(&self, z: Complex64) -> Region {
        match self.nearest(z) {
            Some((i, d)) if d < self.r_core() => Region::CheckBall(i),
            Some((i, d)) if d < self.r_outer() => Region::Neck(i),
            _ => Region::HatComplement,
        }
    }

    /// Partition-of-unity cut-off supported in `B(z_i, e / sqrt(eps))`, equal
    /// to one on `B(z_i, 1 / sqrt(eps))`, logarithmic in between.
    pub fn chi_inner(&self, z: Complex64, i: usize) -> f64 {
        let r = (z - self.anchors[i]).norm() * self.rs();
        if r <= 1.0 {
            1.0
        } else if r >= self.e {
            0.0
        } else {
            1.0 - r.ln() / self.e.ln()
        }
    }

    /// Companion cut-off, zero on every `B(z_i, 1 / (e sqrt(eps)))`, one
    /// outside every `B(z_i, 1 / sqrt(eps))`.
    pub fn chi_outer(&self, z: Complex64) -> f64 {
        self.anchors
            .iter()
            .map(|a| {
                let r = (z - a).norm() * self.rs();
                if r >= 1.0 {
                    1.0
                } else if r * self.e <= 1.0 {
                    0.0
                } else {
                    1.0 + r.ln() / self.e.ln()
                }
            })
            .fold(1.0, f64::min)
    }
}
