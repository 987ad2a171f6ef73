//! Approximate solutions from a disk component and vortex components: the
//! disk is rescaled by `eps`, each vortex is translated to `z_i / eps`, and the
//! two are blended across the neck annuli in the untwisted frame.

use crate::disk::{DiskComponent, DiskError};
use crate::field::{energy, FieldError, GaugedField};
use crate::grid::{DomainTag, GluingGeometry, Grid, GridError, Region, WeightFamily, WeightSpec};
use crate::linearized::{node_magnitudes, residual, ActiveNodes, LinearError};
use crate::newton::{correct_field, NewtonError, NewtonOptions};
use crate::norms::lp_weighted;
use crate::taubes::{solve_taubes, TaubesError, VortexData};
use crate::target_model::{chordal_distance, herm, norm_sqr, TargetModel};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Largest flat-chart displacement allowed in a neck.
pub const NECK_CHART_RADIUS: f64 = 0.5;

/// Extra room between the outer annulus and the glued grid boundary.
const GRID_MARGIN: f64 = 2.0;

#[derive(Debug, Error)]
pub enum PreglueError {
    #[error("matching condition violated at marker {marker}: chordal distance {distance:e} between the vortex limit and the disk value exceeds {tolerance:e}")]
    MatchingViolation { marker: Complex64, distance: f64, tolerance: f64 },
    #[error("neck annuli around anchors {0} and {1} overlap")]
    AnnulusOverlap(usize, usize),
    #[error("neck displacement {distance} at {at} leaves the flat chart")]
    ChartViolation { at: Complex64, distance: f64 },
    #[error("anchor {0} is not a grid node at this spacing")]
    AnchorOffLattice(Complex64),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Taubes(#[from] TaubesError),
    #[error(transparent)]
    Disk(#[from] DiskError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Grid(GridError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error("component correction failed: {0}")]
    Newton(Box<NewtonError>),
}

impl From<GridError> for PreglueError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::OverlappingAnnuli(i, j) => PreglueError::AnnulusOverlap(i, j),
            e => PreglueError::Grid(e),
        }
    }
}

impl From<NewtonError> for PreglueError {
    fn from(e: NewtonError) -> Self {
        PreglueError::Newton(Box::new(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableConfig {
    pub disk: DiskComponent,
    /// One vortex per disk marker; `VortexData::marker` names it.
    pub vortices: Vec<VortexData>,
    pub match_tolerance: f64,
}

impl StableConfig {
    fn is_boundary_marker(&self, z: Complex64) -> bool {
        self.disk.boundary_lagrangian && z.im == 0.0
    }

    pub fn domain(&self) -> DomainTag {
        if self.disk.boundary_lagrangian {
            DomainTag::HalfPlane
        } else {
            DomainTag::Plane
        }
    }

    pub fn validate(&self) -> Result<(), PreglueError> {
        self.disk.validate()?;
        if !(self.match_tolerance > 0.0) {
            return Err(PreglueError::Invalid(format!("match tolerance {} must be positive", self.match_tolerance)));
        }
        if self.vortices.len() != self.disk.markers.len() {
            return Err(PreglueError::Invalid(format!(
                "matching condition violated: {} vortex components for {} disk markers; each marker carries exactly one component",
                self.vortices.len(),
                self.disk.markers.len()
            )));
        }
        for m in &self.disk.markers {
            let count = self.vortices.iter().filter(|v| v.marker == *m).count();
            if count != 1 {
                return Err(PreglueError::Invalid(format!(
                    "matching condition violated: marker {m} carries {count} components, expected exactly one"
                )));
            }
            if self.disk.boundary_lagrangian && m.im < 0.0 {
                return Err(PreglueError::Invalid(format!("marker {m} lies below the real axis")));
            }
        }
        for v in &self.vortices {
            v.validate()?;
            if v.n() != self.disk.n() {
                return Err(PreglueError::Invalid(format!("vortex at {} has N = {}, disk has N = {}", v.marker, v.n(), self.disk.n())));
            }
            let want = if self.is_boundary_marker(v.marker) { DomainTag::HalfPlane } else { DomainTag::Plane };
            if v.domain != want {
                return Err(PreglueError::Invalid(format!(
                    "vortex at marker {} must live on the {} (interior markers carry plane vortices, boundary markers half-plane vortices)",
                    v.marker,
                    want.as_str()
                )));
            }
        }
        Ok(())
    }

    fn holonomies(&self) -> Vec<i64> {
        self.vortices
            .iter()
            .map(|v| if v.domain == DomainTag::Plane { v.degree() as i64 } else { 0 })
            .collect()
    }
}

/// A solved vortex component in the frame used for gluing.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub marker: Complex64,
    /// Corrected field, phase-rotated to match the disk at the marker.
    pub field: GaugedField,
    pub holonomy: i64,
    /// Untwisted limit at infinity after the rotation.
    pub asymptote: Vec<Complex64>,
    pub energy: f64,
    pub matching_distance: f64,
    pub rotation: Complex64,
    pub newton_iterations: usize,
}

fn angle_derivatives(w: Complex64) -> (f64, f64, f64) {
    let r2 = w.norm_sqr();
    (w.arg(), -w.im / r2, w.re / r2)
}

/// Normalized average of `e^{-i k theta} u` over the nodes within half a
/// spacing of the circle of radius `radius` about the grid center.
pub fn asymptote(field: &GaugedField, holonomy: i64, radius: f64) -> Result<Vec<Complex64>, PreglueError> {
    let g = &field.grid;
    let n = field.n;
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    let mut count = 0usize;
    for k in 0..g.len() {
        let w = g.point(k) - g.center;
        if (w.norm() - radius).abs() < 0.5 * g.spacing {
            let twist = Complex64::from_polar(1.0, -(holonomy as f64) * w.arg());
            for (a, x) in acc.iter_mut().zip(field.u_at(k)) {
                *a += twist * x;
            }
            count += 1;
        }
    }
    let r = norm_sqr(&acc).sqrt();
    if count == 0 || r == 0.0 {
        return Err(PreglueError::Invalid(format!("no usable asymptotic circle at radius {radius}")));
    }
    Ok(acc.iter().map(|x| x / r).collect())
}

/// `lift(z_i) prod_{j != i} e^{i k_j theta_j}`: the untwisted disk value at anchor `i`.
fn untwisted_disk_value(config: &StableConfig, hol: &[i64], i: usize) -> Result<Vec<Complex64>, PreglueError> {
    let zi = config.vortices[i].marker;
    let (x, _, _) = config.disk.lift_at(zi)?;
    let mut phase = Complex64::new(1.0, 0.0);
    for (j, v) in config.vortices.iter().enumerate() {
        if j != i && hol[j] != 0 {
            phase *= Complex64::from_polar(1.0, hol[j] as f64 * (zi - v.marker).arg());
        }
    }
    Ok(x.iter().map(|c| c * phase).collect())
}

/// Solves every vortex component on a square (or half-square) of half width
/// `radius`, rotates its phase so the limit matches the disk, and corrects it
/// to the stabilized discrete equations with tolerance `tol`.
pub fn prepare_components(config: &StableConfig, spacing: f64, radius: f64, tol: f64) -> Result<Vec<Component>, PreglueError> {
    config.validate()?;
    let hol = config.holonomies();
    let half = (radius / spacing).ceil() * spacing;
    config
        .vortices
        .par_iter()
        .enumerate()
        .map(|(i, data)| {
            let grid = Grid::new(data.domain, Complex64::new(0.0, 0.0), half, spacing)?;
            let sol = solve_taubes(data, &grid, tol.min(1e-10))?;
            let x = asymptote(&sol.field, hol[i], half - 2.0)?;
            let (disk_value, _, _) = config.disk.lift_at(data.marker)?;
            let distance = chordal_distance(&x, &disk_value);
            if distance > config.match_tolerance {
                return Err(PreglueError::MatchingViolation { marker: data.marker, distance, tolerance: config.match_tolerance });
            }
            let y = untwisted_disk_value(config, &hol, i)?;
            let h = herm(&x, &y);
            let rotation = if h.norm() > 0.0 { h / h.norm() } else { Complex64::new(1.0, 0.0) };
            let rotated = sol.field.rotated(rotation);
            let model = TargetModel::standard(data.n());
            let (field, trace) = correct_field(&rotated, &rotated, &model, &WeightSpec::rho_a(3.0), &NewtonOptions::new(tol, 30))?;
            let asymptote = asymptote(&field, hol[i], half - 2.0)?;
            Ok(Component {
                marker: data.marker,
                energy: energy(&field, &model, None).total,
                field,
                holonomy: hol[i],
                asymptote,
                matching_distance: distance,
                rotation,
                newton_iterations: trace.iterates.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproximateSolution {
    pub field: GaugedField,
    pub geometry: GluingGeometry,
    /// Per-node provenance: ball index, `128 + i` in neck `i`, 255 in the disk region.
    pub regions: Vec<u8>,
    /// Unit representatives of the disk at the markers.
    pub marker_values: Vec<Vec<Complex64>>,
}

impl ApproximateSolution {
    /// The glued weight for these anchors.
    pub fn weight_spec(&self, p: f64) -> WeightSpec {
        WeightSpec::glued(p, self.geometry.epsilon, &self.geometry.anchors)
    }
}

fn half_extent(extent: f64, spacing: f64) -> f64 {
    (extent / spacing).ceil() * spacing
}

/// Rectangular glued grid covering every outer annulus plus a margin, with
/// its nodes on the lattice `spacing * Z^2`.
pub fn glued_grid(tag: DomainTag, geometry: &GluingGeometry, spacing: f64) -> Result<Grid, PreglueError> {
    let reach = geometry.r_outer() + GRID_MARGIN;
    let hs = half_extent(geometry.anchors.iter().map(|a| a.re.abs()).fold(0.0, f64::max) + reach, spacing);
    let ht = half_extent(geometry.anchors.iter().map(|a| a.im.abs()).fold(0.0, f64::max) + reach, spacing);
    let nx = (2.0 * hs / spacing).round() as usize + 1;
    let ny = match tag {
        DomainTag::Plane => (2.0 * ht / spacing).round() as usize + 1,
        DomainTag::HalfPlane => (ht / spacing).round() as usize + 1,
    };
    Ok(Grid::with_dims(tag, Complex64::new(0.0, 0.0), spacing, nx, ny)?)
}

fn on_lattice(z: Complex64, spacing: f64) -> bool {
    let (fi, fj) = (z.re / spacing, z.im / spacing);
    (fi - fi.round()).abs() < 1e-9 && (fj - fj.round()).abs() < 1e-9
}

/// Per-node value of the approximate solution.
struct NodeValue {
    u: Vec<Complex64>,
    phi: f64,
    psi: f64,
    region: u8,
}

/// Disk field at `z`: rescaled lift times the holonomy twists, with the
/// matching connection.
fn disk_value(config: &StableConfig, geometry: &GluingGeometry, hol: &[i64], z: Complex64) -> Result<(Vec<Complex64>, f64, f64), PreglueError> {
    let eps = geometry.epsilon;
    let (x, p, q) = config.disk.lift_at(z * eps)?;
    let mut phase = Complex64::new(1.0, 0.0);
    let (mut phi, mut psi) = (eps * p, eps * q);
    for (a, &k) in geometry.anchors.iter().zip(hol) {
        if k == 0 {
            continue;
        }
        let (theta, ts, tt) = angle_derivatives(z - a);
        phase *= Complex64::from_polar(1.0, k as f64 * theta);
        phi -= k as f64 * ts;
        psi -= k as f64 * tt;
    }
    Ok((x.iter().map(|c| c * phase).collect(), phi, psi))
}

fn displacement(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

#[allow(clippy::too_many_arguments)]
fn node_value(
    config: &StableConfig,
    comps: &[Component],
    geometry: &GluingGeometry,
    hol: &[i64],
    anchors_y: &[Vec<Complex64>],
    z: Complex64,
) -> Result<NodeValue, PreglueError> {
    let region = geometry.classify_region(z);
    match region {
        Region::CheckBall(i) => {
            let c = &comps[i];
            let k = c.field.grid.node_at(z - geometry.anchors[i]).ok_or(PreglueError::AnchorOffLattice(geometry.anchors[i]))?;
            Ok(NodeValue { u: c.field.u_at(k).to_vec(), phi: c.field.phi[k], psi: c.field.psi[k], region: region.tag() })
        }
        Region::HatComplement => {
            let (u, phi, psi) = disk_value(config, geometry, hol, z)?;
            Ok(NodeValue { u, phi, psi, region: region.tag() })
        }
        Region::Neck(i) => {
            let w = z - geometry.anchors[i];
            let lam = hol[i] as f64;
            let (theta, ts, tt) = angle_derivatives(w);
            let untwist = Complex64::from_polar(1.0, -lam * theta);
            let y = &anchors_y[i];
            let b_in = geometry.beta_inner(z, i);
            let b_out = geometry.beta_outer(z);
            let mut xi: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); y.len()];
            let (mut phi, mut psi) = (0.0, 0.0);
            if b_out > 0.0 {
                let (ud, pd, qd) = disk_value(config, geometry, hol, z)?;
                let uu: Vec<Complex64> = ud.iter().map(|c| c * untwist).collect();
                let dist = displacement(&uu, y);
                if dist > NECK_CHART_RADIUS {
                    return Err(PreglueError::ChartViolation { at: z, distance: dist });
                }
                for (x, (a, b)) in xi.iter_mut().zip(uu.iter().zip(y)) {
                    *x += (a - b) * b_out;
                }
                phi += b_out * (pd + lam * ts);
                psi += b_out * (qd + lam * tt);
            }
            if b_in > 0.0 {
                let c = &comps[i];
                let k = c.field.grid.node_at(w).ok_or_else(|| {
                    PreglueError::Invalid(format!("component grid of marker {} does not reach {w}", c.marker))
                })?;
                let uu: Vec<Complex64> = c.field.u_at(k).iter().map(|x| x * untwist).collect();
                let dist = displacement(&uu, y);
                if dist > NECK_CHART_RADIUS {
                    return Err(PreglueError::ChartViolation { at: z, distance: dist });
                }
                for (x, (a, b)) in xi.iter_mut().zip(uu.iter().zip(y)) {
                    *x += (a - b) * b_in;
                }
                phi += b_in * (c.field.phi[k] + lam * ts);
                psi += b_in * (c.field.psi[k] + lam * tt);
            }
            let twist = untwist.conj();
            let u = y.iter().zip(&xi).map(|(b, x)| (b + x) * twist).collect();
            Ok(NodeValue { u, phi: phi - lam * ts, psi: psi - lam * tt, region: region.tag() })
        }
    }
}

fn passes_through(config: &StableConfig, comps: &[Component], geometry: &GluingGeometry) -> bool {
    geometry.epsilon == 1.0
        && comps.len() == 1
        && comps[0].marker == Complex64::new(0.0, 0.0)
        && config.disk.polys.iter().all(|p| p.degree() == 0)
}

/// Glues prepared components at the geometry's parameter. With a single
/// component at marker 0 on a constant disk and `eps = 1` there is nothing to
/// glue and the component itself is returned, tagged as ball 0.
pub fn preglue_with(
    config: &StableConfig,
    comps: &[Component],
    geometry: &GluingGeometry,
    spacing: f64,
) -> Result<ApproximateSolution, PreglueError> {
    config.validate()?;
    if comps.len() != config.vortices.len() || geometry.anchors.len() != comps.len() {
        return Err(PreglueError::Invalid("components, markers and anchors disagree".into()));
    }
    let marker_values = config
        .vortices
        .iter()
        .map(|v| config.disk.lift_at(v.marker).map(|(x, _, _)| x))
        .collect::<Result<Vec<_>, _>>()?;
    if passes_through(config, comps, geometry) {
        let field = comps[0].field.clone();
        let regions = vec![0u8; field.nodes()];
        return Ok(ApproximateSolution { field, geometry: geometry.clone(), regions, marker_values });
    }
    for (a, c) in geometry.anchors.iter().zip(comps) {
        if !on_lattice(*a, spacing) {
            return Err(PreglueError::AnchorOffLattice(*a));
        }
        if (c.field.grid.spacing - spacing).abs() > 1e-12 * spacing {
            return Err(PreglueError::Invalid("component spacing differs from the glued spacing".into()));
        }
    }
    let hol = config.holonomies();
    let anchors_y = (0..comps.len()).map(|i| untwisted_disk_value(config, &hol, i)).collect::<Result<Vec<_>, _>>()?;
    let grid = glued_grid(config.domain(), geometry, spacing)?;
    let values: Vec<NodeValue> = (0..grid.len())
        .into_par_iter()
        .map(|k| node_value(config, comps, geometry, &hol, &anchors_y, grid.point(k)))
        .collect::<Result<_, _>>()?;
    let n = config.disk.n();
    let mut u = Vec::with_capacity(n * grid.len());
    let mut phi = Vec::with_capacity(grid.len());
    let mut psi = Vec::with_capacity(grid.len());
    let mut regions = Vec::with_capacity(grid.len());
    for v in values {
        u.extend(v.u);
        phi.push(v.phi);
        psi.push(v.psi);
        regions.push(v.region);
    }
    let holonomy = if grid.tag == DomainTag::Plane { hol.iter().sum() } else { 0 };
    let field = GaugedField::new(grid, n, u, phi, psi, holonomy)?;
    Ok(ApproximateSolution { field, geometry: geometry.clone(), regions, marker_values })
}

/// Solves the components (radius from the inner cut-off) and glues them.
pub fn preglue(config: &StableConfig, geometry: &GluingGeometry, spacing: f64, tol: f64) -> Result<ApproximateSolution, PreglueError> {
    let radius = crate::newton::component_radius(geometry.epsilon.min(1.0), geometry.b);
    let comps = prepare_components(config, spacing, radius, tol)?;
    preglue_with(config, &comps, geometry, spacing)
}

/// Weighted `L^p` norm of the stabilized vortex residual together with the
/// Coulomb rows relative to the approximate solution itself (which vanish).
pub fn pregluing_error(approx: &ApproximateSolution, spec: &WeightSpec) -> Result<f64, PreglueError> {
    if spec.family != WeightFamily::RhoGlued {
        return Err(PreglueError::Invalid("pregluing error is measured in the glued weight".into()));
    }
    let v = &approx.field;
    let rows = residual(v, v, &TargetModel::standard(v.n))?;
    let mags = node_magnitudes(&ActiveNodes::of(&v.grid), v.n, v.nodes(), &rows);
    Ok(lp_weighted(&v.grid, &mags, spec))
}

/// Pointwise residual magnitude of the approximate solution on the full grid.
pub fn residual_magnitudes(approx: &ApproximateSolution) -> Result<Vec<f64>, PreglueError> {
    let v = &approx.field;
    let rows = residual(v, v, &TargetModel::standard(v.n))?;
    Ok(node_magnitudes(&ActiveNodes::of(&v.grid), v.n, v.nodes(), &rows))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionEnergy {
    pub tag: u8,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterEnergies {
    pub total: f64,
    pub regions: Vec<RegionEnergy>,
}

/// Energy per provenance tag; the tags partition the quadrature nodes.
pub fn cluster_energies(approx: &ApproximateSolution) -> ClusterEnergies {
    field_cluster_energies(&approx.field, &approx.regions)
}

/// Energy of any field on the glued grid split by a provenance plane.
pub fn field_cluster_energies(field: &GaugedField, regions: &[u8]) -> ClusterEnergies {
    let e = energy(field, &TargetModel::standard(field.n), None);
    let mut by: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for (k, &tag) in regions.iter().enumerate() {
        by.entry(tag).or_default().push(field.grid.quad_weight(k) * e.density[k]);
    }
    ClusterEnergies {
        total: e.total,
        regions: by.into_iter().map(|(tag, v)| RegionEnergy { tag, energy: crate::reduce::pairwise_sum(&v) }).collect(),
    }
}

/// Energy of the rescaled, untwisted disk lift on the glued window.
pub fn disk_energy(config: &StableConfig, approx: &ApproximateSolution) -> Result<f64, PreglueError> {
    if config.disk.polys.iter().all(|p| p.degree() == 0) {
        return Ok(0.0);
    }
    let f = crate::disk::rescaled_field(&config.disk, approx.geometry.epsilon, &approx.field.grid)?;
    Ok(energy(&f, &TargetModel::standard(f.n), None).total)
}
