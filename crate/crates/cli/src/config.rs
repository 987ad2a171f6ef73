//! TOML experiment configuration. Every section rejects unknown keys; missing
//! optional keys are filled with defaults and the filled-in form is what gets
//! written next to the outputs.

use crate::error::CliError;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use vortex_core::disk::DiskComponent;
use vortex_core::grid::{DomainTag, GluingGeometry, Grid, WeightSpec};
use vortex_core::newton::GlueSettings;
use vortex_core::poly::Polynomial;
use vortex_core::preglue::StableConfig;
use vortex_core::taubes::VortexData;

/// A complex number written as `[re, im]`.
pub type C = [f64; 2];

fn c(x: C) -> Complex64 {
    Complex64::new(x[0], x[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub weights: WeightSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vortex: Option<VortexSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<DegenerateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glue: Option<GlueSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norms: Option<NormsSection>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// Number of components of `u`; inferred from the polynomial data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    #[default]
    Plane,
    HalfPlane,
}

impl From<Domain> for DomainTag {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Plane => DomainTag::Plane,
            Domain::HalfPlane => DomainTag::HalfPlane,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub domain: Domain,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default)]
    pub center: C,
}

fn default_half_width() -> f64 {
    32.0
}

fn default_spacing() -> f64 {
    0.25
}

impl Default for GridSection {
    fn default() -> Self {
        Self { domain: Domain::Plane, half_width: default_half_width(), spacing: default_spacing(), center: [0.0, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSection {
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_p() -> f64 {
    3.0
}

impl Default for WeightSection {
    fn default() -> Self {
        Self { p: default_p() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_e")]
    pub e: f64,
}

fn default_b() -> f64 {
    1.2
}

fn default_e() -> f64 {
    1.1
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self { b: default_b(), e: default_e() }
    }
}

fn default_tol() -> f64 {
    1e-9
}

/// Polynomial data: either the zeros of a single monic polynomial, or one
/// coefficient list per component, highest degree first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VortexSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeros: Option<Vec<C>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polys: Option<Vec<Vec<C>>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Degeneration {
    /// Two unit vortices at `+-s`, swept over `s`.
    Separation,
    /// Rank-two data `(z - n, z)`, swept over `n`.
    RankTwo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegenerateSection {
    pub example: Degeneration,
    pub values: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSection {
    pub marker: C,
    #[serde(default)]
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeros: Option<Vec<C>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polys: Option<Vec<Vec<C>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// Zeros of the direct solve, in glued-grid coordinates.
    pub zeros: Vec<C>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlueSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub frozen_jacobian: bool,
    #[serde(default = "default_match_tolerance")]
    pub match_tolerance: f64,
    /// Disk polynomials, one coefficient list per component.
    #[serde(default = "default_disk")]
    pub disk: Vec<Vec<C>>,
    #[serde(default)]
    pub boundary_lagrangian: bool,
    /// Disk markers; every one must carry exactly one component.
    pub markers: Vec<C>,
    #[serde(default)]
    pub component: Vec<ComponentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
}

fn default_max_iter() -> usize {
    30
}

fn default_match_tolerance() -> f64 {
    1e-3
}

fn default_disk() -> Vec<Vec<C>> {
    vec![vec![[1.0, 0.0]]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    #[serde(default = "default_gap")]
    pub gap_factor: f64,
}

fn default_gap() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsSection {
    /// Gluing parameter of the auxiliary norm.
    #[serde(default = "default_norm_eps")]
    pub epsilon: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_norm_eps() -> f64 {
    0.1
}

fn default_samples() -> usize {
    1
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
}

fn polys_from(zeros: &Option<Vec<C>>, polys: &Option<Vec<Vec<C>>>, what: &str) -> Result<Vec<Polynomial>, CliError> {
    match (zeros, polys) {
        (Some(z), None) => Ok(vec![Polynomial::from_roots(&z.iter().copied().map(c).collect::<Vec<_>>())]),
        (None, Some(p)) => Ok(p.iter().map(|q| Polynomial::new(q.iter().copied().map(c).collect())).collect()),
        _ => Err(CliError::Validation(format!("{what}: give exactly one of `zeros` or `polys`"))),
    }
}

fn positive(x: f64, what: &str) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} = {x} must be positive")))
    }
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<Grid, CliError> {
        let g = &self.grid;
        Ok(Grid::new(g.domain.into(), c(g.center), g.half_width, g.spacing)?)
    }

    pub fn weight_spec(&self) -> Result<WeightSpec, CliError> {
        let spec = WeightSpec::rho_a(self.weights.p);
        spec.validate()?;
        Ok(spec)
    }

    fn check_n(&self, n: usize) -> Result<(), CliError> {
        match self.target.n {
            Some(m) if m != n => Err(CliError::Validation(format!("target.n = {m} but the polynomial data has {n} components"))),
            _ => Ok(()),
        }
    }

    pub fn vortex(&self) -> Result<(VortexData, f64), CliError> {
        let v = self.vortex.as_ref().ok_or_else(|| CliError::Validation("missing [vortex] section".into()))?;
        positive(v.tol, "vortex.tol")?;
        let polys = polys_from(&v.zeros, &v.polys, "[vortex]")?;
        let data = VortexData::new(self.grid.domain.into(), polys, Complex64::new(0.0, 0.0))?;
        self.check_n(data.n())?;
        Ok((data, v.tol))
    }

    pub fn degenerate(&self) -> Result<&DegenerateSection, CliError> {
        let d = self.degenerate.as_ref().ok_or_else(|| CliError::Validation("missing [degenerate] section".into()))?;
        if d.values.is_empty() {
            return Err(CliError::Validation("degenerate.values: empty sweep list".into()));
        }
        positive(d.tol, "degenerate.tol")?;
        positive(self.grid.spacing, "grid.spacing")?;
        Ok(d)
    }

    pub fn glue_section(&self) -> Result<&GlueSection, CliError> {
        self.glue.as_ref().ok_or_else(|| CliError::Validation("missing [glue] section".into()))
    }

    pub fn stable_config(&self) -> Result<StableConfig, CliError> {
        let g = self.glue_section()?;
        let disk_polys = g.disk.iter().map(|q| Polynomial::new(q.iter().copied().map(c).collect())).collect();
        let disk = DiskComponent::new(disk_polys, g.markers.iter().copied().map(c).collect(), g.boundary_lagrangian)?;
        let mut vortices = Vec::new();
        for (i, comp) in g.component.iter().enumerate() {
            let polys = polys_from(&comp.zeros, &comp.polys, &format!("[[glue.component]] {i}"))?;
            vortices.push(VortexData::new(comp.domain.into(), polys, c(comp.marker))?);
        }
        let config = StableConfig { disk, vortices, match_tolerance: g.match_tolerance };
        config.validate()?;
        self.check_n(config.disk.n())?;
        Ok(config)
    }

    pub fn glue_settings(&self) -> Result<GlueSettings, CliError> {
        let g = self.glue_section()?;
        positive(g.tol, "glue.tol")?;
        positive(self.grid.spacing, "grid.spacing")?;
        self.weight_spec()?;
        Ok(GlueSettings {
            b: self.geometry.b,
            e: self.geometry.e,
            p: self.weights.p,
            spacing: self.grid.spacing,
            tol: g.tol,
            max_iter: g.max_iter,
            frozen_jacobian: g.frozen_jacobian,
        })
    }

    /// Checks the geometry at every requested parameter before any solve.
    pub fn check_geometry(&self, eps: &[f64]) -> Result<(), CliError> {
        let g = self.glue_section()?;
        let markers: Vec<Complex64> = g.markers.iter().copied().map(c).collect();
        for &e in eps {
            GluingGeometry::new(self.geometry.b, self.geometry.e, e, &markers)?;
        }
        Ok(())
    }

    pub fn epsilon(&self) -> Result<f64, CliError> {
        let eps = self.glue_section()?.epsilon.ok_or_else(|| CliError::Validation("glue.epsilon is required".into()))?;
        positive(eps, "glue.epsilon")?;
        self.check_geometry(&[eps])?;
        Ok(eps)
    }

    pub fn epsilons(&self) -> Result<Vec<f64>, CliError> {
        let eps = self.glue_section()?.epsilons.clone().unwrap_or_default();
        if eps.is_empty() {
            return Err(CliError::Validation("glue.epsilons: empty sweep list".into()));
        }
        if eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(CliError::Validation("glue.epsilons must be strictly decreasing".into()));
        }
        for &e in &eps {
            positive(e, "glue.epsilons entry")?;
        }
        self.check_geometry(&eps)?;
        Ok(eps)
    }

    pub fn oracle_zeros(&self) -> Result<Option<Vec<Complex64>>, CliError> {
        Ok(self.glue_section()?.oracle.as_ref().map(|o| o.zeros.iter().copied().map(c).collect()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Validation(format!("cannot serialize resolved config: {e}")))
    }

    /// Fills every defaulted section that the command reads.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if out.target.n.is_none() {
            out.target.n = self
                .vortex
                .as_ref()
                .and_then(|v| v.polys.as_ref().map(|p| p.len()).or(v.zeros.as_ref().map(|_| 1)))
                .or(self.glue.as_ref().map(|g| g.disk.len()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("[grid]\nspacing = 0.5\nwidth = 3\n").unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
        assert!(parse("colour = 1\n").is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = parse("[vortex]\nzeros = [[0.0, 0.0]]\n").unwrap().resolved();
        assert_eq!(cfg.grid.spacing, 0.25);
        assert_eq!(cfg.target.n, Some(1));
        let again = parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn vortex_needs_exactly_one_data_form() {
        let cfg = parse("[vortex]\nzeros = []\npolys = [[[1.0, 0.0]]]\n").unwrap();
        assert!(matches!(cfg.vortex(), Err(CliError::Validation(_))));
        let cfg = parse("[vortex]\n").unwrap();
        assert!(cfg.vortex().is_err());
    }

    #[test]
    fn component_count_must_match_target() {
        let cfg = parse("[target]\nn = 2\n[vortex]\nzeros = [[0.0, 0.0]]\n").unwrap();
        assert!(cfg.vortex().unwrap_err().to_string().contains("target.n"));
    }
}
