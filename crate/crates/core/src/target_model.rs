//! The abelian Hamiltonian target: `C^N` with the diagonal `U(1)` action,
//! moment map `mu(u) = sign * scale * (|u|^2 - 1)`, complex structure `i`
//! and the Lagrangian torus `{|u^a| = r_a}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("ambient dimension must be positive")]
    ZeroDimension,
    #[error("moment map scale must be positive, got {0}")]
    BadScale(f64),
    #[error("moment map sign must be +1 or -1, got {0}")]
    BadSign(i32),
    #[error("lagrangian radii must be {expected} positive reals with unit square sum")]
    BadLagrangian { expected: usize },
    #[error("base point is zero")]
    ZeroBasePoint,
}

/// Hermitian product, conjugate-linear in the first slot.
#[inline]
pub fn herm(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub n: usize,
    pub mu_scale: f64,
    pub mu_sign: i32,
    pub lagrangian_radii: Vec<f64>,
}

/// Orthogonal decomposition of a tangent vector at a point of the level set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitVector {
    pub horizontal: Vec<Complex64>,
    pub vertical: Vec<Complex64>,
}

impl TargetModel {
    pub fn new(
        n: usize,
        mu_scale: f64,
        mu_sign: i32,
        lagrangian_radii: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::ZeroDimension);
        }
        if !(mu_scale > 0.0 && mu_scale.is_finite()) {
            return Err(ModelError::BadScale(mu_scale));
        }
        if mu_sign != 1 && mu_sign != -1 {
            return Err(ModelError::BadSign(mu_sign));
        }
        let sq: f64 = lagrangian_radii.iter().map(|r| r * r).sum();
        if lagrangian_radii.len() != n
            || lagrangian_radii.iter().any(|r| !(*r > 0.0))
            || (sq - 1.0).abs() > 1e-12
        {
            return Err(ModelError::BadLagrangian { expected: n });
        }
        Ok(Self { n, mu_scale, mu_sign, lagrangian_radii })
    }

    /// The convention under which the scalar Taubes reduction solves the
    /// first-order system: `mu = -pi (|u|^2 - 1)`, `X_a(u) = i a u`.
    pub fn standard(n: usize) -> Self {
        let r = 1.0 / (n as f64).sqrt();
        Self { n, mu_scale: PI, mu_sign: -1, lagrangian_radii: vec![r; n] }
    }

    #[inline]
    pub fn signed_scale(&self) -> f64 {
        self.mu_sign as f64 * self.mu_scale
    }

    pub fn moment_map(&self, u: &[Complex64]) -> f64 {
        self.moment_map_from_norm_sqr(norm_sqr(u))
    }

    #[inline]
    pub fn moment_map_from_norm_sqr(&self, r2: f64) -> f64 {
        self.signed_scale() * (r2 - 1.0)
    }

    /// `dmu(u) . xi`.
    #[inline]
    pub fn dmu(&self, u: &[Complex64], xi: &[Complex64]) -> f64 {
        2.0 * self.signed_scale() * herm(u, xi).re
    }

    /// `dmu(u) . J xi`.
    #[inline]
    pub fn dmu_j(&self, u: &[Complex64], xi: &[Complex64]) -> f64 {
        -2.0 * self.signed_scale() * herm(u, xi).im
    }

    /// Inner product on the Lie algebra making `omega(X_a, .) = <dmu, a>`.
    #[inline]
    pub fn lie_metric(&self) -> f64 {
        1.0 / (2.0 * self.mu_scale)
    }

    pub fn infinitesimal_action(&self, a: f64, u: &[Complex64]) -> Vec<Complex64> {
        u.iter().map(|x| Complex64::new(0.0, a) * x).collect()
    }

    pub fn apply_j(&self, v: &[Complex64]) -> Vec<Complex64> {
        v.iter().map(|x| Complex64::i() * x).collect()
    }

    /// Splits `v` into the part orthogonal to the orbit plane `span_R{iu, u}`
    /// and the projection onto it.
    pub fn split_tangent(&self, u: &[Complex64], v: &[Complex64]) -> Result<SplitVector, ModelError> {
        let r2 = norm_sqr(u);
        if r2 == 0.0 {
            return Err(ModelError::ZeroBasePoint);
        }
        let c = herm(u, v) / r2;
        let vertical: Vec<Complex64> = u.iter().map(|x| x * c).collect();
        let horizontal = v.iter().zip(&vertical).map(|(a, b)| a - b).collect();
        Ok(SplitVector { horizontal, vertical })
    }

    /// Radial projection onto the unit sphere; returns `(u', h)` with `u' = e^h u`.
    pub fn project_to_level_set(&self, u: &[Complex64]) -> Result<(Vec<Complex64>, f64), ModelError> {
        let r = norm_sqr(u).sqrt();
        if r == 0.0 {
            return Err(ModelError::ZeroBasePoint);
        }
        Ok((u.iter().map(|x| x / r).collect(), -r.ln()))
    }

    /// Distance of each modulus from the Lagrangian radii.
    pub fn lagrangian_defect(&self, u: &[Complex64]) -> f64 {
        u.iter()
            .zip(&self.lagrangian_radii)
            .map(|(x, r)| (x.norm() - r).abs())
            .fold(0.0, f64::max)
    }
}

/// Fubini-Study chordal distance between the classes of two nonzero vectors.
pub fn chordal_distance(x: &[Complex64], y: &[Complex64]) -> f64 {
    // Lagrange identity: |x|^2|y|^2 - |<x,y>|^2 = sum_{a<b} |x_a y_b - x_b y_a|^2
    let mut wedge = 0.0;
    for a in 0..x.len() {
        for b in a + 1..x.len() {
            wedge += (x[a] * y[b] - x[b] * y[a]).norm_sqr();
        }
    }
    (wedge / (norm_sqr(x) * norm_sqr(y))).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn moment_map_examples() {
        let m = TargetModel::standard(2);
        assert_eq!(m.moment_map(&[c(0.6, 0.0), c(0.0, 0.8)]), 0.0);
        assert!((m.moment_map(&[c(0.0, 0.0), c(0.0, 0.0)]) - PI).abs() < 1e-15);
        let plus = TargetModel::new(2, PI, 1, vec![0.5f64.sqrt(); 2]).unwrap();
        assert!((plus.moment_map(&[c(2.0, 0.0), c(0.0, 0.0)]) - 3.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(TargetModel::new(0, 1.0, 1, vec![]), Err(ModelError::ZeroDimension));
        assert!(matches!(TargetModel::new(1, -1.0, 1, vec![1.0]), Err(ModelError::BadScale(_))));
        assert!(matches!(TargetModel::new(1, 1.0, 2, vec![1.0]), Err(ModelError::BadSign(2))));
        assert!(matches!(
            TargetModel::new(2, 1.0, 1, vec![0.5, 0.5]),
            Err(ModelError::BadLagrangian { expected: 2 })
        ));
    }

    #[test]
    fn split_examples() {
        let m = TargetModel::standard(2);
        let u = [c(0.6, 0.0), c(0.0, 0.8)];
        let iu = m.apply_j(&u);
        let s = m.split_tangent(&u, &iu).unwrap();
        assert!(norm_sqr(&s.horizontal) < 1e-30);
        let s = m.split_tangent(&[c(1.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!(norm_sqr(&s.vertical) < 1e-30);
        let m1 = TargetModel::standard(1);
        let s = m1.split_tangent(&[c(0.0, 1.0)], &[c(0.3, -2.0)]).unwrap();
        assert!(norm_sqr(&s.horizontal) < 1e-28);
        assert_eq!(m1.split_tangent(&[c(0.0, 0.0)], &[c(1.0, 0.0)]), Err(ModelError::ZeroBasePoint));
    }

    #[test]
    fn projection_examples() {
        let m = TargetModel::standard(3);
        let (p, h) = m.project_to_level_set(&[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(p[0], c(1.0, 0.0));
        assert!((h + 2f64.ln()).abs() < 1e-15);
        let (p, h) = m.project_to_level_set(&[c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(h, 0.0);
        assert_eq!(p[0], c(0.0, 1.0));
    }

    #[test]
    fn lie_metric_makes_action_hamiltonian() {
        // omega(X_a u, xi) = Im(conj(i a u) xi) must equal lie_metric * a * dmu(u) xi
        let m = TargetModel::standard(2);
        let u = [c(0.3, -0.7), c(1.1, 0.2)];
        let xi = [c(-0.4, 0.9), c(0.25, 0.5)];
        let a = 0.37;
        let x = m.infinitesimal_action(a, &u);
        let omega = herm(&x, &xi).im;
        assert!((omega - m.lie_metric() * a * m.dmu(&u, &xi)).abs() < 1e-14);
    }

    #[test]
    fn chordal_distance_phase_invariant() {
        let x = [c(1.0, 0.0), c(1.0, 0.0)];
        let y = [c(0.0, 2.0), c(0.0, 2.0)];
        assert!(chordal_distance(&x, &y) < 1e-15);
        let z = [c(1.0, 0.0), c(0.0, 0.0)];
        assert!((chordal_distance(&x, &z) - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
