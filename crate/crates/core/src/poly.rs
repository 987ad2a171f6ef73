//! Complex polynomials with coefficients stored highest degree first.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<Complex64>,
}

impl Polynomial {
    /// Leading zeros are dropped; the empty list is the zero polynomial.
    pub fn new(coeffs: Vec<Complex64>) -> Self {
        let first = coeffs.iter().position(|c| *c != Complex64::new(0.0, 0.0)).unwrap_or(coeffs.len());
        Self { coeffs: coeffs[first..].to_vec() }
    }

    pub fn constant(c: Complex64) -> Self {
        Self::new(vec![c])
    }

    /// Monic polynomial with the given roots.
    pub fn from_roots(roots: &[Complex64]) -> Self {
        let mut c = vec![Complex64::new(1.0, 0.0)];
        for r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
            for (i, a) in c.iter().enumerate() {
                next[i] += a;
                next[i + 1] -= a * r;
            }
            c = next;
        }
        Self { coeffs: c }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, with the zero polynomial reported as degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    }

    pub fn derivative(&self) -> Self {
        let d = self.degree();
        Self::new(self.coeffs.iter().take(d).enumerate().map(|(i, c)| c * (d - i) as f64).collect())
    }

    /// `z -> p(z - shift)`.
    pub fn translated(&self, shift: Complex64) -> Self {
        // Horner in the shifted variable: p(z - s) = sum c_k (z - s)^k
        let mut out = Polynomial::new(vec![]);
        let lin = Polynomial::new(vec![Complex64::new(1.0, 0.0), -shift]);
        for c in &self.coeffs {
            out = out.mul(&lin).add(&Polynomial::constant(*c));
        }
        out
    }

    /// `z -> p(scale * z)`.
    pub fn rescaled(&self, scale: Complex64) -> Self {
        let d = self.degree();
        Self::new(self.coeffs.iter().enumerate().map(|(i, c)| c * scale.powu((d - i) as u32)).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::new(vec![]);
        }
        let mut c = vec![Complex64::new(0.0, 0.0); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Self::new(c)
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let pad = |p: &Self| -> Vec<Complex64> {
            let mut v = vec![Complex64::new(0.0, 0.0); n - p.coeffs.len()];
            v.extend_from_slice(&p.coeffs);
            v
        };
        Self::new(pad(self).iter().zip(pad(other)).map(|(a, b)| a + b).collect())
    }

    /// Roots by Aberth iteration, polished with Newton steps.
    pub fn roots(&self) -> Vec<Complex64> {
        let d = self.degree();
        if d == 0 {
            return vec![];
        }
        let lead = self.coeffs[0];
        let monic: Vec<Complex64> = self.coeffs.iter().map(|c| c / lead).collect();
        let p = Polynomial { coeffs: monic };
        let dp = p.derivative();
        let bound = 1.0 + p.coeffs[1..].iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut z: Vec<Complex64> = (0..d)
            .map(|k| Complex64::from_polar(0.5 * bound, 2.0 * std::f64::consts::PI * k as f64 / d as f64 + 0.4))
            .collect();
        for _ in 0..500 {
            let mut moved: f64 = 0.0;
            for k in 0..d {
                let pv = p.eval(z[k]);
                if pv == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let ratio = pv / dp.eval(z[k]);
                let repulsion: Complex64 = (0..d).filter(|&j| j != k).map(|j| 1.0 / (z[k] - z[j])).sum();
                let step = ratio / (1.0 - ratio * repulsion);
                if step.is_finite() {
                    z[k] -= step;
                    moved = moved.max(step.norm());
                }
            }
            if moved < 1e-15 * bound {
                break;
            }
        }
        z
    }
}
