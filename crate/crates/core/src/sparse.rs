//! Compressed sparse row matrices and the Krylov / banded solvers used by the
//! field solvers.

use crate::reduce::{dot, norm2};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("{method} did not reach tolerance {tol:e} in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { method: &'static str, tol: f64, iterations: usize, residual: f64 },
    #[error("{method} broke down at iteration {iteration}")]
    Breakdown { method: &'static str, iteration: usize },
    #[error("matrix is not square ({0} x {1})")]
    NotSquare(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Row-wise builder; duplicate entries in a row are summed, columns sorted.
#[derive(Debug, Clone)]
pub struct CsrBuilder {
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, row_ptr: vec![0], col_idx: Vec::new(), values: Vec::new(), scratch: Vec::new() }
    }

    #[inline]
    pub fn push(&mut self, col: usize, value: f64) {
        debug_assert!(col < self.ncols);
        self.scratch.push((col, value));
    }

    pub fn finish_row(&mut self) {
        self.scratch.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.scratch {
            if last == Some(c) {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.col_idx.push(c);
                self.values.push(v);
                last = Some(c);
            }
        }
        self.scratch.clear();
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn build(self) -> CsrMatrix {
        CsrMatrix {
            nrows: self.row_ptr.len() - 1,
            ncols: self.ncols,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            values: self.values,
        }
    }
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn identity(n: usize) -> Self {
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            b.push(i, 1.0);
            b.finish_row();
        }
        b.build()
    }

    /// Builds from independently assembled row blocks (concatenated in order).
    pub fn from_row_blocks(ncols: usize, blocks: Vec<CsrMatrix>) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for b in blocks {
            assert_eq!(b.ncols, ncols);
            let base = col_idx.len();
            row_ptr.extend(b.row_ptr[1..].iter().map(|p| p + base));
            col_idx.extend(b.col_idx);
            values.extend(b.values);
        }
        Self { nrows: row_ptr.len() - 1, ncols, row_ptr, col_idx, values }
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(p) => v[p],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        y.par_chunks_mut(512).enumerate().for_each(|(chunk, ys)| {
            let r0 = chunk * 512;
            for (o, yi) in ys.iter_mut().enumerate() {
                let (c, v) = self.row(r0 + o);
                let mut acc = 0.0;
                for (cc, vv) in c.iter().zip(v) {
                    acc += vv * x[*cc];
                }
                *yi = acc;
            }
        });
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (cc, vv) in c.iter().zip(v) {
                let p = next[*cc];
                col_idx[p] = i;
                values[p] = *vv;
                next[*cc] += 1;
            }
        }
        CsrMatrix { nrows: self.ncols, ncols: self.nrows, row_ptr, col_idx, values }
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut b = CsrBuilder::new(other.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (cc, vv) in c.iter().zip(v) {
                let (c2, v2) = other.row(*cc);
                for (ccc, vvv) in c2.iter().zip(v2) {
                    b.push(*ccc, vv * vvv);
                }
            }
            b.finish_row();
        }
        b.build()
    }

    /// Linear combination `a * self + b * other` of equally shaped matrices.
    pub fn add_scaled(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut out = CsrBuilder::new(self.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (cc, vv) in c.iter().zip(v) {
                out.push(*cc, a * vv);
            }
            let (c, v) = other.row(i);
            for (cc, vv) in c.iter().zip(v) {
                out.push(*cc, b * vv);
            }
            out.finish_row();
        }
        out.build()
    }

    /// Rows `rows` and columns `cols` (given as index lists) of the matrix.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            map[old] = new;
        }
        let mut b = CsrBuilder::new(cols.len());
        for &r in rows {
            let (c, v) = self.row(r);
            for (cc, vv) in c.iter().zip(v) {
                if map[*cc] != usize::MAX {
                    b.push(map[*cc], *vv);
                }
            }
            b.finish_row();
        }
        b.build()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Squared column norms, the Jacobi preconditioner of the normal equations.
    pub fn column_norms_sqr(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (c, v) in self.col_idx.iter().zip(&self.values) {
            out[*c] += v * v;
        }
        out
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.nrows {
            let (c, _) = self.row(i);
            for &j in c {
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (cc, vv) in c.iter().zip(v) {
                out.push((i, *cc, *vv));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.par_chunks_mut(4096).zip(x.par_chunks(4096)).for_each(|(ys, xs)| {
        for (yi, xi) in ys.iter_mut().zip(xs) {
            *yi += a * xi;
        }
    });
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive definite matrix.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats, SolverError> {
    let n = b.len();
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let res = norm2(&r) / bnorm;
        if res <= tol {
            return Ok(SolveStats { iterations: it, relative_residual: res });
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(SolverError::Breakdown { method: "pcg", iteration: it });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm2(&r) / bnorm;
    if res <= tol {
        return Ok(SolveStats { iterations: max_iter, relative_residual: res });
    }
    Err(SolverError::NotConverged { method: "pcg", tol, iterations: max_iter, residual: res })
}

/// Jacobi-preconditioned BiCGSTAB for general square matrices.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats, SolverError> {
    let n = b.len();
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zz = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max_iter {
        let res = norm2(&r) / bnorm;
        if res <= tol {
            return Ok(SolveStats { iterations: it, relative_residual: res });
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(SolverError::Breakdown { method: "bicgstab", iteration: it });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * dinv[i];
        }
        a.mul_vec_into(&y, &mut v);
        let r0v = dot(&r0, &v);
        if r0v == 0.0 {
            return Err(SolverError::Breakdown { method: "bicgstab", iteration: it });
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / bnorm <= tol {
            axpy(alpha, &y, x);
            return Ok(SolveStats { iterations: it + 1, relative_residual: norm2(&s) / bnorm });
        }
        for i in 0..n {
            zz[i] = s[i] * dinv[i];
        }
        a.mul_vec_into(&zz, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
    }
    let res = norm2(&r) / bnorm;
    if res <= tol {
        return Ok(SolveStats { iterations: max_iter, relative_residual: res });
    }
    Err(SolverError::NotConverged { method: "bicgstab", tol, iterations: max_iter, residual: res })
}

/// Minimum-norm least-squares solve of `A x = b` by CGLS started from zero.
/// Stops when `|r| <= tol |b|` or `|A^T r| <= tol |A^T b|`.
pub fn cgls(a: &CsrMatrix, at: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats), SolverError> {
    let n = a.ncols;
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut s = at.mul_vec(&r);
    let s0 = norm2(&s);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut q = vec![0.0; a.nrows];
    for it in 0..max_iter {
        let res = norm2(&r) / bnorm;
        if res <= tol || gamma.sqrt() <= tol * s0 {
            return Ok((x, SolveStats { iterations: it, relative_residual: res }));
        }
        a.mul_vec_into(&p, &mut q);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            return Err(SolverError::Breakdown { method: "cgls", iteration: it });
        }
        let alpha = gamma / qq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        at.mul_vec_into(&r, &mut s);
        let gamma_new = dot(&s, &s);
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        p.par_chunks_mut(4096).zip(s.par_chunks(4096)).for_each(|(ps, ss)| {
            for (pi, si) in ps.iter_mut().zip(ss) {
                *pi = si + beta * *pi;
            }
        });
    }
    let res = norm2(&r) / bnorm;
    Err(SolverError::NotConverged { method: "cgls", tol, iterations: max_iter, residual: res })
}

/// Banded LU factorization with partial pivoting, column-major band storage
/// with room for the pivoting fill.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self, SolverError> {
        if a.nrows != a.ncols {
            return Err(SolverError::NotSquare(a.nrows, a.ncols));
        }
        let n = a.nrows;
        let (kl, ku) = a.bandwidths();
        let ld = 2 * kl + ku + 1;
        let kv = kl + ku;
        let mut ab = vec![0.0; ld * n];
        for i in 0..n {
            let (c, v) = a.row(i);
            for (j, x) in c.iter().zip(v) {
                ab[j * ld + kv + i - j] = *x;
            }
        }
        let mut ipiv = vec![0; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ld;
            let mut jp = 0;
            let mut best = ab[col + kv].abs();
            for r in 1..=km {
                let x = ab[col + kv + r].abs();
                if x > best {
                    best = x;
                    jp = r;
                }
            }
            ipiv[j] = j + jp;
            if ab[col + kv + jp] == 0.0 {
                // exactly singular column: leave a tiny pivot so solves stay finite
                ab[col + kv + jp] = f64::MIN_POSITIVE.sqrt();
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let base = c * ld + kv;
                    ab.swap(base + j - c, base + j + jp - c);
                }
            }
            let piv = ab[col + kv];
            for r in 1..=km {
                ab[col + kv + r] /= piv;
            }
            for c in j + 1..=ju {
                let t = ab[c * ld + kv + j - c];
                if t != 0.0 {
                    for r in 1..=km {
                        let l = ab[col + kv + r];
                        ab[c * ld + kv + j + r - c] -= l * t;
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, ld, ab, ipiv })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, kv, ld) = (self.n, self.kl, self.kl + self.ku, self.ld);
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            b.swap(j, self.ipiv[j]);
            let bj = b[j];
            if bj != 0.0 {
                for r in 1..=km {
                    b[j + r] -= self.ab[j * ld + kv + r] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.ab[j * ld + kv];
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= self.ab[j * ld + kv + i - j] * bj;
                }
            }
        }
    }

    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let (n, kl, kv, ld) = (self.n, self.kl, self.kl + self.ku, self.ld);
        for j in 0..n {
            let mut acc = b[j];
            for i in j.saturating_sub(kv)..j {
                acc -= self.ab[j * ld + kv + i - j] * b[i];
            }
            b[j] = acc / self.ab[j * ld + kv];
        }
        for j in (0..n).rev() {
            let km = kl.min(n - 1 - j);
            let mut acc = b[j];
            for r in 1..=km {
                acc -= self.ab[j * ld + kv + r] * b[j + r];
            }
            b[j] = acc;
            b.swap(j, self.ipiv[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64, diag: f64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                let mut v: f64 = rng.gen_range(-1.0..1.0);
                if i == j {
                    v += diag;
                }
                b.push(j, v);
            }
            b.finish_row();
        }
        b.build()
    }

    fn laplacian_1d(n: usize, shift: f64) -> CsrMatrix {
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            if i > 0 {
                b.push(i - 1, -1.0);
            }
            b.push(i, 2.0 + shift);
            if i + 1 < n {
                b.push(i + 1, -1.0);
            }
            b.finish_row();
        }
        b.build()
    }

    #[test]
    fn builder_sums_duplicates() {
        let mut b = CsrBuilder::new(3);
        b.push(2, 1.0);
        b.push(0, 2.0);
        b.push(2, 0.5);
        b.finish_row();
        let m = b.build();
        assert_eq!(m.col_idx, vec![0, 2]);
        assert_eq!(m.values, vec![2.0, 1.5]);
    }

    #[test]
    fn transpose_and_matmul() {
        let a = random_banded(30, 2, 3, 1, 0.0);
        let at = a.transpose();
        for i in 0..30 {
            for j in 0..30 {
                assert_eq!(a.get(i, j), at.get(j, i));
            }
        }
        let x: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let ata = at.matmul(&a);
        let y1 = ata.mul_vec(&x);
        let y2 = at.mul_vec(&a.mul_vec(&x));
        for (p, q) in y1.iter().zip(&y2) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn pcg_and_bicgstab_solve() {
        let a = laplacian_1d(200, 0.1);
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).sin()).collect();
        let b = a.mul_vec(&xs);
        let mut x = vec![0.0; 200];
        pcg(&a, &b, &mut x, 1e-12, 2000).unwrap();
        assert!(x.iter().zip(&xs).all(|(p, q)| (p - q).abs() < 1e-9));
        let m = random_banded(200, 3, 2, 7, 6.0);
        let b = m.mul_vec(&xs);
        let mut x = vec![0.0; 200];
        bicgstab(&m, &b, &mut x, 1e-12, 2000).unwrap();
        assert!(x.iter().zip(&xs).all(|(p, q)| (p - q).abs() < 1e-9));
    }

    #[test]
    fn cgls_minimum_norm() {
        // rank-deficient: two identical columns; the min-norm solution splits evenly
        let mut b = CsrBuilder::new(2);
        b.push(0, 1.0);
        b.push(1, 1.0);
        b.finish_row();
        let a = b.build();
        let (x, _) = cgls(&a, &a.transpose(), &[2.0], 1e-14, 10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn banded_lu_solves_and_transposes() {
        for seed in 0..3 {
            let a = random_banded(120, 4, 7, seed, 0.3);
            let lu = BandedLu::factor(&a).unwrap();
            let xs: Vec<f64> = (0..120).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
            let mut b = a.mul_vec(&xs);
            lu.solve_in_place(&mut b);
            let err = b.iter().zip(&xs).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "solve error {err}");
            let mut c = a.transpose().mul_vec(&xs);
            lu.solve_transpose_in_place(&mut c);
            let err = c.iter().zip(&xs).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "transpose solve error {err}");
        }
    }
}
