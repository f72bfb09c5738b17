//! Small dense symmetric-matrix helpers and a Jacobi-preconditioned
//! conjugate gradient solver on CSR matrices.
//!
//! The ambient dimensions n, m stay tiny (2 or 3 in every target run), so
//! dense work uses direct formulas where they exist and a cyclic Jacobi
//! sweep otherwise. The sparse side is only what the solver needs: build
//! from triplets, symmetric matvec, CG.

use crate::error::{Error, Result};

/// Dense row-major matrix with runtime shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DMat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        DMat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// C = self * other.
    pub fn matmul(&self, other: &DMat) -> DMat {
        assert_eq!(self.cols, other.rows);
        let mut out = DMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DMat {
        let mut out = DMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// self * v for a dense vector.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut s = 0.0;
            for j in 0..self.cols {
                s += self[(i, j)] * v[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn max_abs_diff(&self, other: &DMat) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for DMat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Determinant of a small square matrix (direct for n <= 3, LU beyond).
pub fn det(m: &DMat) -> f64 {
    assert_eq!(m.rows, m.cols);
    match m.rows {
        0 => 1.0,
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        3 => {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        }
        _ => lu_det(m),
    }
}

fn lu_det(m: &DMat) -> f64 {
    let n = m.rows;
    let mut a = m.data.clone();
    let mut sign = 1.0;
    let mut d = 1.0;
    for k in 0..n {
        // partial pivot
        let mut p = k;
        for i in k + 1..n {
            if a[i * n + k].abs() > a[p * n + k].abs() {
                p = i;
            }
        }
        if a[p * n + k] == 0.0 {
            return 0.0;
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            sign = -sign;
        }
        let piv = a[k * n + k];
        d *= piv;
        for i in k + 1..n {
            let f = a[i * n + k] / piv;
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
        }
    }
    sign * d
}

/// Inverse of a small square matrix via Gauss-Jordan with partial pivoting.
pub fn inverse(m: &DMat) -> Option<DMat> {
    assert_eq!(m.rows, m.cols);
    let n = m.rows;
    if n == 1 {
        if m[(0, 0)] == 0.0 {
            return None;
        }
        return Some(DMat {
            rows: 1,
            cols: 1,
            data: vec![1.0 / m[(0, 0)]],
        });
    }
    let mut a = m.data.clone();
    let mut inv = DMat::identity(n).data;
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if a[i * n + k].abs() > a[p * n + k].abs() {
                p = i;
            }
        }
        if a[p * n + k] == 0.0 {
            return None;
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
                inv.swap(k * n + j, p * n + j);
            }
        }
        let piv = a[k * n + k];
        for j in 0..n {
            a[k * n + j] /= piv;
            inv[k * n + j] /= piv;
        }
        for i in 0..n {
            if i == k {
                continue;
            }
            let f = a[i * n + k];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[i * n + j] -= f * a[k * n + j];
                inv[i * n + j] -= f * inv[k * n + j];
            }
        }
    }
    Some(DMat {
        rows: n,
        cols: n,
        data: inv,
    })
}

/// Eigenvalues of a symmetric matrix, ascending. Closed form for n <= 2,
/// cyclic Jacobi sweeps otherwise.
pub fn sym_eigenvalues(m: &DMat) -> Vec<f64> {
    assert_eq!(m.rows, m.cols);
    match m.rows {
        0 => vec![],
        1 => vec![m[(0, 0)]],
        2 => {
            let a = m[(0, 0)];
            let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
            let d = m[(1, 1)];
            let tr = a + d;
            let disc = ((a - d) * 0.5).hypot(b);
            vec![0.5 * tr - disc, 0.5 * tr + disc]
        }
        _ => sym_eigen(m).0,
    }
}

/// Full symmetric eigendecomposition via cyclic Jacobi rotations.
/// Returns (eigenvalues ascending, column eigenvectors).
pub fn sym_eigen(m: &DMat) -> (Vec<f64>, DMat) {
    assert_eq!(m.rows, m.cols);
    let n = m.rows;
    let mut a = m.clone();
    // symmetrize against representation noise
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
    let mut v = DMat::identity(n);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() < 1e-15 * (1.0 + frobenius(&a)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (a[(q, q)] - a[(p, p)]) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a[(i, i)], i)).collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let vals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut vecs = DMat::zeros(n, n);
    for (new_col, &(_, old_col)) in pairs.iter().enumerate() {
        for k in 0..n {
            vecs[(k, new_col)] = v[(k, old_col)];
        }
    }
    (vals, vecs)
}

fn frobenius(m: &DMat) -> f64 {
    m.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eig(m: &DMat) -> f64 {
    sym_eigenvalues(m)[0]
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eig(m: &DMat) -> f64 {
    *sym_eigenvalues(m).last().unwrap()
}

/// Inverse square root of a symmetric positive definite matrix.
pub fn sym_inv_sqrt(m: &DMat) -> Option<DMat> {
    let n = m.rows;
    let (vals, vecs) = sym_eigen(m);
    if vals[0] <= 0.0 {
        return None;
    }
    let mut out = DMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += vecs[(i, k)] * vecs[(j, k)] / vals[k].sqrt();
            }
            out[(i, j)] = s;
        }
    }
    Some(out)
}

/// Sparse symmetric matrix in CSR form.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &mut Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in triplets.iter() {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        use rayon::prelude::*;
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *o = s;
        });
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec_into(x, &mut out);
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] = self.values[k];
                }
            }
        }
        d
    }

    /// Max |A[i][j] - A[j][i]| over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let aij = self.values[k];
                let aji = self.get(j, i);
                worst = worst.max((aij - aji).abs());
            }
        }
        worst
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Jacobi-preconditioned conjugate gradient for a symmetric positive
/// definite CSR system Ax = b. `tol` is relative to ||b||.
pub fn cg_solve(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.n;
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let diag = a.diagonal();
    let prec: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&prec).map(|(ri, pi)| ri * pi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 0..max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::LinearSolve {
                iterations: it,
                residual: dot(&r, &r).sqrt() / bnorm,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * prec[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolve {
        iterations: max_iter,
        residual: dot(&r, &r).sqrt() / bnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn det_and_inverse_small() {
        let m = DMat::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        assert!((det(&m) - 5.0).abs() < 1e-14);
        let inv = inverse(&m).unwrap();
        let prod = m.matmul(&inv);
        assert!(prod.max_abs_diff(&DMat::identity(2)) < 1e-14);
    }

    #[test]
    fn det_4x4_matches_cofactor_expansion() {
        // block diagonal: det = det(upper 2x2) * det(lower 2x2)
        let m = DMat::from_rows(&[
            vec![2.0, 1.0, 0.0, 0.0],
            vec![1.0, 3.0, 0.0, 0.0],
            vec![0.0, 0.0, 4.0, 1.0],
            vec![0.0, 0.0, 1.0, 2.0],
        ]);
        assert!((det(&m) - 5.0 * 7.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_2x2_closed_form() {
        let m = DMat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let vals = sym_eigenvalues(&m);
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_3x3_jacobi() {
        // eigenvalues of the path-graph Laplacian on 3 nodes: 0, 1, 3
        let m = DMat::from_rows(&[
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 1.0],
        ]);
        let (vals, vecs) = sym_eigen(&m);
        assert!((vals[0] - 0.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        assert!((vals[2] - 3.0).abs() < 1e-12);
        // reconstruct
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += vecs[(i, k)] * vals[k] * vecs[(j, k)];
                }
                assert!((s - m[(i, j)]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn inv_sqrt_squares_to_inverse() {
        let m = DMat::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let s = sym_inv_sqrt(&m).unwrap();
        let ss = s.matmul(&s);
        let inv = inverse(&m).unwrap();
        assert!(ss.max_abs_diff(&inv) < 1e-12);
    }

    #[test]
    fn cg_solves_small_spd_system() {
        // 1D Dirichlet Laplacian, 5 unknowns
        let n = 5;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 2.0));
            if i > 0 {
                trip.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                trip.push((i, i + 1, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, &mut trip);
        let xstar: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).sin()).collect();
        let b = a.matvec(&xstar);
        let x = cg_solve(&a, &b, 1e-14, 1000).unwrap();
        for i in 0..n {
            assert!((x[i] - xstar[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn csr_duplicate_triplets_sum() {
        let mut trip = vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0), (0, 1, 0.5)];
        let a = CsrMatrix::from_triplets(2, &mut trip);
        assert_eq!(a.nnz(), 3);
        assert!((a.get(0, 0) - 3.0).abs() < 1e-15);
        assert!((a.get(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(a.get(1, 0), 0.0);
    }

    proptest! {
        #[test]
        fn sym_eigen_reconstructs(seed in 0u64..500) {
            let n = 3 + (seed % 2) as usize;
            let mut vals = vec![0.0; n * n];
            let mut s = seed;
            for v in vals.iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = ((s >> 33) as f64) / (u32::MAX as f64) - 0.5;
            }
            let mut m = DMat { rows: n, cols: n, data: vals };
            for i in 0..n {
                for j in 0..i {
                    let sym = 0.5 * (m[(i, j)] + m[(j, i)]);
                    m[(i, j)] = sym;
                    m[(j, i)] = sym;
                }
            }
            let (ev, vecs) = sym_eigen(&m);
            for i in 0..n {
                for j in 0..n {
                    let mut rec = 0.0;
                    for k in 0..n {
                        rec += vecs[(i, k)] * ev[k] * vecs[(j, k)];
                    }
                    prop_assert!((rec - m[(i, j)]).abs() < 1e-10);
                }
            }
        }
    }
}
