//! Sparse symmetric matrices, SPD solvers and Lanczos routines.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Systems up to this size are factored densely; larger ones use
/// Jacobi-preconditioned conjugate gradients.
pub const DENSE_SOLVE_LIMIT: usize = 600;

const CG_TOL: f64 = 1e-13;
const CG_ACCEPT: f64 = 1e-10;

/// Symmetric matrix in compressed sparse row form (both triangles stored).
#[derive(Debug, Clone)]
pub struct Csr {
    n: usize,
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(column, value)` lists.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut ptr = Vec::with_capacity(n + 1);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (j, v) in row {
                idx.push(j);
                val.push(v);
            }
            ptr.push(idx.len());
        }
        Csr { n, ptr, idx, val }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.ptr[i]..self.ptr[i + 1]).map(move |k| (self.idx[k], self.val[k]))
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.ptr[i]..self.ptr[i + 1] {
                s += self.val[k] * x[self.idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|e| e.0 == i).map_or(0.0, |e| e.1))
            .collect()
    }

    /// `diag(s) · self · diag(s)`.
    pub fn scaled(&self, s: &[f64]) -> Csr {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in self.ptr[i]..self.ptr[i + 1] {
                out.val[k] *= s[i] * s[self.idx[k]];
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Reusable solver for an SPD system.
pub enum SpdSolver {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Cg { a: Csr, inv_diag: Vec<f64> },
}

impl SpdSolver {
    pub fn new(a: &Csr) -> Result<Self> {
        if a.dim() <= DENSE_SOLVE_LIMIT {
            let chol = nalgebra::Cholesky::new(a.to_dense())
                .ok_or_else(|| Error::ZeroEigenvalue("matrix is not positive definite".into()))?;
            Ok(SpdSolver::Dense(chol))
        } else {
            let d = a.diagonal();
            if d.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::ZeroEigenvalue("nonpositive diagonal entry".into()));
            }
            Ok(SpdSolver::Cg {
                a: a.clone(),
                inv_diag: d.iter().map(|x| 1.0 / x).collect(),
            })
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            SpdSolver::Dense(chol) => {
                let x = chol.solve(&DVector::from_column_slice(b));
                Ok(x.as_slice().to_vec())
            }
            SpdSolver::Cg { a, inv_diag } => pcg(a, inv_diag, b),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn pcg(a: &Csr, inv_diag: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let max_iter = 20 * n + 100;
    for _ in 0..max_iter {
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::ZeroEigenvalue("conjugate gradients met a nonpositive direction".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= CG_TOL * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // Recompute the true residual before giving up.
    a.mul(&x, &mut ap);
    let res = norm(&b.iter().zip(&ap).map(|(b, y)| b - y).collect::<Vec<_>>());
    if res <= CG_ACCEPT * bnorm {
        Ok(x)
    } else {
        Err(Error::Numeric(format!(
            "conjugate gradients stalled at relative residual {:.3e}",
            res / bnorm
        )))
    }
}

/// Lanczos basis with full reorthogonalization.
struct Lanczos {
    basis: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    exhausted: bool,
}

impl Lanczos {
    fn new(start: &[f64]) -> Self {
        let s = norm(start);
        Lanczos {
            basis: vec![start.iter().map(|x| x / s).collect()],
            alpha: Vec::new(),
            beta: Vec::new(),
            exhausted: false,
        }
    }

    fn step<F: Fn(&[f64], &mut [f64])>(&mut self, op: &F, deflate: Option<&[f64]>) {
        let q = self.basis.last().unwrap();
        let mut w = vec![0.0; q.len()];
        op(q, &mut w);
        self.alpha.push(dot(&w, q));
        for _ in 0..2 {
            if let Some(d) = deflate {
                let c = dot(&w, d);
                w.iter_mut().zip(d).for_each(|(w, d)| *w -= c * d);
            }
            for b in &self.basis {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(w, b)| *w -= c * b);
            }
        }
        let nb = norm(&w);
        let scale = self.alpha.iter().map(|a| a.abs()).fold(1e-300, f64::max);
        if nb <= 1e-13 * scale || self.basis.len() >= q.len() {
            self.exhausted = true;
            return;
        }
        self.beta.push(nb);
        self.basis.push(w.into_iter().map(|x| x / nb).collect());
    }

    fn dim(&self) -> usize {
        self.alpha.len()
    }

    fn tridiagonal(&self) -> SymmetricEigen<f64, nalgebra::Dyn> {
        let m = self.dim();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = self.alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = self.beta[i];
                t[(i + 1, i)] = self.beta[i];
            }
        }
        SymmetricEigen::new(t)
    }
}

/// `exp(−t·S)·v` for a symmetric positive semidefinite operator `S`.
pub fn expm_action<F>(op: F, v: &[f64], t: f64, tol: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = v.len();
    let vnorm = norm(v);
    if vnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut lz = Lanczos::new(v);
    let mut prev: Option<Vec<f64>> = None;
    let max_dim = n.min(1000);
    loop {
        lz.step(&op, None);
        let m = lz.dim();
        if lz.exhausted || m % 8 == 0 || m >= max_dim {
            let eig = lz.tridiagonal();
            // coefficients c = exp(−tT) e1
            let mut c = vec![0.0; m];
            for k in 0..m {
                let w = (-t * eig.eigenvalues[k]).exp() * eig.eigenvectors[(0, k)];
                for (i, ci) in c.iter_mut().enumerate() {
                    *ci += w * eig.eigenvectors[(i, k)];
                }
            }
            let converged = match &prev {
                Some(p) => {
                    let diff: f64 = c
                        .iter()
                        .enumerate()
                        .map(|(i, ci)| (ci - p.get(i).copied().unwrap_or(0.0)).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    diff <= tol
                }
                None => false,
            };
            if converged || lz.exhausted || m >= max_dim {
                if !(converged || lz.exhausted) {
                    return Err(Error::Numeric(format!(
                        "Krylov exponential did not converge in {} steps",
                        m
                    )));
                }
                let mut out = vec![0.0; n];
                for (ci, q) in c.iter().zip(&lz.basis) {
                    for (o, qi) in out.iter_mut().zip(q) {
                        *o += vnorm * ci * qi;
                    }
                }
                return Ok(out);
            }
            prev = Some(c);
        }
    }
}

/// Smallest eigenvalue of a symmetric operator restricted to the orthogonal
/// complement of the unit vector `deflate`.
pub fn lanczos_smallest<F>(op: F, n: usize, deflate: Option<&[f64]>, tol: f64) -> Result<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    // Deterministic start with no special symmetry.
    let mut start: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_7).fract()).collect();
    if let Some(d) = deflate {
        let c = dot(&start, d);
        start.iter_mut().zip(d).for_each(|(s, d)| *s -= c * d);
    }
    if norm(&start) == 0.0 {
        return Err(Error::InvalidArgument("nothing left after deflation".into()));
    }
    let mut lz = Lanczos::new(&start);
    let mut prev = f64::INFINITY;
    let max_dim = n.min(2000);
    loop {
        lz.step(&op, deflate);
        let m = lz.dim();
        if lz.exhausted || m % 10 == 0 || m >= max_dim {
            let eig = lz.tridiagonal();
            let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if lz.exhausted || (prev - lo).abs() <= tol * lo.abs().max(1e-300) || m >= max_dim {
                return Ok(lo);
            }
            prev = lo;
        }
    }
}
