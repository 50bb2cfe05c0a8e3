//! Compressed-row symmetric matrices and Jacobi-preconditioned conjugate
//! gradient. Matting and Poisson blending both reduce to these systems.
//!
//! All reductions run sequentially in index order so identical inputs give
//! bit-identical outputs.

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Symmetric matrix in compressed-row layout with sorted columns and no
/// stored zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// Stored entry or zero.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(p) => self.values[span.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            *o = acc;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// Largest `|A_ij − A_ji|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Accumulates `(row, col, value)` triplets; duplicates are summed in
/// insertion order at [`finish`](Self::finish).
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self { n, entries: Vec::with_capacity(cap) }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, v));
    }

    /// Adds `v` at `(i, j)` and `(j, i)` (once on the diagonal).
    pub fn add_symmetric(&mut self, i: usize, j: usize, v: f64) {
        self.add(i, j, v);
        if i != j {
            self.add(j, i, v);
        }
    }

    /// Sort, merge duplicates, drop zeros, and verify exact symmetry.
    pub fn finish(mut self) -> Result<SparseMatrix> {
        // Stable sort keeps insertion order among duplicates, so mirrored
        // entries are summed in the same order.
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values = Vec::with_capacity(self.entries.len());
        let mut rows = Vec::with_capacity(self.entries.len());
        let mut it = self.entries.into_iter().peekable();
        while let Some((i, j, mut v)) = it.next() {
            while let Some(&(i2, j2, v2)) = it.peek() {
                if (i2, j2) != (i, j) {
                    break;
                }
                v += v2;
                it.next();
            }
            if v != 0.0 {
                rows.push(i);
                col_idx.push(j);
                values.push(v);
            }
        }
        for &i in &rows {
            row_ptr[i + 1] += 1;
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let m = SparseMatrix { n: self.n, row_ptr, col_idx, values };
        let asym = m.max_asymmetry();
        if asym != 0.0 {
            return Err(Error::Asymmetric(asym));
        }
        Ok(m)
    }
}

/// A matrix with one right-hand side per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<Vec<f64>>,
}

impl SparseSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(b) = rhs.iter().find(|b| b.len() != matrix.dim()) {
            return Err(Error::InvalidArgument(format!(
                "rhs length {} does not match matrix dimension {}",
                b.len(),
                matrix.dim()
            )));
        }
        Ok(Self { matrix, rhs })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `‖Ax − b‖ / ‖b‖`.
    pub tol: f64,
    /// `None` means `10·n`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOLERANCE, max_iter: None }
    }
}

impl CgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == Some(0) {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// True relative residual of the returned solution.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution {
    pub x: Vec<Vec<f64>>,
    pub reports: Vec<CgReport>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `‖Ax − b‖₂ / ‖b‖₂`, or `‖Ax‖₂` when `b = 0`.
pub fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; a.dim()];
    a.mul_vec(x, &mut ax);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let bn = norm(b);
    if bn == 0.0 {
        norm(&r)
    } else {
        norm(&r) / bn
    }
}

/// Solve every right-hand side of `system` with Jacobi-preconditioned CG.
pub fn cg_solve(system: &SparseSystem, opts: &CgOptions) -> Result<CgSolution> {
    opts.validate()?;
    let a = &system.matrix;
    let inv_diag = a
        .diagonal()
        .into_iter()
        .enumerate()
        .map(|(i, d)| if d > 0.0 { Ok(1.0 / d) } else { Err(Error::ZeroDiagonal(i)) })
        .collect::<Result<Vec<f64>>>()?;
    let max_iter = opts.max_iter.unwrap_or(10 * a.dim());
    let mut xs = Vec::with_capacity(system.rhs.len());
    let mut reports = Vec::with_capacity(system.rhs.len());
    for b in &system.rhs {
        let (x, report) = solve_one(a, &inv_diag, b, opts.tol, max_iter)?;
        xs.push(x);
        reports.push(report);
    }
    Ok(CgSolution { x: xs, reports })
}

fn solve_one(a: &SparseMatrix, inv_diag: &[f64], b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgReport)> {
    let n = a.dim();
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((x, CgReport { iterations: 0, residual: 0.0 }));
    }
    let target = tol * b_norm;
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    // Restart from the true residual whenever the recurrence claims
    // convergence that the true residual does not confirm.
    loop {
        a.mul_vec(&x, &mut ap);
        let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
        if norm(&r) <= target {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: norm(&r) / b_norm,
            });
        }
        let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut stalled = false;
        while iterations < max_iter {
            a.mul_vec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                stalled = true;
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if norm(&r) <= target {
                break;
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
        if stalled {
            let residual = relative_residual(a, &x, b);
            if residual <= tol {
                break;
            }
            return Err(Error::NonConvergence { iterations, residual });
        }
    }
    let residual = relative_residual(a, &x, b);
    Ok((x, CgReport { iterations, residual }))
}
