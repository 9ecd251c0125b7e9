//! Sparse symmetric positive-definite systems with 3-vector right-hand sides.
//!
//! The global step of the cloth solver solves `A X = B` where `A` is the
//! same scalar matrix for the x, y and z columns, so everything here works on
//! `Vec3` entries directly.

use crate::error::{Error, Result};
use crate::Vec3;

/// Symmetric matrix in compressed sparse row form (both triangles stored).
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from (row, col, value) triplets; duplicates are summed in input order.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v)).collect()
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n).flat_map(|i| self.row(i).map(move |(c, _)| i.abs_diff(c))).max().unwrap_or(0)
    }

    pub fn mul(&self, x: &[Vec3], out: &mut [Vec3]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).fold(Vec3::zeros(), |acc, (c, v)| acc + x[c] * v);
        }
    }
}

/// Cholesky factor `A = L L^T` of a banded SPD matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // l[i * (bw + 1) + (i - k)] = L[i][k] for i - bw <= k <= i
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (c, v) in a.row(i) {
                if c <= i {
                    l[i * w + (i - c)] = v;
                }
            }
        }
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut d = l[j * w];
            for k in lo..j {
                let ljk = l[j * w + (j - k)];
                d -= ljk * ljk;
            }
            if !(d > 0.0) {
                return Err(Error::InvalidSolverConfig(format!(
                    "system matrix is not positive definite (pivot {j} = {d:e})"
                )));
            }
            let djj = d.sqrt();
            l[j * w] = djj;
            for i in j + 1..n.min(j + bw + 1) {
                let lo = i.saturating_sub(bw);
                let mut s = l[i * w + (i - j)];
                for k in lo..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                l[i * w + (i - j)] = s / djj;
            }
        }
        Ok(Self { n, bw, l })
    }

    /// Solve in place: `b` holds the right-hand side on entry and the solution on exit.
    pub fn solve_in_place(&self, b: &mut [Vec3]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= b[k] * self.l[i * w + (i - k)];
            }
            b[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= b[k] * self.l[k * w + (k - i)];
            }
            b[i] = s / self.l[i * w];
        }
    }
}

/// Jacobi-preconditioned conjugate gradients, run independently per coordinate
/// but sharing the matrix sweep. Returns the final relative residual.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    diag: &[f64],
    b: &[Vec3],
    x: &mut [Vec3],
    max_iters: usize,
    tolerance: f64,
) -> f64 {
    let n = a.n;
    let mut r = vec![Vec3::zeros(); n];
    let mut ap = vec![Vec3::zeros(); n];
    a.mul(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let b_norm = b.iter().fold(Vec3::zeros(), |acc, v| acc + v.component_mul(v)).map(|c| c.sqrt().max(1e-300));
    let mut z: Vec<Vec3> = r.iter().zip(diag).map(|(ri, d)| ri / *d).collect();
    let mut p = z.clone();
    let dot = |u: &[Vec3], v: &[Vec3]| u.iter().zip(v).fold(Vec3::zeros(), |acc, (a, b)| acc + a.component_mul(b));
    let mut rz = dot(&r, &z);
    let rel = |r: &[Vec3]| dot(r, r).map(f64::sqrt).component_div(&b_norm).max();
    let mut res = rel(&r);
    for _ in 0..max_iters {
        if res <= tolerance {
            break;
        }
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        let alpha = rz.zip_map(&pap, |num, den| if den > 0.0 { num / den } else { 0.0 });
        for i in 0..n {
            x[i] += p[i].component_mul(&alpha);
            r[i] -= ap[i].component_mul(&alpha);
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new.zip_map(&rz, |num, den| if den > 0.0 { num / den } else { 0.0 });
        for i in 0..n {
            p[i] = z[i] + p[i].component_mul(&beta);
        }
        rz = rz_new;
        res = rel(&r);
    }
    res
}
