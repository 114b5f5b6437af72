//! Compressed sparse rows with an ILU(0) preconditioner and BiCGSTAB.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
    diag: Vec<usize>,
}

impl Csr {
    /// Builds a square matrix from per-row entries; duplicates are summed and
    /// every row receives a (possibly zero) diagonal entry.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut diag = Vec::with_capacity(n);
        indptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.push((i, 0.0));
            row.sort_by_key(|e| e.0);
            let start = indices.len();
            for (j, v) in row {
                if indices.len() > start && *indices.last().unwrap() == j {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    data.push(v);
                }
            }
            diag.push(start + indices[start..].iter().position(|&j| j == i).unwrap());
            indptr.push(indices.len());
        }
        Csr {
            n,
            indptr,
            indices,
            data,
            diag,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.diag.iter().map(|&p| self.data[p]).collect()
    }

    /// `self + diag(d)`.
    pub fn with_added_diagonal(&self, d: &[f64]) -> Csr {
        let mut m = self.clone();
        for (i, &p) in self.diag.iter().enumerate() {
            m.data[p] += d[i];
        }
        m
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[p] * x[self.indices[p]];
            }
            y[i] = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }
}

/// Incomplete LU factorization with the sparsity pattern of the matrix.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: Csr,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Self {
        let mut lu = a.clone();
        let mut pos = vec![usize::MAX; a.n];
        for i in 0..a.n {
            let (r0, r1) = (lu.indptr[i], lu.indptr[i + 1]);
            for p in r0..r1 {
                pos[lu.indices[p]] = p;
            }
            for p in r0..lu.diag[i] {
                let k = lu.indices[p];
                let piv = lu.data[lu.diag[k]];
                lu.data[p] /= piv;
                let lik = lu.data[p];
                for q in lu.diag[k] + 1..lu.indptr[k + 1] {
                    let slot = pos[lu.indices[q]];
                    if slot != usize::MAX {
                        lu.data[slot] -= lik * lu.data[q];
                    }
                }
            }
            for p in r0..r1 {
                pos[lu.indices[p]] = usize::MAX;
            }
        }
        Ilu0 { lu }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let m = &self.lu;
        for i in 0..m.n {
            let mut s = r[i];
            for p in m.indptr[i]..m.diag[i] {
                s -= m.data[p] * z[m.indices[p]];
            }
            z[i] = s;
        }
        for i in (0..m.n).rev() {
            let mut s = z[i];
            for p in m.diag[i] + 1..m.indptr[i + 1] {
                s -= m.data[p] * z[m.indices[p]];
            }
            z[i] = s / m.data[m.diag[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB. Stops when `|b - A x|_2 <= rtol |b|_2`.
/// Returns the iteration count.
pub fn bicgstab(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    m: &Ilu0,
    rtol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = a.n;
    let bn = norm2(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let target = rtol * bn;
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut history = Vec::new();
    let mut rhat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max_iter {
        let rn = norm2(&r);
        if it % 50 == 0 {
            history.push(rn / bn);
        }
        if rn <= target {
            // Guard against drift of the recursively updated residual.
            let mut tr = vec![0.0; n];
            a.matvec(x, &mut tr);
            tr.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
            if norm2(&tr) <= 10.0 * target {
                return Ok(it);
            }
            r = tr;
            rhat = r.clone();
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        let rho_new = dot(&rhat, &r);
        if rho_new.abs() < 1e-300 || omega == 0.0 {
            rhat = r.clone();
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        m.apply(&p, &mut phat);
        a.matvec(&phat, &mut v);
        alpha = rho / dot(&rhat, &v);
        for i in 0..n {
            r[i] -= alpha * v[i];
            x[i] += alpha * phat[i];
        }
        if norm2(&r) <= target {
            continue;
        }
        m.apply(&r, &mut shat);
        a.matvec(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &r) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += omega * shat[i];
            r[i] -= omega * t[i];
        }
    }
    history.push(norm2(&r) / bn);
    Err(Error::NonConvergence {
        what: "BiCGSTAB".into(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> Csr {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0 + 0.01 * i as f64)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.3));
                }
                r
            })
            .collect();
        Csr::from_rows(rows)
    }

    #[test]
    fn ilu_is_exact_for_tridiagonal() {
        let a = laplace_1d(30);
        let m = Ilu0::new(&a);
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let b = a.mul(&x);
        let mut z = vec![0.0; 30];
        m.apply(&b, &mut z);
        for i in 0..30 {
            assert!((z[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let n: usize = 200;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 4.0)];
                for (j, v) in [
                    (i.wrapping_sub(1), -1.2),
                    (i + 1, -0.8),
                    (i.wrapping_sub(15), -1.0),
                    (i + 15, -0.9),
                ] {
                    if j < n {
                        r.push((j, v));
                    }
                }
                r
            })
            .collect();
        let a = Csr::from_rows(rows);
        let xs: Vec<f64> = (0..n).map(|i| (0.1 * i as f64).cos()).collect();
        let b = a.mul(&xs);
        let mut x = vec![0.0; n];
        bicgstab(&a, &b, &mut x, &Ilu0::new(&a), 1e-13, 1000).unwrap();
        for i in 0..n {
            assert!((x[i] - xs[i]).abs() < 1e-10);
        }
    }
}
