//! Compressed sparse row matrices and a Jacobi-preconditioned conjugate
//! gradient solver, sized for the correlation systems this crate assembles.

use crate::error::{Error, Result};

/// Square CSR matrix with a fixed symmetric pattern.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build an all-zero matrix from per-row column lists. Rows are sorted
    /// and deduplicated.
    pub fn from_pattern(mut rows: Vec<Vec<u32>>) -> CsrMatrix {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0usize);
        let mut indices = Vec::new();
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            indices.extend_from_slice(row);
            indptr.push(indices.len());
        }
        let nnz = indices.len();
        CsrMatrix {
            n,
            indptr,
            indices,
            values: vec![0.0; nnz],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Structural density `nnz / n²`.
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n as f64 * self.n as f64)
    }

    pub fn clear_values(&mut self) {
        self.values.fill(0.0);
    }

    /// Accumulate into an entry that must exist in the pattern.
    #[inline]
    pub fn add_at(&mut self, row: usize, col: u32, value: f64) {
        let lo = self.indptr[row];
        let hi = self.indptr[row + 1];
        let slot = self.indices[lo..hi]
            .binary_search(&col)
            .expect("entry outside the assembled pattern");
        self.values[lo + slot] += value;
    }

    pub fn row(&self, row: usize) -> (&[u32], &[f64]) {
        let lo = self.indptr[row];
        let hi = self.indptr[row + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c as usize];
            }
            out[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.binary_search(&(i as u32))
                    .map(|slot| vals[slot])
                    .unwrap_or(0.0)
            })
            .collect()
    }

    /// Max-norm relative asymmetry; zero for exactly symmetric values.
    pub fn asymmetry(&self) -> f64 {
        let mut max_entry = 0.0f64;
        let mut max_diff = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                max_entry = max_entry.max(v.abs());
                let j = *c as usize;
                let (jcols, jvals) = self.row(j);
                let vt = jcols
                    .binary_search(&(i as u32))
                    .map(|slot| jvals[slot])
                    .unwrap_or(0.0);
                max_diff = max_diff.max((v - vt).abs());
            }
        }
        if max_entry == 0.0 {
            0.0
        } else {
            max_diff / max_entry
        }
    }

    /// Dense copy for small cross-check solves.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut dense = nalgebra::DMatrix::<f64>::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                dense[(i, *c as usize)] = *v;
            }
        }
        dense
    }
}

/// Outcome of a converged PCG solve.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    pub residual_history: Vec<f64>,
}

/// Solve `A x = b` with conjugate gradients and a Jacobi (diagonal)
/// preconditioner, from a zero initial guess. Converges when the true
/// residual satisfies `‖b − A x‖ ≤ tol · ‖b‖`.
pub fn jacobi_pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iters: usize) -> Result<SolveStats> {
    let n = a.size();
    if b.len() != n {
        return Err(Error::Domain(format!(
            "right-hand side length {} does not match system size {n}",
            b.len()
        )));
    }
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| d <= 0.0) {
        return Err(Error::Singular(format!(
            "zero or negative diagonal at unknown {i}; the image carries no \
             gradient information there (insufficient speckle contrast)"
        )));
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(SolveStats {
            solution: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
            residual_history: vec![0.0],
        });
    }

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut history = vec![1.0];

    for iter in 1..=max_iters {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Singular(format!(
                "system lost positive definiteness at iteration {iter} (pᵀAp = {pap:.3e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm(&r) / bnorm;
        history.push(rel);
        if rel <= tol {
            return Ok(SolveStats {
                solution: x,
                iterations: iter,
                rel_residual: rel,
                residual_history: history,
            });
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = *history.last().unwrap();
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: rel,
        history,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dense_pattern(n: usize) -> Vec<Vec<u32>> {
        (0..n).map(|_| (0..n as u32).collect()).collect()
    }

    /// Random SPD system `AᵀA + n·I`.
    fn random_spd(n: usize, seed: u64) -> (CsrMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let spd = a.transpose() * &a + nalgebra::DMatrix::identity(n, n) * n as f64;
        let mut csr = CsrMatrix::from_pattern(dense_pattern(n));
        for i in 0..n {
            for j in 0..n {
                csr.add_at(i, j as u32, spd[(i, j)]);
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (csr, b)
    }

    #[test]
    fn zero_rhs_takes_zero_iterations() {
        let (a, _) = random_spd(8, 1);
        let stats = jacobi_pcg(&a, &vec![0.0; 8], 1e-10, 100).unwrap();
        assert_eq!(stats.iterations, 0);
        assert!(stats.solution.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_dense_solve() {
        let (a, b) = random_spd(24, 2);
        let stats = jacobi_pcg(&a, &b, 1e-12, 1000).unwrap();
        let dense = a.to_dense();
        let sol = dense
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&b))
            .unwrap();
        for i in 0..24 {
            assert!((stats.solution[i] - sol[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_history_decreases_to_tolerance() {
        let (a, b) = random_spd(40, 3);
        let stats = jacobi_pcg(&a, &b, 1e-9, 2000).unwrap();
        assert!(stats.rel_residual <= 1e-9);
        // Not necessarily monotone step to step in the unpreconditioned
        // norm, but the overall trend must reach the tolerance and the last
        // entry is the smallest recorded.
        let min = stats
            .residual_history
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(min, *stats.residual_history.last().unwrap());
    }

    #[test]
    fn zero_diagonal_is_reported_as_singular() {
        let mut a = CsrMatrix::from_pattern(dense_pattern(3));
        a.add_at(0, 0, 1.0);
        a.add_at(1, 1, 1.0);
        // Unknown 2 has an empty diagonal.
        let err = jacobi_pcg(&a, &[1.0, 1.0, 1.0], 1e-8, 10).unwrap_err();
        assert_eq!(err.kind(), "singular");
        assert!(err.to_string().contains("contrast"));
    }

    #[test]
    fn nonconvergence_carries_history() {
        let (a, b) = random_spd(30, 4);
        match jacobi_pcg(&a, &b, 1e-14, 2) {
            Err(Error::NoConvergence {
                iterations,
                history,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn pattern_density() {
        let a = CsrMatrix::from_pattern(vec![vec![0, 1], vec![0, 1], vec![2]]);
        assert_eq!(a.nnz(), 5);
        assert!((a.density() - 5.0 / 9.0).abs() < 1e-15);
    }
}
