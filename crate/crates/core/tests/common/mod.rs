//! Shared helpers for the integration suites, including the dense
//! saddle-system oracle that cross-checks the patch-function construction
//! independently of the production factorization.

use cfe_dic::kernel::{kernel_vector, BasisSpec, KernelParams, NodalPatch};
use nalgebra::{DMatrix, DVector};

/// Solve the reproducing conditions directly as one dense saddle system
///
/// ```text
/// [ R₀ P ] [k]   [δ_j]        Pᵀ k = 0
/// [ Pᵀ 0 ] [l] = [ 0 ],
/// ```
///
/// and evaluate all patch functions at `xi`. This never touches the
/// production `K = R₀⁻¹(I − P L)` route.
pub fn saddle_oracle<const D: usize>(
    params: &KernelParams,
    patch: &NodalPatch<D>,
    basis: &BasisSpec<D>,
    xi: [f64; D],
) -> Vec<f64> {
    let n = patch.len();
    let m = basis.len();
    let mut sys = DMatrix::<f64>::zeros(n + m, n + m);
    for i in 0..n {
        let krow = kernel_vector(params, patch, patch.nodes()[i]);
        for j in 0..n {
            sys[(i, j)] = krow[j];
        }
        let prow = basis.eval(patch.nodes()[i]);
        for (t, &p) in prow.iter().enumerate() {
            sys[(i, n + t)] = p;
            sys[(n + t, i)] = p;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(n + m, n);
    for j in 0..n {
        rhs[(j, j)] = 1.0;
    }
    let sol = sys.lu().solve(&rhs).expect("saddle system is solvable");
    let psi = DVector::from_vec(kernel_vector(params, patch, xi));
    let poly = DVector::from_vec(basis.eval(xi));
    (0..n)
        .map(|j| {
            let mut w = 0.0;
            for i in 0..n {
                w += psi[i] * sol[(i, j)];
            }
            for t in 0..m {
                w += poly[t] * sol[(n + t, j)];
            }
            w
        })
        .collect()
}
