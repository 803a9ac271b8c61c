//! Cubic-spline kernels, polynomial bases, and the radial basis interpolation
//! that produces the convolution patch functions.
//!
//! A patch function set `W_j` interpolates nodal data over a small node set
//! (the nodal patch) as `W(ξ) = Ψ_a(ξ)·K + p(ξ)·L`, where `Ψ_a` collects
//! kernel values at scaled distances to the patch nodes and `p` is a monomial
//! basis. The coefficient matrices are
//!
//! ```text
//! L = (Pᵀ R₀⁻¹ P)⁻¹ Pᵀ R₀⁻¹,      K = R₀⁻¹ (I − P L)
//! ```
//!
//! with `R₀` the kernel moment matrix and `P` the Vandermonde matrix of the
//! basis at the patch nodes. The construction interpolates (Kronecker delta
//! at the nodes) and reproduces every polynomial in the basis exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest acceptable condition number estimate for the moment matrix `R₀`.
const MAX_CONDITION: f64 = 1e12;

/// Kernel configuration: polynomial reproduction order and dilation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    order: u32,
    dilation: f64,
}

impl KernelParams {
    /// `order` must be 1 or 2, `dilation` strictly positive.
    pub fn new(order: u32, dilation: f64) -> Result<Self> {
        if !(1..=2).contains(&order) {
            return Err(Error::Config(format!(
                "polynomial order {order} is not supported (use 1 or 2)"
            )));
        }
        if !(dilation > 0.0) || !dilation.is_finite() {
            return Err(Error::Config(format!(
                "dilation must be a positive finite number, got {dilation}"
            )));
        }
        Ok(Self { order, dilation })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn dilation(&self) -> f64 {
        self.dilation
    }
}

/// Cubic spline kernel on the normalized distance `z ≥ 0`.
///
/// Three branches with support `[0, 1]`; the value and its first two
/// derivatives are continuous at the breakpoints `z = 1/2` and `z = 1`.
pub fn cubic_spline_kernel(z: f64) -> Result<f64> {
    if z < 0.0 || !z.is_finite() {
        return Err(Error::Domain(format!(
            "kernel argument must be a non-negative finite number, got {z}"
        )));
    }
    Ok(kernel_value(z))
}

#[inline]
pub(crate) fn kernel_value(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z <= 0.5 {
        2.0 / 3.0 - 4.0 * z * z + 4.0 * z * z * z
    } else if z < 1.0 {
        4.0 / 3.0 - 4.0 * z + 4.0 * z * z - 4.0 / 3.0 * z * z * z
    } else {
        // The middle branch vanishes at z = 1; return the exact zero so the
        // support boundary is sharp.
        0.0
    }
}

/// dΨ/dz. Zero at `z = 0` (symmetric extension of the even kernel).
#[inline]
pub(crate) fn kernel_derivative(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z <= 0.5 {
        -8.0 * z + 12.0 * z * z
    } else if z < 1.0 {
        -4.0 + 8.0 * z - 4.0 * z * z
    } else {
        0.0
    }
}

/// Kernel in one signed parametric offset: value and d/dξ.
#[inline]
fn kernel_1d(delta: f64, dilation: f64) -> (f64, f64) {
    let z = delta.abs() / dilation;
    let value = kernel_value(z);
    let deriv = kernel_derivative(z) * delta.signum() / dilation;
    (value, deriv)
}

/// A nodal patch: the supporting node set of one convolution patch function
/// family, with the owning node's coordinate as `center`.
#[derive(Debug, Clone)]
pub struct NodalPatch<const D: usize> {
    center: [f64; D],
    nodes: Vec<[f64; D]>,
}

impl<const D: usize> NodalPatch<D> {
    pub fn new(center: [f64; D], nodes: Vec<[f64; D]>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Domain("nodal patch has no nodes".into()));
        }
        for (i, a) in nodes.iter().enumerate() {
            for b in nodes.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::Domain(format!(
                        "nodal patch has duplicate node at {a:?}"
                    )));
                }
            }
        }
        Ok(Self { center, nodes })
    }

    pub fn center(&self) -> [f64; D] {
        self.center
    }

    pub fn nodes(&self) -> &[[f64; D]] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of distinct coordinates per axis. Bounds the monomial orders
    /// that keep the Vandermonde matrix full-rank on lattice patches.
    pub fn distinct_per_axis(&self) -> [usize; D] {
        let mut counts = [0usize; D];
        for (axis, count) in counts.iter_mut().enumerate() {
            let mut values: Vec<f64> = self.nodes.iter().map(|n| n[axis]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            *count = values.len();
        }
        counts
    }
}

/// A monomial basis as a list of per-axis exponents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisSpec<const D: usize> {
    exponents: Vec<[u32; D]>,
}

impl BasisSpec<1> {
    /// `[1, ξ, …, ξᵖ]`.
    pub fn total_order(p: u32) -> Self {
        Self {
            exponents: (0..=p).map(|i| [i]).collect(),
        }
    }
}

impl BasisSpec<2> {
    /// All monomials of total order ≤ p, ordered `1, ξ, …, ξᵖ, η, ξη, …`.
    /// For p = 2 this is `[1, ξ, ξ², η, ξη, η²]`.
    pub fn total_order(p: u32) -> Self {
        let mut exponents = Vec::new();
        for j in 0..=p {
            for i in 0..=(p - j) {
                exponents.push([i, j]);
            }
        }
        Self { exponents }
    }
}

impl<const D: usize> BasisSpec<D> {
    /// Drop monomials whose single-axis order exceeds what the patch node
    /// coordinates can distinguish. Needed for boundary-reduced patches.
    pub fn restricted_to(&self, distinct: [usize; D]) -> Self {
        let exponents = self
            .exponents
            .iter()
            .filter(|e| (0..D).all(|d| (e[d] as usize) < distinct[d].max(1)))
            .copied()
            .collect();
        Self { exponents }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn eval(&self, xi: [f64; D]) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|e| (0..D).map(|d| xi[d].powi(e[d] as i32)).product())
            .collect()
    }

    /// Partial derivative of every monomial along `axis`.
    pub fn eval_derivative(&self, xi: [f64; D], axis: usize) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|e| {
                if e[axis] == 0 {
                    return 0.0;
                }
                let mut v = e[axis] as f64 * xi[axis].powi(e[axis] as i32 - 1);
                for d in 0..D {
                    if d != axis {
                        v *= xi[d].powi(e[d] as i32);
                    }
                }
                v
            })
            .collect()
    }
}

/// Monomial basis vector of total order ≤ p at a parametric point.
pub fn polynomial_basis<const D: usize>(p: u32, xi: [f64; D]) -> Result<Vec<f64>>
where
    BasisHelper<D>: TotalOrder<D>,
{
    if !(1..=2).contains(&p) {
        return Err(Error::Config(format!(
            "polynomial order {p} is not supported (use 1 or 2)"
        )));
    }
    Ok(BasisHelper::<D>::total_order(p).eval(xi))
}

/// Dispatch helper so `polynomial_basis` works for both dimensions.
pub struct BasisHelper<const D: usize>;

pub trait TotalOrder<const D: usize> {
    fn total_order(p: u32) -> BasisSpec<D>;
}

impl TotalOrder<1> for BasisHelper<1> {
    fn total_order(p: u32) -> BasisSpec<1> {
        BasisSpec::<1>::total_order(p)
    }
}

impl TotalOrder<2> for BasisHelper<2> {
    fn total_order(p: u32) -> BasisSpec<2> {
        BasisSpec::<2>::total_order(p)
    }
}

/// Kernel row vector: entry `I` is the (tensor-product) kernel at the scaled
/// per-axis distances between `xi` and patch node `I`.
pub fn kernel_vector<const D: usize>(
    params: &KernelParams,
    patch: &NodalPatch<D>,
    xi: [f64; D],
) -> Vec<f64> {
    patch
        .nodes
        .iter()
        .map(|node| {
            (0..D)
                .map(|d| kernel_value((xi[d] - node[d]).abs() / params.dilation))
                .product()
        })
        .collect()
}

/// Kernel values plus their gradient rows, evaluated in one pass.
fn kernel_vector_with_gradients<const D: usize>(
    params: &KernelParams,
    patch: &NodalPatch<D>,
    xi: [f64; D],
) -> (Vec<f64>, Vec<[f64; D]>) {
    let n = patch.len();
    let mut values = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for node in &patch.nodes {
        let mut per_axis = [(0.0f64, 0.0f64); D];
        for d in 0..D {
            per_axis[d] = kernel_1d(xi[d] - node[d], params.dilation);
        }
        let value: f64 = per_axis.iter().map(|(v, _)| *v).product();
        let mut grad = [0.0f64; D];
        for (axis, g) in grad.iter_mut().enumerate() {
            let mut term = per_axis[axis].1;
            for (d, (v, _)) in per_axis.iter().enumerate() {
                if d != axis {
                    term *= *v;
                }
            }
            *g = term;
        }
        values.push(value);
        grads.push(grad);
    }
    (values, grads)
}

/// Coefficients of one patch-function family.
///
/// `kernel_weights` rows index patch nodes as kernel centers and
/// `poly_weights` rows index basis terms; both have one column per nodal
/// value, so `W_j(ξ) = [Ψ_a(ξ)·K + p(ξ)·L]_j`.
#[derive(Debug, Clone)]
pub struct RbfCoefficients<const D: usize> {
    kernel_weights: DMatrix<f64>,
    poly_weights: DMatrix<f64>,
    basis: BasisSpec<D>,
}

impl<const D: usize> RbfCoefficients<D> {
    pub fn kernel_weights(&self) -> &DMatrix<f64> {
        &self.kernel_weights
    }

    pub fn poly_weights(&self) -> &DMatrix<f64> {
        &self.poly_weights
    }

    pub fn basis(&self) -> &BasisSpec<D> {
        &self.basis
    }
}

/// Build the interpolant with the full total-order basis of `params.order()`.
pub fn build_rbf_interpolant<const D: usize>(
    params: &KernelParams,
    patch: &NodalPatch<D>,
) -> Result<RbfCoefficients<D>>
where
    BasisHelper<D>: TotalOrder<D>,
{
    build_with_basis(params, patch, BasisHelper::<D>::total_order(params.order()))
}

/// Build the interpolant with an explicit basis. Boundary-reduced patches use
/// a restricted basis so the Vandermonde matrix keeps full column rank.
pub fn build_with_basis<const D: usize>(
    params: &KernelParams,
    patch: &NodalPatch<D>,
    basis: BasisSpec<D>,
) -> Result<RbfCoefficients<D>> {
    let n = patch.len();
    let m = basis.len();
    if n < m {
        return Err(Error::IllConditioned(format!(
            "patch centered at {:?} has {} nodes but the basis has {} terms",
            patch.center, n, m
        )));
    }

    let mut moment = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let row = kernel_vector(params, patch, patch.nodes[i]);
        for j in 0..n {
            moment[(i, j)] = row[j];
        }
    }
    let mut vander = DMatrix::<f64>::zeros(n, m);
    for i in 0..n {
        let row = basis.eval(patch.nodes[i]);
        for j in 0..m {
            vander[(i, j)] = row[j];
        }
    }

    // Conditioning guard: a degenerate moment matrix means the dilation does
    // not suit the patch spacing. Patches are tiny, so an SVD is cheap.
    let sv = moment.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 || smax / smin > MAX_CONDITION {
        return Err(Error::IllConditioned(format!(
            "moment matrix for patch centered at {:?} ({} nodes) has condition \
             estimate {:.2e}; the dilation {} is too small or too large for \
             this patch",
            patch.center,
            n,
            if smin > 0.0 { smax / smin } else { f64::INFINITY },
            params.dilation
        )));
    }
    let psv = vander.clone().svd(false, false).singular_values;
    if psv.min() <= psv.max() * 1e-10 {
        return Err(Error::IllConditioned(format!(
            "polynomial block for patch centered at {:?} is rank-deficient; \
             the node geometry cannot support the requested basis",
            patch.center
        )));
    }

    let lu = moment.clone().lu();
    let inv_p = lu
        .solve(&vander)
        .ok_or_else(|| Error::IllConditioned("moment matrix factorization failed".into()))?;
    // m×m normal block Pᵀ R₀⁻¹ P.
    let normal = vander.transpose() * &inv_p;
    let inv_identity = lu
        .solve(&DMatrix::<f64>::identity(n, n))
        .ok_or_else(|| Error::IllConditioned("moment matrix factorization failed".into()))?;
    let normal_lu = normal.lu();
    let poly_weights = normal_lu
        .solve(&(vander.transpose() * &inv_identity))
        .ok_or_else(|| {
            Error::IllConditioned(format!(
                "reproduction system for patch centered at {:?} is singular",
                patch.center
            ))
        })?;
    let kernel_weights = &inv_identity - &inv_p * &poly_weights;

    Ok(RbfCoefficients {
        kernel_weights,
        poly_weights,
        basis,
    })
}

/// Patch-function values `W_j(ξ)` for every patch node `j`.
pub fn eval_patch_functions<const D: usize>(
    coef: &RbfCoefficients<D>,
    params: &KernelParams,
    patch: &NodalPatch<D>,
    xi: [f64; D],
) -> Vec<f64> {
    let psi = DVector::from_vec(kernel_vector(params, patch, xi));
    let poly = DVector::from_vec(coef.basis.eval(xi));
    let w = coef.kernel_weights.transpose() * psi + coef.poly_weights.transpose() * poly;
    w.as_slice().to_vec()
}

/// Gradients `∂W_j/∂ξ` (per axis) for every patch node `j`.
pub fn eval_patch_function_gradients<const D: usize>(
    coef: &RbfCoefficients<D>,
    params: &KernelParams,
    patch: &NodalPatch<D>,
    xi: [f64; D],
) -> Vec<[f64; D]> {
    let (_, grads) = eval_patch_functions_with_gradients(coef, params, patch, xi);
    grads
}

/// Values and gradients in one pass; the hot path for shape assembly.
pub fn eval_patch_functions_with_gradients<const D: usize>(
    coef: &RbfCoefficients<D>,
    params: &KernelParams,
    patch: &NodalPatch<D>,
    xi: [f64; D],
) -> (Vec<f64>, Vec<[f64; D]>) {
    let n = patch.len();
    let m = coef.basis.len();
    let (psi, psi_grads) = kernel_vector_with_gradients(params, patch, xi);
    let poly = coef.basis.eval(xi);
    let mut poly_grads = Vec::with_capacity(D);
    for axis in 0..D {
        poly_grads.push(coef.basis.eval_derivative(xi, axis));
    }

    let mut values = vec![0.0; n];
    let mut grads = vec![[0.0; D]; n];
    for i in 0..n {
        let psi_i = psi[i];
        let dpsi_i = psi_grads[i];
        for j in 0..n {
            let k = coef.kernel_weights[(i, j)];
            values[j] += psi_i * k;
            for d in 0..D {
                grads[j][d] += dpsi_i[d] * k;
            }
        }
    }
    for t in 0..m {
        let p_t = poly[t];
        for j in 0..n {
            let l = coef.poly_weights[(t, j)];
            values[j] += p_t * l;
            for d in 0..D {
                grads[j][d] += poly_grads[d][t] * l;
            }
        }
    }
    (values, grads)
}
