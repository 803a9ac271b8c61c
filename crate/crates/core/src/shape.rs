//! Element shape functions: convolution finite elements assembled from FE
//! hat functions and radial-basis patch interpolants, plus classical Q4/Q8
//! baselines.
//!
//! A convolution element keeps the four corner nodes of a bilinear quad but
//! borrows `s` extra layers of mesh nodes around it. Each corner node owns a
//! nodal patch (the `(2s+1)`-wide window of lattice nodes centered on it,
//! tensorized in 2D) carrying a smooth interpolant `W`; the element shape
//! function of patch node `k` is
//!
//! ```text
//! Ñ_k(ξ) = Σ_{i ∈ corners} N_i(ξ) · W^{i}_k(ξ)
//! ```
//!
//! which inherits the partition of unity and the Kronecker delta property
//! from the hats and the interpolants. Elements near the mesh boundary drop
//! the lattice nodes that fall outside the mesh; the interpolants are rebuilt
//! on the surviving nodes (with the monomial basis restricted to what the
//! clipped window can support) rather than renormalized.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernel::{
    build_with_basis, eval_patch_functions_with_gradients, BasisSpec, KernelParams, NodalPatch,
    RbfCoefficients,
};

/// Convolution element parameters: kernel order/dilation plus patch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfeParams {
    kernel: KernelParams,
    patch_size: u32,
}

impl CfeParams {
    pub fn new(order: u32, patch_size: u32, dilation: f64) -> Result<Self> {
        Ok(Self {
            kernel: KernelParams::new(order, dilation)?,
            patch_size,
        })
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn patch_size(&self) -> u32 {
        self.patch_size
    }
}

impl Default for CfeParams {
    /// `p = 2, s = 2, a = 8`.
    fn default() -> Self {
        Self::new(2, 2, 8.0).expect("default parameters are valid")
    }
}

/// Element family selector.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementKind {
    Q4,
    Q8,
    Cfe(CfeParams),
}

impl ElementKind {
    /// Patch layers outside the element; zero for the classical elements.
    pub fn patch_size(&self) -> u32 {
        match self {
            ElementKind::Q4 | ElementKind::Q8 => 0,
            ElementKind::Cfe(p) => p.patch_size(),
        }
    }
}

/// Per-side boundary cut depths, in lattice layers (each ≤ s).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CutSignature {
    pub left: u32,
    pub right: u32,
    pub bottom: u32,
    pub top: u32,
}

impl CutSignature {
    pub const FULL: CutSignature = CutSignature {
        left: 0,
        right: 0,
        bottom: 0,
        top: 0,
    };

    pub fn is_full(&self) -> bool {
        *self == Self::FULL
    }
}

/// The node lattice of one element patch. Offsets live at the odd integers
/// `−(2s+1) … (2s+1)` per axis (element corners at ±1); `present` marks the
/// nodes that survive a boundary cut.
#[derive(Debug, Clone)]
pub struct PatchTopology {
    patch_size: u32,
    cut: CutSignature,
    offsets: Vec<(i32, i32)>,
    present: Vec<bool>,
    /// Map from full-lattice index to compact present index.
    compact: Vec<Option<usize>>,
    present_count: usize,
}

/// Lattice offsets with nodes beyond the mesh boundary masked out.
pub fn build_patch_topology(s: u32, cut: CutSignature) -> Result<PatchTopology> {
    if cut.left > s || cut.right > s || cut.bottom > s || cut.top > s {
        return Err(Error::Domain(format!(
            "boundary cut {cut:?} exceeds the patch size {s}"
        )));
    }
    let side = (2 * s + 2) as i32;
    let mut offsets = Vec::with_capacity((side * side) as usize);
    let mut present = Vec::with_capacity((side * side) as usize);
    let mut compact = Vec::with_capacity((side * side) as usize);
    let mut count = 0usize;
    for jy in 0..side {
        for jx in 0..side {
            let ox = 2 * jx - (2 * s as i32 + 1);
            let oy = 2 * jy - (2 * s as i32 + 1);
            offsets.push((ox, oy));
            let keep = jx >= cut.left as i32
                && jx < side - cut.right as i32
                && jy >= cut.bottom as i32
                && jy < side - cut.top as i32;
            present.push(keep);
            if keep {
                compact.push(Some(count));
                count += 1;
            } else {
                compact.push(None);
            }
        }
    }
    Ok(PatchTopology {
        patch_size: s,
        cut,
        offsets,
        present,
        compact,
        present_count: count,
    })
}

impl PatchTopology {
    pub fn patch_size(&self) -> u32 {
        self.patch_size
    }

    pub fn cut(&self) -> CutSignature {
        self.cut
    }

    /// Full-lattice offsets, row-major with the η index outermost.
    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    /// Number of surviving nodes; `(2s+2)²` for an uncut patch.
    pub fn node_count(&self) -> usize {
        self.present_count
    }

    /// Offsets of the surviving nodes in compact order.
    pub fn present_offsets(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        self.offsets
            .iter()
            .zip(&self.present)
            .filter(|(_, keep)| **keep)
            .map(|(o, _)| *o)
    }

    fn compact_index(&self, ox: i32, oy: i32) -> Option<usize> {
        let s = self.patch_size as i32;
        let jx = (ox + 2 * s + 1) / 2;
        let jy = (oy + 2 * s + 1) / 2;
        let side = 2 * s + 2;
        if jx < 0 || jx >= side || jy < 0 || jy >= side {
            return None;
        }
        self.compact[(jy * side + jx) as usize]
    }
}

/// Corner order shared by Q4, the corner part of Q8, and the convolution
/// element: `(−1,−1), (1,−1), (1,1), (−1,1)`.
pub const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// Bilinear quad: values and parametric gradients at `xi`.
pub fn q4_shape(xi: [f64; 2]) -> ([f64; 4], [[f64; 2]; 4]) {
    let (x, y) = (xi[0], xi[1]);
    let mut values = [0.0; 4];
    let mut grads = [[0.0; 2]; 4];
    for (k, (cx, cy)) in CORNERS.iter().enumerate() {
        values[k] = 0.25 * (1.0 + cx * x) * (1.0 + cy * y);
        grads[k] = [0.25 * cx * (1.0 + cy * y), 0.25 * cy * (1.0 + cx * x)];
    }
    (values, grads)
}

/// Serendipity 8-node quad: corners then midsides
/// `(0,−1), (1,0), (0,1), (−1,0)`.
pub fn q8_shape(xi: [f64; 2]) -> ([f64; 8], [[f64; 2]; 8]) {
    let (x, y) = (xi[0], xi[1]);
    let mut values = [0.0; 8];
    let mut grads = [[0.0; 2]; 8];
    for (k, (cx, cy)) in CORNERS.iter().enumerate() {
        values[k] = 0.25 * (1.0 + cx * x) * (1.0 + cy * y) * (cx * x + cy * y - 1.0);
        grads[k] = [
            0.25 * cx * (1.0 + cy * y) * (2.0 * cx * x + cy * y),
            0.25 * cy * (1.0 + cx * x) * (cx * x + 2.0 * cy * y),
        ];
    }
    let midsides = [(0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)];
    for (m, (cx, cy)) in midsides.iter().enumerate() {
        let k = 4 + m;
        if *cx == 0.0 {
            values[k] = 0.5 * (1.0 - x * x) * (1.0 + cy * y);
            grads[k] = [-x * (1.0 + cy * y), 0.5 * cy * (1.0 - x * x)];
        } else {
            values[k] = 0.5 * (1.0 + cx * x) * (1.0 - y * y);
            grads[k] = [0.5 * cx * (1.0 - y * y), -y * (1.0 + cx * x)];
        }
    }
    (values, grads)
}

/// One corner's nodal patch: the interpolant plus the compact indices of its
/// nodes within the element patch.
struct CornerInterp {
    corner: (f64, f64),
    patch: NodalPatch<2>,
    coef: RbfCoefficients<2>,
    node_ids: Vec<usize>,
}

/// A convolution element for one patch topology; evaluates shape values and
/// parametric gradients at arbitrary points.
pub struct CfeElement {
    params: CfeParams,
    topology: PatchTopology,
    corners: Vec<CornerInterp>,
}

impl CfeElement {
    pub fn build(params: &CfeParams, topology: PatchTopology) -> Result<Self> {
        let s = params.patch_size;
        if topology.patch_size() != s {
            return Err(Error::Domain(format!(
                "topology patch size {} does not match element parameters (s = {})",
                topology.patch_size(),
                s
            )));
        }
        let mut corners = Vec::with_capacity(4);
        for (cx, cy) in CORNERS {
            let (cxi, cyi) = (cx as i32, cy as i32);
            let mut nodes = Vec::new();
            let mut node_ids = Vec::new();
            for wy in -(s as i32)..=(s as i32) {
                for wx in -(s as i32)..=(s as i32) {
                    let (ox, oy) = (cxi + 2 * wx, cyi + 2 * wy);
                    if let Some(id) = topology.compact_index(ox, oy) {
                        nodes.push([ox as f64, oy as f64]);
                        node_ids.push(id);
                    }
                }
            }
            let patch = NodalPatch::new([cx, cy], nodes)?;
            let basis = BasisSpec::<2>::total_order(params.kernel.order())
                .restricted_to(patch.distinct_per_axis());
            let coef = build_with_basis(&params.kernel, &patch, basis).map_err(|e| {
                Error::IllConditioned(format!(
                    "corner ({cx}, {cy}) of patch with cut {:?}: {e}",
                    topology.cut()
                ))
            })?;
            corners.push(CornerInterp {
                corner: (cx, cy),
                patch,
                coef,
                node_ids,
            });
        }
        Ok(Self {
            params: *params,
            topology,
            corners,
        })
    }

    pub fn params(&self) -> &CfeParams {
        &self.params
    }

    pub fn topology(&self) -> &PatchTopology {
        &self.topology
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    /// Shape values and parametric gradients for all present patch nodes, in
    /// compact topology order.
    pub fn eval(&self, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let n = self.node_count();
        let mut values = vec![0.0; n];
        let mut grads = vec![[0.0; 2]; n];
        for corner in &self.corners {
            let (cx, cy) = corner.corner;
            let hat = 0.25 * (1.0 + cx * xi[0]) * (1.0 + cy * xi[1]);
            let hat_dx = 0.25 * cx * (1.0 + cy * xi[1]);
            let hat_dy = 0.25 * cy * (1.0 + cx * xi[0]);
            let (w, dw) = eval_patch_functions_with_gradients(
                &corner.coef,
                &self.params.kernel,
                &corner.patch,
                xi,
            );
            for (j, &k) in corner.node_ids.iter().enumerate() {
                values[k] += hat * w[j];
                grads[k][0] += hat_dx * w[j] + hat * dw[j][0];
                grads[k][1] += hat_dy * w[j] + hat * dw[j][1];
            }
        }
        (values, grads)
    }
}

/// 1D counterpart used by the shape-curve dump and the 1D checks: element
/// `[−1, 1]`, patch nodes at the odd integers `−(2s+1) … (2s+1)`.
pub struct CfeElement1d {
    params: CfeParams,
    node_offsets: Vec<i32>,
    corners: Vec<(f64, NodalPatch<1>, RbfCoefficients<1>, Vec<usize>)>,
}

impl CfeElement1d {
    pub fn build(params: &CfeParams) -> Result<Self> {
        let s = params.patch_size as i32;
        let node_offsets: Vec<i32> = (-(2 * s + 1)..=(2 * s + 1)).step_by(2).collect();
        let index_of = |o: i32| node_offsets.iter().position(|&x| x == o).unwrap();
        let mut corners = Vec::new();
        for c in [-1i32, 1] {
            let offsets: Vec<i32> = ((c - 2 * s)..=(c + 2 * s)).step_by(2).collect();
            let nodes: Vec<[f64; 1]> = offsets.iter().map(|&o| [o as f64]).collect();
            let ids: Vec<usize> = offsets.iter().map(|&o| index_of(o)).collect();
            let patch = NodalPatch::new([c as f64], nodes)?;
            let basis = BasisSpec::<1>::total_order(params.kernel.order())
                .restricted_to(patch.distinct_per_axis());
            let coef = build_with_basis(&params.kernel, &patch, basis)?;
            corners.push((c as f64, patch, coef, ids));
        }
        Ok(Self {
            params: *params,
            node_offsets,
            corners,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_offsets.len()
    }

    pub fn node_offsets(&self) -> &[i32] {
        &self.node_offsets
    }

    pub fn eval(&self, xi: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.node_count();
        let mut values = vec![0.0; n];
        let mut grads = vec![0.0; n];
        for (c, patch, coef, ids) in &self.corners {
            let hat = 0.5 * (1.0 + c * xi);
            let hat_d = 0.5 * c;
            let (w, dw) =
                eval_patch_functions_with_gradients(coef, &self.params.kernel, patch, [xi]);
            for (j, &k) in ids.iter().enumerate() {
                values[k] += hat * w[j];
                grads[k] += hat_d * w[j] + hat * dw[j][0];
            }
        }
        (values, grads)
    }
}

/// Any of the supported element families, ready to evaluate.
pub enum ElementShape {
    Q4,
    Q8,
    Cfe(CfeElement),
}

impl ElementShape {
    pub fn node_count(&self) -> usize {
        match self {
            ElementShape::Q4 => 4,
            ElementShape::Q8 => 8,
            ElementShape::Cfe(e) => e.node_count(),
        }
    }

    pub fn eval(&self, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        match self {
            ElementShape::Q4 => {
                let (v, g) = q4_shape(xi);
                (v.to_vec(), g.to_vec())
            }
            ElementShape::Q8 => {
                let (v, g) = q8_shape(xi);
                (v.to_vec(), g.to_vec())
            }
            ElementShape::Cfe(e) => e.eval(xi),
        }
    }
}

/// Precomputed shape values and parametric gradients at a fixed point set.
/// Row-major: entry `q * nodes + k` refers to point `q`, node `k`.
pub struct ShapeTable {
    pub nodes: usize,
    pub points: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

impl ShapeTable {
    pub fn build(shape: &ElementShape, points: &[[f64; 2]]) -> ShapeTable {
        let nodes = shape.node_count();
        let mut values = Vec::with_capacity(points.len() * nodes);
        let mut grads = Vec::with_capacity(points.len() * nodes);
        for &pt in points {
            let (v, g) = shape.eval(pt);
            values.extend_from_slice(&v);
            grads.extend_from_slice(&g);
        }
        ShapeTable {
            nodes,
            points: points.to_vec(),
            values,
            grads,
        }
    }

    pub fn values_at(&self, q: usize) -> &[f64] {
        &self.values[q * self.nodes..(q + 1) * self.nodes]
    }

    pub fn grads_at(&self, q: usize) -> &[[f64; 2]] {
        &self.grads[q * self.nodes..(q + 1) * self.nodes]
    }
}

/// Convolution shape table for one topology at the given points.
pub fn build_cfe_table(
    params: &CfeParams,
    topology: PatchTopology,
    points: &[[f64; 2]],
) -> Result<ShapeTable> {
    let element = CfeElement::build(params, topology)?;
    Ok(ShapeTable::build(&ElementShape::Cfe(element), points))
}

/// Evaluate the isoparametric map `x(ξ) = Σ Ñ_k(ξ) x_k` and its Jacobian.
/// `node_coords` must be in the shape's compact node order.
pub fn isoparametric_map(
    shape: &ElementShape,
    node_coords: &[[f64; 2]],
    xi: [f64; 2],
) -> Result<([f64; 2], [[f64; 2]; 2])> {
    if node_coords.len() != shape.node_count() {
        return Err(Error::Domain(format!(
            "expected {} node coordinates, got {}",
            shape.node_count(),
            node_coords.len()
        )));
    }
    let (values, grads) = shape.eval(xi);
    let mut x = [0.0; 2];
    let mut jac = [[0.0; 2]; 2];
    for (k, coord) in node_coords.iter().enumerate() {
        for r in 0..2 {
            x[r] += values[k] * coord[r];
            jac[r][0] += grads[k][0] * coord[r];
            jac[r][1] += grads[k][1] * coord[r];
        }
    }
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    if det.abs() < 1e-14 {
        return Err(Error::Singular(
            "isoparametric map has a non-invertible Jacobian".into(),
        ));
    }
    Ok((x, jac))
}

/// Prebuilt evaluators for every cut signature a mesh needs. Built once and
/// then shared read-only across workers.
pub struct EvaluatorSet {
    kind: ElementKind,
    shapes: HashMap<CutSignature, Arc<ElementShape>>,
}

impl EvaluatorSet {
    pub fn build(kind: &ElementKind, signatures: &[CutSignature]) -> Result<EvaluatorSet> {
        let mut shapes = HashMap::new();
        for sig in signatures {
            if shapes.contains_key(sig) {
                continue;
            }
            let shape = match kind {
                ElementKind::Q4 => ElementShape::Q4,
                ElementKind::Q8 => ElementShape::Q8,
                ElementKind::Cfe(params) => {
                    let topo = build_patch_topology(params.patch_size(), *sig)?;
                    ElementShape::Cfe(CfeElement::build(params, topo)?)
                }
            };
            shapes.insert(*sig, Arc::new(shape));
        }
        Ok(EvaluatorSet {
            kind: kind.clone(),
            shapes,
        })
    }

    pub fn kind(&self) -> &ElementKind {
        &self.kind
    }

    pub fn get(&self, sig: CutSignature) -> Option<&Arc<ElementShape>> {
        self.shapes.get(&sig)
    }

    /// Shape tables for each signature at one point set.
    pub fn tables(&self, points: &[[f64; 2]]) -> HashMap<CutSignature, Arc<ShapeTable>> {
        self.shapes
            .iter()
            .map(|(sig, shape)| (*sig, Arc::new(ShapeTable::build(shape, points))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn default_element() -> CfeElement {
        let params = CfeParams::default();
        let topo = build_patch_topology(2, CutSignature::FULL).unwrap();
        CfeElement::build(&params, topo).unwrap()
    }

    #[test]
    fn q4_reference_values() {
        let (v, _) = q4_shape([-1.0, -1.0]);
        assert_eq!(v, [1.0, 0.0, 0.0, 0.0]);
        let (v, _) = q4_shape([0.0, 0.0]);
        assert_eq!(v, [0.25; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let xi = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (_, g) = q4_shape(xi);
            for axis in 0..2 {
                let sum: f64 = g.iter().map(|gi| gi[axis]).sum();
                assert!(sum.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn q8_reference_values() {
        let (v, _) = q8_shape([1.0, 1.0]);
        for (k, vk) in v.iter().enumerate() {
            let expect = if k == 2 { 1.0 } else { 0.0 };
            assert!((vk - expect).abs() < 1e-14);
        }
        let (v, _) = q8_shape([0.0, -1.0]);
        for (k, vk) in v.iter().enumerate() {
            let expect = if k == 4 { 1.0 } else { 0.0 };
            assert!((vk - expect).abs() < 1e-14);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let xi = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (v, _) = q8_shape(xi);
            let sum: f64 = v.iter().sum();
            assert!((sum - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn topology_node_counts() {
        let t = build_patch_topology(1, CutSignature::FULL).unwrap();
        assert_eq!(t.node_count(), 16);
        let t = build_patch_topology(2, CutSignature::FULL).unwrap();
        assert_eq!(t.node_count(), 36);
        let t = build_patch_topology(
            1,
            CutSignature {
                left: 1,
                ..CutSignature::FULL
            },
        )
        .unwrap();
        assert_eq!(t.node_count(), 12);
        assert!(build_patch_topology(
            1,
            CutSignature {
                left: 2,
                ..CutSignature::FULL
            }
        )
        .is_err());
    }

    #[test]
    fn one_dimensional_function_counts() {
        let p1 = CfeParams::new(2, 1, 8.0).unwrap();
        let e1 = CfeElement1d::build(&p1).unwrap();
        assert_eq!(e1.node_count(), 4);
        assert_eq!(e1.node_offsets(), &[-3, -1, 1, 3]);

        let p2 = CfeParams::default();
        let e2 = CfeElement1d::build(&p2).unwrap();
        assert_eq!(e2.node_count(), 6);
        assert_eq!(e2.node_offsets(), &[-5, -3, -1, 1, 3, 5]);

        // Kronecker delta at the element nodes and partition of unity inside.
        for (k, &o) in e2.node_offsets().iter().enumerate() {
            if o.abs() == 1 {
                let (v, _) = e2.eval(o as f64);
                for (j, vj) in v.iter().enumerate() {
                    let expect = if j == k { 1.0 } else { 0.0 };
                    assert!((vj - expect).abs() < 1e-10);
                }
            }
        }
        for i in 0..=20 {
            let xi = -1.0 + 0.1 * i as f64;
            let (v, _) = e2.eval(xi);
            let sum: f64 = v.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn corner_kronecker_delta_full_and_reduced() {
        let params = CfeParams::default();
        for cut in [
            CutSignature::FULL,
            CutSignature {
                left: 2,
                bottom: 1,
                ..CutSignature::FULL
            },
            CutSignature {
                left: 2,
                right: 0,
                bottom: 2,
                top: 0,
            },
        ] {
            let topo = build_patch_topology(2, cut).unwrap();
            let element = CfeElement::build(&params, topo).unwrap();
            let offsets: Vec<(i32, i32)> = element.topology().present_offsets().collect();
            for (k, &(ox, oy)) in offsets.iter().enumerate() {
                if ox.abs() == 1 && oy.abs() == 1 {
                    let (v, _) = element.eval([ox as f64, oy as f64]);
                    for (j, vj) in v.iter().enumerate() {
                        let expect = if j == k { 1.0 } else { 0.0 };
                        assert!(
                            (vj - expect).abs() < 1e-10,
                            "cut {cut:?} corner ({ox},{oy}): value {vj} at node {j}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_random_points() {
        let params = CfeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for cut in [
            CutSignature::FULL,
            CutSignature {
                right: 2,
                top: 1,
                ..CutSignature::FULL
            },
        ] {
            let topo = build_patch_topology(2, cut).unwrap();
            let element = CfeElement::build(&params, topo).unwrap();
            for _ in 0..1000 {
                let xi = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let (v, g) = element.eval(xi);
                let sum: f64 = v.iter().sum();
                assert!((sum - 1.0).abs() < 1e-10, "cut {cut:?}: sum {sum}");
                for axis in 0..2 {
                    let gs: f64 = g.iter().map(|gi| gi[axis]).sum();
                    assert!(gs.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn quadratic_field_reproduction() {
        let element = default_element();
        let offsets: Vec<(i32, i32)> = element.topology().present_offsets().collect();
        let nodal: Vec<f64> = offsets
            .iter()
            .map(|&(ox, oy)| {
                let (x, y) = (ox as f64, oy as f64);
                x * x + x * y
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let xi = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (v, _) = element.eval(xi);
            let interp: f64 = v.iter().zip(&nodal).map(|(vk, uk)| vk * uk).sum();
            let exact = xi[0] * xi[0] + xi[0] * xi[1];
            assert!((interp - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let element = default_element();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let step = 1e-5;
        for _ in 0..50 {
            let xi = [rng.random_range(-0.99..0.99), rng.random_range(-0.99..0.99)];
            let (_, grads) = element.eval(xi);
            let scale = grads
                .iter()
                .flat_map(|g| g.iter().map(|v| v.abs()))
                .fold(0.0f64, f64::max);
            for axis in 0..2 {
                let mut lo = xi;
                let mut hi = xi;
                lo[axis] -= step;
                hi[axis] += step;
                let (vlo, _) = element.eval(lo);
                let (vhi, _) = element.eval(hi);
                for k in 0..element.node_count() {
                    let fd = (vhi[k] - vlo[k]) / (2.0 * step);
                    let denom = grads[k][axis].abs().max(1e-1 * scale);
                    assert!(
                        (grads[k][axis] - fd).abs() / denom < 1e-6,
                        "node {k} axis {axis}: analytic {} vs fd {fd}",
                        grads[k][axis]
                    );
                }
            }
        }
    }

    #[test]
    fn isoparametric_map_matches_affine() {
        let element = default_element();
        let h = 20.0;
        let center = [137.0, 55.0];
        let coords: Vec<[f64; 2]> = element
            .topology()
            .present_offsets()
            .map(|(ox, oy)| {
                [
                    center[0] + 0.5 * h * ox as f64,
                    center[1] + 0.5 * h * oy as f64,
                ]
            })
            .collect();
        let shape = ElementShape::Cfe(element);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let xi = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (x, jac) = isoparametric_map(&shape, &coords, xi).unwrap();
            let expect = [center[0] + 0.5 * h * xi[0], center[1] + 0.5 * h * xi[1]];
            assert!((x[0] - expect[0]).abs() < 1e-9);
            assert!((x[1] - expect[1]).abs() < 1e-9);
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            assert!((det - 0.25 * h * h).abs() < 1e-7);
        }
        // The element centroid maps to the physical center.
        let (x, _) = isoparametric_map(&shape, &coords, [0.0, 0.0]).unwrap();
        assert!((x[0] - center[0]).abs() < 1e-9 && (x[1] - center[1]).abs() < 1e-9);
    }

    #[test]
    fn s_zero_degenerates_to_q4() {
        let params = CfeParams::new(2, 0, 8.0).unwrap();
        let topo = build_patch_topology(0, CutSignature::FULL).unwrap();
        let element = CfeElement::build(&params, topo).unwrap();
        assert_eq!(element.node_count(), 4);
        // The topology is row-major while Q4 orders corners counterclockwise.
        let offsets: Vec<(i32, i32)> = element.topology().present_offsets().collect();
        let q4_index = |o: (i32, i32)| {
            CORNERS
                .iter()
                .position(|&(cx, cy)| (cx as i32, cy as i32) == o)
                .unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let xi = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (v, g) = element.eval(xi);
            let (vq, gq) = q4_shape(xi);
            for k in 0..4 {
                let q = q4_index(offsets[k]);
                assert!((v[k] - vq[q]).abs() < 1e-12);
                assert!((g[k][0] - gq[q][0]).abs() < 1e-12);
                assert!((g[k][1] - gq[q][1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn p1_variants_build_and_sum_to_one() {
        for a in [1.0, 2.0, 8.0] {
            let params = CfeParams::new(1, 2, a).unwrap();
            let topo = build_patch_topology(2, CutSignature::FULL).unwrap();
            let element = CfeElement::build(&params, topo).unwrap();
            let (v, _) = element.eval([0.3, -0.7]);
            let sum: f64 = v.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10, "a = {a}: sum {sum}");
        }
    }
}
