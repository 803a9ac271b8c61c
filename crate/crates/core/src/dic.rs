//! Global correlation engine: assemble and solve the linearized optical-flow
//! system `K·U = −Q` over the mesh.
//!
//! With the element shape row vector `Ñ` and the reference-image gradient
//! `∇f`, each element contributes
//!
//! ```text
//! K_e = ∫ Ñᵀ ∇f ∇ᵀf Ñ · J dξ,     Q_e = ∫ Ñᵀ (g − f) ∇f · J dξ
//! ```
//!
//! integrated with a uniform rule (by default one point per pixel). The
//! integrand is a rank-one outer product of `b = [Ñ_k f_x | Ñ_k f_y]`, so the
//! local matrix is `w·J·b bᵀ`. Unknowns are ordered u-block then v-block.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gray::{decompose, CfeGrayModel, GrayImage, GrayModel, Truncation};
use crate::mesh::{build_connectivity, build_mesh, Connectivity, QuadMesh, ZoneOfInterest};
use crate::quad::quadrature_points;
use crate::shape::{CfeParams, CutSignature, ElementKind, EvaluatorSet, ShapeTable};
use crate::sparse::{jacobi_pcg, CsrMatrix, SolveStats};

pub use crate::quad::quadrature_points as uniform_quadrature;

/// Element family selector in configuration form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementChoice {
    Q4,
    Q8,
    Cfe,
}

/// Grayscale surrogate selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    SvdSpline,
    CfeGrid,
}

/// Full engine configuration. The defaults reproduce the reference setup:
/// convolution elements with `p = 2, s = 2, a = 8`, element-sized uniform
/// quadrature, spline grayscale interpolation, and a PCG tolerance of 1e−5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DicConfig {
    pub element: ElementChoice,
    /// Element size `h` in pixels.
    pub element_size: u32,
    /// Polynomial order `p` of the convolution patch functions.
    pub order: u32,
    /// Patch size `s` in element layers.
    pub patch_size: u32,
    /// Kernel dilation `a` in parametric units.
    pub dilation: f64,
    /// Uniform quadrature points per axis; 0 means "same as element size".
    pub quad_points_per_axis: u32,
    pub solver_tol: f64,
    pub max_solver_iters: usize,
    /// Number of linearized solves; 1 is the plain single-pass method.
    pub refinement_iters: u32,
    pub backend: BackendChoice,
    /// Relative Frobenius truncation for the separated grayscale model.
    pub svd_tol: f64,
    /// Mode cap for the separated model; 0 means no cap.
    pub svd_max_modes: usize,
    /// Seed for synthetic runs recorded alongside results.
    pub seed: u64,
    /// Worker threads for assembly; 0 picks the rayon default.
    pub threads: usize,
}

impl Default for DicConfig {
    fn default() -> Self {
        DicConfig {
            element: ElementChoice::Cfe,
            element_size: 20,
            order: 2,
            patch_size: 2,
            dilation: 8.0,
            quad_points_per_axis: 0,
            solver_tol: 1e-5,
            max_solver_iters: 5000,
            refinement_iters: 1,
            backend: BackendChoice::SvdSpline,
            svd_tol: 1e-4,
            svd_max_modes: 0,
            seed: 1,
            threads: 0,
        }
    }
}

impl DicConfig {
    pub fn element_kind(&self) -> Result<ElementKind> {
        Ok(match self.element {
            ElementChoice::Q4 => ElementKind::Q4,
            ElementChoice::Q8 => ElementKind::Q8,
            ElementChoice::Cfe => ElementKind::Cfe(CfeParams::new(
                self.order,
                self.patch_size,
                self.dilation,
            )?),
        })
    }

    pub fn quad_n(&self) -> u32 {
        if self.quad_points_per_axis == 0 {
            self.element_size
        } else {
            self.quad_points_per_axis
        }
    }

    pub fn truncation(&self) -> Truncation {
        if self.svd_max_modes > 0 {
            Truncation::Rank(self.svd_max_modes)
        } else {
            Truncation::RelTolerance(self.svd_tol)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.quad_n() < 2 {
            return Err(Error::Config(
                "need at least 2 quadrature points per axis".into(),
            ));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        if self.refinement_iters < 1 {
            return Err(Error::Config("refinement iterations must be ≥ 1".into()));
        }
        self.element_kind().map(|_| ())
    }

    fn build_model(&self, image: &GrayImage) -> Result<Box<dyn GrayModel>> {
        Ok(match self.backend {
            BackendChoice::SvdSpline => Box::new(decompose(image, self.truncation())?),
            BackendChoice::CfeGrid => Box::new(CfeGrayModel::build(
                image,
                CfeParams::new(self.order.max(1), self.patch_size.max(1), self.dilation)?,
            )?),
        })
    }
}

/// Assembled global system: `matrix·U = −rhs` in the u-then-v unknown order.
pub struct SystemMatrices {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Everything needed to integrate element contributions. The grayscale
/// models are tabulated once on the global quadrature grid; only displaced
/// re-evaluations go back to the models.
pub struct AssemblyContext<'a> {
    mesh: &'a QuadMesh,
    conn: &'a Connectivity,
    tables: HashMap<CutSignature, Arc<ShapeTable>>,
    f_model: &'a dyn GrayModel,
    quad_weight: f64,
    quad_n: usize,
    grid_f: crate::gray::GridEval,
    grid_g: Vec<f64>,
    grid_stride: usize,
    threads: usize,
}

struct ElementContribution {
    local: Vec<f64>,
    rhs: Vec<f64>,
}

const BATCH: usize = 64;

impl<'a> AssemblyContext<'a> {
    pub fn new(
        mesh: &'a QuadMesh,
        conn: &'a Connectivity,
        evaluators: &EvaluatorSet,
        f_model: &'a dyn GrayModel,
        g_model: &'a dyn GrayModel,
        quad_n: u32,
        threads: usize,
    ) -> Result<AssemblyContext<'a>> {
        for model in [&f_model, &g_model] {
            let (x0, x1, y0, y1) = model.domain();
            let zoi = mesh.zoi;
            if (zoi.x0 as f64) < x0
                || (zoi.y0 as f64) < y0
                || ((zoi.x0 + zoi.width) as f64) > x1
                || ((zoi.y0 + zoi.height) as f64) > y1
            {
                return Err(Error::Domain(
                    "grayscale model does not cover the zone of interest".into(),
                ));
            }
        }
        let (points, weight) = quadrature_points(quad_n)?;
        let tables = evaluators.tables(&points);

        // Global quadrature coordinates: the per-element offsets tile the
        // mesh, so all evaluation points form one tensor grid.
        let qn = quad_n as usize;
        let h = mesh.element_size as f64;
        let mut xs = Vec::with_capacity(mesh.nx as usize * qn);
        for ex in 0..mesh.nx {
            for (qi, pt) in points.iter().take(qn).enumerate() {
                let _ = qi;
                xs.push(mesh.zoi.x0 as f64 + (ex as f64 + (pt[0] + 1.0) / 2.0) * h);
            }
        }
        let mut ys = Vec::with_capacity(mesh.ny as usize * qn);
        for ey in 0..mesh.ny {
            for qj in 0..qn {
                let pt = points[qj * qn];
                ys.push(mesh.zoi.y0 as f64 + (ey as f64 + (pt[1] + 1.0) / 2.0) * h);
            }
        }
        let grid_f = f_model.eval_grid(&xs, &ys)?;
        let grid_g = g_model.eval_grid(&xs, &ys)?.values;

        Ok(AssemblyContext {
            mesh,
            conn,
            tables,
            f_model,
            quad_weight: weight,
            quad_n: qn,
            grid_f,
            grid_g,
            grid_stride: xs.len(),
            threads,
        })
    }

    fn element_contribution(
        &self,
        e: usize,
        with_matrix: bool,
        displacement: Option<&(dyn Fn(f64, f64) -> Result<[f64; 2]> + Sync)>,
    ) -> Result<ElementContribution> {
        let table = self
            .tables
            .get(&self.conn.element_sig[e])
            .expect("table for every signature");
        let nodes = &self.conn.element_nodes[e];
        let k = nodes.len();
        debug_assert_eq!(k, table.nodes);
        let (ex, ey) = self.mesh.element_grid(e);
        let center = self.mesh.element_center(e);
        let half_h = self.mesh.element_size as f64 / 2.0;
        let jac_det = half_h * half_h;
        let scale = self.quad_weight * jac_det;

        let mut local = if with_matrix {
            vec![0.0; 4 * k * k]
        } else {
            Vec::new()
        };
        let mut rhs = vec![0.0; 2 * k];
        let mut b = vec![0.0; 2 * k];
        let (fx0, fx1, fy0, fy1) = self.f_model.domain();

        for (q, pt) in table.points.iter().enumerate() {
            let x = center[0] + half_h * pt[0];
            let y = center[1] + half_h * pt[1];
            let qi = q % self.quad_n;
            let qj = q / self.quad_n;
            let grid_idx = (ey as usize * self.quad_n + qj) * self.grid_stride
                + ex as usize * self.quad_n
                + qi;
            let f_ref = self.grid_f.values[grid_idx];
            let grad = [self.grid_f.grad_x[grid_idx], self.grid_f.grad_y[grid_idx]];
            let g_def = self.grid_g[grid_idx];
            let f_value = match displacement {
                None => f_ref,
                Some(sample) => {
                    let u = sample(x, y)?;
                    let xd = (x - u[0]).clamp(fx0, fx1);
                    let yd = (y - u[1]).clamp(fy0, fy1);
                    self.f_model.eval(xd, yd)?
                }
            };
            let residual = g_def - f_value;
            let shape = table.values_at(q);
            for i in 0..k {
                b[i] = shape[i] * grad[0];
                b[k + i] = shape[i] * grad[1];
            }
            let w = scale;
            for i in 0..2 * k {
                rhs[i] += w * residual * b[i];
            }
            if with_matrix {
                for i in 0..2 * k {
                    let wbi = w * b[i];
                    if wbi == 0.0 {
                        continue;
                    }
                    let row = &mut local[i * 2 * k..(i + 1) * 2 * k];
                    for (j, bj) in b.iter().enumerate() {
                        row[j] += wbi * bj;
                    }
                }
            }
        }
        Ok(ElementContribution { local, rhs })
    }

    fn for_each_element<F>(
        &self,
        with_matrix: bool,
        displacement: Option<&(dyn Fn(f64, f64) -> Result<[f64; 2]> + Sync)>,
        mut fold: F,
    ) -> Result<()>
    where
        F: FnMut(usize, ElementContribution),
    {
        let n_elem = self.mesh.element_count();
        let run = || -> Result<Vec<Vec<(usize, ElementContribution)>>> {
            (0..n_elem)
                .collect::<Vec<_>>()
                .par_chunks(BATCH)
                .map(|batch| {
                    batch
                        .iter()
                        .map(|&e| {
                            self.element_contribution(e, with_matrix, displacement)
                                .map(|c| (e, c))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect()
        };
        let batches = if self.threads == 0 {
            run()?
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                .install(run)?
        };
        // Batches arrive in element order, so the global accumulation is
        // deterministic regardless of the worker count.
        for batch in batches {
            for (e, contribution) in batch {
                fold(e, contribution);
            }
        }
        Ok(())
    }

    /// Assemble both the matrix and the right-hand side.
    pub fn assemble(&self) -> Result<SystemMatrices> {
        let n_nodes = self.conn.node_count;
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        for nodes in &self.conn.element_nodes {
            for &a in nodes {
                adjacency[a as usize].extend_from_slice(nodes);
            }
        }
        let mut rows: Vec<Vec<u32>> = Vec::with_capacity(2 * n_nodes);
        for adj in &adjacency {
            let mut row: Vec<u32> = adj.clone();
            row.extend(adj.iter().map(|&j| j + n_nodes as u32));
            rows.push(row);
        }
        for adj in &adjacency {
            let mut row: Vec<u32> = adj.clone();
            row.extend(adj.iter().map(|&j| j + n_nodes as u32));
            rows.push(row);
        }
        let mut matrix = CsrMatrix::from_pattern(rows);
        let mut rhs = vec![0.0; 2 * n_nodes];

        self.for_each_element(true, None, |e, c| {
            let nodes = &self.conn.element_nodes[e];
            let k = nodes.len();
            let dof = |i: usize| -> usize {
                if i < k {
                    nodes[i] as usize
                } else {
                    nodes[i - k] as usize + n_nodes
                }
            };
            for i in 0..2 * k {
                let gi = dof(i);
                rhs[gi] += c.rhs[i];
                let row = &c.local[i * 2 * k..(i + 1) * 2 * k];
                for (j, &v) in row.iter().enumerate() {
                    if v != 0.0 {
                        matrix.add_at(gi, dof(j) as u32, v);
                    }
                }
            }
        })?;
        Ok(SystemMatrices { matrix, rhs })
    }

    /// Re-integrate only the right-hand side, optionally with the reference
    /// image sampled at displaced positions `x − u(x)`.
    pub fn assemble_rhs(
        &self,
        displacement: Option<&(dyn Fn(f64, f64) -> Result<[f64; 2]> + Sync)>,
    ) -> Result<Vec<f64>> {
        let n_nodes = self.conn.node_count;
        let mut rhs = vec![0.0; 2 * n_nodes];
        self.for_each_element(false, displacement, |e, c| {
            let nodes = &self.conn.element_nodes[e];
            let k = nodes.len();
            for i in 0..k {
                rhs[nodes[i] as usize] += c.rhs[i];
                rhs[nodes[i] as usize + n_nodes] += c.rhs[k + i];
            }
        })?;
        Ok(rhs)
    }
}

/// Solve the assembled system for the nodal displacement.
pub fn solve(sys: &SystemMatrices, tol: f64, max_iters: usize) -> Result<SolveStats> {
    let neg_rhs: Vec<f64> = sys.rhs.iter().map(|v| -v).collect();
    jacobi_pcg(&sys.matrix, &neg_rhs, tol, max_iters)
}

/// Convergence record of one linearized pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassDiagnostics {
    pub iterations: usize,
    pub rel_residual: f64,
    pub rhs_norm: f64,
}

/// Timings and solver diagnostics for a full run.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunDiagnostics {
    pub passes: Vec<PassDiagnostics>,
    pub gray_seconds: f64,
    pub assemble_seconds: f64,
    pub solve_seconds: f64,
    pub total_seconds: f64,
}

/// A converged correlation result: the mesh, the configuration that produced
/// it, and the nodal displacement vector (u block, then v block, pixels).
pub struct DicSolution {
    pub mesh: QuadMesh,
    pub config: DicConfig,
    pub u: Vec<f64>,
    pub diagnostics: RunDiagnostics,
    conn: Connectivity,
    evaluators: EvaluatorSet,
}

impl std::fmt::Debug for DicSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DicSolution")
            .field("mesh", &self.mesh)
            .field("nodes", &self.conn.node_count)
            .field("passes", &self.diagnostics.passes.len())
            .finish()
    }
}

impl DicSolution {
    pub fn node_count(&self) -> usize {
        self.conn.node_count
    }

    pub fn connectivity(&self) -> &Connectivity {
        &self.conn
    }

    /// Pixel-space coordinates of every unknown-carrying node.
    pub fn node_coords(&self) -> &[[f64; 2]] {
        &self.conn.node_coords
    }

    /// Interpolated displacement `[u, v]` at a zone point.
    pub fn displacement_at(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        let (e, xi) = self.mesh.locate(x, y)?;
        let shape = self
            .evaluators
            .get(self.conn.element_sig[e])
            .expect("evaluator for every signature");
        let (values, _) = shape.eval(xi);
        let nodes = &self.conn.element_nodes[e];
        let n = self.conn.node_count;
        let mut u = 0.0;
        let mut v = 0.0;
        for (k, &node) in nodes.iter().enumerate() {
            u += values[k] * self.u[node as usize];
            v += values[k] * self.u[node as usize + n];
        }
        Ok([u, v])
    }

    /// Small-strain components `[εxx, εyy, εxy]` at a zone point.
    pub fn strain_at(&self, x: f64, y: f64) -> Result<[f64; 3]> {
        let (e, xi) = self.mesh.locate(x, y)?;
        let shape = self
            .evaluators
            .get(self.conn.element_sig[e])
            .expect("evaluator for every signature");
        let (_, grads) = shape.eval(xi);
        let nodes = &self.conn.element_nodes[e];
        let n = self.conn.node_count;
        let inv_j = 2.0 / self.mesh.element_size as f64;
        let mut du = [0.0; 2];
        let mut dv = [0.0; 2];
        for (k, &node) in nodes.iter().enumerate() {
            let uk = self.u[node as usize];
            let vk = self.u[node as usize + n];
            du[0] += grads[k][0] * inv_j * uk;
            du[1] += grads[k][1] * inv_j * uk;
            dv[0] += grads[k][0] * inv_j * vk;
            dv[1] += grads[k][1] * inv_j * vk;
        }
        Ok([du[0], dv[1], 0.5 * (du[1] + dv[0])])
    }

    /// Rebuild a solution from its serialized parts.
    pub fn reconstruct(
        mesh: QuadMesh,
        config: DicConfig,
        u: Vec<f64>,
        diagnostics: RunDiagnostics,
    ) -> Result<DicSolution> {
        let kind = config.element_kind()?;
        let conn = build_connectivity(&mesh, &kind);
        if u.len() != 2 * conn.node_count {
            return Err(Error::Domain(format!(
                "displacement vector length {} does not match the mesh ({} nodes)",
                u.len(),
                conn.node_count
            )));
        }
        let evaluators = EvaluatorSet::build(&kind, &conn.signatures())?;
        Ok(DicSolution {
            mesh,
            config,
            u,
            diagnostics,
            conn,
            evaluators,
        })
    }
}

/// Prebuilt grayscale models for one image pair, reusable across runs with
/// different meshes or element families.
pub struct DicRunner {
    f_model: Box<dyn GrayModel>,
    g_model: Box<dyn GrayModel>,
    image_size: (usize, usize),
    gray_seconds: f64,
}

impl DicRunner {
    pub fn new(
        ref_image: &GrayImage,
        def_image: &GrayImage,
        config: &DicConfig,
    ) -> Result<DicRunner> {
        if ref_image.width() != def_image.width() || ref_image.height() != def_image.height() {
            return Err(Error::Domain(format!(
                "image sizes differ: {}×{} vs {}×{}",
                ref_image.width(),
                ref_image.height(),
                def_image.width(),
                def_image.height()
            )));
        }
        let t0 = Instant::now();
        let f_model = config.build_model(ref_image)?;
        let g_model = config.build_model(def_image)?;
        Ok(DicRunner {
            f_model,
            g_model,
            image_size: (ref_image.width(), ref_image.height()),
            gray_seconds: t0.elapsed().as_secs_f64(),
        })
    }

    pub fn f_model(&self) -> &dyn GrayModel {
        self.f_model.as_ref()
    }

    pub fn g_model(&self) -> &dyn GrayModel {
        self.g_model.as_ref()
    }

    pub fn run(&self, zoi: ZoneOfInterest, config: &DicConfig) -> Result<DicSolution> {
        let total0 = Instant::now();
        config.validate()?;
        if !zoi.fits_image(self.image_size.0, self.image_size.1) {
            return Err(Error::Domain(format!(
                "zone of interest {zoi:?} does not fit the {}×{} image",
                self.image_size.0, self.image_size.1
            )));
        }
        let kind = config.element_kind()?;
        let mesh = build_mesh(zoi, config.element_size)?;
        let conn = build_connectivity(&mesh, &kind);
        let evaluators = EvaluatorSet::build(&kind, &conn.signatures())?;

        let t_assemble = Instant::now();
        let ctx = AssemblyContext::new(
            &mesh,
            &conn,
            &evaluators,
            self.f_model.as_ref(),
            self.g_model.as_ref(),
            config.quad_n(),
            config.threads,
        )?;
        let sys = ctx.assemble()?;
        let assemble_seconds = t_assemble.elapsed().as_secs_f64();

        let t_solve = Instant::now();
        let mut diagnostics = RunDiagnostics::default();
        let stats = solve(&sys, config.solver_tol, config.max_solver_iters)?;
        diagnostics.passes.push(PassDiagnostics {
            iterations: stats.iterations,
            rel_residual: stats.rel_residual,
            rhs_norm: norm(&sys.rhs),
        });
        let mut u = stats.solution;
        let mut extra_assemble = 0.0;

        for _ in 1..config.refinement_iters {
            let current = DicSolution::reconstruct(
                mesh.clone(),
                config.clone(),
                u.clone(),
                RunDiagnostics::default(),
            )?;
            let t_r = Instant::now();
            let sampler = |x: f64, y: f64| current.displacement_at(x, y);
            let rhs = ctx.assemble_rhs(Some(&sampler))?;
            extra_assemble += t_r.elapsed().as_secs_f64();
            let rhs_norm = norm(&rhs);
            let update = solve(
                &SystemMatrices {
                    matrix: sys.matrix.clone(),
                    rhs,
                },
                config.solver_tol,
                config.max_solver_iters,
            )?;
            diagnostics.passes.push(PassDiagnostics {
                iterations: update.iterations,
                rel_residual: update.rel_residual,
                rhs_norm,
            });
            for (ui, du) in u.iter_mut().zip(&update.solution) {
                *ui += du;
            }
        }

        diagnostics.gray_seconds = self.gray_seconds;
        diagnostics.assemble_seconds = assemble_seconds + extra_assemble;
        diagnostics.solve_seconds = t_solve.elapsed().as_secs_f64() - extra_assemble;
        diagnostics.total_seconds = total0.elapsed().as_secs_f64() + self.gray_seconds;

        Ok(DicSolution {
            mesh,
            config: config.clone(),
            u,
            diagnostics,
            conn,
            evaluators,
        })
    }
}

/// One-shot correlation of an image pair over a zone of interest.
pub fn run_dic(
    ref_image: &GrayImage,
    def_image: &GrayImage,
    zoi: ZoneOfInterest,
    config: &DicConfig,
) -> Result<DicSolution> {
    DicRunner::new(ref_image, def_image, config)?.run(zoi, config)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn speckle_image(w: usize, h: usize, seed: u64) -> GrayImage {
        // A very smooth random field: enough texture for a well-posed
        // system, smooth enough for tiny meshes.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f64, f64, f64, f64)> = (0..24)
            .map(|_| {
                (
                    rng.random_range(0.05..0.4),
                    rng.random_range(0.05..0.4),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.02..0.08),
                )
            })
            .collect();
        let field = |x: f64, y: f64| {
            0.5 + waves
                .iter()
                .map(|(kx, ky, phase, amp)| amp * (kx * x + ky * y + phase).sin())
                .sum::<f64>()
        };
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                values.push(field(x as f64, y as f64).clamp(0.0, 1.0));
            }
        }
        GrayImage::new(w, h, values).unwrap()
    }

    fn small_config(element: ElementChoice, h: u32) -> DicConfig {
        DicConfig {
            element,
            element_size: h,
            quad_points_per_axis: 0,
            solver_tol: 1e-10,
            ..DicConfig::default()
        }
    }

    #[test]
    fn identical_images_give_zero_rhs_and_zero_solution() {
        let img = speckle_image(61, 61, 3);
        let zoi = ZoneOfInterest::new(10, 10, 40, 40);
        let sol = run_dic(&img, &img, zoi, &small_config(ElementChoice::Cfe, 10)).unwrap();
        assert_eq!(sol.diagnostics.passes[0].iterations, 0);
        assert!(sol.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_image_reports_singularity() {
        let img = GrayImage::new(40, 40, vec![0.5; 1600]).unwrap();
        let zoi = ZoneOfInterest::new(5, 5, 30, 30);
        let err = run_dic(&img, &img, zoi, &small_config(ElementChoice::Q4, 10)).unwrap_err();
        assert_eq!(err.kind(), "singular");
    }

    #[test]
    fn matrix_is_symmetric_and_psd() {
        let f = speckle_image(61, 61, 5);
        let g = speckle_image(61, 61, 6);
        let zoi = ZoneOfInterest::new(10, 10, 40, 40);
        let config = small_config(ElementChoice::Cfe, 10);
        let mesh = build_mesh(zoi, 10).unwrap();
        let kind = config.element_kind().unwrap();
        let conn = build_connectivity(&mesh, &kind);
        let evals = EvaluatorSet::build(&kind, &conn.signatures()).unwrap();
        let fm = decompose(&f, Truncation::default()).unwrap();
        let gm = decompose(&g, Truncation::default()).unwrap();
        let ctx = AssemblyContext::new(&mesh, &conn, &evals, &fm, &gm, 10, 0).unwrap();
        let sys = ctx.assemble().unwrap();
        assert!(sys.matrix.asymmetry() < 1e-12);

        let dense = sys.matrix.to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = sys.matrix.size();
        for _ in 0..20 {
            let r = nalgebra::DVector::<f64>::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let quad = (r.transpose() * &dense * &r)[(0, 0)];
            assert!(quad >= -1e-10 * r.norm_squared());
        }
    }

    #[test]
    fn assembly_is_deterministic_across_thread_counts() {
        let f = speckle_image(61, 61, 7);
        let g = speckle_image(61, 61, 8);
        let zoi = ZoneOfInterest::new(10, 10, 40, 40);
        let config = small_config(ElementChoice::Cfe, 10);
        let mesh = build_mesh(zoi, 10).unwrap();
        let kind = config.element_kind().unwrap();
        let conn = build_connectivity(&mesh, &kind);
        let evals = EvaluatorSet::build(&kind, &conn.signatures()).unwrap();
        let fm = decompose(&f, Truncation::default()).unwrap();
        let gm = decompose(&g, Truncation::default()).unwrap();
        let mut baseline: Option<Vec<f64>> = None;
        for threads in [1usize, 2, 4] {
            let ctx =
                AssemblyContext::new(&mesh, &conn, &evals, &fm, &gm, 10, threads).unwrap();
            let sys = ctx.assemble().unwrap();
            match &baseline {
                None => baseline = Some(sys.rhs.clone()),
                Some(b) => assert!(
                    b.iter().zip(&sys.rhs).all(|(x, y)| x == y),
                    "rhs differs with {threads} threads"
                ),
            }
        }
    }

    #[test]
    fn s0_pattern_matches_q4_pattern() {
        let f = speckle_image(61, 61, 11);
        let zoi = ZoneOfInterest::new(10, 10, 40, 40);
        let mesh = build_mesh(zoi, 10).unwrap();
        let fm = decompose(&f, Truncation::default()).unwrap();

        let mut densities = Vec::new();
        for config in [
            DicConfig {
                element: ElementChoice::Q4,
                ..small_config(ElementChoice::Q4, 10)
            },
            DicConfig {
                patch_size: 0,
                ..small_config(ElementChoice::Cfe, 10)
            },
        ] {
            let kind = config.element_kind().unwrap();
            let conn = build_connectivity(&mesh, &kind);
            let evals = EvaluatorSet::build(&kind, &conn.signatures()).unwrap();
            let ctx = AssemblyContext::new(&mesh, &conn, &evals, &fm, &fm, 4, 0).unwrap();
            let sys = ctx.assemble().unwrap();
            densities.push((sys.matrix.nnz(), sys.matrix.density()));
        }
        assert_eq!(densities[0], densities[1]);
    }

    #[test]
    fn small_system_matches_dense_solve() {
        // 2×2-element mesh, cross-checked against a dense factorization.
        let f = speckle_image(41, 41, 13);
        let g = speckle_image(41, 41, 14);
        let zoi = ZoneOfInterest::new(10, 10, 20, 20);
        let config = small_config(ElementChoice::Q4, 10);
        let mesh = build_mesh(zoi, 10).unwrap();
        let kind = config.element_kind().unwrap();
        let conn = build_connectivity(&mesh, &kind);
        let evals = EvaluatorSet::build(&kind, &conn.signatures()).unwrap();
        let fm = decompose(&f, Truncation::default()).unwrap();
        let gm = decompose(&g, Truncation::default()).unwrap();
        let ctx = AssemblyContext::new(&mesh, &conn, &evals, &fm, &gm, 10, 0).unwrap();
        let sys = ctx.assemble().unwrap();
        let stats = solve(&sys, 1e-12, 10_000).unwrap();
        let dense = sys.matrix.to_dense();
        let rhs = nalgebra::DVector::from_iterator(sys.rhs.len(), sys.rhs.iter().map(|v| -v));
        let direct = dense.lu().solve(&rhs).unwrap();
        for i in 0..sys.rhs.len() {
            assert!(
                (stats.solution[i] - direct[i]).abs() < 1e-8,
                "dof {i}: {} vs {}",
                stats.solution[i],
                direct[i]
            );
        }
    }

    #[test]
    fn config_validation() {
        let mut config = DicConfig::default();
        config.quad_points_per_axis = 1;
        assert!(config.validate().is_err());
        config.quad_points_per_axis = 0;
        config.solver_tol = 0.0;
        assert!(config.validate().is_err());
        config.solver_tol = 1e-5;
        config.order = 7;
        assert!(config.validate().is_err());
    }

    #[test]
    fn q8_runs_end_to_end() {
        let img = speckle_image(61, 61, 15);
        let zoi = ZoneOfInterest::new(10, 10, 40, 40);
        let sol = run_dic(&img, &img, zoi, &small_config(ElementChoice::Q8, 10)).unwrap();
        // Midside nodes carry unknowns too: (2·4+1)² − 4·4 on 4×4 elements.
        assert_eq!(sol.node_count(), 65);
        assert!(sol.u.iter().all(|&v| v == 0.0));
    }
}
