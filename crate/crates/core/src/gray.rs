//! Grayscale images and smooth, differentiable surrogates for them.
//!
//! Two interchangeable backends supply sub-pixel values and gradients:
//!
//! * [`SeparatedSplineModel`] — a separation of variables `f(x, y) =
//!   Σ_m f_x^{(m)}(x) · f_y^{(m)}(y)` obtained from a truncated singular
//!   value decomposition of the pixel matrix, with each 1D factor fitted by
//!   an order-4 (cubic) interpolating spline. The gradient follows
//!   analytically from the factor derivatives.
//! * [`CfeGrayModel`] — the convolution-element interpolation of the pixel
//!   lattice itself, sharing the shape machinery with the displacement
//!   field.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mesh::{build_mesh, QuadMesh, ZoneOfInterest};
use crate::shape::{build_patch_topology, CfeElement, CfeParams, CutSignature};
use crate::spline::CubicSpline;

/// A grayscale image with intensities normalized to `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<GrayImage> {
        if width < 2 || height < 2 {
            return Err(Error::Image(format!(
                "image must be at least 2×2 pixels, got {width}×{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::Image(format!(
                "expected {} pixel values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Image("image contains non-finite values".into()));
        }
        Ok(GrayImage {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Load PNG/PGM/TIFF. Color inputs are reduced to luma with ITU-R BT.709
    /// weights; 8- and 16-bit samples are scaled to `[0, 1]`.
    pub fn load(path: &Path) -> Result<GrayImage> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path.to_path_buf(), io),
            other => Error::Image(format!("{}: {other}", path.display())),
        })?;
        Self::from_dynamic(img)
    }

    fn from_dynamic(img: image::DynamicImage) -> Result<GrayImage> {
        use image::DynamicImage as D;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let luma709 = |r: f64, g: f64, b: f64| 0.2126 * r + 0.7152 * g + 0.0722 * b;
        let values: Vec<f64> = match img {
            D::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
            D::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
            D::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
            D::ImageLumaA16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
            D::ImageRgb8(buf) => buf
                .pixels()
                .map(|p| {
                    luma709(
                        p.0[0] as f64 / 255.0,
                        p.0[1] as f64 / 255.0,
                        p.0[2] as f64 / 255.0,
                    )
                })
                .collect(),
            D::ImageRgba8(buf) => buf
                .pixels()
                .map(|p| {
                    luma709(
                        p.0[0] as f64 / 255.0,
                        p.0[1] as f64 / 255.0,
                        p.0[2] as f64 / 255.0,
                    )
                })
                .collect(),
            D::ImageRgb16(buf) => buf
                .pixels()
                .map(|p| {
                    luma709(
                        p.0[0] as f64 / 65535.0,
                        p.0[1] as f64 / 65535.0,
                        p.0[2] as f64 / 65535.0,
                    )
                })
                .collect(),
            D::ImageRgba16(buf) => buf
                .pixels()
                .map(|p| {
                    luma709(
                        p.0[0] as f64 / 65535.0,
                        p.0[1] as f64 / 65535.0,
                        p.0[2] as f64 / 65535.0,
                    )
                })
                .collect(),
            other => {
                let buf = other.to_rgba16();
                buf.pixels()
                    .map(|p| {
                        luma709(
                            p.0[0] as f64 / 65535.0,
                            p.0[1] as f64 / 65535.0,
                            p.0[2] as f64 / 65535.0,
                        )
                    })
                    .collect()
            }
        };
        GrayImage::new(w, h, values)
    }

    /// Quantize intensities to `levels` uniform steps (e.g. 255 for 8-bit
    /// camera depth), clamping to `[0, 1]`.
    pub fn quantized(&self, levels: u32) -> GrayImage {
        let q = levels.max(1) as f64;
        let values = self
            .values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * q).round() / q)
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            values,
        }
    }

    /// Write as 16-bit grayscale PNG; quantization error is ≤ 1/131070.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
            self.width as u32,
            self.height as u32,
        );
        for (x, y, p) in buf.enumerate_pixels_mut() {
            let v = self.get(x as usize, y as usize).clamp(0.0, 1.0);
            p.0[0] = (v * 65535.0).round() as u16;
        }
        buf.save(path)
            .map_err(|e| Error::Image(format!("saving {}: {e}", path.display())))
    }

    /// Write as 8-bit grayscale PNG.
    pub fn save_png8(&self, path: &Path) -> Result<()> {
        let mut buf = image::ImageBuffer::<image::Luma<u8>, Vec<u8>>::new(
            self.width as u32,
            self.height as u32,
        );
        for (x, y, p) in buf.enumerate_pixels_mut() {
            let v = self.get(x as usize, y as usize).clamp(0.0, 1.0);
            p.0[0] = (v * 255.0).round() as u8;
        }
        buf.save(path)
            .map_err(|e| Error::Image(format!("saving {}: {e}", path.display())))
    }
}

/// Values and gradients tabulated on a tensor grid, row-major over
/// `ys × xs`.
pub struct GridEval {
    pub values: Vec<f64>,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

/// A smooth scalar surrogate of a pixel image, with analytic gradients.
pub trait GrayModel: Send + Sync {
    /// Inclusive pixel-coordinate bounds `(x_min, x_max, y_min, y_max)`.
    fn domain(&self) -> (f64, f64, f64, f64);

    fn eval(&self, x: f64, y: f64) -> Result<f64>;

    fn eval_gradient(&self, x: f64, y: f64) -> Result<[f64; 2]>;

    fn eval_with_gradient(&self, x: f64, y: f64) -> Result<(f64, [f64; 2])> {
        Ok((self.eval(x, y)?, self.eval_gradient(x, y)?))
    }

    /// Tabulate values and gradients on the tensor grid `xs × ys`.
    /// Separable models override this with a much faster factored path.
    fn eval_grid(&self, xs: &[f64], ys: &[f64]) -> Result<GridEval> {
        let mut values = Vec::with_capacity(xs.len() * ys.len());
        let mut grad_x = Vec::with_capacity(xs.len() * ys.len());
        let mut grad_y = Vec::with_capacity(xs.len() * ys.len());
        for &y in ys {
            for &x in xs {
                let (v, g) = self.eval_with_gradient(x, y)?;
                values.push(v);
                grad_x.push(g[0]);
                grad_y.push(g[1]);
            }
        }
        Ok(GridEval {
            values,
            grad_x,
            grad_y,
        })
    }

    fn check_domain(&self, x: f64, y: f64) -> Result<()> {
        let (x0, x1, y0, y1) = self.domain();
        if x < x0 || x > x1 || y < y0 || y > y1 {
            return Err(Error::OutOfDomain { x, y });
        }
        Ok(())
    }
}

/// Mode-truncation rule for the separated model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Keep exactly this many modes (clamped to the achievable rank).
    Rank(usize),
    /// Keep the fewest modes whose discarded tail has relative Frobenius
    /// norm at most this tolerance.
    RelTolerance(f64),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::RelTolerance(1e-4)
    }
}

/// Separation-of-variables grayscale model with cubic-spline factors.
pub struct SeparatedSplineModel {
    width: usize,
    height: usize,
    modes: Vec<(CubicSpline, CubicSpline)>,
    rel_truncation_error: f64,
}

/// Decompose the pixel matrix into a sum of separated modes and fit each 1D
/// factor with an order-4 interpolating spline.
///
/// The singular triplets come from the symmetric eigendecomposition of the
/// smaller Gram matrix; the discarded-tail energy controls the truncation.
pub fn decompose(image: &GrayImage, truncation: Truncation) -> Result<SeparatedSplineModel> {
    let (w, h) = (image.width, image.height);
    let f = DMatrix::<f64>::from_fn(h, w, |y, x| image.get(x, y));

    // Eigen-decompose the smaller Gram matrix.
    let x_side = w <= h;
    let gram = if x_side {
        f.transpose() * &f
    } else {
        &f * f.transpose()
    };
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lambdas: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .collect();
    let total: f64 = lambdas.iter().sum();
    let max_modes = lambdas.len();

    let mode_count = match truncation {
        Truncation::Rank(r) => r.clamp(1, max_modes),
        Truncation::RelTolerance(tol) => {
            if total <= 0.0 {
                1
            } else {
                let budget = (tol * tol * total).max(0.0);
                let mut tail = total;
                let mut m = 0;
                while m < max_modes && tail > budget {
                    tail -= lambdas[m];
                    m += 1;
                }
                m.max(1)
            }
        }
    };

    let mut modes = Vec::with_capacity(mode_count);
    let mut kept_energy = 0.0;
    for &idx in order.iter().take(mode_count) {
        let lambda = eig.eigenvalues[idx].max(0.0);
        let sigma = lambda.sqrt();
        if sigma <= 0.0 && !modes.is_empty() {
            break;
        }
        let v: DVector<f64> = eig.eigenvectors.column(idx).into();
        let (x_factor, y_factor) = if x_side {
            let fy = &f * &v; // length h
            if sigma > 0.0 {
                let root = sigma.sqrt();
                (v.scale(root), fy.unscale(root))
            } else {
                (v.scale(0.0), fy.scale(0.0))
            }
        } else {
            let fx = f.transpose() * &v; // length w
            if sigma > 0.0 {
                let root = sigma.sqrt();
                (fx.unscale(root), v.scale(root))
            } else {
                (fx.scale(0.0), v.scale(0.0))
            }
        };
        kept_energy += lambda;
        modes.push((
            CubicSpline::interpolating(0.0, 1.0, x_factor.as_slice()),
            CubicSpline::interpolating(0.0, 1.0, y_factor.as_slice()),
        ));
    }

    let rel_truncation_error = if total > 0.0 {
        ((total - kept_energy).max(0.0) / total).sqrt()
    } else {
        0.0
    };
    Ok(SeparatedSplineModel {
        width: w,
        height: h,
        modes,
        rel_truncation_error,
    })
}

impl SeparatedSplineModel {
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Relative Frobenius norm of the discarded singular-value tail.
    pub fn rel_truncation_error(&self) -> f64 {
        self.rel_truncation_error
    }

    /// Reconstruction at a grid point: `Σ_m f_x(x)·f_y(y)` with exact knot
    /// values (the splines interpolate).
    pub fn grid_value(&self, x: usize, y: usize) -> f64 {
        self.modes
            .iter()
            .map(|(fx, fy)| fx.knot_values()[x] * fy.knot_values()[y])
            .sum()
    }

    /// Serialize to a small versioned binary sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(b"CFEG");
        out.write_u32::<LittleEndian>(1).unwrap();
        out.write_u64::<LittleEndian>(self.width as u64).unwrap();
        out.write_u64::<LittleEndian>(self.height as u64).unwrap();
        out.write_f64::<LittleEndian>(self.rel_truncation_error)
            .unwrap();
        out.write_u64::<LittleEndian>(self.modes.len() as u64)
            .unwrap();
        let mut dump = |s: &CubicSpline| {
            out.write_f64::<LittleEndian>(s.x0()).unwrap();
            out.write_f64::<LittleEndian>(s.spacing()).unwrap();
            out.write_u64::<LittleEndian>(s.knot_values().len() as u64)
                .unwrap();
            for &v in s.knot_values() {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
            for &m in s.moments() {
                out.write_f64::<LittleEndian>(m).unwrap();
            }
        };
        for (fx, fy) in &self.modes {
            dump(fx);
            dump(fy);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.to_path_buf(), e))
    }

    pub fn load(path: &Path) -> Result<SeparatedSplineModel> {
        let data = std::fs::read(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        let mut r = std::io::Cursor::new(&data);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Image("truncated model file".into()))?;
        if &magic != b"CFEG" {
            return Err(Error::Image("not a grayscale model file".into()));
        }
        let bad = |_| Error::Image("truncated model file".into());
        let version = r.read_u32::<LittleEndian>().map_err(bad)?;
        if version != 1 {
            return Err(Error::Image(format!(
                "unsupported grayscale model version {version}"
            )));
        }
        let width = r.read_u64::<LittleEndian>().map_err(bad)? as usize;
        let height = r.read_u64::<LittleEndian>().map_err(bad)? as usize;
        let rel = r.read_f64::<LittleEndian>().map_err(bad)?;
        let count = r.read_u64::<LittleEndian>().map_err(bad)? as usize;
        let read_spline = |r: &mut std::io::Cursor<&Vec<u8>>| -> Result<CubicSpline> {
            let x0 = r.read_f64::<LittleEndian>().map_err(bad)?;
            let spacing = r.read_f64::<LittleEndian>().map_err(bad)?;
            let n = r.read_u64::<LittleEndian>().map_err(bad)? as usize;
            let mut values = vec![0.0; n];
            let mut moments = vec![0.0; n];
            for v in values.iter_mut() {
                *v = r.read_f64::<LittleEndian>().map_err(bad)?;
            }
            for m in moments.iter_mut() {
                *m = r.read_f64::<LittleEndian>().map_err(bad)?;
            }
            Ok(CubicSpline::from_parts(x0, spacing, values, moments))
        };
        let mut modes = Vec::with_capacity(count);
        for _ in 0..count {
            let fx = read_spline(&mut r)?;
            let fy = read_spline(&mut r)?;
            modes.push((fx, fy));
        }
        Ok(SeparatedSplineModel {
            width,
            height,
            modes,
            rel_truncation_error: rel,
        })
    }
}

impl GrayModel for SeparatedSplineModel {
    fn domain(&self) -> (f64, f64, f64, f64) {
        (
            0.0,
            (self.width - 1) as f64,
            0.0,
            (self.height - 1) as f64,
        )
    }

    fn eval(&self, x: f64, y: f64) -> Result<f64> {
        self.check_domain(x, y)?;
        Ok(self
            .modes
            .iter()
            .map(|(fx, fy)| fx.eval(x) * fy.eval(y))
            .sum())
    }

    fn eval_gradient(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        Ok(self.eval_with_gradient(x, y)?.1)
    }

    fn eval_with_gradient(&self, x: f64, y: f64) -> Result<(f64, [f64; 2])> {
        self.check_domain(x, y)?;
        let mut value = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (fx, fy) in &self.modes {
            let (vx, dx) = fx.eval_both(x);
            let (vy, dy) = fy.eval_both(y);
            value += vx * vy;
            gx += dx * vy;
            gy += vx * dy;
        }
        Ok((value, [gx, gy]))
    }

    /// Factored tensor-grid evaluation: tabulate each 1D factor on its axis
    /// and contract over modes as matrix products.
    fn eval_grid(&self, xs: &[f64], ys: &[f64]) -> Result<GridEval> {
        for &x in xs {
            self.check_domain(x, 0.0)?;
        }
        for &y in ys {
            self.check_domain(0.0, y)?;
        }
        let m = self.modes.len();
        let mut ax = DMatrix::<f64>::zeros(m, xs.len());
        let mut dax = DMatrix::<f64>::zeros(m, xs.len());
        let mut ay = DMatrix::<f64>::zeros(m, ys.len());
        let mut day = DMatrix::<f64>::zeros(m, ys.len());
        for (mode, (fx, fy)) in self.modes.iter().enumerate() {
            for (i, &x) in xs.iter().enumerate() {
                let (v, d) = fx.eval_both(x);
                ax[(mode, i)] = v;
                dax[(mode, i)] = d;
            }
            for (j, &y) in ys.iter().enumerate() {
                let (v, d) = fy.eval_both(y);
                ay[(mode, j)] = v;
                day[(mode, j)] = d;
            }
        }
        // Row-major over ys × xs: entry (j·|xs| + i) = Σ_m ay[m,j]·ax[m,i].
        let pack = |rows: &DMatrix<f64>, cols: &DMatrix<f64>| -> Vec<f64> {
            let grid = rows.transpose() * cols;
            let mut out = Vec::with_capacity(xs.len() * ys.len());
            for j in 0..ys.len() {
                for i in 0..xs.len() {
                    out.push(grid[(j, i)]);
                }
            }
            out
        };
        Ok(GridEval {
            values: pack(&ay, &ax),
            grad_x: pack(&ay, &dax),
            grad_y: pack(&day, &ax),
        })
    }
}

/// Convolution-element interpolation of the pixel lattice: every 1-pixel
/// cell is an element whose nodes are the surrounding pixels.
pub struct CfeGrayModel {
    grid: QuadMesh,
    patch_size: u32,
    width: usize,
    values: Vec<f64>,
    shapes: HashMap<CutSignature, CfeShapeEntry>,
}

struct CfeShapeEntry {
    element: CfeElement,
    offsets: Vec<(i32, i32)>,
}

impl CfeGrayModel {
    pub fn build(image: &GrayImage, params: CfeParams) -> Result<CfeGrayModel> {
        let s = params.patch_size();
        let zoi = ZoneOfInterest::new(0, 0, image.width as u32 - 1, image.height as u32 - 1);
        let grid = build_mesh(zoi, 1)?;
        let mut shapes = HashMap::new();
        for e in 0..grid.element_count() {
            let (ex, ey) = grid.element_grid(e);
            let sig = grid.cut_signature(ex, ey, s);
            if !shapes.contains_key(&sig) {
                let topo = build_patch_topology(s, sig)?;
                let element = CfeElement::build(&params, topo)?;
                let offsets = element.topology().present_offsets().collect();
                shapes.insert(sig, CfeShapeEntry { element, offsets });
            }
        }
        Ok(CfeGrayModel {
            grid,
            patch_size: s,
            width: image.width,
            values: image.values.clone(),
            shapes,
        })
    }

    fn entry_for(&self, x: f64, y: f64) -> Result<(&CfeShapeEntry, (u32, u32), [f64; 2])> {
        let (e, xi) = self.grid.locate(x, y)?;
        let (ex, ey) = self.grid.element_grid(e);
        let sig = self.grid.cut_signature(ex, ey, self.patch_size);
        let entry = self
            .shapes
            .get(&sig)
            .expect("all signatures are prebuilt");
        Ok((entry, (ex, ey), xi))
    }
}

impl GrayModel for CfeGrayModel {
    fn domain(&self) -> (f64, f64, f64, f64) {
        (
            0.0,
            self.grid.zoi.width as f64,
            0.0,
            self.grid.zoi.height as f64,
        )
    }

    fn eval(&self, x: f64, y: f64) -> Result<f64> {
        Ok(self.eval_with_gradient(x, y)?.0)
    }

    fn eval_gradient(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        Ok(self.eval_with_gradient(x, y)?.1)
    }

    fn eval_with_gradient(&self, x: f64, y: f64) -> Result<(f64, [f64; 2])> {
        let (entry, (ex, ey), xi) = self.entry_for(x, y)?;
        let (values, grads) = entry.element.eval(xi);
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for (k, &(ox, oy)) in entry.offsets.iter().enumerate() {
            // Lattice offsets are odd; pixel index = element index + (o+1)/2.
            let px = (ex as i64 + (ox as i64 + 1) / 2) as usize;
            let py = (ey as i64 + (oy as i64 + 1) / 2) as usize;
            let f = self.values[py * self.width + px];
            v += values[k] * f;
            // One-pixel cells: dξ/dx = 2.
            g[0] += grads[k][0] * 2.0 * f;
            g[1] += grads[k][1] * 2.0 * f;
        }
        Ok((v, g))
    }
}
