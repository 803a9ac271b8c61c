//! Regular quadrilateral mesh over the zone of interest, global node
//! numbering, and per-element patch connectivity.
//!
//! Pixel convention: pixel centers sit at integer coordinates, the zone
//! origin coincides with a mesh node, and the y axis points down (image
//! convention). Strain components follow the same axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::{CutSignature, ElementKind};

/// Rectangular image subregion the correlation is run on, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneOfInterest {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl ZoneOfInterest {
    pub fn new(x0: u32, y0: u32, width: u32, height: u32) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    /// Centered zone of the given size inside a `width × height` image.
    pub fn centered(image_width: u32, image_height: u32, width: u32, height: u32) -> Result<Self> {
        if width > image_width || height > image_height {
            return Err(Error::Domain(format!(
                "zone {width}×{height} does not fit a {image_width}×{image_height} image"
            )));
        }
        Ok(Self {
            x0: (image_width - width) / 2,
            y0: (image_height - height) / 2,
            width,
            height,
        })
    }

    /// The zone spans pixel coordinates `[x0, x0+width] × [y0, y0+height]`;
    /// the far corner must land on a pixel center of the image.
    pub fn fits_image(&self, image_width: usize, image_height: usize) -> bool {
        image_width > 0
            && image_height > 0
            && ((self.x0 + self.width) as usize) < image_width
            && ((self.y0 + self.height) as usize) < image_height
    }

    pub fn center(&self) -> [f64; 2] {
        [
            self.x0 as f64 + self.width as f64 / 2.0,
            self.y0 as f64 + self.height as f64 / 2.0,
        ]
    }
}

/// Regular quad mesh: `nx × ny` elements of size `h` pixels, corner nodes on
/// an `(nx+1) × (ny+1)` lattice ordered row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadMesh {
    pub zoi: ZoneOfInterest,
    pub element_size: u32,
    pub nx: u32,
    pub ny: u32,
}

/// Mesh the zone with elements of size `h`; `h` must divide both sides.
pub fn build_mesh(zoi: ZoneOfInterest, h: u32) -> Result<QuadMesh> {
    if h == 0 {
        return Err(Error::Config("element size must be positive".into()));
    }
    if zoi.width % h != 0 || zoi.height % h != 0 {
        return Err(Error::Config(format!(
            "element size {h} does not divide the {}×{} zone of interest; \
             adjust the zone or the element size",
            zoi.width, zoi.height
        )));
    }
    if zoi.width == 0 || zoi.height == 0 {
        return Err(Error::Config("zone of interest is empty".into()));
    }
    Ok(QuadMesh {
        zoi,
        element_size: h,
        nx: zoi.width / h,
        ny: zoi.height / h,
    })
}

impl QuadMesh {
    pub fn node_count(&self) -> usize {
        ((self.nx + 1) * (self.ny + 1)) as usize
    }

    pub fn element_count(&self) -> usize {
        (self.nx * self.ny) as usize
    }

    /// Row-major corner-node id.
    pub fn node_id(&self, i: u32, j: u32) -> usize {
        (j * (self.nx + 1) + i) as usize
    }

    pub fn node_coord(&self, id: usize) -> [f64; 2] {
        let i = id as u32 % (self.nx + 1);
        let j = id as u32 / (self.nx + 1);
        [
            (self.zoi.x0 + i * self.element_size) as f64,
            (self.zoi.y0 + j * self.element_size) as f64,
        ]
    }

    pub fn element_index(&self, ex: u32, ey: u32) -> usize {
        (ey * self.nx + ex) as usize
    }

    pub fn element_grid(&self, e: usize) -> (u32, u32) {
        (e as u32 % self.nx, e as u32 / self.nx)
    }

    /// Pixel-space center of an element.
    pub fn element_center(&self, e: usize) -> [f64; 2] {
        let (ex, ey) = self.element_grid(e);
        let h = self.element_size as f64;
        [
            self.zoi.x0 as f64 + (ex as f64 + 0.5) * h,
            self.zoi.y0 as f64 + (ey as f64 + 0.5) * h,
        ]
    }

    /// Map a pixel-space point to its containing element and local
    /// coordinate in `[−1,1]²`. Points exactly on an inter-element edge go
    /// to the lower-index element; points outside the zone are an error.
    pub fn locate(&self, x: f64, y: f64) -> Result<(usize, [f64; 2])> {
        let h = self.element_size as f64;
        let fx = (x - self.zoi.x0 as f64) / h;
        let fy = (y - self.zoi.y0 as f64) / h;
        if fx < 0.0 || fy < 0.0 || fx > self.nx as f64 || fy > self.ny as f64 {
            return Err(Error::OutOfDomain { x, y });
        }
        let ex = (fx.ceil() as i64 - 1).clamp(0, self.nx as i64 - 1) as u32;
        let ey = (fy.ceil() as i64 - 1).clamp(0, self.ny as i64 - 1) as u32;
        let xi = 2.0 * (fx - ex as f64) - 1.0;
        let eta = 2.0 * (fy - ey as f64) - 1.0;
        Ok((self.element_index(ex, ey), [xi, eta]))
    }

    /// Boundary cut signature for a convolution element at grid position
    /// `(ex, ey)` with patch size `s`.
    pub fn cut_signature(&self, ex: u32, ey: u32, s: u32) -> CutSignature {
        CutSignature {
            left: s.saturating_sub(ex),
            right: (ex + s + 1).saturating_sub(self.nx),
            bottom: s.saturating_sub(ey),
            top: (ey + s + 1).saturating_sub(self.ny),
        }
    }
}

/// Element-to-global-node connectivity for one element family on a mesh.
///
/// For convolution elements each row lists the element's (possibly reduced)
/// patch, in the same order as the topology's surviving offsets; Q4 rows are
/// corner quadruples, Q8 rows corner-then-midside octets on the refined node
/// numbering.
#[derive(Debug, Clone)]
pub struct Connectivity {
    pub kind: ElementKind,
    pub element_nodes: Vec<Vec<u32>>,
    pub element_sig: Vec<CutSignature>,
    pub node_count: usize,
    pub node_coords: Vec<[f64; 2]>,
}

impl Connectivity {
    pub fn signatures(&self) -> Vec<CutSignature> {
        let mut sigs: Vec<CutSignature> = self.element_sig.clone();
        sigs.sort_by_key(|s| (s.left, s.right, s.bottom, s.top));
        sigs.dedup();
        sigs
    }
}

/// Per-element patch connectivity for convolution elements of patch size `s`
/// (`s = 0` degenerates to the Q4 corner support).
pub fn patch_connectivity(mesh: &QuadMesh, s: u32) -> Connectivity {
    patch_connectivity_kind(
        mesh,
        s,
        if s == 0 {
            ElementKind::Q4
        } else {
            ElementKind::Cfe(crate::shape::CfeParams::default())
        },
    )
}

pub(crate) fn patch_connectivity_kind(mesh: &QuadMesh, s: u32, kind: ElementKind) -> Connectivity {
    let mut element_nodes = Vec::with_capacity(mesh.element_count());
    let mut element_sig = Vec::with_capacity(mesh.element_count());
    for e in 0..mesh.element_count() {
        let (ex, ey) = mesh.element_grid(e);
        let sig = mesh.cut_signature(ex, ey, s);
        let mut nodes = Vec::new();
        // Lattice rows j (η outermost) matching the topology offset order.
        for j in -(s as i64)..=(s as i64 + 1) {
            for i in -(s as i64)..=(s as i64 + 1) {
                let gi = ex as i64 + i;
                let gj = ey as i64 + j;
                if gi >= 0 && gi <= mesh.nx as i64 && gj >= 0 && gj <= mesh.ny as i64 {
                    nodes.push(mesh.node_id(gi as u32, gj as u32) as u32);
                }
            }
        }
        element_nodes.push(nodes);
        element_sig.push(sig);
    }
    let node_coords = (0..mesh.node_count()).map(|id| mesh.node_coord(id)).collect();
    Connectivity {
        kind,
        element_nodes,
        element_sig,
        node_count: mesh.node_count(),
        node_coords,
    }
}

/// Q8 connectivity on the refined lattice (corner nodes plus edge midpoints;
/// cell centers carry no node). Node ids run row-major over the half-step
/// lattice, skipping cell centers.
pub fn q8_connectivity(mesh: &QuadMesh) -> Connectivity {
    let (rx, ry) = (2 * mesh.nx + 1, 2 * mesh.ny + 1);
    let mut id_of = vec![u32::MAX; (rx * ry) as usize];
    let mut node_coords = Vec::new();
    let mut count = 0u32;
    let half = mesh.element_size as f64 / 2.0;
    for j in 0..ry {
        for i in 0..rx {
            if i % 2 == 1 && j % 2 == 1 {
                continue; // cell center
            }
            id_of[(j * rx + i) as usize] = count;
            node_coords.push([
                mesh.zoi.x0 as f64 + i as f64 * half,
                mesh.zoi.y0 as f64 + j as f64 * half,
            ]);
            count += 1;
        }
    }
    let refined = |i: u32, j: u32| id_of[(j * rx + i) as usize];
    let mut element_nodes = Vec::with_capacity(mesh.element_count());
    for e in 0..mesh.element_count() {
        let (ex, ey) = mesh.element_grid(e);
        let (ci, cj) = (2 * ex, 2 * ey);
        // Corners (−1,−1),(1,−1),(1,1),(−1,1) then midsides (0,−1),(1,0),(0,1),(−1,0).
        element_nodes.push(vec![
            refined(ci, cj),
            refined(ci + 2, cj),
            refined(ci + 2, cj + 2),
            refined(ci, cj + 2),
            refined(ci + 1, cj),
            refined(ci + 2, cj + 1),
            refined(ci + 1, cj + 2),
            refined(ci, cj + 1),
        ]);
    }
    Connectivity {
        kind: ElementKind::Q8,
        element_nodes,
        element_sig: vec![CutSignature::FULL; mesh.element_count()],
        node_count: count as usize,
        node_coords,
    }
}

/// Connectivity for any element family.
pub fn build_connectivity(mesh: &QuadMesh, kind: &ElementKind) -> Connectivity {
    match kind {
        ElementKind::Q4 => {
            let mut conn = patch_connectivity_kind(mesh, 0, ElementKind::Q4);
            // Reorder the row-major corner quadruple to the Q4 convention.
            for nodes in &mut conn.element_nodes {
                nodes.swap(2, 3);
            }
            conn
        }
        ElementKind::Q8 => q8_connectivity(mesh),
        ElementKind::Cfe(params) => {
            patch_connectivity_kind(mesh, params.patch_size(), ElementKind::Cfe(*params))
        }
    }
}

/// Export the mesh as CSV for debugging: a node list followed by element
/// connectivity rows.
pub fn export_mesh_csv(
    mesh: &QuadMesh,
    conn: &Connectivity,
    path: &std::path::Path,
) -> Result<()> {
    use std::io::Write;
    let mut out = String::new();
    out.push_str("node,x,y\n");
    for (id, c) in conn.node_coords.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", id, c[0], c[1]));
    }
    out.push_str("element,nodes\n");
    for (e, nodes) in conn.element_nodes.iter().enumerate() {
        let list: Vec<String> = nodes.iter().map(|n| n.to_string()).collect();
        out.push_str(&format!("{},{}\n", e, list.join(" ")));
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.to_path_buf(), e))?;
    let _ = mesh;
    Ok(())
}
