//! Structured triangulations of the unit square and piecewise-affine
//! deformation fields on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{Mat2, Vec2};

/// Which diagonal splits each grid cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagonal {
    /// From the lower-left to the upper-right corner.
    #[default]
    Main,
    /// From the upper-left to the lower-right corner.
    Anti,
}

/// `nx × ny` cells on `[0, 1]²`, two triangles per cell, vertices numbered
/// row by row from the bottom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub diagonal: Diagonal,
}

/// Constant shape data of one triangle.
#[derive(Clone, Copy, Debug)]
pub struct TriangleGeom {
    pub vertices: [usize; 3],
    /// Gradients of the three hat functions on this triangle.
    pub shape_grads: [Vec2; 3],
    pub area: f64,
}

impl TriangleGeom {
    pub fn gradient(&self, deformed: &[Vec2]) -> Mat2 {
        self.gradient_from_corners([
            deformed[self.vertices[0]],
            deformed[self.vertices[1]],
            deformed[self.vertices[2]],
        ])
    }

    /// `Σ u_k ⊗ ∇φ_k`.
    pub fn gradient_from_corners(&self, corners: [Vec2; 3]) -> Mat2 {
        corners
            .iter()
            .zip(self.shape_grads.iter())
            .fold(Mat2::ZERO, |acc, (u, g)| acc + Mat2::outer(*u, *g))
    }
}

impl Mesh {
    pub fn new(nx: usize, ny: usize, diagonal: Diagonal) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!("grid must be at least 1×1, got {nx}×{ny}")));
        }
        Ok(Mesh { nx, ny, diagonal })
    }

    pub fn n_vertices(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_triangles(&self) -> usize {
        2 * self.nx * self.ny
    }

    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn vertex_ij(&self, v: usize) -> (usize, usize) {
        (v % (self.nx + 1), v / (self.nx + 1))
    }

    pub fn vertex_position(&self, v: usize) -> Vec2 {
        let (i, j) = self.vertex_ij(v);
        [i as f64 / self.nx as f64, j as f64 / self.ny as f64]
    }

    pub fn vertex_positions(&self) -> Vec<Vec2> {
        (0..self.n_vertices()).map(|v| self.vertex_position(v)).collect()
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        let (i, j) = self.vertex_ij(v);
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// Counter-clockwise triangles, cells in row-major order.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::with_capacity(self.n_triangles());
        for j in 0..self.ny {
            for i in 0..self.nx {
                let v00 = self.vertex_index(i, j);
                let v10 = self.vertex_index(i + 1, j);
                let v01 = self.vertex_index(i, j + 1);
                let v11 = self.vertex_index(i + 1, j + 1);
                match self.diagonal {
                    Diagonal::Main => {
                        out.push([v00, v10, v11]);
                        out.push([v00, v11, v01]);
                    }
                    Diagonal::Anti => {
                        out.push([v00, v10, v01]);
                        out.push([v10, v11, v01]);
                    }
                }
            }
        }
        out
    }

    pub fn geometry(&self) -> Vec<TriangleGeom> {
        self.triangles()
            .into_iter()
            .map(|t| triangle_geom(t, &self.vertex_positions_for(t)))
            .collect()
    }

    fn vertex_positions_for(&self, t: [usize; 3]) -> [Vec2; 3] {
        [
            self.vertex_position(t[0]),
            self.vertex_position(t[1]),
            self.vertex_position(t[2]),
        ]
    }
}

pub fn triangle_geom(vertices: [usize; 3], p: &[Vec2; 3]) -> TriangleGeom {
    let e1 = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
    let e2 = [p[2][0] - p[0][0], p[2][1] - p[0][1]];
    let d = Mat2::new(e1[0], e2[0], e1[1], e2[1]);
    let det = d.det();
    let inv = d.cof().transpose() * (1.0 / det);
    let g1 = inv.row(0);
    let g2 = inv.row(1);
    TriangleGeom {
        vertices,
        shape_grads: [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2],
        area: 0.5 * det.abs(),
    }
}

/// Continuous piecewise-affine map of the unit square, with the affine
/// boundary data `u = R x + b` it is meant to satisfy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationField {
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "R")]
    pub r: Mat2,
    pub b: Vec2,
    pub vertices: Vec<Vec2>,
    pub deformed: Vec<Vec2>,
    #[serde(default)]
    pub diagonal: Diagonal,
    /// Width of the boundary blend layer, when the field has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
}

impl DeformationField {
    /// `u(x) = f(x)` at every vertex.
    pub fn from_fn<F: Fn(Vec2) -> Vec2>(
        mesh: Mesh,
        r: Mat2,
        b: Vec2,
        f: F,
    ) -> DeformationField {
        let vertices = mesh.vertex_positions();
        let deformed = vertices.iter().map(|x| f(*x)).collect();
        DeformationField {
            nx: mesh.nx,
            ny: mesh.ny,
            r,
            b,
            vertices,
            deformed,
            diagonal: mesh.diagonal,
            cutoff: None,
        }
    }

    /// The affine map `u = R x + b` itself.
    pub fn affine(mesh: Mesh, r: Mat2, b: Vec2) -> DeformationField {
        DeformationField::from_fn(mesh, r, b, |x| affine_value(&r, b, x))
    }

    pub fn identity(mesh: Mesh) -> DeformationField {
        DeformationField::affine(mesh, Mat2::IDENTITY, [0.0, 0.0])
    }

    pub fn mesh(&self) -> Mesh {
        Mesh {
            nx: self.nx,
            ny: self.ny,
            diagonal: self.diagonal,
        }
    }

    pub fn boundary_value(&self, x: Vec2) -> Vec2 {
        affine_value(&self.r, self.b, x)
    }

    /// Per-triangle gradients in mesh order.
    pub fn gradients(&self) -> Vec<Mat2> {
        self.mesh()
            .geometry()
            .iter()
            .map(|t| t.gradient(&self.deformed))
            .collect()
    }

    /// `max |u(x) - (R x + b)|` over boundary vertices.
    pub fn boundary_error(&self) -> f64 {
        let mesh = self.mesh();
        (0..mesh.n_vertices())
            .filter(|&v| mesh.is_boundary(v))
            .map(|v| {
                let target = self.boundary_value(self.vertices[v]);
                let u = self.deformed[v];
                (u[0] - target[0]).hypot(u[1] - target[1])
            })
            .fold(0.0, f64::max)
    }

    /// Overwrite boundary vertices with the boundary data.
    pub fn pin_boundary(&mut self) {
        let mesh = self.mesh();
        for v in 0..mesh.n_vertices() {
            if mesh.is_boundary(v) {
                self.deformed[v] = self.boundary_value(self.vertices[v]);
            }
        }
    }

    /// Triangles lying entirely outside the blend layer. Every triangle
    /// counts when there is no layer.
    pub fn core_mask(&self) -> Vec<bool> {
        let mesh = self.mesh();
        let eps = self.cutoff.unwrap_or(0.0);
        mesh.triangles()
            .iter()
            .map(|t| {
                t.iter().all(|&v| {
                    let x = self.vertices[v];
                    boundary_distance(x) >= eps - 1e-12
                })
            })
            .collect()
    }

    /// Structural checks after loading from disk.
    pub fn validate(&self) -> Result<()> {
        let mesh = Mesh::new(self.nx, self.ny, self.diagonal)?;
        let n = mesh.n_vertices();
        if self.vertices.len() != n || self.deformed.len() != n {
            return Err(Error::Format(format!(
                "expected {n} vertices for a {}×{} grid, got {} reference and {} deformed",
                self.nx,
                self.ny,
                self.vertices.len(),
                self.deformed.len()
            )));
        }
        for (v, x) in self.vertices.iter().enumerate() {
            let e = mesh.vertex_position(v);
            if (x[0] - e[0]).abs() > 1e-12 || (x[1] - e[1]).abs() > 1e-12 {
                return Err(Error::Format(format!(
                    "reference vertex {v} at {x:?} does not match the structured grid"
                )));
            }
        }
        if self.deformed.iter().flatten().any(|c| !c.is_finite()) || !self.r.is_finite() {
            return Err(Error::Format("non-finite entries in field".into()));
        }
        if let Some(eps) = self.cutoff {
            if !(eps > 0.0 && eps < 0.5) {
                return Err(Error::Format(format!("cutoff {eps} outside (0, 1/2)")));
            }
        }
        Ok(())
    }
}

pub fn affine_value(r: &Mat2, b: Vec2, x: Vec2) -> Vec2 {
    let rx = r.apply(x);
    [rx[0] + b[0], rx[1] + b[1]]
}

/// Distance from a point of the unit square to its boundary.
pub fn boundary_distance(x: Vec2) -> f64 {
    x[0].min(1.0 - x[0]).min(x[1]).min(1.0 - x[1])
}
