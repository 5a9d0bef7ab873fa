//! Piecewise-affine laminate deformations of the unit square with affine
//! boundary data.
//!
//! A depth-1 node `R = ζ A + (1 - ζ) B`, `A - B = a ⊗ n`, becomes
//!
//! ```text
//! u(x) = R x + b + |n|∞ a h(σ),   σ = x·n / |n|∞
//! ```
//!
//! where `h` is a zero-mean sawtooth of period `1/N` with slopes `1 - ζ`
//! (fraction `ζ`) and `-ζ`. Measuring the period in `σ` puts `N` periods
//! across the square along the dominant component of `n`; on a mesh whose
//! cell diagonals are parallel to the interfaces every triangle then sits
//! inside a single band. Depth-2 nodes nest a period-`1/N²` sawtooth inside
//! each outer band, ramped to zero at the band edges so the map stays
//! continuous. A blend layer of width `ε` mixes positions linearly toward
//! `R x + b`, which pins the boundary exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::StoredEnergy;
use crate::error::{Error, Result};
use crate::matcore::{norm2, Vec2};
use crate::mesh::{affine_value, boundary_distance, Diagonal, Mesh};
use crate::numeric::pairwise_sum;
use crate::wellsgeo::{dist2_to_k, LaminateTree, TwoWellParams, Well};

pub use crate::mesh::DeformationField;

/// Zero-mean sawtooth with slope `1 - ζ` on the first `ζ` of each period
/// and `-ζ` on the rest.
fn sawtooth(sigma: f64, period: f64, zeta: f64) -> f64 {
    let phase = (sigma / period).rem_euclid(1.0);
    if phase < zeta {
        period * (1.0 - zeta) * phase
    } else {
        period * zeta * (1.0 - phase)
    }
}

fn inf_norm(n: Vec2) -> f64 {
    n[0].abs().max(n[1].abs())
}

/// Laminate displacement `u - (R x + b)` of a tree node at `x`.
fn oscillation(tree: &LaminateTree, x: Vec2, period: f64) -> Vec2 {
    let LaminateTree::Node {
        zeta, a, n, children, ..
    } = tree
    else {
        return [0.0, 0.0];
    };
    let scale = inf_norm(*n);
    let sigma = (x[0] * n[0] + x[1] * n[1]) / scale;
    let h = sawtooth(sigma, period, *zeta);
    let mut u = [scale * a[0] * h, scale * a[1] * h];

    let inner_period = period * period;
    if children.iter().all(|c| matches!(c, LaminateTree::Leaf { .. })) {
        return u;
    }
    let phase = (sigma / period).rem_euclid(1.0) * period;
    let (child, start, end) = if phase < zeta * period {
        (&children[0], 0.0, zeta * period)
    } else {
        (&children[1], zeta * period, period)
    };
    if matches!(child, LaminateTree::Node { .. }) {
        let ramp = inner_period.min(0.25 * (end - start));
        let cut = ((phase - start) / ramp).min((end - phase) / ramp).clamp(0.0, 1.0);
        let inner = oscillation(child, x, inner_period);
        u[0] += cut * inner[0];
        u[1] += cut * inner[1];
    }
    u
}

/// Mesh diagonal parallel (when possible) to the outer interfaces.
pub fn aligned_diagonal(tree: &LaminateTree) -> Diagonal {
    match tree {
        LaminateTree::Node { n, .. } if n[0] * n[1] > 0.0 => Diagonal::Anti,
        _ => Diagonal::Main,
    }
}

/// Grid whose cell diagonals follow the outer interfaces when the normal
/// has a small rational slope, so that depth-1 bands are resolved exactly;
/// `4N × 4N` otherwise and `8N² × 8N²` for depth-2 trees.
pub fn suggested_grid(tree: &LaminateTree, frequency: usize) -> (usize, usize) {
    let n = frequency.max(1);
    let LaminateTree::Node { n: normal, .. } = tree else {
        return (n, n);
    };
    if tree.depth() > 1 {
        return (8 * n * n, 8 * n * n);
    }
    let (a, b) = (normal[0].abs(), normal[1].abs());
    let scale = a.max(b);
    if b <= 1e-12 * scale || a <= 1e-12 * scale {
        return (n, n);
    }
    for q in 1..=4usize {
        for p in 1..=8usize {
            // ny / nx = |n2 / n1| puts the diagonal along the interfaces
            if (b * q as f64 - a * p as f64).abs() <= 1e-9 * scale {
                return (q * n, p * n);
            }
        }
    }
    (4 * n, 4 * n)
}

/// Laminate field realizing `tree` at frequency `N`, blended over a layer
/// of width `cutoff` to the boundary data `u = R x + offset`, `R` the root
/// matrix.
pub fn build_laminate_field(
    tree: &LaminateTree,
    frequency: usize,
    cutoff: f64,
    nx: usize,
    ny: usize,
) -> Result<DeformationField> {
    build_laminate_field_with_offset(tree, frequency, cutoff, nx, ny, [0.0, 0.0])
}

pub fn build_laminate_field_with_offset(
    tree: &LaminateTree,
    frequency: usize,
    cutoff: f64,
    nx: usize,
    ny: usize,
    offset: Vec2,
) -> Result<DeformationField> {
    if frequency == 0 {
        return Err(Error::Config("frequency must be ≥ 1".into()));
    }
    if nx == 0 || ny == 0 || nx % frequency != 0 || ny % frequency != 0 {
        return Err(Error::Config(format!(
            "grid {nx}×{ny} must be a nonzero multiple of the frequency {frequency}"
        )));
    }
    if !(cutoff > 0.0 && cutoff < 0.5) {
        return Err(Error::Config(format!("cutoff must lie in (0, 1/2), got {cutoff}")));
    }
    if tree.depth() > 2 {
        return Err(Error::Config(format!("laminate depth {} exceeds 2", tree.depth())));
    }
    if let LaminateTree::Node { n, .. } = tree {
        if norm2(*n) == 0.0 {
            return Err(Error::Config("laminate normal is zero".into()));
        }
    }
    let mesh = Mesh::new(nx, ny, aligned_diagonal(tree))?;
    let r = tree.matrix();
    let period = 1.0 / frequency as f64;
    let mut field = DeformationField::from_fn(mesh, r, offset, |x| {
        let base = affine_value(&r, offset, x);
        let osc = oscillation(tree, x, period);
        let w = (1.0 - boundary_distance(x) / cutoff).max(0.0);
        [base[0] + (1.0 - w) * osc[0], base[1] + (1.0 - w) * osc[1]]
    });
    field.cutoff = Some(cutoff);
    field.pin_boundary();
    Ok(field)
}

/// Per-triangle gradient statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientStats {
    pub triangles: usize,
    /// Fraction of triangles whose gradient is within `tol` of `K`.
    pub fraction_in_k: f64,
    /// `(∫ dist²(∇u, K))^{1/2}`.
    pub l2_dist_to_k: f64,
    /// Fractions of triangles nearest to `SO(2)` and to `SO(2)H`.
    pub well_histogram: [f64; 2],
    pub det_min: f64,
    pub det_max: f64,
    /// Determinant range over triangles outside the blend layer.
    pub core_det_min: f64,
    pub core_det_max: f64,
    pub core_triangles: usize,
    pub boundary_error: f64,
}

pub fn field_gradient_stats(field: &DeformationField, params: &TwoWellParams, tol: f64) -> GradientStats {
    let geo = field.mesh().geometry();
    let core = field.core_mask();
    let mut in_k = 0usize;
    let mut hist = [0usize; 2];
    let mut weighted = Vec::with_capacity(geo.len());
    let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (t, is_core) in geo.iter().zip(core.iter()) {
        let g = t.gradient(&field.deformed);
        let (d2, well) = dist2_to_k(&g, params);
        if d2.sqrt() <= tol {
            in_k += 1;
        }
        hist[well.index()] += 1;
        weighted.push(t.area * d2);
        let det = g.det();
        dmin = dmin.min(det);
        dmax = dmax.max(det);
        if *is_core {
            cmin = cmin.min(det);
            cmax = cmax.max(det);
        }
    }
    let n = geo.len() as f64;
    GradientStats {
        triangles: geo.len(),
        fraction_in_k: in_k as f64 / n,
        l2_dist_to_k: pairwise_sum(&weighted).sqrt(),
        well_histogram: [hist[0] as f64 / n, hist[1] as f64 / n],
        det_min: dmin,
        det_max: dmax,
        core_det_min: cmin,
        core_det_max: cmax,
        core_triangles: core.iter().filter(|c| **c).count(),
        boundary_error: field.boundary_error(),
    }
}

/// `∫ F(∇u)`, exact for piecewise-affine `u`.
pub fn field_energy(field: &DeformationField, model: &dyn StoredEnergy) -> f64 {
    let terms: Vec<f64> = field
        .mesh()
        .geometry()
        .iter()
        .map(|t| t.area * model.eval(&t.gradient(&field.deformed)))
        .collect();
    pairwise_sum(&terms)
}

impl DeformationField {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: DeformationField = serde_json::from_str(s)?;
        f.validate()?;
        Ok(f)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        DeformationField::from_json(&std::fs::read_to_string(path)?)
    }
}

const SVG_SIZE: f64 = 800.0;
const WELL_COLORS: [&str; 2] = ["#4c78a8", "#f58518"];

/// Deformed mesh lines over triangles filled by nearest well. The unit
/// square maps onto an 800×800 canvas with `y` pointing up.
pub fn field_to_svg(field: &DeformationField, params: &TwoWellParams) -> String {
    let mesh = field.mesh();
    let px = |p: Vec2| (p[0] * SVG_SIZE, (1.0 - p[1]) * SVG_SIZE);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="800" viewBox="0 0 800 800">"#
    );
    let _ = writeln!(s, r#"<g stroke="none">"#);
    for t in mesh.geometry() {
        let g = t.gradient(&field.deformed);
        let well: Well = dist2_to_k(&g, params).1;
        let pts: Vec<String> = t
            .vertices
            .iter()
            .map(|&v| {
                let (x, y) = px(field.deformed[v]);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{}"/>"#,
            pts.join(" "),
            WELL_COLORS[well.index()]
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g fill="none" stroke="#222" stroke-width="0.4">"##);
    let mut line = |ids: Vec<usize>| {
        let pts: Vec<String> = ids
            .into_iter()
            .map(|v| {
                let (x, y) = px(field.deformed[v]);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}"/>"#, pts.join(" "));
    };
    for j in 0..=mesh.ny {
        line((0..=mesh.nx).map(|i| mesh.vertex_index(i, j)).collect());
    }
    for i in 0..=mesh.nx {
        line((0..=mesh.ny).map(|j| mesh.vertex_index(i, j)).collect());
    }
    s.push_str("</g>\n</svg>\n");
    s
}
