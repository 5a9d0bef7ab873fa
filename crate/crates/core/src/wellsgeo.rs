//! Geometry of rotation cosets, the two-well set `K = SO(2) ∪ SO(2)H` and
//! its hulls.
//!
//! Hull points are written `X = C(x) + C(y) H` with `H = diag(λ, μ)`,
//! `λμ = 1`. Then `X ∈ K^c` iff `|x| + |y| ≤ 1`, and
//! `det X = |x|² + |y|² + (λ + μ)⟨x, y⟩`, so the minimizing set
//! `K^c ∩ SL(2)` is cut out by that quadratic being one.
//!
//! Boundary points of the minimizing set (`|x| + |y| = 1`) are exactly the
//! first-order laminates between rank-one connected pairs of `K`; interior
//! points are reached by one more rank-one split along a line that stays in
//! `SL(2)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{
    dist2_to_coset, dot2, nearest_in_coset, norm2, Mat2, Mat3, Vec2, CONFORMAL_ZERO,
};
use crate::numeric::bisect;

pub const UNIMODULAR_TOL: f64 = 1e-10;
pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-9;
pub const DEFAULT_LEAF_TOL: f64 = 1e-10;
/// Tolerance on reconstruction, rank-one splits and leaf distances of a
/// decomposition.
pub const DECOMPOSITION_TOL: f64 = 1e-8;
pub const DIRECTION_SCAN: usize = 720;

/// `H = diag(λ, μ)` with `0 < λ < 1 < μ = 1/λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoWellParams {
    pub lambda: f64,
    pub mu: f64,
}

impl TwoWellParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Config(format!(
                "lambda must lie in (0, 1), got {lambda}"
            )));
        }
        Ok(TwoWellParams {
            lambda,
            mu: 1.0 / lambda,
        })
    }

    pub fn h(&self) -> Mat2 {
        Mat2::diag(self.lambda, self.mu)
    }

    pub fn representative(&self, well: Well) -> Mat2 {
        match well {
            Well::Rotations => Mat2::IDENTITY,
            Well::Stretched => self.h(),
        }
    }

    /// `cos θ* = 2 / (λ + μ)`: the angle between rank-one connected
    /// partners of the two wells.
    pub fn connection_angle(&self) -> f64 {
        (2.0 / (self.lambda + self.mu)).acos()
    }

    /// `(I + R_θ H) / 2` with `θ` the positive connection angle: the
    /// midpoint of a rank-one segment between the wells.
    pub fn midpoint(&self) -> Mat2 {
        (Mat2::IDENTITY + Mat2::rotation(self.connection_angle()) * self.h()) * 0.5
    }
}

impl Default for TwoWellParams {
    fn default() -> Self {
        TwoWellParams::new(0.5).expect("0.5 is a valid lambda")
    }
}

/// Which coset of `K` a matrix belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Well {
    #[serde(rename = "so2")]
    Rotations,
    #[serde(rename = "so2h")]
    Stretched,
}

impl Well {
    pub fn opposite(self) -> Well {
        match self {
            Well::Rotations => Well::Stretched,
            Well::Stretched => Well::Rotations,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Well::Rotations => 0,
            Well::Stretched => 1,
        }
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    } else if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

fn check_unimodular(q: &Mat2, name: &str) -> Result<()> {
    if !q.is_finite() || (q.det() - 1.0).abs() > UNIMODULAR_TOL {
        return Err(Error::Domain(format!(
            "{name} must have determinant 1, got {}",
            q.det()
        )));
    }
    Ok(())
}

/// Rotation angles connecting `SO(2)Q1` to `Q2` by a rank-one matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOneConnection {
    pub angles: Vec<f64>,
    /// The cosets coincide: the single angle satisfies `R_θ Q1 = Q2`.
    pub degenerate: bool,
}

/// All `θ` with `det(R_θ Q1 - Q2) = 0`.
///
/// With `c` the conformal vector of `A = Q2 Q1⁻¹` the determinant equals
/// `2 - 2⟨c, (cos θ, sin θ)⟩`, and `|c|² - |anticonformal(A)|² = det A = 1`.
pub fn rank_one_angles(q1: &Mat2, q2: &Mat2) -> Result<RankOneConnection> {
    check_unimodular(q1, "Q1")?;
    check_unimodular(q2, "Q2")?;
    let a = *q2 * q1.inverse()?;
    let c = a.conformal_part();
    let phi = c[1].atan2(c[0]);
    if norm2(a.anticonformal_part()) <= UNIMODULAR_TOL {
        return Ok(RankOneConnection {
            angles: vec![wrap_angle(phi)],
            degenerate: true,
        });
    }
    let delta = (1.0 / norm2(c)).min(1.0).acos();
    Ok(RankOneConnection {
        angles: vec![wrap_angle(phi + delta), wrap_angle(phi - delta)],
        degenerate: false,
    })
}

/// `Q1 = R Q2` for some rotation `R`.
pub fn conformally_equivalent(q1: &Mat2, q2: &Mat2) -> Result<bool> {
    check_unimodular(q1, "Q1")?;
    check_unimodular(q2, "Q2")?;
    let a = *q2 * q1.inverse()?;
    Ok(norm2(a.anticonformal_part()) <= UNIMODULAR_TOL)
}

/// Squared distance to `K` and the nearer well (ties go to `SO(2)`).
pub fn dist2_to_k(x: &Mat2, params: &TwoWellParams) -> (f64, Well) {
    let d0 = dist2_to_coset(x, &Mat2::IDENTITY).expect("identity is invertible");
    let d1 = dist2_to_coset(x, &params.h()).expect("H is invertible");
    if d1 < d0 {
        (d1, Well::Stretched)
    } else {
        (d0, Well::Rotations)
    }
}

/// Well containing `x` within Frobenius distance `tol`, if any.
pub fn well_of(x: &Mat2, params: &TwoWellParams, tol: f64) -> Option<Well> {
    let (d2, w) = dist2_to_k(x, params);
    (d2.sqrt() <= tol).then_some(w)
}

/// The two matrices of the opposite well rank-one connected to `x ∈ K`.
pub fn neighbors_in_k(x: &Mat2, params: &TwoWellParams) -> Result<[Mat2; 2]> {
    let well = well_of(x, params, DEFAULT_LEAF_TOL)
        .ok_or_else(|| Error::Domain(format!("{x} is not in K")))?;
    let exact = nearest_in_coset(x, &params.representative(well))?;
    let other = params.representative(well.opposite());
    let conn = rank_one_angles(&other, &exact)?;
    if conn.angles.len() != 2 {
        return Err(Error::Numeric(
            "wells are conformally equivalent; no genuine connection".into(),
        ));
    }
    Ok([
        Mat2::rotation(conn.angles[0]) * other,
        Mat2::rotation(conn.angles[1]) * other,
    ])
}

/// Hull parameters `X = C(x) + C(y) H`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullCoords {
    pub x: Vec2,
    pub y: Vec2,
}

impl HullCoords {
    pub fn reconstruct(&self, params: &TwoWellParams) -> Mat2 {
        Mat2::conformal(self.x) + Mat2::conformal(self.y) * params.h()
    }

    /// `|x| + |y|`; at most one inside the convex hull.
    pub fn l1(&self) -> f64 {
        norm2(self.x) + norm2(self.y)
    }

    /// `|x|² + |y|² + (λ + μ)⟨x, y⟩`, which equals the determinant.
    pub fn constraint(&self, params: &TwoWellParams) -> f64 {
        dot2(self.x, self.x) + dot2(self.y, self.y) + (params.lambda + params.mu) * dot2(self.x, self.y)
    }
}

pub fn hull_coordinates(m: &Mat2, params: &TwoWellParams) -> HullCoords {
    let gap = params.mu - params.lambda;
    let y1 = (m.m22 - m.m11) / gap;
    let x1 = m.m11 - params.lambda * y1;
    let y2 = (-m.m12 - m.m21) / gap;
    let x2 = m.m21 - params.lambda * y2;
    // adding +0.0 turns -0.0 into 0.0
    HullCoords {
        x: [x1 + 0.0, x2 + 0.0],
        y: [y1 + 0.0, y2 + 0.0],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub in_k: bool,
    pub in_kc: bool,
    pub in_zmin: bool,
}

/// Membership in `K`, the convex hull `K^c`, and `Z_min = K^c ∩ SL(2)`.
/// The flags always satisfy `in_k ⇒ in_zmin ⇒ in_kc`.
pub fn membership(m: &Mat2, params: &TwoWellParams, tol: f64) -> Membership {
    if !m.is_finite() {
        return Membership {
            in_k: false,
            in_kc: false,
            in_zmin: false,
        };
    }
    let hc = hull_coordinates(m, params);
    let in_k = dist2_to_k(m, params).0 <= tol * tol;
    let hull = hc.l1() <= 1.0 + tol;
    let in_zmin = in_k || (hull && (hc.constraint(params) - 1.0).abs() <= tol);
    Membership {
        in_k,
        in_kc: in_zmin || hull,
        in_zmin,
    }
}

/// Point of `Z_min` with `x = t(cos α, sin α)` and `y = r(cos γ, sin γ)`,
/// `r ≥ 0` solving the determinant-one constraint.
pub fn sample_zmin(alpha: f64, gamma: f64, t: f64, params: &TwoWellParams) -> Result<Mat2> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    let b = (params.lambda + params.mu) * t * (gamma - alpha).cos();
    let c = t * t - 1.0;
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return Err(Error::NotInHull("no real root for the radius".into()));
    }
    let r = 0.5 * (-b + disc.sqrt());
    if r < 0.0 {
        return Err(Error::NotInHull(format!("negative radius {r}")));
    }
    if t + r > 1.0 + 1e-12 {
        return Err(Error::NotInHull(format!("|x| + |y| = {} exceeds 1", t + r)));
    }
    let hc = HullCoords {
        x: [t * alpha.cos(), t * alpha.sin()],
        y: [r * gamma.cos(), r * gamma.sin()],
    };
    Ok(hc.reconstruct(params))
}

/// Squared Frobenius distance to the convex hull `K^c`, by accelerated
/// projected gradient in hull coordinates.
pub fn dist2_to_hull(m: &Mat2, params: &TwoWellParams) -> f64 {
    let h = params.h();
    let start = hull_coordinates(m, params);
    if start.l1() <= 1.0 {
        return 0.0;
    }
    let lip = 4.0 * (2.0f64).max(params.lambda.powi(2) + params.mu.powi(2));
    let step = 1.0 / lip;
    let grad = |z: &[f64; 4]| -> [f64; 4] {
        let hc = HullCoords {
            x: [z[0], z[1]],
            y: [z[2], z[3]],
        };
        let r = hc.reconstruct(params) - *m;
        let gx = r.conformal_part();
        let gy = (r * h.transpose()).conformal_part();
        [4.0 * gx[0], 4.0 * gx[1], 4.0 * gy[0], 4.0 * gy[1]]
    };
    let mut z = project_group_ball([start.x[0], start.x[1], start.y[0], start.y[1]]);
    let mut w = z;
    let mut tk = 1.0f64;
    for _ in 0..20_000 {
        let g = grad(&w);
        let mut next = [0.0; 4];
        for k in 0..4 {
            next[k] = w[k] - step * g[k];
        }
        let next = project_group_ball(next);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let mom = (tk - 1.0) / tn;
        let mut moved = 0.0f64;
        for k in 0..4 {
            w[k] = next[k] + mom * (next[k] - z[k]);
            moved = moved.max((next[k] - z[k]).abs());
        }
        z = next;
        tk = tn;
        if moved < 1e-15 {
            break;
        }
    }
    let hc = HullCoords {
        x: [z[0], z[1]],
        y: [z[2], z[3]],
    };
    (hc.reconstruct(params) - *m).norm_sq()
}

/// Euclidean projection onto `{(x, y) : |x| + |y| ≤ 1}`.
fn project_group_ball(z: [f64; 4]) -> [f64; 4] {
    let p = z[0].hypot(z[1]);
    let q = z[2].hypot(z[3]);
    if p + q <= 1.0 {
        return z;
    }
    let tau = 0.5 * (p + q - 1.0);
    let (pn, qn) = if p - tau < 0.0 {
        (0.0, 1.0)
    } else if q - tau < 0.0 {
        (1.0, 0.0)
    } else {
        (p - tau, q - tau)
    };
    let sx = if p > 0.0 { pn / p } else { 0.0 };
    let sy = if q > 0.0 { qn / q } else { 0.0 };
    [z[0] * sx, z[1] * sx, z[2] * sy, z[3] * sy]
}

/// Weighted rank-one splitting tree with leaves in `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LaminateTree {
    /// `matrix = zeta·children[0] + (1 - zeta)·children[1]` and
    /// `children[0] - children[1] = a ⊗ n`.
    Node {
        matrix: Mat2,
        zeta: f64,
        a: Vec2,
        n: Vec2,
        children: Box<[LaminateTree; 2]>,
    },
    Leaf {
        matrix: Mat2,
        well: Well,
    },
}

impl LaminateTree {
    pub fn matrix(&self) -> Mat2 {
        match self {
            LaminateTree::Node { matrix, .. } | LaminateTree::Leaf { matrix, .. } => *matrix,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            LaminateTree::Leaf { .. } => 0,
            LaminateTree::Node { children, .. } => {
                1 + children[0].depth().max(children[1].depth())
            }
        }
    }

    /// Leaves with their total volume fractions.
    pub fn leaves(&self) -> Vec<(f64, Mat2, Well)> {
        let mut out = Vec::new();
        self.collect_leaves(1.0, &mut out);
        out
    }

    fn collect_leaves(&self, weight: f64, out: &mut Vec<(f64, Mat2, Well)>) {
        match self {
            LaminateTree::Leaf { matrix, well } => out.push((weight, *matrix, *well)),
            LaminateTree::Node { zeta, children, .. } => {
                children[0].collect_leaves(weight * zeta, out);
                children[1].collect_leaves(weight * (1.0 - zeta), out);
            }
        }
    }

    pub fn weighted_leaf_sum(&self) -> Mat2 {
        self.leaves()
            .iter()
            .fold(Mat2::ZERO, |acc, (w, m, _)| acc + *m * *w)
    }

    /// Check every structural invariant within `tol`.
    pub fn validate(&self, params: &TwoWellParams, tol: f64) -> Result<()> {
        if self.depth() > 2 {
            return Err(Error::Domain(format!("depth {} exceeds 2", self.depth())));
        }
        self.validate_node(params, tol)?;
        let sum = self.weighted_leaf_sum();
        if sum.max_abs_diff(&self.matrix()) > tol {
            return Err(Error::Domain(format!(
                "weighted leaf sum {sum} does not reproduce {}",
                self.matrix()
            )));
        }
        Ok(())
    }

    fn validate_node(&self, params: &TwoWellParams, tol: f64) -> Result<()> {
        match self {
            LaminateTree::Leaf { matrix, well } => {
                let d = dist2_to_coset(matrix, &params.representative(*well))?.sqrt();
                if d > tol {
                    return Err(Error::Domain(format!(
                        "leaf {matrix} is {d:e} away from its well"
                    )));
                }
                Ok(())
            }
            LaminateTree::Node {
                matrix,
                zeta,
                a,
                n,
                children,
            } => {
                if !(*zeta > 0.0 && *zeta < 1.0) {
                    return Err(Error::Domain(format!("weight {zeta} outside (0, 1)")));
                }
                let (p, m) = (children[0].matrix(), children[1].matrix());
                let mix = p * *zeta + m * (1.0 - zeta);
                if mix.max_abs_diff(matrix) > tol {
                    return Err(Error::Domain("node is not the weighted average of its children".into()));
                }
                if (p - m).max_abs_diff(&Mat2::outer(*a, *n)) > tol {
                    return Err(Error::Domain("child difference is not a ⊗ n".into()));
                }
                if (p - m).singular_values().1 > tol {
                    return Err(Error::Domain("child difference is not rank one".into()));
                }
                children[0].validate_node(params, tol)?;
                children[1].validate_node(params, tol)
            }
        }
    }
}

/// Factor a rank-one matrix as `a ⊗ n` with `|n| = 1` and the first
/// significant component of `n` positive.
pub fn rank_one_factor(d: &Mat2) -> (Vec2, Vec2) {
    let (r0, r1) = (d.row(0), d.row(1));
    let row = if norm2(r0) >= norm2(r1) { r0 } else { r1 };
    let len = norm2(row);
    if len == 0.0 {
        return ([0.0, 0.0], [1.0, 0.0]);
    }
    let mut n = [row[0] / len, row[1] / len];
    if n[0] < -1e-14 || (n[0].abs() <= 1e-14 && n[1] < 0.0) {
        n = [-n[0], -n[1]];
    }
    (d.apply(n), n)
}

/// First-order split of a boundary point of `Z_min` into its rotation and
/// stretched leaves.
fn split_boundary_point(m: &Mat2, params: &TwoWellParams, tol: f64) -> Result<LaminateTree> {
    if let Some(well) = well_of(m, params, tol) {
        return Ok(LaminateTree::Leaf { matrix: *m, well });
    }
    let hc = hull_coordinates(m, params);
    let (xn, yn) = (norm2(hc.x), norm2(hc.y));
    if xn < CONFORMAL_ZERO || yn < CONFORMAL_ZERO {
        return Err(Error::DecompositionNotFound(format!(
            "{m} has a vanishing hull component but is not in K"
        )));
    }
    let plus = Mat2::conformal([hc.x[0] / xn, hc.x[1] / xn]);
    let minus = Mat2::conformal([hc.y[0] / yn, hc.y[1] / yn]) * params.h();
    let zeta = xn / (xn + yn);
    let (a, n) = rank_one_factor(&(plus - minus));
    let node = LaminateTree::Node {
        matrix: *m,
        zeta,
        a,
        n,
        children: Box::new([
            LaminateTree::Leaf {
                matrix: plus,
                well: Well::Rotations,
            },
            LaminateTree::Leaf {
                matrix: minus,
                well: Well::Stretched,
            },
        ]),
    };
    node.validate(params, DECOMPOSITION_TOL)?;
    Ok(node)
}

/// Exit parameter `t > 0` of the ray `R + t D` from the convex hull.
fn hull_exit(r: &Mat2, dir: &Mat2, params: &TwoWellParams) -> f64 {
    let g = |t: f64| hull_coordinates(&(*r + *dir * t), params).l1() - 1.0;
    let mut hi = 0.25;
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }
    bisect(g, 0.0, hi)
}

/// Laminate of depth ≤ 2 whose weighted leaf sum is `r ∈ Z_min`.
///
/// Points of `K` are leaves, boundary points of the hull split once, and
/// interior points are cut along a rank-one line inside `SL(2)`: the
/// direction `a ⊥ cof(R) n` keeps the determinant fixed, so both exits of the
/// line from the hull land on first-order laminates.
pub fn laminate_decompose(r: &Mat2, params: &TwoWellParams, tol: f64) -> Result<LaminateTree> {
    if !membership(r, params, tol).in_zmin {
        return Err(Error::NotInHull(format!("{r} is not in Z_min")));
    }
    if let Some(well) = well_of(r, params, tol) {
        return Ok(LaminateTree::Leaf { matrix: *r, well });
    }
    let hc = hull_coordinates(r, params);
    if hc.l1() >= 1.0 - tol {
        return split_boundary_point(r, params, tol.max(DEFAULT_LEAF_TOL));
    }
    let cof = r.cof();
    for k in 0..DIRECTION_SCAN {
        let angle = PI * k as f64 / DIRECTION_SCAN as f64;
        let n = [angle.cos(), angle.sin()];
        let v = cof.apply(n);
        let vn = norm2(v);
        if vn == 0.0 {
            continue;
        }
        let a = [-v[1] / vn, v[0] / vn];
        let dir = Mat2::outer(a, n);
        let t_plus = hull_exit(r, &dir, params);
        let t_minus = hull_exit(r, &(-dir), params);
        let p_plus = *r + dir * t_plus;
        let p_minus = *r - dir * t_minus;
        let (Ok(c_plus), Ok(c_minus)) = (
            split_boundary_point(&p_plus, params, tol.max(DEFAULT_LEAF_TOL)),
            split_boundary_point(&p_minus, params, tol.max(DEFAULT_LEAF_TOL)),
        ) else {
            continue;
        };
        let span = t_plus + t_minus;
        let tree = LaminateTree::Node {
            matrix: *r,
            zeta: t_minus / span,
            a: [a[0] * span, a[1] * span],
            n,
            children: Box::new([c_plus, c_minus]),
        };
        if tree.validate(params, DECOMPOSITION_TOL).is_ok() {
            return Ok(tree);
        }
    }
    Err(Error::DecompositionNotFound(format!(
        "no admissible direction among {DIRECTION_SCAN} for {r}"
    )))
}

/// Outcome of the SO(3) rank-one connectivity scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct So3ScanResult {
    /// `min |cof(R - Q)|_F`; zero iff some `R - Q` has rank ≤ 1.
    pub min_residual: f64,
    pub argmin: Mat3,
    /// Rotation vector (axis × angle) of the minimizer.
    pub rotation_vector: [f64; 3],
    /// `det(R - Q)` at the minimizer.
    pub det_at_argmin: f64,
    pub samples: usize,
}

/// `|cof(R - Q)|_F`, the rank-one residual of `R - Q`.
pub fn so3_rank_one_residual(r: &Mat3, q: &Mat3) -> f64 {
    (*r - *q).cof().norm()
}

/// The `k`-th point of a quasi-uniform sequence on SO(3), as a rotation
/// vector. A Kronecker sequence in the unit cube is pushed through the
/// uniform quaternion map.
pub fn so3_sample(k: usize) -> [f64; 3] {
    // generalized golden ratio for three dimensions
    const G: f64 = 1.220_744_084_605_759_5;
    let alpha = [1.0 / G, 1.0 / (G * G), 1.0 / (G * G * G)];
    let u: Vec<f64> = alpha
        .iter()
        .map(|a| (0.5 + a * k as f64).fract())
        .collect();
    let (s1, s2) = ((1.0 - u[0]).sqrt(), u[0].sqrt());
    let (t1, t2) = (2.0 * PI * u[1], 2.0 * PI * u[2]);
    let mut q = [s2 * t2.cos(), s1 * t1.sin(), s1 * t1.cos(), s2 * t2.sin()];
    if q[0] < 0.0 {
        q = [-q[0], -q[1], -q[2], -q[3]];
    }
    let vnorm = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if vnorm < 1e-300 {
        return [0.0; 3];
    }
    let angle = 2.0 * vnorm.atan2(q[0]);
    [q[1] / vnorm * angle, q[2] / vnorm * angle, q[3] / vnorm * angle]
}

/// Dense scan of SO(3) for rotations making `R - Q` rank one, followed by
/// compass search in the local chart `R₀ exp(ω)` around the best samples.
pub fn so3_rank_one_scan(q: &Mat3, n_samples: usize, refine_iters: usize) -> Result<So3ScanResult> {
    if (q.det() - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!(
            "Q must have determinant 1, got {}",
            q.det()
        )));
    }
    let n_samples = n_samples.max(1);
    let mut scored: Vec<(f64, usize)> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let r = Mat3::rotation_from_vector(so3_sample(k));
            (so3_rank_one_residual(&r, q), k)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    const CANDIDATES: usize = 16;
    let refined: Vec<(f64, Mat3)> = scored
        .iter()
        .take(CANDIDATES)
        .map(|&(_, k)| Mat3::rotation_from_vector(so3_sample(k)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|r0| compass_refine(&r0, q, refine_iters))
        .collect();
    let (best_val, best_r) = refined
        .into_iter()
        .reduce(|a, b| if b.0 < a.0 { b } else { a })
        .expect("at least one candidate");

    Ok(So3ScanResult {
        min_residual: best_val,
        argmin: best_r,
        rotation_vector: rotation_vector_of(&best_r),
        det_at_argmin: (best_r - *q).det(),
        samples: n_samples,
    })
}

fn compass_refine(r0: &Mat3, q: &Mat3, iters: usize) -> (f64, Mat3) {
    let mut base = *r0;
    let mut best = so3_rank_one_residual(&base, q);
    let mut step = 0.05;
    for _ in 0..iters {
        if step < 1e-15 || best == 0.0 {
            break;
        }
        let mut improved = false;
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut w = [0.0; 3];
                w[axis] = sign * step;
                let cand = base * Mat3::rotation_from_vector(w);
                let val = so3_rank_one_residual(&cand, q);
                if val < best {
                    best = val;
                    base = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, base)
}

/// Rotation vector of a rotation matrix (angle in `[0, π]`).
pub fn rotation_vector_of(r: &Mat3) -> [f64; 3] {
    let m = &r.0;
    let cos = ((m[0][0] + m[1][1] + m[2][2] - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let v = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    let s = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if angle < 1e-12 {
        return [v[0] * 0.5, v[1] * 0.5, v[2] * 0.5];
    }
    if s > 1e-9 {
        return [v[0] / s * angle, v[1] / s * angle, v[2] / s * angle];
    }
    // angle near π: axis from the diagonal
    let diag = [m[0][0], m[1][1], m[2][2]];
    let i = (0..3).max_by(|&a, &b| diag[a].total_cmp(&diag[b])).unwrap_or(0);
    let mut axis = [0.0; 3];
    axis[i] = ((diag[i] + 1.0) * 0.5).max(0.0).sqrt();
    for j in 0..3 {
        if j != i {
            axis[j] = (m[i][j] + m[j][i]) / (4.0 * axis[i]);
        }
    }
    let an = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    [axis[0] / an * angle, axis[1] / an * angle, axis[2] / an * angle]
}

/// Grid over `γ` and `t` (with `α = 0`) of the minimizing set, as
/// `(α, γ, t, matrix)` rows.
pub fn zmin_sweep(steps: usize, params: &TwoWellParams) -> Vec<(f64, f64, f64, Mat2)> {
    let steps = steps.max(1);
    let mut out = Vec::new();
    for i in 0..steps {
        let gamma = 2.0 * PI * i as f64 / steps as f64;
        for j in 0..=steps {
            let t = j as f64 / steps as f64;
            if let Ok(m) = sample_zmin(0.0, gamma, t, params) {
                out.push((0.0, gamma, t, m));
            }
        }
    }
    out
}
