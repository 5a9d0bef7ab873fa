//! Exact 2×2 (and minimal 3×3) matrix algebra.
//!
//! Every 2×2 matrix splits orthogonally into a conformal part
//! `C(x) = [[x1, -x2], [x2, x1]]` and an anticonformal part
//! `A(y) = [[y1, y2], [y2, -y1]]`. In these coordinates
//!
//! ```text
//! det M   = |x|² - |y|²
//! |M|²_F  = 2 (|x|² + |y|²)
//! ```
//!
//! and the squared Frobenius distance from `M` to a rotation coset `SO(2)Q`
//! has the closed form `|M|² + |Q|² - 4 |x(M Qᵀ)|`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Below this norm the conformal part is treated as zero and the nearest
/// rotation is not unique.
pub const CONFORMAL_ZERO: f64 = 1e-12;

/// Plain planar vector.
pub type Vec2 = [f64; 2];

pub fn dot2(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm2(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// A real 2×2 matrix, stored row-major.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Mat2 {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        Mat2 { m11, m12, m21, m22 }
    }

    pub fn from_row_major(a: [f64; 4]) -> Self {
        Mat2::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_row_major(self) -> [f64; 4] {
        [self.m11, self.m12, self.m21, self.m22]
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, b)
    }

    pub fn scaled_identity(s: f64) -> Self {
        Mat2::diag(s, s)
    }

    /// Counter-clockwise rotation by `theta`.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    /// `C(x) = [[x1, -x2], [x2, x1]]`.
    pub fn conformal(x: Vec2) -> Self {
        Mat2::new(x[0], -x[1], x[1], x[0])
    }

    /// `A(y) = [[y1, y2], [y2, -y1]]`.
    pub fn anticonformal(y: Vec2) -> Self {
        Mat2::new(y[0], y[1], y[1], -y[0])
    }

    /// Outer product `a ⊗ n`.
    pub fn outer(a: Vec2, n: Vec2) -> Self {
        Mat2::new(a[0] * n[0], a[0] * n[1], a[1] * n[0], a[1] * n[1])
    }

    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn trace(&self) -> f64 {
        self.m11 + self.m22
    }

    pub fn transpose(&self) -> Self {
        Mat2::new(self.m11, self.m21, self.m12, self.m22)
    }

    /// Cofactor matrix, `cof M = det(M) M⁻ᵀ` for invertible `M`.
    pub fn cof(&self) -> Self {
        Mat2::new(self.m22, -self.m21, -self.m12, self.m11)
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return Err(Error::Domain(format!("matrix {self} is singular")));
        }
        Ok(self.cof().transpose() * (1.0 / d))
    }

    /// Frobenius inner product `A : B = tr(Aᵀ B)`.
    pub fn ddot(&self, other: &Mat2) -> f64 {
        self.m11 * other.m11 + self.m12 * other.m12 + self.m21 * other.m21 + self.m22 * other.m22
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.to_row_major().iter().all(|v| v.is_finite())
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        [
            self.m11 * v[0] + self.m12 * v[1],
            self.m21 * v[0] + self.m22 * v[1],
        ]
    }

    pub fn row(&self, i: usize) -> Vec2 {
        match i {
            0 => [self.m11, self.m12],
            _ => [self.m21, self.m22],
        }
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        let d = *self - *other;
        d.to_row_major().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Singular values `(σ₁, σ₂)` with `σ₁ ≥ σ₂ ≥ 0`, from the conformal split.
    pub fn singular_values(&self) -> (f64, f64) {
        let c = conformal_split(self);
        let (xn, yn) = (norm2(c.x), norm2(c.y));
        (xn + yn, (xn - yn).abs())
    }

    /// Conformal vector `x` of the split.
    pub fn conformal_part(&self) -> Vec2 {
        [
            0.5 * (self.m11 + self.m22),
            0.5 * (self.m21 - self.m12),
        ]
    }

    /// Anticonformal vector `y` of the split.
    pub fn anticonformal_part(&self) -> Vec2 {
        [
            0.5 * (self.m11 - self.m22),
            0.5 * (self.m12 + self.m21),
        ]
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.m11 + o.m11, self.m12 + o.m12, self.m21 + o.m21, self.m22 + o.m22)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.m11 - o.m11, self.m12 - o.m12, self.m21 - o.m21, self.m22 - o.m22)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self * -1.0
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m11 * o.m11 + self.m12 * o.m21,
            self.m11 * o.m12 + self.m12 * o.m22,
            self.m21 * o.m11 + self.m22 * o.m21,
            self.m21 * o.m12 + self.m22 * o.m22,
        )
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        Mat2::new(self.m11 * s, self.m12 * s, self.m21 * s, self.m22 * s)
    }
}

impl Mul<Mat2> for f64 {
    type Output = Mat2;
    fn mul(self, m: Mat2) -> Mat2 {
        m * self
    }
}

/// Row-major, 17 significant digits.
impl fmt::Display for Mat2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{:.16e}, {:.16e}], [{:.16e}, {:.16e}]]",
            self.m11, self.m12, self.m21, self.m22
        )
    }
}

impl Serialize for Mat2 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat2 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 4]>::deserialize(d)?;
        Ok(Mat2::from_row_major(a))
    }
}

/// Conformal / anticonformal coordinates of a 2×2 matrix:
/// `M = C(x) + A(y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalCoords {
    pub x: Vec2,
    pub y: Vec2,
}

impl ConformalCoords {
    pub fn reconstruct(&self) -> Mat2 {
        Mat2::conformal(self.x) + Mat2::anticonformal(self.y)
    }
}

pub fn conformal_split(m: &Mat2) -> ConformalCoords {
    ConformalCoords {
        x: m.conformal_part(),
        y: m.anticonformal_part(),
    }
}

fn check_invertible(q: &Mat2) -> Result<()> {
    let d = q.det();
    if !d.is_finite() || d.abs() < 1e-14 {
        return Err(Error::Domain(format!("coset representative {q} is singular")));
    }
    Ok(())
}

/// `min_{R ∈ SO(2)} |M - R Q|²_F`.
///
/// Evaluated through the minimizing rotation when it is unique, which keeps
/// the result accurate near zero; otherwise every rotation is optimal and the
/// value is `|M|² + |Q|²`.
pub fn dist2_to_coset(m: &Mat2, q: &Mat2) -> Result<f64> {
    check_invertible(q)?;
    let x = (*m * q.transpose()).conformal_part();
    let xn = norm2(x);
    if xn < CONFORMAL_ZERO {
        return Ok(m.norm_sq() + q.norm_sq());
    }
    let r = Mat2::conformal([x[0] / xn, x[1] / xn]);
    Ok((*m - r * *q).norm_sq())
}

/// The raw closed form `|M|² + |Q|² - 4 |x(M Qᵀ)|`, clamped at zero.
pub fn dist2_to_coset_closed_form(m: &Mat2, q: &Mat2) -> Result<f64> {
    check_invertible(q)?;
    let x = (*m * q.transpose()).conformal_part();
    Ok((m.norm_sq() + q.norm_sq() - 4.0 * norm2(x)).max(0.0))
}

/// Nearest point of `SO(2)Q` to `M`.
pub fn nearest_in_coset(m: &Mat2, q: &Mat2) -> Result<Mat2> {
    check_invertible(q)?;
    let x = (*m * q.transpose()).conformal_part();
    let xn = norm2(x);
    if xn < CONFORMAL_ZERO {
        return Err(Error::ProjectionUndefined);
    }
    Ok(Mat2::conformal([x[0] / xn, x[1] / xn]) * *q)
}

/// A real 3×3 matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn diag(d: [f64; 3]) -> Self {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            m[i][i] = d[i];
        }
        Mat3(m)
    }

    /// Rotation by `|w|` about `w / |w|` (Rodrigues).
    pub fn rotation_from_vector(w: [f64; 3]) -> Self {
        let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        if theta < 1e-300 {
            return Mat3::IDENTITY;
        }
        let k = [w[0] / theta, w[1] / theta, w[2] / theta];
        Mat3::rotation_axis_angle(k, theta)
    }

    /// Rotation by `angle` about the unit vector `axis`.
    pub fn rotation_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let [x, y, z] = axis;
        Mat3([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Matrix of signed 2×2 minors; vanishes iff rank ≤ 1.
    pub fn cof(&self) -> Mat3 {
        let m = &self.0;
        let mut c = [[0.0; 3]; 3];
        for (i, row) in c.iter_mut().enumerate() {
            let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
            for (j, v) in row.iter_mut().enumerate() {
                let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
                *v = m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1];
            }
        }
        Mat3(c)
    }

    pub fn transpose(&self) -> Mat3 {
        let mut t = [[0.0; 3]; 3];
        for (i, row) in self.0.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                t[j][i] = *v;
            }
        }
        Mat3(t)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (k, v) in self.0.iter().flatten().enumerate() {
            out[k] = *v;
        }
        out
    }

    pub fn from_row_major(a: [f64; 9]) -> Self {
        Mat3([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        let mut r = self.0;
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v -= o.0[i][j];
            }
        }
        Mat3(r)
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }
}

impl Serialize for Mat3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 9]>::deserialize(d)?;
        Ok(Mat3::from_row_major(a))
    }
}
