//! Stored-energy densities and their convexity diagnostics.
//!
//! The convex envelope of the two-well energy is computed as a discrete
//! biconjugate on a 4-D grid over the matrix entries. The 4-D Legendre
//! transform is separable,
//!
//! ```text
//! f*(s) = T₄(-T₃(-T₂(-T₁ f)))      (T_k: 1-D transform along axis k)
//! ```
//!
//! and each 1-D transform runs in linear time by marching the slopes along
//! the lower convex hull of the line's samples.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{dist2_to_coset, nearest_in_coset, Mat2};
use crate::mesh::{Diagonal, Mesh};
use crate::numeric::seeded_rng;
use crate::wellsgeo::{TwoWellParams, Well};

/// Step of the central-difference gradient fallback.
pub const FD_STEP: f64 = 1e-6;

/// An energy density `F: R^{2×2} → R`.
pub trait StoredEnergy: Sync {
    fn name(&self) -> String;

    fn eval(&self, m: &Mat2) -> f64;

    /// `DF(M)`; central differences unless overridden.
    fn grad(&self, m: &Mat2) -> Mat2 {
        central_difference_grad(|x| self.eval(x), m, FD_STEP)
    }
}

pub fn central_difference_grad<F: Fn(&Mat2) -> f64>(f: F, m: &Mat2, h: f64) -> Mat2 {
    let mut out = [0.0; 4];
    let base = m.to_row_major();
    for (k, slot) in out.iter_mut().enumerate() {
        let mut p = base;
        let mut q = base;
        p[k] += h;
        q[k] -= h;
        *slot = (f(&Mat2::from_row_major(p)) - f(&Mat2::from_row_major(q))) / (2.0 * h);
    }
    Mat2::from_row_major(out)
}

/// The closed-form energies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyModel {
    /// `F(X) = tr(XᵀX) / 2`.
    Dirichlet,
    /// `F(X) = dist²(X, SO(2) ∪ SO(2)H)` with `H = diag(λ, 1/λ)`.
    TwoWell { lambda: f64 },
}

impl EnergyModel {
    pub fn two_well(params: &TwoWellParams) -> Self {
        EnergyModel::TwoWell {
            lambda: params.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let EnergyModel::TwoWell { lambda } = self {
            TwoWellParams::new(*lambda)?;
        }
        Ok(())
    }

    fn params(lambda: f64) -> TwoWellParams {
        TwoWellParams {
            lambda,
            mu: 1.0 / lambda,
        }
    }

    /// Nearer well and its squared distance; the equidistant locus takes
    /// the rotation branch.
    fn two_well_branch(lambda: f64, m: &Mat2) -> (f64, Mat2) {
        let h = Self::params(lambda).h();
        let d0 = dist2_to_coset(m, &Mat2::IDENTITY).expect("identity is invertible");
        let d1 = dist2_to_coset(m, &h).expect("H is invertible");
        if d1 < d0 {
            (d1, h)
        } else {
            (d0, Mat2::IDENTITY)
        }
    }
}

impl StoredEnergy for EnergyModel {
    fn name(&self) -> String {
        match self {
            EnergyModel::Dirichlet => "dirichlet".into(),
            EnergyModel::TwoWell { lambda } => format!("two_well(lambda={lambda})"),
        }
    }

    fn eval(&self, m: &Mat2) -> f64 {
        match self {
            EnergyModel::Dirichlet => 0.5 * m.norm_sq(),
            EnergyModel::TwoWell { lambda } => Self::two_well_branch(*lambda, m).0,
        }
    }

    fn grad(&self, m: &Mat2) -> Mat2 {
        match self {
            EnergyModel::Dirichlet => *m,
            EnergyModel::TwoWell { lambda } => {
                let (_, q) = Self::two_well_branch(*lambda, m);
                match nearest_in_coset(m, &q) {
                    Ok(p) => (*m - p) * 2.0,
                    // every rotation is nearest; the distance is |M|² + |Q|²
                    Err(_) => *m * 2.0,
                }
            }
        }
    }
}

/// Which well the two-well energy assigns to `m`.
pub fn nearest_well(m: &Mat2, params: &TwoWellParams) -> Well {
    crate::wellsgeo::dist2_to_k(m, params).1
}

/// Biconjugate samples on the grid `[-box, box]⁴` over `(m11, m12, m21, m22)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridEnvelope {
    pub box_half: f64,
    pub resolution: usize,
    /// Row-major with `m11` slowest.
    pub values: Vec<f64>,
}

pub const ENVELOPE_MAGIC: &[u8; 6] = b"TWELL1";

/// Slope half-width of the dual grid relative to the primal box. The dual
/// spacing equals the primal spacing, so primal nodes are dual nodes.
pub const DUAL_FACTOR: usize = 2;

#[derive(Clone, Copy, Debug)]
struct Axis {
    start: f64,
    step: f64,
    len: usize,
}

impl Axis {
    fn at(&self, k: usize) -> f64 {
        self.start + self.step * k as f64
    }
}

/// `out[j] = max_i (s_j x_i - φ_i)` for uniform `x` and `s`, in `O(n + m)`.
fn conjugate_line(xs: Axis, vals: &[f64], ss: Axis, out: &mut [f64], hull: &mut Vec<usize>) {
    hull.clear();
    for i in 0..vals.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b if it lies on or above the chord a–i
            let lhs = (vals[b] - vals[a]) * (i - a) as f64;
            let rhs = (vals[i] - vals[a]) * (b - a) as f64;
            if lhs >= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut k = 0;
    for (j, o) in out.iter_mut().enumerate() {
        let s = ss.at(j);
        while k + 1 < hull.len() {
            let (a, b) = (hull[k], hull[k + 1]);
            let slope = (vals[b] - vals[a]) / (xs.at(b) - xs.at(a));
            if slope <= s {
                k += 1;
            } else {
                break;
            }
        }
        let i = hull[k];
        *o = s * xs.at(i) - vals[i];
    }
}

/// Separable 4-D transform from a grid with `src` axes to `dst` axes.
fn conjugate_4d(data: Vec<f64>, src: Axis, dst: Axis) -> Vec<f64> {
    let mut dims = [src.len; 4];
    let mut cur = data;
    for pass in 0..4 {
        if pass > 0 {
            cur.par_iter_mut().for_each(|v| *v = -*v);
        }
        let (n, m) = (dims[3], dst.len);
        let lines = cur.len() / n;
        let mut next = vec![0.0; lines * m];
        next.par_chunks_mut(m)
            .zip(cur.par_chunks(n))
            .for_each_init(Vec::new, |hull, (o, line)| {
                conjugate_line(src, line, dst, o, hull)
            });
        dims[3] = m;
        cur = rotate_last_to_first(&next, dims);
        dims = [dims[3], dims[0], dims[1], dims[2]];
    }
    cur
}

/// `out[l, i, j, k] = data[i, j, k, l]`.
fn rotate_last_to_first(data: &[f64], dims: [usize; 4]) -> Vec<f64> {
    let [d0, d1, d2, d3] = dims;
    let block = d0 * d1 * d2;
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(block).enumerate().for_each(|(l, chunk)| {
        for (idx, slot) in chunk.iter_mut().enumerate() {
            *slot = data[idx * d3 + l];
        }
    });
    out
}

impl GridEnvelope {
    pub fn node_count(&self) -> usize {
        self.resolution.pow(4)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.box_half / (self.resolution - 1) as f64
    }

    pub fn coord(&self, k: usize) -> f64 {
        -self.box_half + self.spacing() * k as f64
    }

    pub fn index(&self, idx: [usize; 4]) -> usize {
        let r = self.resolution;
        ((idx[0] * r + idx[1]) * r + idx[2]) * r + idx[3]
    }

    pub fn node_matrix(&self, idx: [usize; 4]) -> Mat2 {
        Mat2::new(
            self.coord(idx[0]),
            self.coord(idx[1]),
            self.coord(idx[2]),
            self.coord(idx[3]),
        )
    }

    pub fn nearest_node(&self, m: &Mat2) -> [usize; 4] {
        let h = self.spacing();
        let mut idx = [0; 4];
        for (slot, v) in idx.iter_mut().zip(m.to_row_major()) {
            let k = ((v + self.box_half) / h).round();
            *slot = k.clamp(0.0, (self.resolution - 1) as f64) as usize;
        }
        idx
    }

    pub fn value_at(&self, idx: [usize; 4]) -> f64 {
        self.values[self.index(idx)]
    }

    /// Multilinear interpolation of the 16 surrounding nodes.
    pub fn eval(&self, m: &Mat2) -> Result<f64> {
        let h = self.spacing();
        let slack = 1e-12 * self.box_half.max(1.0);
        let mut base = [0usize; 4];
        let mut frac = [0.0; 4];
        for (k, v) in m.to_row_major().into_iter().enumerate() {
            if !v.is_finite() || v < -self.box_half - slack || v > self.box_half + slack {
                return Err(Error::OutOfBox(format!(
                    "{m} leaves [-{b}, {b}]⁴",
                    b = self.box_half
                )));
            }
            let t = ((v + self.box_half) / h).clamp(0.0, (self.resolution - 1) as f64);
            let i = (t.floor() as usize).min(self.resolution - 2);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..16usize {
            let mut w = 1.0;
            let mut idx = base;
            for k in 0..4 {
                if corner >> k & 1 == 1 {
                    idx[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                acc += w * self.value_at(idx);
            }
        }
        Ok(acc)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(ENVELOPE_MAGIC)?;
        w.write_all(&self.box_half.to_le_bytes())?;
        w.write_all(&(self.resolution as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != ENVELOPE_MAGIC {
            return Err(Error::Format("missing TWELL1 header".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let box_half = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let resolution = u64::from_le_bytes(b8) as usize;
        validate_grid(box_half, resolution)?;
        let n = resolution.pow(4);
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(GridEnvelope {
            box_half,
            resolution,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        GridEnvelope::read_from(std::io::BufReader::new(f))
    }

    /// CSV of the 2-D slice spanned by entry axes `(a, b)` with the other two
    /// entries at the nodes nearest to `fixed`.
    pub fn slice_csv(&self, a: usize, b: usize, fixed: &Mat2) -> Result<String> {
        if a > 3 || b > 3 || a == b {
            return Err(Error::Config(format!("slice axes must be distinct in 0..4, got ({a}, {b})")));
        }
        let names = ["m11", "m12", "m21", "m22"];
        let base = self.nearest_node(fixed);
        let mut out = format!("{},{},value\n", names[a], names[b]);
        for i in 0..self.resolution {
            for j in 0..self.resolution {
                let mut idx = base;
                idx[a] = i;
                idx[b] = j;
                out.push_str(&format!(
                    "{},{},{}\n",
                    self.coord(i),
                    self.coord(j),
                    self.value_at(idx)
                ));
            }
        }
        Ok(out)
    }

    /// Minimum second difference along grid lines in every axis direction.
    pub fn min_line_second_difference(&self) -> f64 {
        let r = self.resolution;
        let strides = [r * r * r, r * r, r, 1];
        (0..self.values.len())
            .into_par_iter()
            .map(|flat| {
                let mut worst = f64::INFINITY;
                let mut rem = flat;
                let mut idx = [0; 4];
                for k in 0..4 {
                    idx[k] = rem / strides[k];
                    rem %= strides[k];
                }
                for k in 0..4 {
                    if idx[k] >= 1 && idx[k] + 1 < r {
                        let d = self.values[flat - strides[k]] - 2.0 * self.values[flat]
                            + self.values[flat + strides[k]];
                        worst = worst.min(d);
                    }
                }
                worst
            })
            .reduce(|| f64::INFINITY, f64::min)
    }
}

impl StoredEnergy for GridEnvelope {
    fn name(&self) -> String {
        format!("envelope(box={}, resolution={})", self.box_half, self.resolution)
    }

    /// `+∞` outside the box.
    fn eval(&self, m: &Mat2) -> f64 {
        GridEnvelope::eval(self, m).unwrap_or(f64::INFINITY)
    }
}

fn validate_grid(box_half: f64, resolution: usize) -> Result<()> {
    if !(box_half.is_finite() && box_half >= 3.0) {
        return Err(Error::Config(format!("box must be ≥ 3, got {box_half}")));
    }
    if resolution < 9 || resolution % 2 == 0 {
        return Err(Error::Config(format!(
            "resolution must be odd and ≥ 9, got {resolution}"
        )));
    }
    Ok(())
}

/// Sample `raw` on the grid.
pub fn sample_grid(raw: &dyn StoredEnergy, box_half: f64, resolution: usize) -> Result<GridEnvelope> {
    validate_grid(box_half, resolution)?;
    let mut env = GridEnvelope {
        box_half,
        resolution,
        values: Vec::new(),
    };
    let r = resolution;
    env.values = (0..r.pow(4))
        .into_par_iter()
        .map(|flat| {
            let idx = [flat / (r * r * r), flat / (r * r) % r, flat / r % r, flat % r];
            raw.eval(&env.node_matrix(idx))
        })
        .collect();
    Ok(env)
}

/// Discrete biconjugate of an already sampled table.
pub fn biconjugate_table(table: &GridEnvelope) -> GridEnvelope {
    let primal = Axis {
        start: -table.box_half,
        step: table.spacing(),
        len: table.resolution,
    };
    let dual_len = DUAL_FACTOR * (table.resolution - 1) + 1;
    let dual_half = DUAL_FACTOR as f64 * table.box_half;
    let dual = Axis {
        start: -dual_half,
        step: 2.0 * dual_half / (dual_len - 1) as f64,
        len: dual_len,
    };
    let conj = conjugate_4d(table.values.clone(), primal, dual);
    let values = conjugate_4d(conj, dual, primal);
    GridEnvelope {
        box_half: table.box_half,
        resolution: table.resolution,
        values,
    }
}

/// Convex envelope of `raw` on `[-box, box]⁴` via two discrete Legendre
/// transforms.
pub fn build_biconjugate(raw: &dyn StoredEnergy, box_half: f64, resolution: usize) -> Result<GridEnvelope> {
    let table = sample_grid(raw, box_half, resolution)?;
    Ok(biconjugate_table(&table))
}

/// Second difference of `t ↦ F(X + t D)` at `t = 0` with step `h`.
pub fn rank_one_second_difference(model: &dyn StoredEnergy, x: &Mat2, dir: &Mat2, h: f64) -> f64 {
    (model.eval(&(*x + *dir * h)) - 2.0 * model.eval(x) + model.eval(&(*x - *dir * h))) / (h * h)
}

/// Sampled convexity diagnostics. Every field is an empirical extreme over
/// random draws, so it bounds the true quantity from one side only.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub frame_indiff_max: f64,
    pub rank1_min_second_diff: f64,
    pub uniform_convexity_lower: f64,
    /// Lower estimate of the constant in the uniform quasiconvexity
    /// inequality, over random hat-function test fields.
    pub quasiconvexity_ratio_min: f64,
}

/// Step used on random rank-one lines.
pub const RANK_ONE_PROBE_STEP: f64 = 0.25;
/// Test fields for the quasiconvexity ratio live on this grid.
pub const QC_TEST_GRID: usize = 8;

fn random_matrix(rng: &mut impl Rng, scale: f64) -> Mat2 {
    Mat2::new(
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    )
}

fn random_unit(rng: &mut impl Rng) -> [f64; 2] {
    let th = rng.gen_range(0.0..std::f64::consts::TAU);
    [th.cos(), th.sin()]
}

pub fn convexity_probes(model: &dyn StoredEnergy, samples: usize, seed: u64) -> Result<ProbeReport> {
    if samples == 0 {
        return Err(Error::Config("samples must be ≥ 1".into()));
    }
    let mut rng = seeded_rng(seed);

    let mut frame = 0.0f64;
    let mut rank1 = f64::INFINITY;
    let mut uconv = f64::INFINITY;
    for _ in 0..samples {
        let x = random_matrix(&mut rng, 2.0);
        let r = Mat2::rotation(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        frame = frame.max((model.eval(&(r * x)) - model.eval(&x)).abs());

        let dir = Mat2::outer(random_unit(&mut rng), random_unit(&mut rng));
        rank1 = rank1.min(rank_one_second_difference(model, &x, &dir, RANK_ONE_PROBE_STEP));

        let y = random_matrix(&mut rng, 2.0);
        let d = x - y;
        let gap = model.eval(&x) - model.eval(&y) - model.grad(&y).ddot(&d);
        uconv = uconv.min(gap / d.norm_sq());
    }

    let mesh = Mesh::new(QC_TEST_GRID, QC_TEST_GRID, Diagonal::Main)?;
    let geo = mesh.geometry();
    let mut qc = f64::INFINITY;
    for _ in 0..samples {
        let x = random_matrix(&mut rng, 1.5);
        let amp = rng.gen_range(0.05..1.0);
        let phi: Vec<[f64; 2]> = (0..mesh.n_vertices())
            .map(|v| {
                if mesh.is_boundary(v) {
                    [0.0, 0.0]
                } else {
                    [rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)]
                }
            })
            .collect();
        let (mut excess, mut dirichlet) = (0.0, 0.0);
        let fx = model.eval(&x);
        for t in &geo {
            let g = t.gradient(&phi);
            excess += t.area * (model.eval(&(x + g)) - fx);
            dirichlet += t.area * g.norm_sq();
        }
        if dirichlet > 0.0 {
            qc = qc.min(excess / dirichlet);
        }
    }

    Ok(ProbeReport {
        frame_indiff_max: frame,
        rank1_min_second_diff: rank1,
        uniform_convexity_lower: uconv,
        quasiconvexity_ratio_min: qc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wellsgeo::dist2_to_hull;

    fn p() -> TwoWellParams {
        TwoWellParams::new(0.5).unwrap()
    }

    /// Brute-force `max_i (s x_i - φ_i)`.
    fn conj_brute(xs: Axis, vals: &[f64], s: f64) -> f64 {
        (0..vals.len())
            .map(|i| s * xs.at(i) - vals[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn line_transform_matches_brute_force() {
        let mut rng = seeded_rng(1);
        let xs = Axis { start: -2.0, step: 0.25, len: 17 };
        let ss = Axis { start: -5.0, step: 0.3, len: 35 };
        let mut hull = Vec::new();
        for _ in 0..200 {
            let vals: Vec<f64> = (0..17).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut out = vec![0.0; 35];
            conjugate_line(xs, &vals, ss, &mut out, &mut hull);
            for (j, o) in out.iter().enumerate() {
                assert!((o - conj_brute(xs, &vals, ss.at(j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn energy_examples() {
        let tw = EnergyModel::two_well(&p());
        assert_eq!(EnergyModel::Dirichlet.eval(&Mat2::IDENTITY), 1.0);
        assert_eq!(tw.eval(&Mat2::IDENTITY), 0.0);
        assert!((tw.eval(&Mat2::scaled_identity(2.0)) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn analytic_gradients_match_differences() {
        let mut rng = seeded_rng(8);
        let tw = EnergyModel::two_well(&p());
        for model in [EnergyModel::Dirichlet, tw] {
            for _ in 0..500 {
                let m = random_matrix(&mut rng, 2.0);
                if let EnergyModel::TwoWell { .. } = model {
                    let d0 = dist2_to_coset(&m, &Mat2::IDENTITY).unwrap();
                    let d1 = dist2_to_coset(&m, &p().h()).unwrap();
                    if (d0 - d1).abs() < 1e-3 {
                        continue;
                    }
                }
                let g = model.grad(&m);
                let fd = central_difference_grad(|x| model.eval(x), &m, FD_STEP);
                assert!((g - fd).norm() <= 1e-5 * g.norm().max(1.0), "{g} vs {fd}");
            }
        }
    }

    #[test]
    fn dirichlet_probes() {
        let r = convexity_probes(&EnergyModel::Dirichlet, 200, 3).unwrap();
        assert!(r.frame_indiff_max <= 1e-12);
        assert!((r.uniform_convexity_lower - 0.5).abs() <= 1e-9);
        assert!((r.quasiconvexity_ratio_min - 0.5).abs() <= 1e-9);
        assert!(r.rank1_min_second_diff > 0.0);
        assert!(convexity_probes(&EnergyModel::Dirichlet, 0, 3).is_err());
    }

    #[test]
    fn two_well_probes() {
        let params = p();
        let tw = EnergyModel::two_well(&params);
        let r = convexity_probes(&tw, 200, 3).unwrap();
        assert!(r.frame_indiff_max <= 1e-12);
        let th = params.connection_angle();
        let a = Mat2::rotation(th) * params.h();
        let mid = (Mat2::IDENTITY + a) * 0.5;
        let d = rank_one_second_difference(&tw, &mid, &((a - Mat2::IDENTITY) * 0.5), 1.0);
        assert!(d < 0.0);
        assert!((d + 2.0 * tw.eval(&mid)).abs() < 1e-12);
    }

    #[test]
    fn biconjugate_of_convex_table_is_idempotent() {
        let table = sample_grid(&EnergyModel::Dirichlet, 3.0, 9).unwrap();
        let env = biconjugate_table(&table);
        for (a, b) in env.values.iter().zip(table.values.iter()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn small_envelope_invariants() {
        let params = p();
        let tw = EnergyModel::two_well(&params);
        let table = sample_grid(&tw, 3.0, 13).unwrap();
        let env = biconjugate_table(&table);
        for (e, f) in env.values.iter().zip(table.values.iter()) {
            assert!(*e <= f + 1e-9);
        }
        assert!(env.min_line_second_difference() >= -1e-9);
        // envelope dominates the squared hull distance, a convex minorant
        let mut rng = seeded_rng(12);
        for _ in 0..50 {
            let idx = [
                rng.gen_range(3..10),
                rng.gen_range(3..10),
                rng.gen_range(3..10),
                rng.gen_range(3..10),
            ];
            let m = env.node_matrix(idx);
            assert!(env.value_at(idx) >= dist2_to_hull(&m, &params) - 0.25);
        }
    }

    #[test]
    fn interpolation_reproduces_nodes_and_rejects_outside() {
        let env = sample_grid(&EnergyModel::Dirichlet, 3.0, 9).unwrap();
        let idx = [1, 4, 7, 2];
        let m = env.node_matrix(idx);
        assert!((env.eval(&m).unwrap() - env.value_at(idx)).abs() < 1e-14);
        assert!(matches!(
            env.eval(&Mat2::scaled_identity(3.5)),
            Err(Error::OutOfBox(_))
        ));
        // averaging along a grid line cannot undershoot a convex table
        let a = env.node_matrix([2, 4, 4, 4]);
        let b = env.node_matrix([6, 4, 4, 4]);
        let mid = env.eval(&((a + b) * 0.5)).unwrap();
        assert!(0.5 * (env.eval(&a).unwrap() + env.eval(&b).unwrap()) >= mid);
    }

    #[test]
    fn binary_round_trip() {
        let env = sample_grid(&EnergyModel::Dirichlet, 3.0, 9).unwrap();
        let mut buf = Vec::new();
        env.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..6], b"TWELL1");
        assert_eq!(buf.len(), 6 + 8 + 8 + 8 * 9usize.pow(4));
        let back = GridEnvelope::read_from(&buf[..]).unwrap();
        assert_eq!(back, env);
        assert!(GridEnvelope::read_from(&b"NOPE00"[..]).is_err());
    }

    #[test]
    fn grid_config_validation() {
        assert!(matches!(sample_grid(&EnergyModel::Dirichlet, 3.0, 10), Err(Error::Config(_))));
        assert!(matches!(sample_grid(&EnergyModel::Dirichlet, 2.0, 9), Err(Error::Config(_))));
        assert!(matches!(sample_grid(&EnergyModel::Dirichlet, 3.0, 7), Err(Error::Config(_))));
    }

    #[test]
    fn model_json_shape() {
        let s = serde_json::to_string(&EnergyModel::TwoWell { lambda: 0.5 }).unwrap();
        assert_eq!(s, r#"{"kind":"two_well","lambda":0.5}"#);
        let d: EnergyModel = serde_json::from_str(r#"{"kind":"dirichlet"}"#).unwrap();
        assert_eq!(d, EnergyModel::Dirichlet);
    }
}
