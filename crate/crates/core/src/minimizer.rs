//! Penalized descent for
//!
//! ```text
//! I_β[u] = Σ_T |T| F(∇u_T) + β Σ_T |T| (det ∇u_T - 1)²
//! ```
//!
//! over continuous piecewise-affine maps with affine boundary data, and the
//! two checks used to decide whether a field is a rigid-coset affine map:
//! the single-coset/affine-fit certificate and the discrete weak divergence
//! of the cofactor field.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyModel, StoredEnergy};
use crate::error::{Error, Result};
use crate::laminate::build_laminate_field_with_offset;
use crate::matcore::{dist2_to_coset, nearest_in_coset, norm2, Mat2, Vec2};
use crate::mesh::{affine_value, DeformationField, Diagonal, Mesh, TriangleGeom};
use crate::numeric::{pairwise_sum, seeded_rng};
use crate::wellsgeo::{laminate_decompose, TwoWellParams, DEFAULT_LEAF_TOL};

pub const ARMIJO_C: f64 = 1e-4;
/// Backtracking gives up below this step and ends the stage.
pub const MIN_STEP: f64 = 1e-18;
pub const DEFAULT_COSET_TOL: f64 = 1e-6;
pub const DEFAULT_AFFINE_TOL: f64 = 1e-6;
/// Coset clustering stops counting here.
pub const MAX_COSETS: usize = 64;

const PAR_MIN_LEN: usize = 256;

/// Energy, penalty and gradient of `I_β` at one field.
#[derive(Clone, Debug)]
pub struct Assembly {
    /// `Σ |T| F(∇u_T)`.
    pub energy: f64,
    /// `Σ |T| (det ∇u_T - 1)²`, without the weight.
    pub penalty: f64,
    /// `energy + β penalty`.
    pub total: f64,
    /// `max_T |det ∇u_T - 1|`.
    pub penalty_residual: f64,
    /// `∂I_β/∂u_v`, zero at boundary vertices.
    pub grad: Vec<Vec2>,
}

struct TriangleTerms {
    energy: f64,
    penalty: f64,
    det_dev: f64,
    grads: [Vec2; 3],
}

fn triangle_terms(t: &TriangleGeom, deformed: &[Vec2], model: &dyn StoredEnergy, beta: f64) -> TriangleTerms {
    let g = t.gradient(deformed);
    let dd = g.det() - 1.0;
    let stress = model.grad(&g) + g.cof() * (2.0 * beta * dd);
    let grads = t.shape_grads.map(|s| {
        let v = stress.apply(s);
        [t.area * v[0], t.area * v[1]]
    });
    TriangleTerms {
        energy: t.area * model.eval(&g),
        penalty: t.area * dd * dd,
        det_dev: dd.abs(),
        grads,
    }
}

struct Assembler<'a> {
    geo: Vec<TriangleGeom>,
    boundary: Vec<bool>,
    model: &'a dyn StoredEnergy,
}

impl<'a> Assembler<'a> {
    fn new(mesh: &Mesh, model: &'a dyn StoredEnergy) -> Self {
        Assembler {
            geo: mesh.geometry(),
            boundary: (0..mesh.n_vertices()).map(|v| mesh.is_boundary(v)).collect(),
            model,
        }
    }

    fn assemble(&self, deformed: &[Vec2], beta: f64) -> Assembly {
        let terms: Vec<TriangleTerms> = self
            .geo
            .par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|t| triangle_terms(t, deformed, self.model, beta))
            .collect();
        let energy = pairwise_sum(&terms.iter().map(|t| t.energy).collect::<Vec<_>>());
        let penalty = pairwise_sum(&terms.iter().map(|t| t.penalty).collect::<Vec<_>>());
        let penalty_residual = terms.iter().map(|t| t.det_dev).fold(0.0, f64::max);
        let mut grad = vec![[0.0; 2]; deformed.len()];
        for (geom, term) in self.geo.iter().zip(&terms) {
            for (&v, g) in geom.vertices.iter().zip(&term.grads) {
                grad[v][0] += g[0];
                grad[v][1] += g[1];
            }
        }
        for (g, &b) in grad.iter_mut().zip(&self.boundary) {
            if b {
                *g = [0.0, 0.0];
            }
        }
        Assembly {
            energy,
            penalty,
            total: energy + beta * penalty,
            penalty_residual,
            grad,
        }
    }
}

/// Exact energy and gradient of `I_β` with respect to the vertex positions.
pub fn assemble_energy_and_grad(field: &DeformationField, model: &dyn StoredEnergy, beta: f64) -> Assembly {
    Assembler::new(&field.mesh(), model).assemble(&field.deformed, beta)
}

/// `β₀, β₀ f, …, β₀ f^(stages-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySchedule {
    pub beta0: f64,
    pub factor: f64,
    pub stages: usize,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        PenaltySchedule {
            beta0: 10.0,
            factor: 10.0,
            stages: 3,
        }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::Config(format!("penalty.beta0 must be positive, got {}", self.beta0)));
        }
        if !(self.factor > 1.0 && self.factor.is_finite()) {
            return Err(Error::Config(format!("penalty.factor must exceed 1, got {}", self.factor)));
        }
        if self.stages == 0 {
            return Err(Error::Config("penalty.stages must be at least 1".into()));
        }
        Ok(())
    }

    pub fn betas(&self) -> Vec<f64> {
        (0..self.stages)
            .map(|k| self.beta0 * self.factor.powi(k as i32))
            .collect()
    }
}

pub struct MinimizeProblem<'a> {
    /// Starting field; its `R`, `b` are the boundary data.
    pub initial: DeformationField,
    pub model: &'a dyn StoredEnergy,
    pub penalty: PenaltySchedule,
    /// Iteration cap per stage.
    pub max_iters: usize,
    /// A stage ends once every gradient component is at most this.
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub stage: usize,
    /// Energy without the penalty.
    pub energy: f64,
    /// Penalized objective, the quantity the line search decreases.
    pub objective: f64,
    pub penalty_residual: f64,
    /// Accepted step, 0 for the first row of a stage.
    pub step_size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub beta: f64,
    pub iterations: usize,
    pub objective_start: f64,
    pub objective_end: f64,
    /// Energy without the penalty at the end of the stage.
    pub energy_end: f64,
    pub penalty_residual: f64,
    pub converged: bool,
    /// The line search could not decrease the objective.
    pub stalled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub model: String,
    /// `Σ |T| F(∇u_T)` at the final field.
    pub energy: f64,
    /// `max_T |det ∇u_T - 1|` at the final field.
    pub penalty_residual: f64,
    pub iterations: usize,
    /// The objective never increased within a stage.
    pub monotone: bool,
    pub converged: bool,
    /// `max_v |u_v - (R x_v + b)|`.
    pub deviation_from_affine: f64,
    pub stages: Vec<StageReport>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iter,energy,penalty_residual,step_size,stage,objective\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iter, r.energy, r.penalty_residual, r.step_size, r.stage, r.objective
        );
    }
    out
}

fn max_abs(g: &[Vec2]) -> f64 {
    g.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()))
}

fn is_finite_assembly(a: &Assembly) -> bool {
    a.total.is_finite() && a.grad.iter().flatten().all(|c| c.is_finite())
}

pub fn deviation_from_affine(field: &DeformationField) -> f64 {
    field
        .vertices
        .iter()
        .zip(&field.deformed)
        .map(|(x, u)| {
            let t = field.boundary_value(*x);
            (u[0] - t[0]).hypot(u[1] - t[1])
        })
        .fold(0.0, f64::max)
}

/// Steepest descent with Armijo backtracking on `I_β`, one stage per
/// penalty weight. Each line search starts from twice the last accepted
/// step. Boundary vertices are pinned to `R x + b` before the first stage.
pub fn minimize(problem: &MinimizeProblem) -> Result<(DeformationField, SolveReport)> {
    problem.penalty.validate()?;
    problem.initial.validate()?;
    if !(problem.tol >= 0.0) {
        return Err(Error::Config(format!("tol must be non-negative, got {}", problem.tol)));
    }
    let mut field = problem.initial.clone();
    field.pin_boundary();
    let asm = Assembler::new(&field.mesh(), problem.model);

    let mut trace = Vec::new();
    let mut stages = Vec::new();
    let mut monotone = true;
    let mut total_iters = 0;
    let mut last = None;

    for (stage, beta) in problem.penalty.betas().into_iter().enumerate() {
        let mut a = asm.assemble(&field.deformed, beta);
        if !is_finite_assembly(&a) {
            return Err(Error::Diverged {
                message: format!("non-finite objective at the start of stage {stage} (beta {beta})"),
                last: Box::new(field),
            });
        }
        trace.push(TraceRow {
            iter: total_iters,
            stage,
            energy: a.energy,
            objective: a.total,
            penalty_residual: a.penalty_residual,
            step_size: 0.0,
        });
        let start = a.total;
        let mut step = 0.5;
        let mut iters = 0;
        let mut converged = false;
        let mut stalled = false;
        while iters < problem.max_iters {
            if max_abs(&a.grad) <= problem.tol {
                converged = true;
                break;
            }
            let g2 = pairwise_sum(&a.grad.iter().map(|g| g[0] * g[0] + g[1] * g[1]).collect::<Vec<_>>());
            step *= 2.0;
            let accepted = loop {
                let trial: Vec<Vec2> = field
                    .deformed
                    .iter()
                    .zip(&a.grad)
                    .map(|(u, g)| [u[0] - step * g[0], u[1] - step * g[1]])
                    .collect();
                let b = asm.assemble(&trial, beta);
                if b.total.is_finite() && b.total <= a.total - ARMIJO_C * step * g2 {
                    break Some((trial, b));
                }
                step *= 0.5;
                if step < MIN_STEP {
                    break None;
                }
            };
            let Some((trial, b)) = accepted else {
                stalled = true;
                break;
            };
            if !is_finite_assembly(&b) {
                return Err(Error::Diverged {
                    message: format!("non-finite gradient in stage {stage} after {iters} iterations"),
                    last: Box::new(field),
                });
            }
            if b.total > a.total {
                monotone = false;
            }
            field.deformed = trial;
            a = b;
            iters += 1;
            total_iters += 1;
            trace.push(TraceRow {
                iter: total_iters,
                stage,
                energy: a.energy,
                objective: a.total,
                penalty_residual: a.penalty_residual,
                step_size: step,
            });
        }
        if !converged && max_abs(&a.grad) <= problem.tol {
            converged = true;
        }
        stages.push(StageReport {
            beta,
            iterations: iters,
            objective_start: start,
            objective_end: a.total,
            energy_end: a.energy,
            penalty_residual: a.penalty_residual,
            converged,
            stalled,
        });
        last = Some(a);
    }

    let a = last.expect("at least one stage");
    let report = SolveReport {
        model: problem.model.name(),
        energy: a.energy,
        penalty_residual: a.penalty_residual,
        iterations: total_iters,
        monotone,
        converged: stages.last().map(|s| s.converged).unwrap_or(false),
        deviation_from_affine: deviation_from_affine(&field),
        stages,
        trace,
    };
    Ok((field, report))
}

/// How the starting field is produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// `u = R x + b`.
    Affine,
    /// `R x + b` plus independent uniform noise in `[-amplitude, amplitude]`
    /// on each interior vertex coordinate.
    Perturbed { amplitude: f64, seed: u64 },
    /// Laminate built from the decomposition of `R` in the two-well hull.
    Laminate { frequency: usize, cutoff: f64 },
}

fn default_max_iters() -> usize {
    20_000
}

fn default_tol() -> f64 {
    1e-10
}

/// File form of a minimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimizeConfig {
    pub nx: usize,
    pub ny: usize,
    pub model: EnergyModel,
    #[serde(rename = "R")]
    pub r: Mat2,
    #[serde(default)]
    pub b: Vec2,
    pub init: InitSpec,
    #[serde(default)]
    pub penalty: PenaltySchedule,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::Config(format!("nx, ny must be positive, got {}×{}", self.nx, self.ny)));
        }
        self.model.validate()?;
        self.penalty.validate()?;
        if !self.r.is_finite() || !self.b.iter().all(|c| c.is_finite()) {
            return Err(Error::Config("R and b must be finite".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be non-negative, got {}", self.tol)));
        }
        match self.init {
            InitSpec::Perturbed { amplitude, .. } if !(amplitude >= 0.0 && amplitude.is_finite()) => {
                Err(Error::Config(format!("init.amplitude must be non-negative, got {amplitude}")))
            }
            InitSpec::Laminate { .. } if !matches!(self.model, EnergyModel::TwoWell { .. }) => Err(
                Error::Config("init.kind = laminate needs a two_well model".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn initial_field(&self) -> Result<DeformationField> {
        self.validate()?;
        match self.init {
            InitSpec::Affine => Ok(DeformationField::affine(
                Mesh::new(self.nx, self.ny, Diagonal::Main)?,
                self.r,
                self.b,
            )),
            InitSpec::Perturbed { amplitude, seed } => {
                let mesh = Mesh::new(self.nx, self.ny, Diagonal::Main)?;
                let mut field = DeformationField::affine(mesh, self.r, self.b);
                let mut rng = seeded_rng(seed);
                for v in 0..mesh.n_vertices() {
                    if !mesh.is_boundary(v) {
                        field.deformed[v][0] += rng.gen_range(-amplitude..=amplitude);
                        field.deformed[v][1] += rng.gen_range(-amplitude..=amplitude);
                    }
                }
                Ok(field)
            }
            InitSpec::Laminate { frequency, cutoff } => {
                let EnergyModel::TwoWell { lambda } = self.model else {
                    unreachable!("checked by validate")
                };
                let params = TwoWellParams::new(lambda)?;
                let tree = laminate_decompose(&self.r, &params, DEFAULT_LEAF_TOL)?;
                build_laminate_field_with_offset(&tree, frequency, cutoff, self.nx, self.ny, self.b)
            }
        }
    }

    /// Build the starting field and run the descent.
    pub fn run(&self) -> Result<(DeformationField, SolveReport)> {
        let initial = self.initial_field()?;
        minimize(&MinimizeProblem {
            initial,
            model: &self.model,
            penalty: self.penalty,
            max_iters: self.max_iters,
            tol: self.tol,
        })
    }
}

/// Least-squares affine map `u ≈ A x + c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    #[serde(rename = "A")]
    pub a: Mat2,
    pub c: Vec2,
    /// `max_v |u_v - (A x_v + c)|`.
    pub residual: f64,
}

pub fn fit_affine(vertices: &[Vec2], deformed: &[Vec2]) -> AffineFit {
    let n = vertices.len() as f64;
    let mean = |p: &[Vec2]| {
        let s = p.iter().fold([0.0, 0.0], |s, q| [s[0] + q[0], s[1] + q[1]]);
        [s[0] / n, s[1] / n]
    };
    let xm = mean(vertices);
    let um = mean(deformed);
    let mut sxx = Mat2::ZERO;
    let mut sux = Mat2::ZERO;
    for (x, u) in vertices.iter().zip(deformed) {
        let dx = [x[0] - xm[0], x[1] - xm[1]];
        let du = [u[0] - um[0], u[1] - um[1]];
        sxx = sxx + Mat2::outer(dx, dx);
        sux = sux + Mat2::outer(du, dx);
    }
    let a = match sxx.inverse() {
        Ok(inv) => sux * inv,
        Err(_) => Mat2::ZERO,
    };
    let ax = a.apply(xm);
    let c = [um[0] - ax[0], um[1] - ax[1]];
    let residual = vertices
        .iter()
        .zip(deformed)
        .map(|(x, u)| {
            let p = affine_value(&a, c, *x);
            (u[0] - p[0]).hypot(u[1] - p[1])
        })
        .fold(0.0, f64::max);
    AffineFit { a, c, residual }
}

/// `P` with `G = R P`, `R` the rotation nearest to `G`.
fn polar_stretch(g: &Mat2) -> Option<Mat2> {
    let r = nearest_in_coset(g, &Mat2::IDENTITY).ok()?;
    let p = r.transpose() * *g;
    p.inverse().ok().map(|_| p)
}

fn coset_distance(g: &Mat2, p_inv: &Mat2) -> f64 {
    dist2_to_coset(&(*g * *p_inv), &Mat2::IDENTITY)
        .expect("identity is invertible")
        .sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineCertificate {
    pub certified: bool,
    pub single_coset: bool,
    /// Stretch of the first triangle's gradient.
    #[serde(rename = "P")]
    pub p: Option<Mat2>,
    /// `max_T dist(∇u_T P⁻¹, SO(2))`.
    pub coset_residual: f64,
    pub affine_residual: f64,
    pub affine_fit: AffineFit,
    /// Distinct cosets among gradients outside the blend layer, capped at
    /// [`MAX_COSETS`].
    pub cosets: usize,
    pub reasons: Vec<String>,
}

/// Greedy count of the cosets `SO(2)P` needed to cover `grads` within `tol`.
fn count_cosets(grads: &[Mat2], tol: f64) -> usize {
    let mut reps: Vec<Option<Mat2>> = Vec::new();
    for g in grads {
        let found = reps.iter().any(|rep| match rep {
            Some(p_inv) => coset_distance(g, p_inv) <= tol,
            None => polar_stretch(g).is_none(),
        });
        if !found {
            reps.push(polar_stretch(g).map(|p| p.inverse().expect("checked invertible")));
            if reps.len() >= MAX_COSETS {
                break;
            }
        }
    }
    reps.len()
}

/// Decide whether every gradient lies in one coset `SO(2)P`, `P` taken from
/// the first triangle in row-major order, and whether the vertex positions
/// are an affine map to within `affine_tol`.
pub fn affine_certificate(field: &DeformationField, coset_tol: f64, affine_tol: f64) -> AffineCertificate {
    let grads = field.gradients();
    let p = grads.first().and_then(polar_stretch);
    let coset_residual = match p {
        Some(p) => {
            let p_inv = p.inverse().expect("checked invertible");
            grads.iter().map(|g| coset_distance(g, &p_inv)).fold(0.0, f64::max)
        }
        None => f64::INFINITY,
    };
    let single_coset = coset_residual <= coset_tol;
    let affine_fit = fit_affine(&field.vertices, &field.deformed);
    let affine_residual = affine_fit.residual;
    let core: Vec<Mat2> = grads
        .iter()
        .zip(field.core_mask())
        .filter(|(_, c)| *c)
        .map(|(g, _)| *g)
        .collect();
    let cosets = count_cosets(if core.is_empty() { &grads } else { &core }, coset_tol);

    let mut reasons = Vec::new();
    if p.is_none() {
        reasons.push("first gradient has no polar stretch".to_string());
    }
    if !single_coset {
        if cosets >= MAX_COSETS {
            reasons.push(format!("gradients populate at least {MAX_COSETS} cosets"));
        } else {
            reasons.push(format!("gradients populate {cosets} cosets"));
        }
    }
    if !(affine_residual <= affine_tol) {
        reasons.push(format!("affine fit residual {affine_residual:e} exceeds {affine_tol:e}"));
    }
    AffineCertificate {
        certified: reasons.is_empty(),
        single_coset,
        p,
        coset_residual,
        affine_residual,
        affine_fit,
        cosets,
        reasons,
    }
}

/// Deformed corners of every triangle, in mesh order.
pub fn triangle_corners(field: &DeformationField) -> Vec<[Vec2; 3]> {
    field
        .mesh()
        .triangles()
        .iter()
        .map(|t| t.map(|v| field.deformed[v]))
        .collect()
}

/// Corners with interior vertex `v` duplicated: triangles in the cells
/// above it see the copy moved by `shift`, the rest see the original.
pub fn tear_vertex(field: &DeformationField, v: usize, shift: Vec2) -> Result<Vec<[Vec2; 3]>> {
    let mesh = field.mesh();
    if v >= mesh.n_vertices() || mesh.is_boundary(v) {
        return Err(Error::Config(format!("tear vertex {v} is not an interior vertex")));
    }
    let row = mesh.vertex_ij(v).1;
    Ok(mesh
        .triangles()
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let above = (k / 2) / mesh.nx >= row;
            t.map(|w| {
                let u = field.deformed[w];
                if above && w == v {
                    [u[0] + shift[0], u[1] + shift[1]]
                } else {
                    u
                }
            })
        })
        .collect())
}

/// `max_v |Σ_T |T| cof(∇u_T) ∇φ_v|` over interior hat functions, for
/// per-triangle corner positions that need not agree across edges.
pub fn null_lagrangian_residual_corners(mesh: &Mesh, corners: &[[Vec2; 3]]) -> Result<f64> {
    let geo = mesh.geometry();
    if corners.len() != geo.len() {
        return Err(Error::Format(format!(
            "expected corners for {} triangles, got {}",
            geo.len(),
            corners.len()
        )));
    }
    let mut acc = vec![[0.0; 2]; mesh.n_vertices()];
    for (t, c) in geo.iter().zip(corners) {
        let cof = t.gradient_from_corners(*c).cof();
        for (&v, s) in t.vertices.iter().zip(&t.shape_grads) {
            let w = cof.apply(*s);
            acc[v][0] += t.area * w[0];
            acc[v][1] += t.area * w[1];
        }
    }
    Ok((0..mesh.n_vertices())
        .filter(|&v| !mesh.is_boundary(v))
        .map(|v| norm2(acc[v]))
        .fold(0.0, f64::max))
}

pub fn null_lagrangian_residual(field: &DeformationField) -> f64 {
    null_lagrangian_residual_corners(&field.mesh(), &triangle_corners(field))
        .expect("corners built from the field's own mesh")
}
