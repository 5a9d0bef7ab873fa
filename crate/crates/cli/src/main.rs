//! `twowell`: command-line front end.
//!
//! Results are JSON on stdout unless `--out` names a file. Exit status is 0
//! on success, 2 for usage and validation errors, 3 for numeric failures.
//! `TWOWELL_THREADS` caps the worker pool (0 or unset: one per core).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use twowell::energy::{build_biconjugate, EnergyModel, GridEnvelope, StoredEnergy};
use twowell::laminate::{
    build_laminate_field_with_offset, field_energy, field_gradient_stats, field_to_svg, suggested_grid,
    DeformationField, GradientStats,
};
use twowell::matcore::{Mat2, Mat3};
use twowell::minimizer::{
    affine_certificate, null_lagrangian_residual, trace_csv, AffineCertificate, MinimizeConfig,
};
use twowell::wellsgeo::{
    hull_coordinates, laminate_decompose, membership, rank_one_angles, sample_zmin, so3_rank_one_scan,
    zmin_sweep, LaminateTree, DEFAULT_LEAF_TOL, DEFAULT_MEMBERSHIP_TOL,
};
use twowell::{Error, TwoWellParams};

#[derive(Parser)]
#[command(name = "twowell", version, about = "Two-well incompressible microstructure toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank-one connections between rotation cosets.
    #[command(subcommand)]
    Wells(WellsCmd),
    /// Membership, coordinates and samples of the hulls of K.
    #[command(subcommand)]
    Hull(HullCmd),
    /// Grid convex envelope of an energy.
    #[command(subcommand)]
    Envelope(EnvelopeCmd),
    /// Laminate deformation fields.
    #[command(subcommand)]
    Laminate(LaminateCmd),
    /// Penalized incompressible descent from a JSON config.
    Minimize(MinimizeArgs),
    /// Affineness certificate and cofactor divergence of a field.
    Certify(CertifyArgs),
    /// Search SO(3) for rotations R with R - Q of rank one.
    So3scan(So3Args),
}

#[derive(Args, Clone)]
struct Common {
    /// Well parameter, H = diag(lambda, 1/lambda).
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum WellsCmd {
    /// Angles θ with det(R_θ Q1 - Q2) = 0 (default Q1 = I, Q2 = H).
    Connect {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mat2)]
        q1: Option<Mat2>,
        #[arg(long, value_parser = parse_mat2)]
        q2: Option<Mat2>,
    },
}

#[derive(Subcommand)]
enum HullCmd {
    /// Membership in K, Z_min and K^c with hull coordinates.
    Test {
        #[command(flatten)]
        common: Common,
        /// Row-major a,b,c,d.
        #[arg(long, value_parser = parse_mat2)]
        matrix: Mat2,
        #[arg(long, default_value_t = DEFAULT_MEMBERSHIP_TOL)]
        tol: f64,
    },
    /// One point of Z_min from polar hull coordinates.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long)]
        t: f64,
    },
    /// CSV sweep of Z_min (columns alpha,gamma,t,m11,m12,m21,m22).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        steps: usize,
    },
    /// Laminate tree of a matrix in Z_min.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mat2)]
        matrix: Mat2,
        #[arg(long, default_value_t = DEFAULT_LEAF_TOL)]
        tol: f64,
    },
}

#[derive(Args, Clone)]
struct ModelArg {
    /// Energy to convexify: two_well or dirichlet.
    #[arg(long, default_value = "two_well")]
    model: String,
}

#[derive(Subcommand)]
enum EnvelopeCmd {
    /// Sample the energy on [-box, box]⁴ and write its biconjugate.
    Build {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 33)]
        resolution: usize,
        #[arg(long = "box", default_value_t = 3.0)]
        box_half: f64,
        /// Binary envelope file to write.
        #[arg(long)]
        envelope: PathBuf,
    },
    /// Interpolated envelope value at a matrix.
    Query {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        envelope: PathBuf,
        #[arg(long, value_parser = parse_mat2)]
        matrix: Mat2,
    },
    /// CSV of a 2-D slice through the grid.
    Slice {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        envelope: PathBuf,
        /// Two varying entries, 0..3 in row-major order.
        #[arg(long, value_parser = parse_axes)]
        axes: (usize, usize),
        /// Values of the fixed entries.
        #[arg(long, value_parser = parse_mat2, default_value = "0,0,0,0")]
        at: Mat2,
    },
}

#[derive(Subcommand)]
enum LaminateCmd {
    /// Build a laminate field; prints gradient statistics.
    Build(LaminateBuild),
}

#[derive(Args)]
struct LaminateBuild {
    #[command(flatten)]
    common: Common,
    /// Named target; `mid` is (I + R_θ H)/2.
    #[arg(long, conflicts_with_all = ["matrix", "tree"])]
    target: Option<String>,
    #[arg(long, value_parser = parse_mat2, conflicts_with = "tree")]
    matrix: Option<Mat2>,
    /// Laminate tree JSON, as written by `hull decompose`.
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long = "freq")]
    frequency: usize,
    #[arg(long)]
    cutoff: f64,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Field JSON to write.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct MinimizeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Final field JSON.
    #[arg(long)]
    field: Option<PathBuf>,
    /// Per-iteration CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = twowell::minimizer::DEFAULT_COSET_TOL)]
    coset_tol: f64,
    #[arg(long, default_value_t = twowell::minimizer::DEFAULT_AFFINE_TOL)]
    affine_tol: f64,
}

#[derive(Args)]
struct So3Args {
    /// Diagonal of Q, l1,l2,l3 with product 1.
    #[arg(long, value_parser = parse_vec3)]
    diag: [f64; 3],
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 400)]
    refine: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err("entries must be finite".into());
    }
    Ok(v)
}

fn parse_mat2(s: &str) -> Result<Mat2, String> {
    let v = parse_floats(s, 4)?;
    Ok(Mat2::new(v[0], v[1], v[2], v[3]))
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v = parse_floats(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

fn parse_axes(s: &str) -> Result<(usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [a, b] if a != b && *a < 4 && *b < 4 => Ok((*a, *b)),
        _ => Err("expected two distinct axes in 0..3".into()),
    }
}

fn model_from_name(name: &str, params: &TwoWellParams) -> Result<EnergyModel, Error> {
    match name {
        "two_well" | "two-well" => Ok(EnergyModel::two_well(params)),
        "dirichlet" => Ok(EnergyModel::Dirichlet),
        other => Err(Error::Config(format!("model must be two_well or dirichlet, got '{other}'"))),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn emit_text(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<(), Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    emit_text(out, &s)
}

#[derive(Serialize)]
struct ConnectOut {
    lambda: f64,
    q1: Mat2,
    q2: Mat2,
    angles: Vec<f64>,
    degenerate: bool,
}

#[derive(Serialize)]
struct HullTestOut {
    matrix: Mat2,
    #[serde(rename = "in_K")]
    in_k: bool,
    #[serde(rename = "in_Zmin")]
    in_zmin: bool,
    #[serde(rename = "in_Kc")]
    in_kc: bool,
    x: [f64; 2],
    y: [f64; 2],
    det: f64,
}

#[derive(Serialize)]
struct SampleOut {
    alpha: f64,
    gamma: f64,
    t: f64,
    matrix: Mat2,
    x: [f64; 2],
    y: [f64; 2],
    det: f64,
}

#[derive(Serialize)]
struct EnvelopeSummary {
    model: String,
    #[serde(rename = "box")]
    box_half: f64,
    resolution: usize,
    nodes: usize,
    min_second_difference: f64,
    path: String,
}

#[derive(Serialize)]
struct QueryOut {
    matrix: Mat2,
    value: f64,
}

#[derive(Serialize)]
struct LaminateOut {
    depth: usize,
    frequency: usize,
    cutoff: f64,
    nx: usize,
    ny: usize,
    energy: f64,
    stats: GradientStats,
}

#[derive(Serialize)]
struct CertifyOut {
    #[serde(flatten)]
    certificate: AffineCertificate,
    null_lagrangian_residual: f64,
}

fn params(lambda: f64) -> Result<TwoWellParams, Error> {
    TwoWellParams::new(lambda)
}

fn run_wells(cmd: WellsCmd) -> Result<(), Error> {
    let WellsCmd::Connect { common, q1, q2 } = cmd;
    let p = params(common.lambda)?;
    let q1 = q1.unwrap_or(Mat2::IDENTITY);
    let q2 = q2.unwrap_or_else(|| p.h());
    let conn = rank_one_angles(&q1, &q2)?;
    emit_json(
        &common.out,
        &ConnectOut {
            lambda: common.lambda,
            q1,
            q2,
            angles: conn.angles,
            degenerate: conn.degenerate,
        },
    )
}

fn run_hull(cmd: HullCmd) -> Result<(), Error> {
    match cmd {
        HullCmd::Test { common, matrix, tol } => {
            let p = params(common.lambda)?;
            if !(tol >= 0.0) {
                return Err(Error::Config(format!("tol must be non-negative, got {tol}")));
            }
            let m = membership(&matrix, &p, tol);
            let hc = hull_coordinates(&matrix, &p);
            emit_json(
                &common.out,
                &HullTestOut {
                    matrix,
                    in_k: m.in_k,
                    in_zmin: m.in_zmin,
                    in_kc: m.in_kc,
                    x: hc.x,
                    y: hc.y,
                    det: matrix.det(),
                },
            )
        }
        HullCmd::Sample { common, alpha, gamma, t } => {
            let p = params(common.lambda)?;
            let m = sample_zmin(alpha, gamma, t, &p)?;
            let hc = hull_coordinates(&m, &p);
            emit_json(
                &common.out,
                &SampleOut {
                    alpha,
                    gamma,
                    t,
                    matrix: m,
                    x: hc.x,
                    y: hc.y,
                    det: m.det(),
                },
            )
        }
        HullCmd::Sweep { common, steps } => {
            let p = params(common.lambda)?;
            if steps == 0 {
                return Err(Error::Config("steps must be positive".into()));
            }
            let mut csv = String::from("alpha,gamma,t,m11,m12,m21,m22\n");
            for (a, g, t, m) in zmin_sweep(steps, &p) {
                csv.push_str(&format!("{a},{g},{t},{},{},{},{}\n", m.m11, m.m12, m.m21, m.m22));
            }
            emit_text(&common.out, &csv)
        }
        HullCmd::Decompose { common, matrix, tol } => {
            let p = params(common.lambda)?;
            let tree = laminate_decompose(&matrix, &p, tol)?;
            emit_json(&common.out, &tree)
        }
    }
}

fn run_envelope(cmd: EnvelopeCmd) -> Result<(), Error> {
    match cmd {
        EnvelopeCmd::Build {
            common,
            model,
            resolution,
            box_half,
            envelope,
        } => {
            let p = params(common.lambda)?;
            let model = model_from_name(&model.model, &p)?;
            let env = build_biconjugate(&model, box_half, resolution)?;
            env.save(&envelope)?;
            emit_json(
                &common.out,
                &EnvelopeSummary {
                    model: model.name(),
                    box_half,
                    resolution,
                    nodes: env.values.len(),
                    min_second_difference: env.min_line_second_difference(),
                    path: envelope.display().to_string(),
                },
            )
        }
        EnvelopeCmd::Query { out, envelope, matrix } => {
            let env = GridEnvelope::load(&envelope)?;
            let value = env.eval(&matrix)?;
            emit_json(&out, &QueryOut { matrix, value })
        }
        EnvelopeCmd::Slice { out, envelope, axes, at } => {
            let env = GridEnvelope::load(&envelope)?;
            emit_text(&out, &env.slice_csv(axes.0, axes.1, &at)?)
        }
    }
}

fn run_laminate(cmd: LaminateCmd) -> Result<(), Error> {
    let LaminateCmd::Build(a) = cmd;
    let p = params(a.common.lambda)?;
    let tree: LaminateTree = match (&a.target, a.matrix, &a.tree) {
        (Some(t), _, _) if t == "mid" => laminate_decompose(&p.midpoint(), &p, DEFAULT_LEAF_TOL)?,
        (Some(t), _, _) => return Err(Error::Config(format!("unknown target '{t}', expected 'mid'"))),
        (None, Some(m), _) => laminate_decompose(&m, &p, DEFAULT_LEAF_TOL)?,
        (None, None, Some(path)) => {
            let tree: LaminateTree = serde_json::from_str(&fs::read_to_string(path)?)?;
            tree.validate(&p, 1e-8)?;
            tree
        }
        (None, None, None) => return Err(Error::Config("one of --target, --matrix, --tree is required".into())),
    };
    let (gx, gy) = suggested_grid(&tree, a.frequency);
    let (nx, ny) = (a.nx.unwrap_or(gx), a.ny.unwrap_or(gy));
    let field = build_laminate_field_with_offset(&tree, a.frequency, a.cutoff, nx, ny, [0.0, 0.0])?;
    if let Some(path) = &a.field {
        write_file(path, field.to_json()?.as_bytes())?;
    }
    if let Some(path) = &a.svg {
        write_file(path, field_to_svg(&field, &p).as_bytes())?;
    }
    let energy = field_energy(&field, &EnergyModel::two_well(&p));
    emit_json(
        &a.common.out,
        &LaminateOut {
            depth: tree.depth(),
            frequency: a.frequency,
            cutoff: a.cutoff,
            nx,
            ny,
            energy,
            stats: field_gradient_stats(&field, &p, 1e-9),
        },
    )
}

fn run_minimize(a: MinimizeArgs) -> Result<(), Error> {
    let cfg: MinimizeConfig = serde_json::from_str(&fs::read_to_string(&a.config)?)?;
    cfg.validate()?;
    let (field, report) = cfg.run()?;
    if let Some(path) = &a.field {
        write_file(path, field.to_json()?.as_bytes())?;
    }
    if let Some(path) = &a.trace {
        write_file(path, trace_csv(&report.trace).as_bytes())?;
    }
    if let Some(path) = &a.svg {
        let lambda = match cfg.model {
            EnergyModel::TwoWell { lambda } => lambda,
            EnergyModel::Dirichlet => 0.5,
        };
        write_file(path, field_to_svg(&field, &params(lambda)?).as_bytes())?;
    }
    emit_json(&a.out, &report)
}

fn run_certify(a: CertifyArgs) -> Result<(), Error> {
    if !(a.coset_tol >= 0.0 && a.affine_tol >= 0.0) {
        return Err(Error::Config("tolerances must be non-negative".into()));
    }
    let field = DeformationField::load_json(&a.field)?;
    emit_json(
        &a.out,
        &CertifyOut {
            certificate: affine_certificate(&field, a.coset_tol, a.affine_tol),
            null_lagrangian_residual: null_lagrangian_residual(&field),
        },
    )
}

fn run_so3(a: So3Args) -> Result<(), Error> {
    let result = so3_rank_one_scan(&Mat3::diag(a.diag), a.samples, a.refine)?;
    emit_json(&a.out, &result)
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("TWOWELL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("TWOWELL_THREADS must be a non-negative integer, got '{raw}'")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::Diverged { .. } | Error::DecompositionNotFound(_) | Error::ProjectionUndefined => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Wells(c) => run_wells(c),
        Command::Hull(c) => run_hull(c),
        Command::Envelope(c) => run_envelope(c),
        Command::Laminate(c) => run_laminate(c),
        Command::Minimize(a) => run_minimize(a),
        Command::Certify(a) => run_certify(a),
        Command::So3scan(a) => run_so3(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
