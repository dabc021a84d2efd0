//! Experiment dispatch and artifact writing.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tensortomo_core::calculus::{inner_l2_tensor, korn_ratio, norm_l2_tensor, sym_d};
use tensortomo_core::elliptic::solenoidal_project;
use tensortomo_core::fan::BoundaryFan;
use tensortomo_core::fields::SymTensorField;
use tensortomo_core::grid::GridMetric;
use tensortomo_core::normal::{normal_crosscheck, sample_grid};
use tensortomo_core::phantoms::{random_oneform, rng, stream_phantom, tensor_ensemble, EnsembleSpec};
use tensortomo_core::ray_transform::transform;
use tensortomo_core::simplicity::{certify_simple, SimplicityReport, SimplicitySampling};
use tensortomo_core::stability::{
    boundary_pipeline, interval_drift, perturbation_probe, reconstruct_cgls, stability_probe, CglsSettings,
    NormalSettings, PerturbationSettings, ReconstructionOperator, TraceSettings,
};
use tensortomo_core::symbol::{
    ellipticity_constant, log_log_slope, principal_symbol, symbol_order_probe, OrderProbeSettings, ProbeFamily,
    SymbolEvaluator,
};
use tensortomo_core::{Bump, Domain, MetricField, Point, Region, ScalarFn};
use thiserror::Error;

use crate::config::{Command, ConfigError, ExperimentConfig, FieldKind, MetricName};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("{}: {0}", .0.name())]
    Numerical(tensortomo_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<tensortomo_core::Error> for RunError {
    fn from(e: tensortomo_core::Error) -> Self {
        match e {
            tensortomo_core::Error::CertificationFailure { reason } => RunError::Certification(reason),
            other => RunError::Numerical(other),
        }
    }
}

impl RunError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Certification(_) => 3,
            RunError::Numerical(_) => 4,
            RunError::Io(_) | RunError::Csv(_) => 1,
        }
    }
}

/// Files written by a run, relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutputs {
    pub files: Vec<String>,
}

/// Optional command-line context recorded in the manifest.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub source: Option<String>,
    pub threads: Option<usize>,
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV writer that formats every float with 17 significant digits.
struct Table {
    writer: csv::Writer<fs::File>,
}

impl Table {
    fn create(out: &Path, name: &str, header: &[&str], outputs: &mut RunOutputs) -> Result<Self, RunError> {
        let mut writer = csv::Writer::from_path(out.join(name))?;
        writer.write_record(header)?;
        outputs.files.push(name.to_string());
        Ok(Self { writer })
    }

    fn row(&mut self, cells: &[Cell]) -> Result<(), RunError> {
        self.writer.write_record(cells.iter().map(Cell::render))?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), RunError> {
        self.writer.flush()?;
        Ok(())
    }
}

enum Cell {
    F(f64),
    I(usize),
    B(bool),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => fmt(*v),
            Cell::I(v) => v.to_string(),
            Cell::B(v) => v.to_string(),
            Cell::S(v) => v.clone(),
        }
    }
}

use Cell::{B, F, I, S};

struct Context<'a> {
    config: &'a ExperimentConfig,
    out: &'a Path,
    outputs: RunOutputs,
    metric: MetricField,
    domain: Arc<Domain>,
    tag: String,
}

impl Context<'_> {
    fn table(&mut self, stem: &str, header: &[&str]) -> Result<Table, RunError> {
        Table::create(self.out, &format!("{stem}_{}.csv", self.tag), header, &mut self.outputs)
    }

    fn dump(&mut self, stem: &str, text: String) -> Result<(), RunError> {
        let name = format!("{stem}_{}.field", self.tag);
        fs::write(self.out.join(&name), text)?;
        self.outputs.files.push(name);
        Ok(())
    }
}

fn metric_of(kind: MetricName, config: &ExperimentConfig, domain: &Domain) -> Result<MetricField, RunError> {
    let gaussian = ScalarFn::Gaussian {
        amp: config.metric_amplitude,
        center: [config.metric_center_x, config.metric_center_y],
        width: config.metric_width,
    };
    Ok(match kind {
        MetricName::Euclidean => MetricField::euclidean(),
        MetricName::Conformal => MetricField::conformal(gaussian)?,
        MetricName::Perturbed => {
            let base = metric_of(config.metric_base, config, domain)?;
            MetricField::perturbed(base, config.perturbation_eps, bump_of(config, domain)?)?
        }
    })
}

fn bump_of(config: &ExperimentConfig, domain: &Domain) -> Result<Bump, RunError> {
    Ok(Bump::normalized(
        [config.perturbation_a11, config.perturbation_a12, config.perturbation_a22],
        [config.perturbation_center_x, config.perturbation_center_y],
        config.perturbation_width,
        domain,
    )?)
}

fn ensemble_of(config: &ExperimentConfig) -> EnsembleSpec {
    EnsembleSpec {
        size: config.ensemble_size,
        seed: config.seed,
        n_modes: config.ensemble_modes,
        band: config.ensemble_band,
        support: config.ensemble_support,
    }
}

fn sampling_of(config: &ExperimentConfig) -> SimplicitySampling {
    SimplicitySampling {
        n_boundary: config.certify_boundary_points,
        n_dirs: config.certify_directions,
        step: config.certify_step,
        t_min: config.certify_t_min,
        n_pairs: config.certify_pairs,
    }
}

/// The configured single input field.
fn field_of(ctx: &Context) -> SymTensorField {
    let c = ctx.config;
    let d = ctx.domain.clone();
    match c.field_kind {
        FieldKind::Random => tensor_ensemble(&d, &EnsembleSpec { size: 1, ..ensemble_of(c) }).remove(0),
        FieldKind::Stream => {
            stream_phantom(d, [c.phantom_center_x, c.phantom_center_y], c.phantom_width, c.phantom_amplitude)
        }
        FieldKind::Potential => {
            let gm = GridMetric::new(&ctx.metric, d.clone());
            let v = random_oneform(d, &mut rng(c.seed), c.ensemble_modes, c.ensemble_band, true);
            sym_d(&gm, &v).restrict(Region::M)
        }
        FieldKind::Metric => SymTensorField::from_fn(d, Region::M1, |x| {
            let g = ctx.metric.g(x);
            [g[(0, 0)], g[(0, 1)], g[(1, 1)]]
        }),
    }
}

/// File-name tag: metric descriptor, grid spacing, fan size and seed.
pub fn output_tag(config: &ExperimentConfig, metric: &MetricField) -> String {
    format!(
        "{}_h{}_fan{}x{}_seed{}",
        metric.kind().describe(),
        config.h,
        config.fan_points,
        config.fan_directions,
        config.seed
    )
}

fn manifest(config: &ExperimentConfig, invocation: &Invocation, outputs: &RunOutputs) -> String {
    let mut text = String::new();
    text.push_str("# tensortomo experiment manifest; replay with\n");
    text.push_str(&format!("#   tensortomo {} --config manifest.txt\n", config.experiment));
    text.push_str(&format!(
        "# versions: tensortomo-cli {}, tensortomo-core {}\n",
        env!("CARGO_PKG_VERSION"),
        tensortomo_core::VERSION
    ));
    if let Some(t) = invocation.threads {
        text.push_str(&format!("# threads: {t}\n"));
    }
    if let Some(src) = &invocation.source {
        text.push_str("# source config:\n");
        for line in src.lines() {
            text.push_str(&format!("#   {line}\n"));
        }
    }
    text.push_str("# resolved parameters:\n");
    text.push_str(&config.to_text());
    text.push_str("# outputs:\n");
    for f in &outputs.files {
        text.push_str(&format!("#   {f}\n"));
    }
    text
}

/// Runs `config.experiment`, writing CSVs, field dumps and `manifest.txt`
/// into `out`. The manifest is written even when the experiment fails.
pub fn run(config: &ExperimentConfig, out: &Path, invocation: &Invocation) -> Result<RunOutputs, RunError> {
    fs::create_dir_all(out)?;
    let result = run_inner(config, out);
    let outputs = match &result {
        Ok(o) => o.clone(),
        Err(_) => RunOutputs::default(),
    };
    fs::write(out.join("manifest.txt"), manifest(config, invocation, &outputs))?;
    result
}

fn run_inner(config: &ExperimentConfig, out: &Path) -> Result<RunOutputs, RunError> {
    let domain = Arc::new(Domain::new(config.radius_m, config.radius_m1, config.h)?);
    let metric = metric_of(config.metric_kind, config, &domain)?;
    let tag = output_tag(config, &metric);
    let mut ctx = Context { config, out, outputs: RunOutputs::default(), metric, domain, tag };
    let report = certify_simple(&ctx.metric, &ctx.domain, &sampling_of(config));
    if config.experiment == Command::Certify {
        write_certification(&mut ctx, &report)?;
        report.require()?;
        return Ok(ctx.outputs);
    }
    report.require()?;
    match config.experiment {
        Command::Certify => unreachable!(),
        Command::Forward => forward(&mut ctx)?,
        Command::NormalCrosscheck => crosscheck(&mut ctx)?,
        Command::Symbol => symbol(&mut ctx)?,
        Command::Decompose => decompose(&mut ctx)?,
        Command::BoundaryRecovery => boundary_recovery(&mut ctx)?,
        Command::Stability => stability(&mut ctx)?,
        Command::Perturbation => perturbation(&mut ctx)?,
        Command::Reconstruct => reconstruct(&mut ctx)?,
    }
    Ok(ctx.outputs)
}

fn write_certification(ctx: &mut Context, r: &SimplicityReport) -> Result<(), RunError> {
    let mut t = ctx.table(
        "certify",
        &[
            "boundary_convexity_min",
            "conjugate_point_found",
            "min_jacobi",
            "max_diffeo_residual",
            "trapped_geodesic",
            "simple",
        ],
    )?;
    t.row(&[
        F(r.boundary_convexity_min),
        B(r.conjugate_point_found),
        F(r.min_jacobi),
        F(r.max_diffeo_residual),
        B(r.trapped_geodesic),
        B(r.is_simple()),
    ])?;
    t.finish()
}

fn forward(ctx: &mut Context) -> Result<(), RunError> {
    let c = ctx.config;
    let f = field_of(ctx);
    let fan = Arc::new(BoundaryFan::new(&ctx.metric, c.radius_m, c.fan_points, c.fan_directions)?);
    let data = transform(&ctx.metric, &f, &fan, c.step)?;
    let mut t = ctx.table("forward", &["point", "direction", "x1", "x2", "omega1", "omega2", "weight_mu", "value"])?;
    for (i, (e, v)) in fan.entries.iter().zip(&data.values).enumerate() {
        t.row(&[
            I(i / fan.n_dirs),
            I(i % fan.n_dirs),
            F(e.x.x),
            F(e.x.y),
            F(e.omega.x),
            F(e.omega.y),
            F(e.weight_mu),
            F(*v),
        ])?;
    }
    t.finish()?;
    ctx.dump("forward_input", f.dump())
}

fn crosscheck(ctx: &mut Context) -> Result<(), RunError> {
    let c = ctx.config;
    let f = field_of(ctx);
    let points = sample_grid(c.crosscheck_points, c.crosscheck_spacing);
    let (rows, total) = normal_crosscheck(&ctx.metric, &f, &points, c.normal_directions, c.step)?;
    let mut t = ctx.table(
        "normal_crosscheck",
        &["x1", "x2", "kernel11", "kernel12", "kernel22", "compose11", "compose12", "compose22", "relative"],
    )?;
    for r in &rows {
        t.row(&[
            F(r.x.x),
            F(r.x.y),
            F(r.kernel[0]),
            F(r.kernel[1]),
            F(r.kernel[2]),
            F(r.compose[0]),
            F(r.compose[1]),
            F(r.compose[2]),
            F(r.relative),
        ])?;
    }
    t.finish()?;
    let mut s = ctx.table("normal_crosscheck_summary", &["metric", "points", "relative_frobenius"])?;
    s.row(&[S(ctx.metric.kind().describe()), I(rows.len()), F(total)])?;
    s.finish()
}

fn symbol(ctx: &mut Context) -> Result<(), RunError> {
    let c = ctx.config;
    let mut header = vec!["x1", "x2", "xi1", "xi2"];
    let comps = ["s1111", "s1112", "s1122", "s1211", "s1212", "s1222", "s2211", "s2212", "s2222"];
    header.extend(comps);
    header.extend(["c0_exact", "c0_mollified"]);
    let mut t = ctx.table("symbol", &header)?;
    for x in sample_grid(c.crosscheck_points, c.crosscheck_spacing) {
        for a in 0..c.symbol_directions {
            let th = PI * a as f64 / c.symbol_directions as f64;
            let xi = Point::new(th.cos(), th.sin());
            let s = principal_symbol(&ctx.metric, x, xi, SymbolEvaluator::Exact)?;
            let exact = ellipticity_constant(&ctx.metric, x, xi, SymbolEvaluator::Exact)?;
            let moll = ellipticity_constant(&ctx.metric, x, xi, SymbolEvaluator::Mollified(c.symbol_mollifier))?;
            let mut row = vec![F(x.x), F(x.y), F(xi.x), F(xi.y)];
            row.extend(s.components().iter().map(|v| F(*v)));
            row.extend([F(exact), F(moll)]);
            t.row(&row)?;
        }
    }
    t.finish()?;
    let probe_domain = Arc::new(Domain::new(c.radius_m, c.radius_m1, c.symbol_probe_h)?);
    let settings = OrderProbeSettings {
        n_dirs: c.symbol_probe_directions,
        step_factor: c.normal_step_factor,
        envelope_radius: c.symbol_envelope_radius,
    };
    let sol =
        symbol_order_probe(&ctx.metric, probe_domain.clone(), &c.symbol_k_list, ProbeFamily::Solenoidal, &settings)?;
    let pot = symbol_order_probe(&ctx.metric, probe_domain, &c.symbol_k_list, ProbeFamily::Potential, &settings)?;
    let mut t = ctx.table("symbol_order", &["k", "ratio_solenoidal", "ratio_potential"])?;
    for (a, b) in sol.iter().zip(&pot) {
        t.row(&[F(a.k), F(a.ratio), F(b.ratio)])?;
    }
    t.finish()?;
    let mut s = ctx.table("symbol_order_summary", &["probe_h", "slope_solenoidal", "slope_potential"])?;
    let slope =
        |rows: &[tensortomo_core::symbol::OrderProbeRow]| if rows.len() >= 2 { log_log_slope(rows) } else { f64::NAN };
    s.row(&[F(c.symbol_probe_h), F(slope(&sol)), F(slope(&pot))])?;
    s.finish()
}

fn decompose(ctx: &mut Context) -> Result<(), RunError> {
    let f = field_of(ctx).restrict(Region::M);
    let gm = Arc::new(GridMetric::new(&ctx.metric, ctx.domain.clone()));
    let (fs, v) = solenoidal_project(gm.clone(), &f, Region::M)?;
    let dv = sym_d(&gm, &v).restrict(Region::M);
    let (nf, nfs, ndv) =
        (norm_l2_tensor(&gm, &f, Region::M), norm_l2_tensor(&gm, &fs, Region::M), norm_l2_tensor(&gm, &dv, Region::M));
    let orth = if nfs > 0.0 && ndv > 0.0 { inner_l2_tensor(&gm, &fs, &dv, Region::M).abs() / (nfs * ndv) } else { 0.0 };
    let korn = korn_ratio(&gm, &v, Region::M).unwrap_or(f64::NAN);
    let mut t = ctx.table("decompose", &["norm_f", "norm_fs", "norm_dv", "orthogonality", "korn_ratio"])?;
    t.row(&[F(nf), F(nfs), F(ndv), F(orth), F(korn)])?;
    t.finish()?;
    ctx.dump("decompose_f", f.dump())?;
    ctx.dump("decompose_fs", fs.dump())?;
    ctx.dump("decompose_v", v.restrict(Region::M).dump())
}

fn boundary_recovery(ctx: &mut Context) -> Result<(), RunError> {
    let c = ctx.config;
    let f = field_of(ctx).restrict(Region::M);
    let gm = Arc::new(GridMetric::new(&ctx.metric, ctx.domain.clone()));
    let settings = TraceSettings { step: c.trace_step, ..TraceSettings::default() };
    let r = boundary_pipeline(&ctx.metric, gm, &f, settings)?;
    let mut t = ctx.table("boundary_trace", &["x1", "x2", "w1", "w2", "direct1", "direct2", "tilt", "consistency"])?;
    for (s, d) in r.samples.iter().zip(&r.direct) {
        t.row(&[F(s.point.x), F(s.point.y), F(s.w[0]), F(s.w[1]), F(d[0]), F(d[1]), F(s.tilt), F(s.consistency)])?;
    }
    t.finish()?;
    let mut s = ctx.table(
        "boundary_summary",
        &["trace_error", "pipeline_error", "consistency", "annulus_constant", "interior_constant"],
    )?;
    s.row(&[F(r.trace_error), F(r.pipeline_error), F(r.consistency), F(r.annulus_constant), F(r.interior_constant)])?;
    s.finish()?;
    ctx.dump("boundary_fs_pipeline", r.solenoidal.dump())?;
    ctx.dump("boundary_fs_direct", r.solenoidal_direct.dump())
}

fn stability(ctx: &mut Context) -> Result<(), RunError> {
    let c = ctx.config;
    let normal = NormalSettings { n_dirs: c.normal_directions, step_factor: c.normal_step_factor };
    let mut reports = Vec::new();
    for level in 0..c.stability_levels {
        let h = c.h / f64::powi(2.0, level as i32);
        let domain = Arc::new(Domain::new(c.radius_m, c.radius_m1, h)?);
        reports.push(stability_probe(&ctx.metric, domain, &ensemble_of(c), &normal)?);
    }
    let mut t = ctx.table(
        "stability_samples",
        &["h", "index", "solenoidal_fraction", "accepted", "ratio", "ratio_solenoidal", "compact_ratio"],
    )?;
    for r in &reports {
        for s in &r.samples {
            t.row(&[
                F(r.h),
                I(s.index),
                F(s.solenoidal_fraction),
                B(s.accepted),
                F(s.ratio),
                F(s.ratio_solenoidal),
                F(s.compact_ratio),
            ])?;
        }
    }
    t.finish()?;
    let mut s = ctx.table(
        "stability_summary",
        &["h", "accepted", "c_emp", "c_emp_upper", "solenoidal_mismatch", "compact_constant", "drift"],
    )?;
    for (i, r) in reports.iter().enumerate() {
        let drift = if i == 0 { 0.0 } else { interval_drift(&reports[i - 1], r) };
        s.row(&[
            F(r.h),
            I(r.accepted()),
            F(r.c_emp),
            F(r.c_emp_upper),
            F(r.solenoidal_mismatch),
            F(r.compact_constant),
            F(drift),
        ])?;
    }
    s.finish()
}

fn perturbation(ctx: &mut Context) -> Result<(), RunError> {
    let c = ctx.config;
    let settings = PerturbationSettings {
        normal: NormalSettings { n_dirs: c.perturbation_directions, step_factor: c.perturbation_step_factor },
        test_set: EnsembleSpec { size: c.perturbation_test_size, seed: c.perturbation_test_seed, ..ensemble_of(c) },
        sampling: sampling_of(c),
    };
    let bump = bump_of(c, &ctx.domain)?;
    let r = perturbation_probe(&ctx.metric, &bump, &c.perturbation_eps_list, ctx.domain.clone(), &settings)?;
    let mut t = ctx.table("perturbation", &["eps", "operator_difference", "projector_difference", "c_emp"])?;
    for row in &r.rows {
        t.row(&[F(row.eps), F(row.operator_difference), F(row.projector_difference), F(row.c_emp)])?;
    }
    t.finish()?;
    let mut s = ctx.table(
        "perturbation_summary",
        &["slope_operator", "slope_projector", "degradation_slope", "degradation_constant"],
    )?;
    s.row(&[
        F(r.slope_operator),
        F(r.slope_projector),
        F(r.degradation_slope.unwrap_or(f64::NAN)),
        F(r.degradation_constant),
    ])?;
    s.finish()
}

fn reconstruct(ctx: &mut Context) -> Result<(), RunError> {
    let c = ctx.config;
    let f = field_of(ctx).restrict(Region::M);
    let gm = Arc::new(GridMetric::new(&ctx.metric, ctx.domain.clone()));
    let fan = Arc::new(BoundaryFan::new(&ctx.metric, c.radius_m, c.fan_points, c.fan_directions)?);
    let data = transform(&ctx.metric, &f, &fan, c.step)?;
    let op = ReconstructionOperator::new(&ctx.metric, ctx.domain.clone(), &fan, c.cgls_spline_spacing, c.step)?;
    let settings = CglsSettings { max_iter: c.cgls_max_iter, tol: c.cgls_tol, ..CglsSettings::default() };
    let out = reconstruct_cgls(&op, &data, &settings)?;
    let (truth, _) = solenoidal_project(gm.clone(), &f, Region::M)?;
    let nf = norm_l2_tensor(&gm, &f, Region::M);
    let nt = norm_l2_tensor(&gm, &truth, Region::M);
    let err = norm_l2_tensor(&gm, &out.field.axpy(-1.0, &truth)?, Region::M);
    let mut t = ctx.table("cgls_history", &["iteration", "relative_residual"])?;
    for (i, r) in out.history.iter().enumerate() {
        t.row(&[I(i + 1), F(*r)])?;
    }
    t.finish()?;
    let mut s =
        ctx.table("reconstruct_summary", &["iterations", "relative_residual", "error_vs_solenoidal", "norm_ratio"])?;
    let rel = if nt > 0.0 { err / nt } else { f64::NAN };
    let ratio = if nf > 0.0 { norm_l2_tensor(&gm, &out.field, Region::M) / nf } else { 0.0 };
    s.row(&[I(out.iterations), F(out.residual), F(rel), F(ratio)])?;
    s.finish()?;
    ctx.dump("reconstructed", out.field.dump())
}

/// Output directory for a run: the CLI override, else `output.dir`.
pub fn output_dir(config: &ExperimentConfig, override_dir: Option<&Path>) -> PathBuf {
    override_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&config.output_dir))
}
