//! Experiment harnesses: recovery of `f^s` from boundary data of the
//! potential on `M1`, empirical stability constants, the perturbation probe
//! and least-squares reconstruction from ray data.
//!
//! Sign convention for the boundary potential: with `Ef = f^s_{M1} + dv₁`
//! (`v₁` vanishing on `∂M1`) and `Ef^s = f^s_{M1} + dw`, one has `w = v₁`
//! on `M1 \ M`. Along a geodesic leaving `x ∈ ∂M` without re-entering `M`,
//! `d/dt (w_i γ̇^i) = -[f^s_{M1}]_ij γ̇^i γ̇^j`, hence
//! `w_i(x) ξ^i = ∫_0^τ [f^s_{M1}]_ij γ̇^i γ̇^j dt`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Vector2};
use rayon::prelude::*;
use sprs::{CsMat, TriMat};

use crate::calculus::{norm_h1_oneform, norm_h1_tensor, norm_l2_oneform, norm_l2_tensor, sym_d};
use crate::domain::{Domain, Point, Region};
use crate::elliptic::{DirichletSolver, NegativeNorm};
use crate::error::{Error, Result};
use crate::fan::BoundaryFan;
use crate::fields::{OneFormField, SymTensorField};
use crate::geodesic::integrate;
use crate::grid::{GridMetric, NodeMetric};
use crate::metric::{Bump, MetricField};
use crate::normal::NormalEvaluator;
use crate::phantoms::{tensor_ensemble, EnsembleSpec};
use crate::ray_transform::{contract_velocity, csr_apply, RayData, RayMatrix};
use crate::simplicity::{certify_simple, SimplicitySampling};
use crate::symbol::fit_slope;

/// Direction choice for the boundary integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSettings {
    pub step: f64,
    /// Tilt angles from the outward normal, tried in order.
    pub tilts: Vec<f64>,
}

impl Default for TraceSettings {
    fn default() -> Self {
        Self { step: 1e-3, tilts: vec![PI / 4.0, PI / 6.0, PI / 8.0, PI / 12.0] }
    }
}

/// `w` recovered at one point of `M1 \ M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub point: Point,
    pub w: [f64; 2],
    /// Tilt that produced the pair.
    pub tilt: f64,
    /// `|w(x)·ν - ∫ f^s_{M1}|` for the normal direction `ν`, relative to `|w|_g`.
    pub consistency: f64,
}

/// Geodesic recovery of the potential `w` on `M1 \ M` from `f^s_{M1}`.
#[derive(Debug, Clone)]
pub struct TraceRecovery {
    pub metric: MetricField,
    /// `f^s_{M1}`, the solenoidal part of `Ef` on `M1`.
    pub fs_m1: SymTensorField,
    /// The potential `v₁` of the same projection, used as the elliptic oracle.
    pub v_m1: OneFormField,
    pub settings: TraceSettings,
}

impl TraceRecovery {
    pub fn new(metric: &MetricField, gm: Arc<GridMetric>, f: &SymTensorField, settings: TraceSettings) -> Result<Self> {
        let solver = DirichletSolver::new(gm, Region::M1)?;
        let (fs_m1, v_m1) = solver.project(&f.restrict(Region::M))?;
        Ok(Self { metric: metric.clone(), fs_m1, v_m1, settings })
    }

    fn integral(&self, x: Point, xi: Point) -> Result<(f64, bool)> {
        let d = self.fs_m1.domain();
        let r_m = d.radius_m() - 1e-10;
        let mut acc = 0.0;
        let mut entered = false;
        let mut first = true;
        integrate(&self.metric, x, xi, d.radius_m1(), self.settings.step, |w, y, v| {
            if !first && y.norm() < r_m {
                entered = true;
            }
            first = false;
            acc += w * contract_velocity(&self.fs_m1.interpolate(y), v);
        })?;
        Ok((acc, entered))
    }

    /// `w(x)` for `R_M <= |x| <= R_M1`.
    pub fn w_at(&self, x: Point) -> Result<TraceSample> {
        let d = self.fs_m1.domain();
        if x.norm() >= d.radius_m1() - 1e-12 {
            return Ok(TraceSample { point: x, w: [0.0; 2], tilt: 0.0, consistency: 0.0 });
        }
        let (nu, tau) = self.metric.circle_frame(&x);
        for &t in &self.settings.tilts {
            let xi1 = nu * t.cos() + tau * t.sin();
            let xi2 = nu * t.cos() - tau * t.sin();
            let det = xi1.x * xi2.y - xi1.y * xi2.x;
            if det.abs() < 0.1 {
                return Err(Error::IllConditionedPair { point: [x.x, x.y], det });
            }
            let (b1, e1) = self.integral(x, xi1)?;
            let (b2, e2) = self.integral(x, xi2)?;
            if e1 || e2 {
                continue;
            }
            let a = Matrix2::new(xi1.x, xi1.y, xi2.x, xi2.y);
            let w = a.lu().solve(&Vector2::new(b1, b2)).ok_or(Error::IllConditionedPair { point: [x.x, x.y], det })?;
            let (b3, _) = self.integral(x, nu)?;
            let wn = self.metric.g_inv(&x) * w;
            let scale = w.dot(&wn).sqrt().max(f64::MIN_POSITIVE);
            let consistency = (w.dot(&nu) - b3).abs() / scale;
            return Ok(TraceSample { point: x, w: [w.x, w.y], tilt: t, consistency });
        }
        Err(Error::GeodesicEntersM { point: [x.x, x.y] })
    }

    /// `v₁` interpolated at `x`.
    pub fn direct(&self, x: &Point) -> [f64; 2] {
        self.v_m1.interpolate(x)
    }

    /// Dirichlet data for the solve on `M`: `w` at every fixed node of the
    /// `M` system, linearly interpolated in radius between samples on `∂M`
    /// and on the circle of radius `R_M + h`. The `∂M` samples are attached
    /// as the field's boundary trace.
    pub fn lift(&self, solver: &DirichletSolver) -> Result<(OneFormField, Vec<TraceSample>)> {
        let d = self.fs_m1.domain().clone();
        let (r, h) = (d.radius_m(), d.h());
        let fixed = &solver.sets().fixed;
        let pairs = fixed
            .par_iter()
            .map(|&k| {
                let y = d.position(k);
                let dir = y / y.norm();
                let inner = self.w_at(dir * r)?;
                let outer = self.w_at(dir * (r + h))?;
                let s = (y.norm() - r) / h;
                let w = [inner.w[0] + s * (outer.w[0] - inner.w[0]), inner.w[1] + s * (outer.w[1] - inner.w[1])];
                Ok((k, w, inner))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut data = vec![[0.0; 2]; d.len()];
        for (k, w, _) in &pairs {
            data[*k] = *w;
        }
        let samples: Vec<TraceSample> = pairs.iter().map(|p| p.2).collect();
        let field = OneFormField::from_data(d, Region::Grid, data)?
            .with_trace(samples.iter().map(|s| s.point).collect(), samples.iter().map(|s| s.w).collect())?;
        Ok((field, samples))
    }
}

/// Recovered `w|_{∂M}` at `n_points` equally spaced angles.
pub fn recover_boundary_trace(recovery: &TraceRecovery, n_points: usize) -> Result<Vec<TraceSample>> {
    let r = recovery.fs_m1.domain().radius_m();
    (0..n_points)
        .into_par_iter()
        .map(|j| {
            let t = 2.0 * PI * j as f64 / n_points as f64;
            recovery.w_at(Point::new(r * t.cos(), r * t.sin()))
        })
        .collect()
}

/// `f^s = f^s_{M1}|_M + dw` with `w` solving `δdw = 0` in `M` and equal to
/// the lift on the boundary layer.
pub fn reconstruct_fs_from_trace(
    solver_m: &DirichletSolver,
    fs_m1: &SymTensorField,
    lift: &OneFormField,
) -> Result<SymTensorField> {
    let w = solver_m.solve(None, Some(lift))?;
    let dw = sym_d(solver_m.grid_metric(), &w).restrict(Region::M);
    fs_m1.restrict(Region::M).axpy(1.0, &dw).map(|f| f.restrict(Region::M))
}

/// Relative discrepancy `‖a - b‖ / ‖b‖` of one-form samples in the metric at
/// each point, with equal weights.
pub fn relative_trace_error(metric: &MetricField, points: &[Point], a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((p, u), v) in points.iter().zip(a).zip(b) {
        let gi = metric.g_inv(p);
        let diff = Point::new(u[0] - v[0], u[1] - v[1]);
        let vv = Point::new(v[0], v[1]);
        num += diff.dot(&(gi * diff));
        den += vv.dot(&(gi * vv));
    }
    if den == 0.0 {
        return num.sqrt();
    }
    (num / den).sqrt()
}

/// Outcome of the full boundary pipeline for one field.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    /// `‖w_geodesic - v₁‖ / ‖v₁‖` over the `∂M` samples.
    pub trace_error: f64,
    /// `‖f^s_pipeline - f^s_direct‖_{L²(M)} / ‖f^s_direct‖_{L²(M)}`.
    pub pipeline_error: f64,
    /// Largest third-direction consistency residual.
    pub consistency: f64,
    /// `‖w‖_{L²(M1∖M)} / ‖f^s_{M1}‖_{L²(M1∖M)}`.
    pub annulus_constant: f64,
    /// `‖w‖_{H¹(M)} / ‖f^s_{M1}‖_{L²(M1∖M)}` for the Dirichlet solution on `M`.
    pub interior_constant: f64,
    pub samples: Vec<TraceSample>,
    /// Trace of `v₁` at the sample points, from the global solve on `M1`.
    pub direct: Vec<[f64; 2]>,
    /// `f^s` on `M` from the recovered trace.
    pub solenoidal: SymTensorField,
    /// `f^s` on `M` from the projection on `M`.
    pub solenoidal_direct: SymTensorField,
}

/// Runs the geodesic route and the direct projection for `f` and compares them.
pub fn boundary_pipeline(
    metric: &MetricField,
    gm: Arc<GridMetric>,
    f: &SymTensorField,
    settings: TraceSettings,
) -> Result<PipelineReport> {
    let recovery = TraceRecovery::new(metric, gm.clone(), f, settings)?;
    let solver_m = DirichletSolver::new(gm.clone(), Region::M)?;
    let (lift, samples) = recovery.lift(&solver_m)?;
    let points: Vec<Point> = samples.iter().map(|s| s.point).collect();
    let rec: Vec<[f64; 2]> = samples.iter().map(|s| s.w).collect();
    let direct: Vec<[f64; 2]> = points.iter().map(|p| recovery.direct(p)).collect();
    let trace_error = relative_trace_error(metric, &points, &rec, &direct);
    let fs = reconstruct_fs_from_trace(&solver_m, &recovery.fs_m1, &lift)?;
    let (fs_direct, _) = solver_m.project(f)?;
    let diff = fs.axpy(-1.0, &fs_direct)?;
    let denom = norm_l2_tensor(&gm, &fs_direct, Region::M);
    let pipeline_error =
        if denom > 0.0 { norm_l2_tensor(&gm, &diff, Region::M) / denom } else { norm_l2_tensor(&gm, &diff, Region::M) };
    let consistency = samples.iter().fold(0.0_f64, |m, s| m.max(s.consistency));
    let fs_annulus = norm_l2_tensor(&gm, &recovery.fs_m1, Region::Annulus);
    let w_annulus = norm_l2_oneform(&gm, &recovery.v_m1, Region::Annulus);
    let w_m = solver_m.solve(None, Some(&lift))?;
    let ratio = |a: f64| if fs_annulus > 0.0 { a / fs_annulus } else { 0.0 };
    Ok(PipelineReport {
        trace_error,
        pipeline_error,
        consistency,
        annulus_constant: ratio(w_annulus),
        interior_constant: ratio(norm_h1_oneform(&gm, &w_m, Region::M)),
        samples,
        direct,
        solenoidal: fs,
        solenoidal_direct: fs_direct,
    })
}

/// Angular resolution and step of the normal operator used by the probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalSettings {
    pub n_dirs: usize,
    /// Simpson step as a multiple of `h`.
    pub step_factor: f64,
}

impl Default for NormalSettings {
    fn default() -> Self {
        Self { n_dirs: 256, step_factor: 0.5 }
    }
}

/// Ratios for one ensemble member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRatio {
    pub index: usize,
    /// `‖f^s‖_{L²(M)} / ‖f‖_{L²(M)}`.
    pub solenoidal_fraction: f64,
    pub accepted: bool,
    /// `‖Nf‖_{H¹(M1)} / ‖f^s‖_{L²(M)}`.
    pub ratio: f64,
    /// `‖Nf^s‖_{H¹(M1)} / ‖f^s‖_{L²(M)}`.
    pub ratio_solenoidal: f64,
    /// `‖f^s‖_{L²(M)} / (‖Nf‖_{H¹(M1)} + ‖f‖_{H⁻¹(M)})`.
    pub compact_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub metric: String,
    pub h: f64,
    pub normal: NormalSettings,
    pub ensemble: EnsembleSpec,
    pub samples: Vec<SampleRatio>,
    pub c_emp: f64,
    pub c_emp_upper: f64,
    /// Largest `|r(f) - r(f^s)| / r(f)` over accepted samples.
    pub solenoidal_mismatch: f64,
    /// Largest `compact_ratio`, the empirical constant of the non-sharp bound.
    pub compact_constant: f64,
}

impl StabilityReport {
    pub fn accepted(&self) -> usize {
        self.samples.iter().filter(|s| s.accepted).count()
    }
}

/// Minimum `‖f^s‖ / ‖f‖` for a sample to enter the ratio statistics.
pub const MIN_SOLENOIDAL_FRACTION: f64 = 1e-3;

/// Empirical constants of `‖f^s‖/C <= ‖Nf‖_{H¹(M1)} <= C‖f^s‖` over a
/// seeded ensemble.
pub fn stability_probe(
    metric: &MetricField,
    domain: Arc<Domain>,
    ensemble: &EnsembleSpec,
    normal: &NormalSettings,
) -> Result<StabilityReport> {
    let fields = tensor_ensemble(&domain, ensemble);
    let mut report = stability_probe_fields(metric, domain, &fields, normal)?;
    report.ensemble = *ensemble;
    Ok(report)
}

/// [`stability_probe`] on explicit fields; the report's ensemble spec only
/// records the sample count.
pub fn stability_probe_fields(
    metric: &MetricField,
    domain: Arc<Domain>,
    fields: &[SymTensorField],
    normal: &NormalSettings,
) -> Result<StabilityReport> {
    let gm = Arc::new(GridMetric::new(metric, domain.clone()));
    let solver = DirichletSolver::new(gm.clone(), Region::M)?;
    let neg = NegativeNorm::new(gm.clone(), Region::M)?;
    let op = NormalEvaluator::new(metric, domain.clone(), normal.n_dirs, normal.step_factor * domain.h())?;
    let projected = fields.par_iter().map(|f| solver.project(f).map(|p| p.0)).collect::<Result<Vec<_>>>()?;
    let mut inputs: Vec<&SymTensorField> = fields.iter().collect();
    inputs.extend(projected.iter());
    let images = op.apply_batch(&inputs)?;
    let n = fields.len();
    let samples = (0..n)
        .into_par_iter()
        .map(|i| -> Result<SampleRatio> {
            let f = &fields[i];
            let fs = &projected[i];
            let nf = norm_h1_tensor(&gm, &images[i], Region::M1);
            let nfs = norm_h1_tensor(&gm, &images[n + i], Region::M1);
            let f_norm = norm_l2_tensor(&gm, f, Region::M);
            let fs_norm = norm_l2_tensor(&gm, fs, Region::M);
            let frac = if f_norm > 0.0 { fs_norm / f_norm } else { 0.0 };
            let accepted = frac >= MIN_SOLENOIDAL_FRACTION;
            let (ratio, ratio_solenoidal) = if accepted { (nf / fs_norm, nfs / fs_norm) } else { (f64::NAN, f64::NAN) };
            let compact_ratio = if accepted { fs_norm / (nf + neg.norm(f)?) } else { f64::NAN };
            Ok(SampleRatio { index: i, solenoidal_fraction: frac, accepted, ratio, ratio_solenoidal, compact_ratio })
        })
        .collect::<Result<Vec<_>>>()?;
    let acc: Vec<&SampleRatio> = samples.iter().filter(|s| s.accepted).collect();
    if acc.is_empty() {
        return Err(Error::EnsembleDegenerate);
    }
    let c_emp = acc.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min);
    let c_emp_upper = acc.iter().map(|s| s.ratio).fold(0.0, f64::max);
    let solenoidal_mismatch = acc.iter().map(|s| (s.ratio - s.ratio_solenoidal).abs() / s.ratio).fold(0.0, f64::max);
    let compact_constant = acc.iter().map(|s| s.compact_ratio).fold(0.0, f64::max);
    Ok(StabilityReport {
        metric: metric.kind().describe(),
        h: domain.h(),
        normal: *normal,
        ensemble: EnsembleSpec { size: n, ..EnsembleSpec::default() },
        samples,
        c_emp,
        c_emp_upper,
        solenoidal_mismatch,
        compact_constant,
    })
}

/// Largest relative change of the interval endpoints between two reports.
pub fn interval_drift(a: &StabilityReport, b: &StabilityReport) -> f64 {
    ((b.c_emp - a.c_emp) / a.c_emp).abs().max(((b.c_emp_upper - a.c_emp_upper) / a.c_emp_upper).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSettings {
    pub normal: NormalSettings,
    pub test_set: EnsembleSpec,
    pub sampling: SimplicitySampling,
}

impl Default for PerturbationSettings {
    fn default() -> Self {
        Self {
            normal: NormalSettings { n_dirs: 48, step_factor: 2.0 },
            test_set: EnsembleSpec { size: 10, seed: 11, ..EnsembleSpec::default() },
            sampling: SimplicitySampling::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationRow {
    pub eps: f64,
    /// `max ‖(N_g - N_{g0}) f‖_{H¹(M1)} / ‖f‖_{L²(M)}` over the test set.
    pub operator_difference: f64,
    /// `max ‖f^s_g - f^s_{g0}‖_{L²(M)} / ‖f‖_{L²(M)}`.
    pub projector_difference: f64,
    /// `min ‖N_g f‖_{H¹(M1)} / ‖f^s_g‖_{L²(M)}` over the test set.
    pub c_emp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub rows: Vec<PerturbationRow>,
    /// Log-log slopes over the rows with `eps > 0`.
    pub slope_operator: f64,
    pub slope_projector: f64,
    /// Log-log slope of `c_emp(g0) - c_emp(g_eps)` over the rows where it is
    /// positive; `None` when fewer than two rows degrade.
    pub degradation_slope: Option<f64>,
    /// `max (c_emp(g0) - c_emp(g_eps)) / (eps c_emp(g0))`, the empirical `C`
    /// in `c_emp(g_eps) >= c_emp(g0)(1 - C eps)`.
    pub degradation_constant: f64,
}

struct MetricImages {
    normal: Vec<SymTensorField>,
    solenoidal: Vec<SymTensorField>,
}

fn images_for(
    metric: &MetricField,
    domain: &Arc<Domain>,
    fields: &[SymTensorField],
    normal: &NormalSettings,
) -> Result<MetricImages> {
    let gm = Arc::new(GridMetric::new(metric, domain.clone()));
    let solver = DirichletSolver::new(gm, Region::M)?;
    let solenoidal = fields.iter().map(|f| solver.project(f).map(|p| p.0)).collect::<Result<Vec<_>>>()?;
    // Ray-by-ray composition for every metric, including the reference, so
    // that all operators share one discretization.
    let op =
        crate::normal::ComposeOperator::new(metric, domain.clone(), normal.n_dirs, normal.step_factor * domain.h());
    let refs: Vec<&SymTensorField> = fields.iter().collect();
    Ok(MetricImages { normal: op.apply_batch(&refs)?, solenoidal })
}

/// Operator and projector differences between `g0` and `g0 + ε·bump` for
/// each `ε`. The bump should be normalized to unit `C³` norm.
pub fn perturbation_probe(
    base: &MetricField,
    bump: &Bump,
    eps_list: &[f64],
    domain: Arc<Domain>,
    settings: &PerturbationSettings,
) -> Result<PerturbationReport> {
    let fields = tensor_ensemble(&domain, &settings.test_set);
    // The reference carries a zero-amplitude bump so that it runs through
    // exactly the same code path as the perturbed metrics.
    let g0 = MetricField::perturbed(base.clone(), 0.0, *bump)?;
    let gm0 = GridMetric::new(&g0, domain.clone());
    let reference = images_for(&g0, &domain, &fields, &settings.normal)?;
    let norms: Vec<f64> = fields.iter().map(|f| norm_l2_tensor(&gm0, f, Region::M)).collect();
    let c_emp_of = |gm: &GridMetric, im: &MetricImages| {
        im.normal
            .iter()
            .zip(&im.solenoidal)
            .map(|(nf, fs)| norm_h1_tensor(gm, nf, Region::M1) / norm_l2_tensor(gm, fs, Region::M))
            .fold(f64::INFINITY, f64::min)
    };
    let c0 = c_emp_of(&gm0, &reference);
    let mut rows = Vec::new();
    for &eps in eps_list {
        if eps < 0.0 {
            return Err(Error::InvalidArgument(format!("negative perturbation size {eps}")));
        }
        if eps == 0.0 {
            rows.push(PerturbationRow { eps, operator_difference: 0.0, projector_difference: 0.0, c_emp: c0 });
            continue;
        }
        let g = MetricField::perturbed(base.clone(), eps, *bump)?;
        certify_simple(&g, &domain, &settings.sampling).require()?;
        let im = images_for(&g, &domain, &fields, &settings.normal)?;
        let gm = GridMetric::new(&g, domain.clone());
        let mut d: f64 = 0.0;
        let mut p: f64 = 0.0;
        for i in 0..fields.len() {
            let dn = im.normal[i].axpy(-1.0, &reference.normal[i])?;
            let dp = im.solenoidal[i].axpy(-1.0, &reference.solenoidal[i])?;
            d = d.max(norm_h1_tensor(&gm0, &dn, Region::M1) / norms[i]);
            p = p.max(norm_l2_tensor(&gm0, &dp, Region::M) / norms[i]);
        }
        rows.push(PerturbationRow { eps, operator_difference: d, projector_difference: p, c_emp: c_emp_of(&gm, &im) });
    }
    let positive: Vec<&PerturbationRow> = rows.iter().filter(|r| r.eps > 0.0).collect();
    let slope = |sel: fn(&PerturbationRow) -> f64| {
        let pts: Vec<(f64, f64)> = positive.iter().map(|r| (r.eps.ln(), sel(r).ln())).collect();
        if pts.len() < 2 {
            f64::NAN
        } else {
            fit_slope(&pts)
        }
    };
    let slope_operator = slope(|r| r.operator_difference);
    let slope_projector = slope(|r| r.projector_difference);
    let degrading: Vec<(f64, f64)> =
        positive.iter().filter(|r| r.c_emp < c0).map(|r| (r.eps.ln(), (c0 - r.c_emp).ln())).collect();
    let degradation_slope = if degrading.len() >= 2 { Some(fit_slope(&degrading)) } else { None };
    let degradation_constant = positive.iter().map(|r| ((c0 - r.c_emp) / (r.eps * c0)).max(0.0)).fold(0.0, f64::max);
    Ok(PerturbationReport { rows, slope_operator, slope_projector, degradation_slope, degradation_constant })
}

/// Cubic B-spline on integer knots.
fn cubic_bspline(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        0.0
    }
}

/// Tensor-product cubic B-splines on a square knot lattice of the given
/// spacing, evaluated at the grid nodes of `M`. Each coefficient carries the
/// three tensor components.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    pub spacing: f64,
    domain: Arc<Domain>,
    /// Knot positions, one per coefficient triple.
    pub knots: Vec<Point>,
    /// Grid nodes of `M`, in the row order of `prolongation`.
    pub fine_nodes: Vec<usize>,
    /// `(3 * fine node + c, 3 * knot + c)` evaluation matrix.
    pub prolongation: CsMat<f64>,
}

impl SplineBasis {
    pub fn new(domain: Arc<Domain>, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) || spacing < domain.h() {
            return Err(Error::InvalidArgument(format!("spline spacing {spacing} must be at least the grid spacing")));
        }
        let fine_nodes = domain.region_nodes(Region::M);
        let reach = (domain.radius_m() / spacing).ceil() as i64 + 2;
        let width = 2 * reach + 1;
        let mut column = vec![usize::MAX; (width * width) as usize];
        let mut knots = Vec::new();
        let mut entries = Vec::new();
        for (row, &k) in fine_nodes.iter().enumerate() {
            let y = domain.position(k);
            let (ci, cj) = ((y.x / spacing).floor() as i64, (y.y / spacing).floor() as i64);
            for i in ci - 1..=ci + 2 {
                for j in cj - 1..=cj + 2 {
                    let w = cubic_bspline(y.x / spacing - i as f64) * cubic_bspline(y.y / spacing - j as f64);
                    if w == 0.0 {
                        continue;
                    }
                    let slot = ((j + reach) * width + (i + reach)) as usize;
                    if column[slot] == usize::MAX {
                        column[slot] = knots.len();
                        knots.push(Point::new(i as f64 * spacing, j as f64 * spacing));
                    }
                    entries.push((row, column[slot], w));
                }
            }
        }
        let mut tri = TriMat::new((3 * fine_nodes.len(), 3 * knots.len()));
        for (row, col, w) in entries {
            for c in 0..3 {
                tri.add_triplet(3 * row + c, 3 * col + c, w);
            }
        }
        Ok(Self { spacing, domain, knots, fine_nodes, prolongation: tri.to_csr() })
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// The spline with the given coefficients, sampled on `M`.
    pub fn field(&self, coeffs: &[f64]) -> Result<SymTensorField> {
        let values = csr_apply(&self.prolongation, coeffs);
        let mut data = vec![[0.0; 3]; self.domain.len()];
        for (row, &k) in self.fine_nodes.iter().enumerate() {
            data[k] = [values[3 * row], values[3 * row + 1], values[3 * row + 2]];
        }
        SymTensorField::from_data(self.domain.clone(), Region::M, data)
    }
}

/// The ray transform restricted to a spline space, `A = R P` with `R` the
/// ray matrix on the grid nodes of `M` and `P` the spline evaluation.
#[derive(Debug, Clone)]
pub struct ReconstructionOperator {
    pub basis: SplineBasis,
    pub fan: Arc<BoundaryFan>,
    matrix: CsMat<f64>,
    transpose: CsMat<f64>,
    /// `G^{-1/2}` per knot, with `G` the pointwise `L²` Gram block at the knot
    /// scaled by the knot cell area.
    gram_inv_half: Vec<Matrix3<f64>>,
}

impl ReconstructionOperator {
    pub fn new(
        metric: &MetricField,
        domain: Arc<Domain>,
        fan: &Arc<BoundaryFan>,
        spacing: f64,
        step: f64,
    ) -> Result<Self> {
        let basis = SplineBasis::new(domain.clone(), spacing)?;
        let rays = RayMatrix::new(metric, &domain, Region::M, fan, step)?;
        debug_assert_eq!(rays.nodes, basis.fine_nodes);
        let matrix: CsMat<f64> = &rays.matrix * &basis.prolongation;
        let transpose = matrix.transpose_view().to_csr();
        let gram_inv_half = basis
            .knots
            .iter()
            .map(|x| {
                let node = NodeMetric::at(metric, x);
                let area = node.sqrt_det * spacing * spacing;
                let m = Matrix3::from_fn(|p, q| node.contraction[p][q] * area);
                let e = m.symmetric_eigen();
                e.eigenvectors
                    * Matrix3::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l.sqrt()))
                    * e.eigenvectors.transpose()
            })
            .collect();
        Ok(Self { basis, fan: fan.clone(), matrix, transpose, gram_inv_half })
    }

    fn scale(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; y.len()];
        for (b, m) in self.gram_inv_half.iter().enumerate() {
            for p in 0..3 {
                x[3 * b + p] = (0..3).map(|q| m[(p, q)] * y[3 * b + q]).sum();
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CglsSettings {
    pub max_iter: usize,
    /// Relative residual `‖Af - d‖_μ / ‖d‖_μ` at which to stop.
    pub tol: f64,
    /// A residual that improves by less than the fraction `stagnation_tol`
    /// over `stagnation_window` iterations is reported as stagnation.
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
}

impl Default for CglsSettings {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-6, stagnation_window: 50, stagnation_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CglsResult {
    pub field: SymTensorField,
    pub iterations: usize,
    pub residual: f64,
    /// Relative residual after each iteration.
    pub history: Vec<f64>,
}

/// Conjugate-gradient least squares for `A c = data` in the weighted spaces
/// `L²(∂₋SM1, dμ)` and (approximately) `L²(M)` on the coefficients. Started
/// from zero, the iterates stay in the range of `A*` and approach the
/// minimum-norm solution.
pub fn reconstruct_cgls(op: &ReconstructionOperator, data: &RayData, settings: &CglsSettings) -> Result<CglsResult> {
    if !(Arc::ptr_eq(&op.fan, &data.fan) || *op.fan == *data.fan) {
        return Err(Error::FanMismatch { left: op.fan.len(), right: data.fan.len() });
    }
    let sqrt_mu: Vec<f64> = data.fan.entries.iter().map(|e| e.weight_mu.max(0.0).sqrt()).collect();
    let n = 3 * op.basis.len();
    let forward = |y: &[f64]| -> Vec<f64> {
        let mut r = csr_apply(&op.matrix, &op.scale(y));
        r.iter_mut().zip(&sqrt_mu).for_each(|(v, s)| *v *= s);
        r
    };
    let adjoint = |r: &[f64]| -> Vec<f64> {
        let weighted: Vec<f64> = r.iter().zip(&sqrt_mu).map(|(v, s)| v * s).collect();
        op.scale(&csr_apply(&op.transpose, &weighted))
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let b: Vec<f64> = data.values.iter().zip(&sqrt_mu).map(|(v, s)| v * s).collect();
    let b_norm = dot(&b, &b).sqrt();
    let mut y = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CglsResult { field: op.basis.field(&y)?, iterations: 0, residual: 0.0, history: Vec::new() });
    }
    let mut r = b;
    let mut s = adjoint(&r);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut history = Vec::new();
    let mut residual = 1.0;
    let mut iterations = 0;
    while iterations < settings.max_iter && residual > settings.tol && gamma > 0.0 {
        let q = forward(&p);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        y.iter_mut().zip(&p).for_each(|(a, b)| *a += alpha * b);
        r.iter_mut().zip(&q).for_each(|(a, b)| *a -= alpha * b);
        s = adjoint(&r);
        let gamma_new = dot(&s, &s);
        p = s.iter().zip(&p).map(|(a, b)| a + gamma_new / gamma * b).collect();
        gamma = gamma_new;
        iterations += 1;
        residual = dot(&r, &r).sqrt() / b_norm;
        history.push(residual);
        let w = settings.stagnation_window;
        if history.len() > w && residual > settings.tol {
            let old = history[history.len() - 1 - w];
            if residual > old * (1.0 - settings.stagnation_tol) {
                return Err(Error::Stagnation { iterations, residual });
            }
        }
    }
    Ok(CglsResult { field: op.basis.field(&op.scale(&y))?, iterations, residual, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ray_transform::transform;

    #[test]
    fn zero_field_has_zero_trace_and_reconstruction() {
        let d = Arc::new(Domain::with_spacing(1.0 / 16.0).unwrap());
        let m = MetricField::euclidean();
        let gm = Arc::new(GridMetric::new(&m, d.clone()));
        let f = SymTensorField::zeros(d.clone(), Region::M);
        let rec = TraceRecovery::new(&m, gm, &f, TraceSettings::default()).unwrap();
        for s in recover_boundary_trace(&rec, 8).unwrap() {
            assert_eq!(s.w, [0.0; 2]);
        }
        let fan = Arc::new(BoundaryFan::new(&m, 1.0, 8, 8).unwrap());
        let op = ReconstructionOperator::new(&m, d, &fan, 0.25, 1e-2).unwrap();
        let out = reconstruct_cgls(&op, &RayData::zeros(fan), &CglsSettings::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.field.is_zero());
    }

    #[test]
    fn splines_reproduce_linear_fields() {
        let d = Arc::new(Domain::with_spacing(1.0 / 16.0).unwrap());
        let basis = SplineBasis::new(d.clone(), 0.25).unwrap();
        // Cubic B-splines reproduce affine functions from their knot values.
        let coeffs: Vec<f64> = basis.knots.iter().flat_map(|x| [1.0 + x.x, 2.0 * x.y, -x.x + 0.5 * x.y]).collect();
        let f = basis.field(&coeffs).unwrap();
        for k in d.region_nodes(Region::M) {
            let x = d.position(k);
            let want = [1.0 + x.x, 2.0 * x.y, -x.x + 0.5 * x.y];
            for (a, b) in f.get(k).iter().zip(want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cgls_reduces_residual_monotonically() {
        let d = Arc::new(Domain::with_spacing(1.0 / 16.0).unwrap());
        let m = MetricField::euclidean();
        let f = crate::phantoms::stream_phantom(d.clone(), [0.0, 0.0], 0.4, 0.1);
        let fan = Arc::new(BoundaryFan::new(&m, 1.0, 16, 8).unwrap());
        let op = ReconstructionOperator::new(&m, d, &fan, 0.25, 1e-2).unwrap();
        let data = transform(&m, &f, &fan, 1e-2).unwrap();
        let settings = CglsSettings { max_iter: 30, ..CglsSettings::default() };
        let out = reconstruct_cgls(&op, &data, &settings).unwrap();
        assert!(out.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(out.residual < 0.1);
    }
}
