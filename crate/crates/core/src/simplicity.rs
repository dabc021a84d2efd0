//! Simplicity certification: strict convexity of the boundary circles and
//! absence of conjugate points.

use nalgebra::SVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Domain, Point};
use crate::error::{Error, Result};
use crate::geodesic::{rk4, State};
use crate::metric::MetricField;
use crate::two_point::two_point;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplicitySampling {
    /// Points on the outer circle used as geodesic starts and convexity samples.
    pub n_boundary: usize,
    /// Inward directions per boundary point.
    pub n_dirs: usize,
    /// Euclidean displacement per integration step.
    pub step: f64,
    /// Jacobi fields are only inspected for `t > t_min`.
    pub t_min: f64,
    /// Random point pairs for the two-point consistency check.
    pub n_pairs: usize,
}

impl Default for SimplicitySampling {
    fn default() -> Self {
        Self { n_boundary: 32, n_dirs: 32, step: 2e-3, t_min: 0.05, n_pairs: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplicityReport {
    /// Minimum second fundamental form over both circles (positive = convex).
    pub boundary_convexity_min: f64,
    pub conjugate_point_found: bool,
    /// Minimum `|J|` over sampled geodesics for `t > t_min`.
    pub min_jacobi: f64,
    /// Worst endpoint miss or asymmetry of two-point shooting; infinite when
    /// shooting failed or was skipped because the metric is not simple.
    pub max_diffeo_residual: f64,
    /// Some sampled geodesic never left `M1`.
    pub trapped_geodesic: bool,
}

impl SimplicityReport {
    pub fn is_simple(&self) -> bool {
        self.boundary_convexity_min > 0.0 && !self.conjugate_point_found && !self.trapped_geodesic
    }

    /// Converts a failed certification into [`Error::CertificationFailure`].
    pub fn require(&self) -> Result<()> {
        if self.is_simple() {
            return Ok(());
        }
        let reason = if self.boundary_convexity_min <= 0.0 {
            format!("boundary not strictly convex (min second fundamental form {:.3e})", self.boundary_convexity_min)
        } else if self.trapped_geodesic {
            "trapped geodesic".to_string()
        } else {
            "conjugate points along a sampled geodesic".to_string()
        };
        Err(Error::CertificationFailure { reason })
    }
}

/// Second fundamental form `⟨∇_τ ν, τ⟩` of the circle through `x` for the
/// unit tangent `τ`, with `ν` the outward unit normal.
pub fn second_fundamental_form(metric: &MetricField, x: &Point) -> f64 {
    let r = x.norm();
    // F = |x|: dF = x/r, Hessian (I - x x^T / r^2) / r.
    let df = x / r;
    let hess = (nalgebra::Matrix2::identity() - x * x.transpose() / (r * r)) / r;
    let gam = metric.christoffel(x);
    let (_, tau) = metric.circle_frame(x);
    let ginv = metric.g_inv(x);
    let df_norm = df.dot(&(ginv * df)).sqrt();
    let mut cov = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let mut h = hess[(i, j)];
            for k in 0..2 {
                h -= gam[k][i][j] * df[k];
            }
            cov += h * tau[i] * tau[j];
        }
    }
    cov / df_norm
}

type Jstate = SVector<f64, 6>;

fn jacobi_rhs(metric: &MetricField, s: &Jstate) -> Jstate {
    let x = Point::new(s[0], s[1]);
    let gam = metric.christoffel(&x);
    let k = metric.gauss_curvature(&x);
    let mut out = Jstate::zeros();
    out[0] = s[2];
    out[1] = s[3];
    for c in 0..2 {
        let mut a = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                a += gam[c][i][j] * s[2 + i] * s[2 + j];
            }
        }
        out[2 + c] = -a;
    }
    out[4] = s[5];
    out[5] = -k * s[4];
    out
}

/// Outcome of one Jacobi sweep along a geodesic.
struct Sweep {
    min_abs_j: f64,
    sign_change: bool,
    trapped: bool,
}

fn jacobi_sweep(metric: &MetricField, x: Point, omega: Point, radius: f64, sampling: &SimplicitySampling) -> Sweep {
    let mut st = Jstate::from_column_slice(&[x.x, x.y, omega.x, omega.y, 0.0, 1.0]);
    let cap = 10.0 * 2.0 * radius * metric.stretch();
    let mut t = 0.0;
    let mut out = Sweep { min_abs_j: f64::INFINITY, sign_change: false, trapped: false };
    let mut first = true;
    loop {
        let v = Point::new(st[2], st[3]);
        // Step in metric arclength so that the Euclidean displacement is `step`.
        let h = sampling.step / v.norm().max(1e-300);
        let k1 = jacobi_rhs(metric, &st);
        let k2 = jacobi_rhs(metric, &(st + k1 * (0.5 * h)));
        let k3 = jacobi_rhs(metric, &(st + k2 * (0.5 * h)));
        let k4 = jacobi_rhs(metric, &(st + k3 * h));
        let next = st + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !first && Point::new(next[0], next[1]).norm() > radius {
            return out;
        }
        first = false;
        st = next;
        t += h;
        if t > sampling.t_min {
            out.min_abs_j = out.min_abs_j.min(st[4].abs());
        }
        if st[4] <= 0.0 {
            out.sign_change = true;
            return out;
        }
        if t > cap {
            out.trapped = true;
            return out;
        }
    }
}

/// Certifies that `metric` is simple on the outer disc of `domain`.
pub fn certify_simple(metric: &MetricField, domain: &Domain, sampling: &SimplicitySampling) -> SimplicityReport {
    let r1 = domain.radius_m1();
    let n = sampling.n_boundary.max(4);
    let mut convex = f64::INFINITY;
    for radius in [domain.radius_m(), r1] {
        for a in 0..n {
            let phi = 2.0 * std::f64::consts::PI * a as f64 / n as f64;
            let x = Point::new(phi.cos(), phi.sin()) * radius;
            convex = convex.min(second_fundamental_form(metric, &x));
        }
    }

    let nd = sampling.n_dirs.max(4);
    let mut min_j = f64::INFINITY;
    let mut conjugate = false;
    let mut trapped = false;
    for a in 0..n {
        let phi = 2.0 * std::f64::consts::PI * a as f64 / n as f64;
        let x = Point::new(phi.cos(), phi.sin()) * r1;
        let (nu, tau) = metric.circle_frame(&x);
        for b in 0..nd {
            let beta = -std::f64::consts::FRAC_PI_2 + (b as f64 + 0.5) * std::f64::consts::PI / nd as f64;
            let omega = -nu * beta.cos() + tau * beta.sin();
            let sweep = jacobi_sweep(metric, x, omega, r1, sampling);
            min_j = min_j.min(sweep.min_abs_j);
            conjugate |= sweep.sign_change;
            trapped |= sweep.trapped;
        }
    }

    let mut report = SimplicityReport {
        boundary_convexity_min: convex,
        conjugate_point_found: conjugate,
        min_jacobi: min_j,
        max_diffeo_residual: f64::INFINITY,
        trapped_geodesic: trapped,
    };
    if report.is_simple() {
        report.max_diffeo_residual = diffeo_residual(metric, r1, sampling.n_pairs);
    }
    report
}

/// Shoots between random pairs, then checks that tracing the found direction
/// for the found length lands on the target and that `ρ` is symmetric.
fn diffeo_residual(metric: &MetricField, radius: f64, n_pairs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51_3b1e);
    let mut sample = || loop {
        let p = Point::new(rng.gen_range(-radius..radius), rng.gen_range(-radius..radius));
        if p.norm() < 0.95 * radius {
            return p;
        }
    };
    let mut worst: f64 = 0.0;
    for _ in 0..n_pairs {
        let (x, y) = (sample(), sample());
        if (x - y).norm() < 1e-3 {
            continue;
        }
        let (fwd, back) = match (two_point(metric, x, y), two_point(metric, y, x)) {
            (Ok(f), Ok(b)) => (f, b),
            _ => return f64::INFINITY,
        };
        worst = worst.max((fwd.rho - back.rho).abs());
        worst = worst.max((shot_endpoint(metric, x, fwd.omega, fwd.rho) - y).norm());
    }
    worst
}

/// `exp_x(length * omega)` with the transform integrator.
fn shot_endpoint(metric: &MetricField, x: Point, omega: Point, length: f64) -> Point {
    let n = ((length / 1e-3).ceil() as usize).max(1);
    let s = length / n as f64;
    let mut st = State { x, v: omega };
    for _ in 0..n {
        st = rk4(metric, &st, s);
    }
    st.x
}
