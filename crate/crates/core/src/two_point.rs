//! Two-point geodesic problem by Newton shooting on the exponential map.
//!
//! The exponential map and its derivative are integrated together: the
//! geodesic `(x, v)` and the Jacobi field `J` generated by rotating the
//! initial direction with unit metric angular speed.

use nalgebra::{Matrix2, SVector};

use crate::domain::Point;
use crate::error::{Error, Result};
use crate::metric::{inverse, Mat2, MetricField};

/// Default arclength step for shooting.
pub const SHOOT_STEP: f64 = 1e-3;

const MAX_ITER: usize = 50;
const RESIDUAL_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointSolution {
    /// Geodesic distance.
    pub rho: f64,
    /// `∂ρ/∂x` as a covector.
    pub grad_x: Point,
    /// `∂ρ/∂y` as a covector.
    pub grad_y: Point,
    /// `|det ∂²(ρ²/2)/∂x∂y|`.
    pub hessian_mixed_det: f64,
    pub converged: bool,
    /// Initial unit direction at `x`.
    pub omega: Point,
    /// Unit tangent at `y`.
    pub arrival: Point,
    /// Angle parameter of `omega` in the orthonormal frame `g(x)^{-1/2}`.
    pub theta: f64,
    pub iterations: usize,
}

type State = SVector<f64, 8>;

/// `g^{-1/2}`, mapping Euclidean unit vectors to metric unit vectors.
pub fn inv_sqrt(g: &Mat2) -> Mat2 {
    let eig = g.symmetric_eigen();
    let d = Mat2::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn rhs(metric: &MetricField, s: &State) -> State {
    let x = Point::new(s[0], s[1]);
    let v = [s[2], s[3]];
    let j = [s[4], s[5]];
    let p = [s[6], s[7]];
    let (gam, dgam) = metric.christoffel_with_derivative(&x);
    let mut out = State::zeros();
    out[0] = v[0];
    out[1] = v[1];
    out[4] = p[0];
    out[5] = p[1];
    for k in 0..2 {
        let mut a = 0.0;
        let mut b = 0.0;
        for i in 0..2 {
            for jj in 0..2 {
                a += gam[k][i][jj] * v[i] * v[jj];
                b += 2.0 * gam[k][i][jj] * v[i] * p[jj];
                for m in 0..2 {
                    b += dgam[m][k][i][jj] * v[i] * v[jj] * j[m];
                }
            }
        }
        out[2 + k] = -a;
        out[6 + k] = -b;
    }
    out
}

/// Integrates geodesic and Jacobi field from `(x, omega, j'(0) = domega)` over
/// arclength `s` with steps no longer than `step`.
fn shoot(metric: &MetricField, x: &Point, omega: &Point, domega: &Point, s: f64, step: f64) -> State {
    let mut st = State::from_column_slice(&[x.x, x.y, omega.x, omega.y, 0.0, 0.0, domega.x, domega.y]);
    if metric.is_euclidean() {
        st[0] += s * omega.x;
        st[1] += s * omega.y;
        st[4] = s * domega.x;
        st[5] = s * domega.y;
        return st;
    }
    let n = ((s / step).ceil() as usize).max(4);
    let h = s / n as f64;
    for _ in 0..n {
        let k1 = rhs(metric, &st);
        let k2 = rhs(metric, &(st + k1 * (0.5 * h)));
        let k3 = rhs(metric, &(st + k2 * (0.5 * h)));
        let k4 = rhs(metric, &(st + k3 * h));
        st += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    st
}

/// Unit direction at `x` with angle `theta` in the frame `e = g(x)^{-1/2}`,
/// and its derivative in `theta`.
fn direction(e: &Mat2, theta: f64) -> (Point, Point) {
    let (s, c) = theta.sin_cos();
    (e * Point::new(c, s), e * Point::new(-s, c))
}

/// Solves the two-point problem between `x` and `y`.
pub fn two_point(metric: &MetricField, x: Point, y: Point) -> Result<TwoPointSolution> {
    two_point_with(metric, x, y, None, SHOOT_STEP)
}

/// Two-point solve with an optional `(theta, rho)` starting guess.
pub fn two_point_with(
    metric: &MetricField,
    x: Point,
    y: Point,
    guess: Option<(f64, f64)>,
    step: f64,
) -> Result<TwoPointSolution> {
    let chord = y - x;
    if chord.norm() < 1e-14 {
        return Err(Error::CoincidentPoints);
    }
    let gx = metric.g(&x);
    let e = inv_sqrt(&gx);
    let (mut theta, mut s) = guess.unwrap_or_else(|| {
        // Euclidean-chord guess expressed in the orthonormal frame at x.
        let local = inverse(&e) * chord;
        (local.y.atan2(local.x), local.norm())
    });

    let eval = |theta: f64, s: f64| {
        let (om, dom) = direction(&e, theta);
        let st = shoot(metric, &x, &om, &dom, s, step);
        let end = Point::new(st[0], st[1]);
        (end - y, st)
    };
    let (mut res, mut st) = eval(theta, s);
    let mut iterations = 0;
    while res.norm() > RESIDUAL_TOL * (1.0 + chord.norm()) {
        if iterations == MAX_ITER {
            return Err(Error::NoConvergence { iterations, residual: res.norm() });
        }
        iterations += 1;
        let jac = Matrix2::new(st[4], st[2], st[5], st[3]);
        let delta = match jac.try_inverse() {
            Some(inv) => -(inv * res),
            None => return Err(Error::NoConvergence { iterations, residual: res.norm() }),
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let nt = theta + alpha * delta[0];
            let mut ns = s + alpha * delta[1];
            if ns <= 0.0 {
                ns = 0.5 * s;
            }
            let (nres, nst) = eval(nt, ns);
            if nres.norm() < res.norm() {
                theta = nt;
                s = ns;
                res = nres;
                st = nst;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence { iterations, residual: res.norm() });
        }
    }

    let (omega, _) = direction(&e, theta);
    let arrival = Point::new(st[2], st[3]);
    let jend = Point::new(st[4], st[5]);
    let gy = metric.g(&y);
    // Normalize away the tiny speed drift of the unrenormalized integration.
    let arrival_unit = arrival / arrival.dot(&(gy * arrival)).sqrt();
    let jnorm = jend.dot(&(gy * jend)).sqrt();
    let hessian_mixed_det = (gx.determinant() * gy.determinant()).sqrt() * s / jnorm;
    Ok(TwoPointSolution {
        rho: s,
        grad_x: -(gx * omega),
        grad_y: gy * arrival_unit,
        hessian_mixed_det,
        converged: true,
        omega,
        arrival: arrival_unit,
        theta,
        iterations,
    })
}

/// `|det ∂²(ρ²/2)/∂x∂y|` by central differences in `y` of the exact
/// gradient `∂_x(ρ²/2) = ρ ∂_xρ`.
pub fn mixed_hessian_det_fd(metric: &MetricField, x: Point, y: Point, delta: f64) -> Result<f64> {
    let base = two_point(metric, x, y)?;
    let grad = |yy: Point| -> Result<Point> {
        let sol = two_point_with(metric, x, yy, Some((base.theta, base.rho)), SHOOT_STEP)?;
        Ok(sol.grad_x * sol.rho)
    };
    let mut cols = [Point::zeros(); 2];
    for (m, col) in cols.iter_mut().enumerate() {
        let mut e = Point::zeros();
        e[m] = delta;
        *col = (grad(y + e)? - grad(y - e)?) / (2.0 * delta);
    }
    Ok(Matrix2::from_columns(&cols).determinant().abs())
}
