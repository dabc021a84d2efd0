//! Unit-speed geodesics: RK4 marching, exact circle crossing, and composite
//! Simpson integration of quantities along the path.

use crate::domain::Point;
use crate::error::{Error, Result};
use crate::metric::MetricField;

/// Default arclength step for transforms.
pub const DEFAULT_STEP: f64 = 1e-3;

const UNIT_TOL: f64 = 1e-6;
const CROSSING_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicSample {
    pub t: f64,
    pub x: Point,
    pub v: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    /// Samples at `t = k * step`, followed by the exit sample.
    pub samples: Vec<GeodesicSample>,
    pub exit_time: f64,
    pub exit_point: Point,
    pub exit_direction: Point,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct State {
    pub x: Point,
    pub v: Point,
}

/// Where a march ended.
struct Exit {
    last: usize,
    tau: f64,
    state: State,
}

fn accel(metric: &MetricField, x: &Point, v: &Point) -> Point {
    let gam = metric.christoffel(x);
    let mut a = Point::zeros();
    for k in 0..2 {
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                acc += gam[k][i][j] * v[i] * v[j];
            }
        }
        a[k] = -acc;
    }
    a
}

/// One classical RK4 step of length `s`, followed by renormalization of the
/// velocity to unit metric length.
pub(crate) fn rk4(metric: &MetricField, st: &State, s: f64) -> State {
    if metric.is_euclidean() {
        return State { x: st.x + st.v * s, v: st.v };
    }
    let (x, v) = (st.x, st.v);
    let k1x = v;
    let k1v = accel(metric, &x, &v);
    let x2 = x + k1x * (0.5 * s);
    let v2 = v + k1v * (0.5 * s);
    let k2v = accel(metric, &x2, &v2);
    let x3 = x + v2 * (0.5 * s);
    let v3 = v + k2v * (0.5 * s);
    let k3v = accel(metric, &x3, &v3);
    let x4 = x + v3 * s;
    let v4 = v + k3v * s;
    let k4v = accel(metric, &x4, &v4);
    let nx = x + (k1x + v2 * 2.0 + v3 * 2.0 + v4) * (s / 6.0);
    let nv = v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (s / 6.0);
    let norm = metric.norm(&nx, &nv);
    State { x: nx, v: nv / norm }
}

fn check_start(metric: &MetricField, x: &Point, omega: &Point, radius: f64) -> Result<()> {
    let norm = metric.norm(x, omega);
    if !((norm - 1.0).abs() <= UNIT_TOL) {
        return Err(Error::NonUnitDirection { norm });
    }
    if x.norm() > radius + 1e-9 {
        return Err(Error::StartOutside { point: [x.x, x.y], radius });
    }
    Ok(())
}

/// Marches from `(x, omega)` with step `s` until the path leaves the circle of
/// `radius`, calling `on_node(k, state)` at every node `t = k s` inside.
fn march<F: FnMut(usize, &State)>(
    metric: &MetricField,
    x: Point,
    omega: Point,
    radius: f64,
    s: f64,
    mut on_node: F,
) -> Result<Exit> {
    check_start(metric, &x, &omega, radius)?;
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive (got {s})")));
    }
    if metric.is_euclidean() {
        return Ok(march_straight(x, omega, radius, s, on_node));
    }
    let cap = 10.0 * 2.0 * radius * metric.stretch();
    let r2 = radius * radius;
    let mut st = State { x, v: omega };
    on_node(0, &st);
    let mut k = 0usize;
    loop {
        let next = rk4(metric, &st, s);
        if next.x.norm_squared() >= r2 {
            let (sigma, exit) = crossing(metric, &st, s, radius, k == 0);
            return Ok(Exit { last: k, tau: k as f64 * s + sigma, state: exit });
        }
        k += 1;
        st = next;
        on_node(k, &st);
        if k as f64 * s > cap {
            return Err(Error::EscapeFailure { cap });
        }
    }
}

fn march_straight<F: FnMut(usize, &State)>(x: Point, omega: Point, radius: f64, s: f64, mut on_node: F) -> Exit {
    let b = x.dot(&omega);
    let c = x.norm_squared() - radius * radius;
    let tau = (-b + (b * b - c).max(0.0).sqrt()).max(0.0);
    let mut last = (tau / s).floor() as usize;
    if last as f64 * s >= tau && last > 0 {
        last -= 1;
    }
    for k in 0..=last {
        on_node(k, &State { x: x + omega * (k as f64 * s), v: omega });
    }
    Exit { last, tau, state: State { x: x + omega * tau, v: omega } }
}

/// Locates the circle crossing inside the step starting at `st` as a root of
/// the radius along partial RK4 steps.
fn crossing(metric: &MetricField, st: &State, s: f64, radius: f64, at_start: bool) -> (f64, State) {
    let f = |sigma: f64| rk4(metric, st, sigma).x.norm() - radius;
    let mut lo = 0.0;
    if at_start && st.x.norm() >= radius - 1e-12 {
        // Starting on the circle: find an interior point first.
        let mut probe = 0.5 * s;
        let mut found = false;
        for _ in 0..40 {
            if f(probe) < 0.0 {
                found = true;
                break;
            }
            probe *= 0.5;
        }
        if !found {
            return (0.0, *st);
        }
        lo = probe;
    }
    // Illinois false position, bracketed so it never leaves [lo, hi].
    let mut hi = s;
    let (mut f_lo, mut f_hi) = (f(lo), f(hi));
    let mut side = 0i8;
    let mut sigma = hi;
    for _ in 0..100 {
        if hi - lo <= CROSSING_TOL {
            break;
        }
        sigma = if f_hi > f_lo { (lo * f_hi - hi * f_lo) / (f_hi - f_lo) } else { 0.5 * (lo + hi) };
        if !(sigma > lo && sigma < hi) {
            sigma = 0.5 * (lo + hi);
        }
        let fm = f(sigma);
        if fm.abs() <= CROSSING_TOL {
            break;
        }
        if fm < 0.0 {
            lo = sigma;
            f_lo = fm;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = sigma;
            f_hi = fm;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    let mut end = rk4(metric, st, sigma);
    // Snap onto the circle; the radial correction is below the root tolerance.
    end.x *= radius / end.x.norm();
    (sigma, end)
}

/// Traces the geodesic from `(x, omega)` until it crosses the circle of
/// `radius`, recording every node.
pub fn trace(metric: &MetricField, x: Point, omega: Point, radius: f64, step: f64) -> Result<GeodesicPath> {
    let mut samples = Vec::new();
    let exit = march(metric, x, omega, radius, step, |k, st| {
        samples.push(GeodesicSample { t: k as f64 * step, x: st.x, v: st.v });
    })?;
    let _ = exit.last;
    samples.push(GeodesicSample { t: exit.tau, x: exit.state.x, v: exit.state.v });
    Ok(GeodesicPath { samples, exit_time: exit.tau, exit_point: exit.state.x, exit_direction: exit.state.v })
}

/// Composite Simpson quadrature along the geodesic from `(x, omega)` to the
/// circle of `radius`.
///
/// `visit(w, x, v)` is called once per quadrature node with its weight, so
/// that `Σ w F(x, v)` approximates `∫_0^τ F(γ(t), γ̇(t)) dt`. Nodes are the
/// uniform steps up to the last even one inside the circle, plus a
/// three-point Simpson tail that ends exactly on the circle. Returns the
/// exit time `τ`.
pub fn integrate<V: FnMut(f64, &Point, &Point)>(
    metric: &MetricField,
    x: Point,
    omega: Point,
    radius: f64,
    step: f64,
    mut visit: V,
) -> Result<f64> {
    let third = step / 3.0;
    let mut even: Option<(usize, State)> = None;
    let mut odd: Option<State> = None;
    let exit = march(metric, x, omega, radius, step, |k, st| {
        if k % 2 == 1 {
            odd = Some(*st);
            return;
        }
        if let Some((ke, prev)) = even {
            let w = if ke == 0 { third } else { 2.0 * third };
            visit(w, &prev.x, &prev.v);
            let o = odd.take().expect("odd node precedes even node");
            visit(4.0 * third, &o.x, &o.v);
        }
        even = Some((k, *st));
    })?;
    let (ke, last_even) = even.expect("march visits the start node");
    let tail = exit.tau - ke as f64 * step;
    let head = if ke == 0 { 0.0 } else { third };
    visit(head + tail / 6.0, &last_even.x, &last_even.v);
    if tail > 0.0 {
        let mid = rk4(metric, &last_even, 0.5 * tail);
        visit(4.0 * tail / 6.0, &mid.x, &mid.v);
        visit(tail / 6.0, &exit.state.x, &exit.state.v);
    }
    Ok(exit.tau)
}

/// Exit time and exit state only.
pub fn exit_state(metric: &MetricField, x: Point, omega: Point, radius: f64, step: f64) -> Result<(f64, Point, Point)> {
    let exit = march(metric, x, omega, radius, step, |_, _| {})?;
    Ok((exit.tau, exit.state.x, exit.state.v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::ScalarFn;

    fn conformal() -> MetricField {
        MetricField::conformal(ScalarFn::Gaussian { amp: 0.1, center: [0.0, 0.0], width: 1.0 }).unwrap()
    }

    #[test]
    fn euclidean_chords() {
        let m = MetricField::euclidean();
        let p = trace(&m, Point::zeros(), Point::new(1.0, 0.0), 1.3, 1e-3).unwrap();
        assert!((p.exit_time - 1.3).abs() < 1e-12);
        assert!((p.exit_point - Point::new(1.3, 0.0)).norm() < 1e-12);
        let p = trace(&m, Point::new(0.5, 0.0), Point::new(0.0, 1.0), 1.0, 1e-3).unwrap();
        assert!((p.exit_time - 0.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_starts() {
        let m = MetricField::euclidean();
        assert!(matches!(
            trace(&m, Point::zeros(), Point::new(2.0, 0.0), 1.0, 1e-3),
            Err(Error::NonUnitDirection { .. })
        ));
        assert!(matches!(
            trace(&m, Point::new(1.2, 0.0), Point::new(1.0, 0.0), 1.0, 1e-3),
            Err(Error::StartOutside { .. })
        ));
    }

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        let m = MetricField::euclidean();
        let x = Point::new(-0.3, 0.2);
        let w = Point::new(0.6, 0.8);
        let mut acc = 0.0;
        let tau = integrate(&m, x, w, 1.0, 0.0137, |wt, p, _| {
            let t = (p - x).dot(&w);
            acc += wt * (t * t * t - 2.0 * t + 1.0);
        })
        .unwrap();
        let exact = tau.powi(4) / 4.0 - tau * tau + tau;
        assert!((acc - exact).abs() < 1e-12, "{acc} vs {exact}");
    }

    #[test]
    fn conformal_exit_self_converges() {
        let m = conformal();
        let omega = Point::new(1.0, 0.0) / m.norm(&Point::zeros(), &Point::new(1.0, 0.0));
        let x0 = Point::new(0.0, 0.3);
        let om = Point::new(1.0, 0.2);
        let om = om / m.norm(&x0, &om);
        let _ = omega;
        let run = |s: f64| exit_state(&m, x0, om, 1.3, s).unwrap();
        let (t1, p1, _) = run(0.04);
        let (t2, p2, _) = run(0.02);
        let (t3, p3, _) = run(0.01);
        let e1 = (p1 - p3).norm() + (t1 - t3).abs();
        let e2 = (p2 - p3).norm() + (t2 - t3).abs();
        let order = (e1 / e2).log2();
        assert!(order > 3.5, "observed order {order}");
    }

    #[test]
    fn unit_speed_is_preserved() {
        let m = conformal();
        let x0 = Point::new(-0.4, 0.1);
        let om = Point::new(0.3, -1.0);
        let om = om / m.norm(&x0, &om);
        let p = trace(&m, x0, om, 1.3, 1e-3).unwrap();
        for s in &p.samples {
            assert!((m.norm(&s.x, &s.v) - 1.0).abs() < 1e-6);
        }
        assert!((p.exit_point.norm() - 1.3).abs() < 1e-8);
    }
}
