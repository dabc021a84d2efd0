//! Tensor calculus on the grid: symmetrized covariant derivative,
//! divergence, and discrete norms.
//!
//! Partial derivatives are central differences when both axis neighbours
//! lie in the field's region, second-order one-sided differences when only
//! one side does, and first-order differences when the one-sided stencil is
//! truncated.
//!
//! Norms over a region `Ω` are frozen as
//!
//! * `‖f‖²_{L²} = Σ_{n∈Ω} ⟨f_n, f_n⟩_g √det g h²`,
//! * `‖f‖²_{H¹} = ‖f‖²_{L²} + Σ_a ‖∂_a f‖²_{L²}` with `∂_a` the componentwise
//!   difference above (restricted to `Ω`) and the same pointwise contraction.

use crate::domain::{Domain, Region};
use crate::error::{Error, Result};
use crate::fields::{OneFormField, SymTensorField};
use crate::grid::{GridMetric, NodeMetric};

pub(crate) fn partial<const N: usize, V: Fn(usize) -> bool>(
    domain: &Domain,
    data: &[[f64; N]],
    valid: V,
    k: usize,
    axis: usize,
) -> [f64; N] {
    let h = domain.h();
    let ok = |d: i64| domain.neighbor(k, axis, d).filter(|&n| valid(n));
    let u0 = &data[k];
    let mut out = [0.0; N];
    match (ok(1), ok(-1)) {
        (Some(p), Some(m)) => {
            for c in 0..N {
                out[c] = (data[p][c] - data[m][c]) / (2.0 * h);
            }
        }
        (Some(p), None) | (None, Some(p)) => {
            let sign = if ok(1).is_some() { 1.0 } else { -1.0 };
            let second = domain.neighbor(p, axis, sign as i64).filter(|&n| valid(n));
            for c in 0..N {
                out[c] = match second {
                    Some(q) => sign * (-3.0 * u0[c] + 4.0 * data[p][c] - data[q][c]) / (2.0 * h),
                    None => sign * (data[p][c] - u0[c]) / h,
                };
            }
        }
        (None, None) => {
            // Isolated along this axis (tips of the discrete disc): borrow the
            // derivative from the neighbour one step toward the origin.
            let other = 1 - axis;
            let (i, j) = domain.coords(k);
            let toward = if [i, j][other] > 0 { -1 } else { 1 };
            if let Some(n) = domain.neighbor(k, other, toward).filter(|&n| valid(n)) {
                let ok_n = |d: i64| domain.neighbor(n, axis, d).filter(|&m| valid(m));
                if ok_n(1).is_some() || ok_n(-1).is_some() {
                    return partial(domain, data, valid, n, axis);
                }
            }
        }
    }
    out
}

/// `(dv)_ij = ½(∂_i v_j + ∂_j v_i) − Γ^k_ij v_k` on the region of `v`.
pub fn sym_d(gm: &GridMetric, v: &OneFormField) -> SymTensorField {
    let domain = v.domain();
    let region = v.region();
    let data = v.data();
    let out: Vec<[f64; 3]> = (0..domain.len())
        .map(|k| {
            if !domain.in_region(k, region) {
                return [0.0; 3];
            }
            let valid = |n: usize| domain.in_region(n, region);
            let d1 = partial(domain, data, valid, k, 0);
            let d2 = partial(domain, data, valid, k, 1);
            sym_d_node(&gm.nodes[k], &data[k], &d1, &d2)
        })
        .collect();
    SymTensorField::from_data(domain.clone(), region, out).expect("same grid")
}

/// Pointwise `dv` from the value and the two partial derivatives of `v`.
pub(crate) fn sym_d_node(node: &NodeMetric, v: &[f64; 2], d1: &[f64; 2], d2: &[f64; 2]) -> [f64; 3] {
    let gam = &node.gamma;
    let lower = |i: usize, j: usize| gam[0][i][j] * v[0] + gam[1][i][j] * v[1];
    [d1[0] - lower(0, 0), 0.5 * (d1[1] + d2[0]) - lower(0, 1), d2[1] - lower(1, 1)]
}

/// `(δf)_j = g^{ik}(∂_k f_ij − Γ^l_ki f_lj − Γ^l_kj f_il)` on the region of `f`.
pub fn divergence(gm: &GridMetric, f: &SymTensorField) -> OneFormField {
    let domain = f.domain();
    let region = f.region();
    let data = f.data();
    let out: Vec<[f64; 2]> = (0..domain.len())
        .map(|k| {
            if !domain.in_region(k, region) {
                return [0.0; 2];
            }
            let valid = |n: usize| domain.in_region(n, region);
            let d = [partial(domain, data, valid, k, 0), partial(domain, data, valid, k, 1)];
            let node = &gm.nodes[k];
            let full = |v: &[f64; 3], i: usize, j: usize| match (i, j) {
                (0, 0) => v[0],
                (1, 1) => v[2],
                _ => v[1],
            };
            let fk = &data[k];
            let mut out = [0.0; 2];
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..2 {
                    for kk in 0..2 {
                        let mut cov = full(&d[kk], i, j);
                        for l in 0..2 {
                            cov -= node.gamma[l][kk][i] * full(fk, l, j) + node.gamma[l][kk][j] * full(fk, i, l);
                        }
                        acc += node.g_inv[(i, kk)] * cov;
                    }
                }
                *o = acc;
            }
            out
        })
        .collect();
    OneFormField::from_data(domain.clone(), region, out).expect("same grid")
}

pub fn inner_l2_tensor(gm: &GridMetric, a: &SymTensorField, b: &SymTensorField, region: Region) -> f64 {
    let domain = &gm.domain;
    (0..domain.len())
        .filter(|&k| domain.in_region(k, region))
        .map(|k| gm.nodes[k].dot_tensor(&a.get(k), &b.get(k)) * gm.volume(k))
        .sum()
}

pub fn inner_l2_oneform(gm: &GridMetric, a: &OneFormField, b: &OneFormField, region: Region) -> f64 {
    let domain = &gm.domain;
    (0..domain.len())
        .filter(|&k| domain.in_region(k, region))
        .map(|k| gm.nodes[k].dot_covector(&a.get(k), &b.get(k)) * gm.volume(k))
        .sum()
}

pub fn norm_l2_tensor(gm: &GridMetric, f: &SymTensorField, region: Region) -> f64 {
    inner_l2_tensor(gm, f, f, region).max(0.0).sqrt()
}

pub fn norm_l2_oneform(gm: &GridMetric, v: &OneFormField, region: Region) -> f64 {
    inner_l2_oneform(gm, v, v, region).max(0.0).sqrt()
}

fn gradient_energy<const N: usize, D: Fn(&NodeMetric, &[f64; N]) -> f64>(
    gm: &GridMetric,
    data: &[[f64; N]],
    region: Region,
    dot: D,
) -> f64 {
    let domain = &gm.domain;
    let valid = |n: usize| domain.in_region(n, region);
    (0..domain.len())
        .filter(|&k| valid(k))
        .map(|k| {
            let mut e = 0.0;
            for axis in 0..2 {
                let d = partial(domain, data, valid, k, axis);
                e += dot(&gm.nodes[k], &d);
            }
            e * gm.volume(k)
        })
        .sum()
}

pub fn norm_h1_tensor(gm: &GridMetric, f: &SymTensorField, region: Region) -> f64 {
    let l2 = inner_l2_tensor(gm, f, f, region);
    let grad = gradient_energy(gm, f.data(), region, |n, d| n.dot_tensor(d, d));
    (l2 + grad).max(0.0).sqrt()
}

pub fn norm_h1_oneform(gm: &GridMetric, v: &OneFormField, region: Region) -> f64 {
    let l2 = inner_l2_oneform(gm, v, v, region);
    let grad = gradient_energy(gm, v.data(), region, |n, d| n.dot_covector(d, d));
    (l2 + grad).max(0.0).sqrt()
}

/// `‖w‖_{H¹} / (‖dw‖_{L²} + ‖w‖_{L²})` over `region`.
pub fn korn_ratio(gm: &GridMetric, w: &OneFormField, region: Region) -> Result<f64> {
    let w = w.restrict(region);
    let l2 = norm_l2_oneform(gm, &w, region);
    if l2 == 0.0 {
        return Err(Error::ZeroField);
    }
    let dw = sym_d(gm, &w);
    Ok(norm_h1_oneform(gm, &w, region) / (norm_l2_tensor(gm, &dw, region) + l2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Point;
    use crate::metric::{MetricField, ScalarFn};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn euclid(h: f64) -> GridMetric {
        GridMetric::new(&MetricField::euclidean(), Arc::new(Domain::with_spacing(h).unwrap()))
    }

    #[test]
    fn sym_d_of_simple_fields() {
        let gm = euclid(1.0 / 32.0);
        let d = gm.domain.clone();
        let v = OneFormField::from_fn(d.clone(), Region::M, |x| [x.x * x.x, 0.0]);
        let dv = sym_d(&gm, &v);
        for k in d.region_nodes(Region::M) {
            let x = d.position(k);
            let [a, b, c] = dv.get(k);
            assert!((a - 2.0 * x.x).abs() < 1e-10);
            assert!(b.abs() < 1e-12 && c.abs() < 1e-12);
        }
        let rot = OneFormField::from_fn(d, Region::Annulus, |x| [-x.y, x.x]);
        assert!(sym_d(&gm, &rot).max_abs() < 1e-12);
    }

    #[test]
    fn divergence_of_linear_field() {
        let gm = euclid(1.0 / 32.0);
        let d = gm.domain.clone();
        let f = SymTensorField::from_fn(d.clone(), Region::M, |x| [x.x, 0.0, 0.0]);
        let df = divergence(&gm, &f);
        for k in d.region_nodes(Region::M) {
            let [a, b] = df.get(k);
            assert!((a - 1.0).abs() < 1e-10 && b.abs() < 1e-12);
        }
        let c = SymTensorField::from_fn(d, Region::M, |_| [1.0, 2.0, 3.0]);
        assert!(divergence(&gm, &c).max_abs() < 1e-12);
    }

    #[test]
    fn conformal_sym_d_matches_covariant_oracle() {
        let lam = ScalarFn::Gaussian { amp: 0.1, center: [0.0, 0.0], width: 1.0 };
        let m = MetricField::conformal(lam).unwrap();
        let d = Arc::new(Domain::with_spacing(1.0 / 64.0).unwrap());
        let gm = GridMetric::new(&m, d.clone());
        let vf = |x: &Point| [(1.3 * x.x).sin() * x.y, (0.7 * x.y).cos() + x.x * x.x];
        let v = OneFormField::from_fn(d.clone(), Region::M, vf);
        let dv = sym_d(&gm, &v);
        // Oracle: covariant derivative from closed-form Γ and 1e-4 central differences.
        let step = 1e-4;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in d.region_nodes(Region::M) {
            let x = d.position(k);
            let pd = |a: usize| {
                let mut e = Point::zeros();
                e[a] = step;
                let (p, q) = (vf(&(x + e)), vf(&(x - e)));
                [(p[0] - q[0]) / (2.0 * step), (p[1] - q[1]) / (2.0 * step)]
            };
            let node = crate::grid::NodeMetric::at(&m, &x);
            let want = sym_d_node(&node, &vf(&x), &pd(0), &pd(1));
            let got = dv.get(k);
            for c in 0..3 {
                num += (want[c] - got[c]).powi(2);
                den += want[c].powi(2);
            }
        }
        assert!((num / den).sqrt() < 1e-3);
    }

    #[test]
    fn integration_by_parts() {
        let lam = ScalarFn::Gaussian { amp: 0.1, center: [0.0, 0.0], width: 1.0 };
        for m in [MetricField::euclidean(), MetricField::conformal(lam).unwrap()] {
            let d = Arc::new(Domain::with_spacing(1.0 / 64.0).unwrap());
            let gm = GridMetric::new(&m, d.clone());
            let bump = |x: &Point| {
                let r2 = x.norm_squared();
                if r2 < 0.81 {
                    (1.0 - r2 / 0.81).powi(4)
                } else {
                    0.0
                }
            };
            let v = OneFormField::from_fn(d.clone(), Region::Grid, |x| {
                [x.y.sin() + 0.5 + 0.3 * x.x * x.x, x.x * x.y + x.y * x.y]
            });
            let phi = OneFormField::from_fn(d.clone(), Region::Grid, |x| [bump(x) * x.x, bump(x) * (1.0 + x.y)]);
            let dv = sym_d(&gm, &v);
            let lhs = inner_l2_oneform(&gm, &divergence(&gm, &dv), &phi, Region::M);
            let rhs = -inner_l2_tensor(&gm, &dv, &sym_d(&gm, &phi), Region::M);
            assert!((lhs - rhs).abs() <= 1e-2 * rhs.abs(), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn l2_of_identity_on_unit_disc() {
        let gm = euclid(1.0 / 128.0);
        let f = SymTensorField::from_fn(gm.domain.clone(), Region::M, |_| [1.0, 0.0, 1.0]);
        let n = norm_l2_tensor(&gm, &f, Region::M);
        assert!((n - (2.0 * PI).sqrt()).abs() < 5e-3);
        let z = SymTensorField::zeros(gm.domain.clone(), Region::M);
        assert_eq!(norm_h1_tensor(&gm, &z, Region::M), 0.0);
    }

    #[test]
    fn h1_of_sine_field() {
        let gm = euclid(1.0 / 128.0);
        let v = OneFormField::from_fn(gm.domain.clone(), Region::M, |x| [(PI * x.x).sin(), 0.0]);
        let got = norm_h1_oneform(&gm, &v, Region::M);
        // Oracle: polar midpoint quadrature of sin² + π² cos² over the unit disc.
        let (nr, nt) = (2000, 2000);
        let mut acc = 0.0;
        for i in 0..nr {
            let r = (i as f64 + 0.5) / nr as f64;
            for j in 0..nt {
                let t = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
                let x = r * t.cos();
                acc += ((PI * x).sin().powi(2) + PI * PI * (PI * x).cos().powi(2)) * r;
            }
        }
        let want = (acc * (1.0 / nr as f64) * (2.0 * PI / nt as f64)).sqrt();
        assert!((got - want).abs() < 0.01 * want, "{got} vs {want}");
    }

    #[test]
    fn korn_ratio_of_killing_and_constant_fields() {
        let gm = euclid(1.0 / 64.0);
        let d = gm.domain.clone();
        let rot = OneFormField::from_fn(d.clone(), Region::Grid, |x| [-x.y, x.x]);
        let r = korn_ratio(&gm, &rot, Region::Annulus).unwrap();
        let rr = rot.restrict(Region::Annulus);
        let want = norm_h1_oneform(&gm, &rr, Region::Annulus) / norm_l2_oneform(&gm, &rr, Region::Annulus);
        assert!((r - want).abs() < 1e-12);
        let c = OneFormField::from_fn(d.clone(), Region::Grid, |_| [1.0, 2.0]);
        assert!((korn_ratio(&gm, &c, Region::M).unwrap() - 1.0).abs() < 1e-12);
        let z = OneFormField::zeros(d, Region::M);
        assert_eq!(korn_ratio(&gm, &z, Region::M), Err(Error::ZeroField));
    }
}
