//! The normal operator `N = I*I`, evaluated by composing over directions at
//! a point or by integrating against its explicit kernel.
//!
//! Both evaluators return covariant tensors `(Nf)_kl` in component form.
//! The angular form produces `(Nf)^{kl} = 2 ∫_{S_x} ω^k ω^l ∫_0^τ f_ij γ̇^i γ̇^j dt dθ`
//! which is lowered with `g(x)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::domain::{Domain, Point, Region};
use crate::error::{Error, Result};
use crate::fields::SymTensorField;
use crate::geodesic::integrate;
use crate::metric::{Mat2, MetricField};
use crate::two_point::{inv_sqrt, two_point_with};

/// Lowers both indices of a contravariant tensor given as `(t11, t12, t22)`.
pub fn lower(g: &Mat2, t: &[f64; 3]) -> [f64; 3] {
    let m = g * Mat2::new(t[0], t[1], t[1], t[2]) * g;
    [m[(0, 0)], m[(0, 1)], m[(1, 1)]]
}

/// Raises both indices of a covariant tensor.
pub fn raise(g_inv: &Mat2, t: &[f64; 3]) -> [f64; 3] {
    lower(g_inv, t)
}

/// Metric unit directions `g(x)^{-1/2}(cos θ_a, sin θ_a)` with
/// `θ_a = 2π a / n`.
pub fn direction_set(metric: &MetricField, x: &Point, n_dirs: usize) -> Vec<Point> {
    let e = inv_sqrt(&metric.g(x));
    (0..n_dirs)
        .map(|a| {
            let t = 2.0 * PI * a as f64 / n_dirs as f64;
            e * Point::new(t.cos(), t.sin())
        })
        .collect()
}

/// Angular composition at one point, for several fields at once. Fields
/// are read only where `|y| <= support_radius`.
fn compose_many(
    metric: &MetricField,
    fields: &[&SymTensorField],
    x: &Point,
    radius: f64,
    support_radius: f64,
    n_dirs: usize,
    step: f64,
) -> Result<Vec<[f64; 3]>> {
    let domain = fields.first().map(|f| f.domain().clone());
    let mut out = vec![[0.0; 3]; fields.len()];
    let Some(domain) = domain else { return Ok(out) };
    let s2 = support_radius * support_radius;
    let dtheta = 2.0 * PI / n_dirs as f64;
    let mut acc = vec![0.0; fields.len()];
    for omega in direction_set(metric, x, n_dirs) {
        acc.iter_mut().for_each(|a| *a = 0.0);
        integrate(metric, *x, omega, radius, step, |w, y, v| {
            if y.norm_squared() > s2 {
                return;
            }
            if let Some(st) = domain.bilinear(y) {
                let vv = [v.x * v.x, 2.0 * v.x * v.y, v.y * v.y];
                for (a, f) in acc.iter_mut().zip(fields) {
                    let data = f.data();
                    let mut val = 0.0;
                    for &(k, b) in &st {
                        let c = &data[k];
                        val += b * (c[0] * vv[0] + c[1] * vv[1] + c[2] * vv[2]);
                    }
                    *a += w * val;
                }
            }
        })?;
        let ww = [omega.x * omega.x, omega.x * omega.y, omega.y * omega.y];
        for (o, a) in out.iter_mut().zip(&acc) {
            for c in 0..3 {
                o[c] += 2.0 * dtheta * ww[c] * a;
            }
        }
    }
    let g = metric.g(x);
    Ok(out.iter().map(|t| lower(&g, t)).collect())
}

/// `(Nf)(x)` by angular composition over `n_dirs` directions, with rays
/// traced to the circle of radius `radius` (normally `M1`).
pub fn normal_compose(
    metric: &MetricField,
    f: &SymTensorField,
    x: Point,
    radius: f64,
    n_dirs: usize,
    step: f64,
) -> Result<[f64; 3]> {
    if x.norm() >= radius {
        return Err(Error::StartOutside { point: [x.x, x.y], radius });
    }
    let support = f.domain().radius_m1() + 2.0 * f.domain().h();
    Ok(compose_many(metric, &[f], &x, radius, support, n_dirs, step)?[0])
}

/// Angular composition on every node of `M1`, for a batch of fields that
/// vanish outside `M` (each ray is traced once and all fields are
/// integrated along it).
#[derive(Debug, Clone)]
pub struct ComposeOperator {
    pub metric: MetricField,
    pub domain: Arc<Domain>,
    pub n_dirs: usize,
    pub step: f64,
}

impl ComposeOperator {
    pub fn new(metric: &MetricField, domain: Arc<Domain>, n_dirs: usize, step: f64) -> Self {
        Self { metric: metric.clone(), domain, n_dirs, step }
    }

    pub fn apply_batch(&self, fields: &[&SymTensorField]) -> Result<Vec<SymTensorField>> {
        for f in fields {
            if !f.domain().same_grid(&self.domain) {
                return Err(Error::DomainMismatch);
            }
        }
        let d = &self.domain;
        let r1 = d.radius_m1();
        // Bilinear interpolation of fields supported in M reaches one cell past it.
        let support = d.radius_m() + 1.5 * d.h();
        let nodes = d.region_nodes(Region::M1);
        let values = nodes
            .par_iter()
            .map(|&k| {
                let x = d.position(k);
                if x.norm() >= r1 {
                    // Nodes on the outer circle: rays start on the boundary.
                    let inner = x * (1.0 - 1e-12);
                    return compose_many(&self.metric, fields, &inner, r1, support, self.n_dirs, self.step);
                }
                compose_many(&self.metric, fields, &x, r1, support, self.n_dirs, self.step)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out: Vec<Vec<[f64; 3]>> = vec![vec![[0.0; 3]; d.len()]; fields.len()];
        for (&k, vals) in nodes.iter().zip(values) {
            for (o, v) in out.iter_mut().zip(vals) {
                o[k] = v;
            }
        }
        out.into_iter().map(|data| SymTensorField::from_data(d.clone(), Region::M1, data)).collect()
    }

    pub fn apply(&self, f: &SymTensorField) -> Result<SymTensorField> {
        Ok(self.apply_batch(&[f])?.remove(0))
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
fn fft_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Euclidean angular composition evaluated as a discrete convolution.
///
/// For the flat metric every ray from a grid node samples the field at the
/// same offsets, with the same bilinear and Simpson weights. Integrating each
/// ray over a fixed length long enough to cross `M` from anywhere in `M1`
/// therefore turns the composition into a convolution, applied by FFT. The
/// result equals [`ComposeOperator`] with the Euclidean metric up to
/// rounding, for fields supported in `M`.
#[derive(Debug, Clone)]
pub struct EuclideanNormalFft {
    domain: Arc<Domain>,
    size: usize,
    /// Kernel spectra, `kernel[q][p]` maps input component `p` to output `q`.
    kernel: Vec<Vec<Vec<Complex<f64>>>>,
}

impl EuclideanNormalFft {
    pub fn new(domain: Arc<Domain>, n_dirs: usize, step: f64) -> Result<Self> {
        let h = domain.h();
        // Longest distance from a node of M1 to the support of a field on M.
        let length = domain.radius_m1() + domain.radius_m() + 2.0 * h;
        let reach = (length / h).ceil() as i64 + 2;
        let hw = domain.half_width();
        let size = fft_size((2 * hw + 1 + reach + 2) as usize);
        let n = size;
        let mut spatial = vec![vec![vec![0.0; n * n]; 3]; 3];
        let dtheta = 2.0 * PI / n_dirs as f64;
        let origin = Point::zeros();
        // Rays start at the origin, which is a grid node.
        for a in 0..n_dirs {
            let t = 2.0 * PI * a as f64 / n_dirs as f64;
            let omega = Point::new(t.cos(), t.sin());
            let wq = [omega.x * omega.x, omega.x * omega.y, omega.y * omega.y];
            let vp = [omega.x * omega.x, 2.0 * omega.x * omega.y, omega.y * omega.y];
            integrate(&MetricField::euclidean(), origin, omega, length, step, |w, y, _| {
                let fx = y.x / h;
                let fy = y.y / h;
                let (i0, j0) = (fx.floor(), fy.floor());
                let (tx, ty) = (fx - i0, fy - j0);
                let corners = [
                    (i0 as i64, j0 as i64, (1.0 - tx) * (1.0 - ty)),
                    (i0 as i64 + 1, j0 as i64, tx * (1.0 - ty)),
                    (i0 as i64, j0 as i64 + 1, (1.0 - tx) * ty),
                    (i0 as i64 + 1, j0 as i64 + 1, tx * ty),
                ];
                for (di, dj, b) in corners {
                    if b == 0.0 {
                        continue;
                    }
                    // Convolution kernel is the flipped correlation kernel.
                    let ii = (-di).rem_euclid(n as i64) as usize;
                    let jj = (-dj).rem_euclid(n as i64) as usize;
                    for q in 0..3 {
                        for p in 0..3 {
                            spatial[q][p][jj * n + ii] += 2.0 * dtheta * w * b * wq[q] * vp[p];
                        }
                    }
                }
            })?;
        }
        let mut planner = FftPlanner::new();
        let kernel =
            spatial.into_iter().map(|row| row.into_iter().map(|k| fft2(&mut planner, k, n)).collect()).collect();
        Ok(Self { domain, size, kernel })
    }

    /// `Nf` on the nodes of `M1` for `f` supported in `M`.
    pub fn apply(&self, f: &SymTensorField) -> Result<SymTensorField> {
        if !f.domain().same_grid(&self.domain) {
            return Err(Error::DomainMismatch);
        }
        let d = &self.domain;
        let n = self.size;
        let hw = d.half_width();
        let side = d.side();
        let embed = |c: usize| {
            let mut buf = vec![0.0; n * n];
            for k in 0..d.len() {
                if !d.in_region(k, Region::M) {
                    continue;
                }
                let (i, j) = d.coords(k);
                let ii = (i + hw) as usize;
                let jj = (j + hw) as usize;
                buf[jj * n + ii] = f.get(k)[c];
            }
            buf
        };
        let mut planner = FftPlanner::new();
        let inputs: Vec<Vec<Complex<f64>>> = (0..3).map(|c| fft2(&mut planner, embed(c), n)).collect();
        let mut out = vec![[0.0; 3]; d.len()];
        for q in 0..3 {
            let mut spec = vec![Complex::new(0.0, 0.0); n * n];
            for (p, input) in inputs.iter().enumerate() {
                for ((s, a), b) in spec.iter_mut().zip(input).zip(&self.kernel[q][p]) {
                    *s += a * b;
                }
            }
            let back = ifft2(&mut planner, spec, n);
            for jj in 0..side {
                for ii in 0..side {
                    let k = jj * side + ii;
                    if d.in_region(k, Region::M1) {
                        out[k][q] = back[jj * n + ii];
                    }
                }
            }
        }
        SymTensorField::from_data(d.clone(), Region::M1, out)
    }
}

fn fft2(planner: &mut FftPlanner<f64>, data: Vec<f64>, n: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = data.into_iter().map(|v| Complex::new(v, 0.0)).collect();
    let fft = planner.plan_fft_forward(n);
    transform_2d(&mut buf, n, fft.as_ref());
    buf
}

fn ifft2(planner: &mut FftPlanner<f64>, mut buf: Vec<Complex<f64>>, n: usize) -> Vec<f64> {
    let fft = planner.plan_fft_inverse(n);
    transform_2d(&mut buf, n, fft.as_ref());
    let scale = 1.0 / (n * n) as f64;
    buf.into_iter().map(|c| c.re * scale).collect()
}

fn transform_2d(buf: &mut [Complex<f64>], n: usize, fft: &dyn rustfft::Fft<f64>) {
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for i in 0..n {
        for j in 0..n {
            col[j] = buf[j * n + i];
        }
        fft.process(&mut col);
        for j in 0..n {
            buf[j * n + i] = col[j];
        }
    }
}

/// Angular composition on `M1`, by FFT for the flat metric and ray by ray
/// otherwise.
#[derive(Debug, Clone)]
pub enum NormalEvaluator {
    Fft(EuclideanNormalFft),
    Compose(ComposeOperator),
}

impl NormalEvaluator {
    pub fn new(metric: &MetricField, domain: Arc<Domain>, n_dirs: usize, step: f64) -> Result<Self> {
        if metric.is_euclidean() {
            Ok(Self::Fft(EuclideanNormalFft::new(domain, n_dirs, step)?))
        } else {
            Ok(Self::Compose(ComposeOperator::new(metric, domain, n_dirs, step)))
        }
    }

    pub fn apply_batch(&self, fields: &[&SymTensorField]) -> Result<Vec<SymTensorField>> {
        match self {
            Self::Fft(op) => fields.iter().map(|f| op.apply(f)).collect(),
            Self::Compose(op) => op.apply_batch(fields),
        }
    }

    pub fn apply(&self, f: &SymTensorField) -> Result<SymTensorField> {
        Ok(self.apply_batch(&[f])?.remove(0))
    }

    fn domain(&self) -> &Arc<Domain> {
        match self {
            Self::Fft(op) => &op.domain,
            Self::Compose(op) => &op.domain,
        }
    }

    /// Dense matrix of `N` from tensors on the nodes of `M` to tensors on
    /// the nodes of `M1`. Unknowns are ordered node-major as
    /// `(f11, f12, f22)` following [`Domain::region_nodes`]. Only grids of at
    /// most [`DENSE_MAX_SIDE`] nodes per side are accepted.
    pub fn dense_matrix(&self) -> Result<DMatrix<f64>> {
        let domain = self.domain().clone();
        if domain.side() > DENSE_MAX_SIDE {
            return Err(Error::InvalidArgument(format!(
                "dense assembly needs at most {DENSE_MAX_SIDE} nodes per side, grid has {}",
                domain.side()
            )));
        }
        let cols = domain.region_nodes(Region::M);
        let rows = domain.region_nodes(Region::M1);
        let basis: Vec<SymTensorField> = cols
            .iter()
            .flat_map(|&k| (0..3).map(move |c| (k, c)))
            .map(|(k, c)| {
                let mut f = SymTensorField::zeros(domain.clone(), Region::M);
                let mut v = [0.0; 3];
                v[c] = 1.0;
                f.set(k, v);
                f
            })
            .collect();
        let refs: Vec<&SymTensorField> = basis.iter().collect();
        let images = self.apply_batch(&refs)?;
        let mut out = DMatrix::zeros(3 * rows.len(), basis.len());
        for (j, image) in images.iter().enumerate() {
            for (i, &k) in rows.iter().enumerate() {
                let v = image.get(k);
                for c in 0..3 {
                    out[(3 * i + c, j)] = v[c];
                }
            }
        }
        Ok(out)
    }
}

/// Largest grid side accepted by [`NormalEvaluator::dense_matrix`].
pub const DENSE_MAX_SIDE: usize = 33;

/// Step used by the kernel evaluator's two-point solves.
pub const KERNEL_SHOOT_STEP: f64 = 1e-2;

/// Angular resolution of the exact polar integral of the frozen kernel.
const FROZEN_ANGLES: usize = 256;

/// `(Nf)_kl(x)` from the explicit kernel
/// `2 / √det g(x) ∫ f^{ij}(y) ρ^{-1} ∂_iρ ∂_jρ ∂_kρ ∂_lρ |det ∂²(ρ²/2)/∂x∂y| dy`,
/// summed over the grid nodes with `√det g(y) h²`-free Lebesgue weights `h²`.
///
/// The `1/ρ` singularity is handled by subtracting the kernel of the
/// constant metric `g(x)` applied to the frozen value `f(x)`, damped by a
/// Gaussian cutoff of width `3h`; that term is added back through its exact
/// polar integral. The remaining integrand is bounded.
pub fn normal_kernel(metric: &MetricField, f: &SymTensorField, x: Point) -> Result<[f64; 3]> {
    let d = f.domain();
    let h = d.h();
    let cutoff = 3.0 * h;
    let window = 6.0 * cutoff;
    let gx = metric.g(&x);
    let gx_inv = crate::metric::inverse(&gx);
    let sqrt_det_x = gx.determinant().sqrt();
    let e = inv_sqrt(&gx);
    // Frozen value f^{ij}(x), interpolated when x is off-grid.
    let fx_up = raise(&gx_inv, &f.interpolate(&x));
    let chi = |z: &Point| (-(z.norm_squared()) / (cutoff * cutoff)).exp();
    let quartic = |up: &[f64; 3], u: &Point| {
        // (f^{ij} u_i u_j) u_k u_l
        let s = up[0] * u.x * u.x + 2.0 * up[1] * u.x * u.y + up[2] * u.y * u.y;
        [s * u.x * u.x, s * u.x * u.y, s * u.y * u.y]
    };
    let frozen = |z: &Point| -> [f64; 3] {
        // Constant-metric kernel: ρ = |z|_g, ∂_yρ = g z / ρ, |J| = ρ.
        let gz = gx * z;
        let rho = z.dot(&gz).sqrt();
        let q = quartic(&fx_up, &(gz / rho));
        let c = 2.0 * sqrt_det_x / rho;
        [c * q[0], c * q[1], c * q[2]]
    };

    let nodes: Vec<usize> =
        (0..d.len()).filter(|&k| d.in_region(k, f.region()) || (d.position(k) - x).norm() < window).collect();
    let contributions = nodes
        .par_iter()
        .map(|&k| -> Result<[f64; 3]> {
            let y = d.position(k);
            let z = y - x;
            if z.norm() < 1e-12 {
                return Ok([0.0; 3]);
            }
            let mut val = [0.0; 3];
            let fy = f.get(k);
            if fy != [0.0; 3] {
                if metric.is_euclidean() {
                    let rho = z.norm();
                    let q = quartic(&fy, &(z / rho));
                    for c in 0..3 {
                        val[c] = 2.0 * q[c] / rho;
                    }
                } else {
                    let sol = two_point_with(metric, x, y, None, KERNEL_SHOOT_STEP)?;
                    let gy_inv = metric.g_inv(&y);
                    let fy_up = raise(&gy_inv, &fy);
                    let s = fy_up[0] * sol.grad_y.x * sol.grad_y.x
                        + 2.0 * fy_up[1] * sol.grad_y.x * sol.grad_y.y
                        + fy_up[2] * sol.grad_y.y * sol.grad_y.y;
                    let gxr = sol.grad_x;
                    let c = 2.0 / sqrt_det_x / sol.rho * sol.hessian_mixed_det * s;
                    val = [c * gxr.x * gxr.x, c * gxr.x * gxr.y, c * gxr.y * gxr.y];
                }
            }
            if z.norm() < window {
                let fr = frozen(&z);
                let w = chi(&z);
                for c in 0..3 {
                    val[c] -= w * fr[c];
                }
            }
            Ok(val)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = [0.0; 3];
    for c in contributions {
        for i in 0..3 {
            out[i] += c[i] * h * h;
        }
    }
    // Exact frozen term: with z = E w, ∫ χ(|z|) K₀ dz = 2 ∫_{S¹} q(θ) ∫_0^∞ χ(r |E ŵ|) dr dθ.
    let radial = cutoff * PI.sqrt() / 2.0;
    let sq = gx.symmetric_eigen();
    let g_half = sq.eigenvectors * Mat2::from_diagonal(&sq.eigenvalues.map(f64::sqrt)) * sq.eigenvectors.transpose();
    let dth = 2.0 * PI / FROZEN_ANGLES as f64;
    for a in 0..FROZEN_ANGLES {
        let t = a as f64 * dth;
        let wh = Point::new(t.cos(), t.sin());
        let u = g_half * wh;
        let q = quartic(&fx_up, &u);
        let scale = 2.0 * radial / (e * wh).norm() * dth;
        for c in 0..3 {
            out[c] += scale * q[c];
        }
    }
    Ok(out)
}

/// `n × n` points centered at the origin with the given spacing.
pub fn sample_grid(n: usize, spacing: f64) -> Vec<Point> {
    let c = (n as f64 - 1.0) / 2.0;
    (0..n).flat_map(|j| (0..n).map(move |i| Point::new((i as f64 - c) * spacing, (j as f64 - c) * spacing))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrosscheckRow {
    pub x: Point,
    pub kernel: [f64; 3],
    pub compose: [f64; 3],
    /// `|kernel - compose|_g / |compose|_g` at this point.
    pub relative: f64,
}

/// Kernel and angular evaluations of `Nf` at `points`, and the relative
/// Frobenius error `(Σ|kernel - compose|²_g / Σ|compose|²_g)^{1/2}` over all
/// of them.
pub fn normal_crosscheck(
    metric: &MetricField,
    f: &SymTensorField,
    points: &[Point],
    n_dirs: usize,
    step: f64,
) -> Result<(Vec<CrosscheckRow>, f64)> {
    let radius = f.domain().radius_m1();
    let mut rows = Vec::with_capacity(points.len());
    let (mut num, mut den) = (0.0, 0.0);
    for &x in points {
        let kernel = normal_kernel(metric, f, x)?;
        let compose = normal_compose(metric, f, x, radius, n_dirs, step)?;
        let node = crate::grid::NodeMetric::at(metric, &x);
        let diff = [kernel[0] - compose[0], kernel[1] - compose[1], kernel[2] - compose[2]];
        let (e, c) = (node.dot_tensor(&diff, &diff), node.dot_tensor(&compose, &compose));
        num += e;
        den += c;
        let relative = if c > 0.0 { (e / c).sqrt() } else { e.sqrt() };
        rows.push(CrosscheckRow { x, kernel, compose, relative });
    }
    let total = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok((rows, total))
}
