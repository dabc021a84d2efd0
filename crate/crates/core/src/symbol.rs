//! Principal symbol of the normal operator and a frequency-decay probe.
//!
//! The symbol is `s^{ijkl}(x, ξ) = 2π ∫ ω^i ω^j ω^k ω^l δ(ξ·ω) dσ_x(ω)` over
//! the `g`-unit circle, with `dσ_x` the `g`-angle. Writing `ω = E(cos θ, sin θ)`
//! with `E = g^{-1/2}` and `η = Eξ`, `ξ·ω = |η| cos(θ - θ_η)`, so the delta picks
//! the two directions `±E η̂^⊥`, each with weight `1/|η|`, and
//! `s = (4π/|ξ|_g) ε⊗ε⊗ε⊗ε` with `ε = E η̂^⊥`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::calculus::norm_l2_tensor;
use crate::domain::{Domain, Point, Region};
use crate::error::{Error, Result};
use crate::fields::SymTensorField;
use crate::grid::GridMetric;
use crate::metric::MetricField;
use crate::normal::{ComposeOperator, EuclideanNormalFft};
use crate::phantoms::bump;
use crate::two_point::inv_sqrt;

/// Default mollifier width in radians of `g`-angle.
pub const DEFAULT_MOLLIFIER: f64 = 0.05;

const MOLLIFIED_NODES: usize = 16384;

/// Component pairs `(1,1), (1,2), (2,2)` in the order used by field storage.
pub const PAIRS: [(usize, usize); 3] = [(0, 0), (0, 1), (1, 1)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolTensor {
    pub s: [[[[f64; 2]; 2]; 2]; 2],
}

impl SymbolTensor {
    fn zero() -> Self {
        Self { s: [[[[0.0; 2]; 2]; 2]; 2] }
    }

    fn add_quartic(&mut self, w: &Point, scale: f64) {
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        self.s[i][j][k][l] += scale * w[i] * w[j] * w[k] * w[l];
                    }
                }
            }
        }
    }

    /// The nine independent components `s^{(ij)(kl)}` with `(ij), (kl)` in
    /// [`PAIRS`] order, row-major.
    pub fn components(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (a, &(i, j)) in PAIRS.iter().enumerate() {
            for (b, &(k, l)) in PAIRS.iter().enumerate() {
                out[3 * a + b] = self.s[i][j][k][l];
            }
        }
        out
    }

    /// `s^{ijkl} t_kl` for a covariant tensor in component form, returned in
    /// component form.
    pub fn apply(&self, t: &[f64; 3]) -> [f64; 3] {
        let m = [[t[0], t[1]], [t[1], t[2]]];
        let mut out = [0.0; 3];
        for (a, &(i, j)) in PAIRS.iter().enumerate() {
            for k in 0..2 {
                for l in 0..2 {
                    out[a] += self.s[i][j][k][l] * m[k][l];
                }
            }
        }
        out
    }

    /// `s^{ijkl} a_ij b_kl`.
    pub fn pair(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let r = self.apply(b);
        r[0] * a[0] + 2.0 * r[1] * a[1] + r[2] * a[2]
    }

    pub fn max_abs(&self) -> f64 {
        self.components().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest violation of the index symmetries.
    pub fn symmetry_defect(&self) -> f64 {
        let s = &self.s;
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let v = s[i][j][k][l];
                        d = d
                            .max((v - s[j][i][k][l]).abs())
                            .max((v - s[i][j][l][k]).abs())
                            .max((v - s[k][l][i][j]).abs());
                    }
                }
            }
        }
        d
    }
}

/// How the delta in the symbol integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SymbolEvaluator {
    /// Sum over the two zero crossings of `ξ·ω`.
    Exact,
    /// Gaussian of the given width in `g`-angle, integrated by the periodic
    /// trapezoid rule.
    Mollified(f64),
}

pub fn principal_symbol(metric: &MetricField, x: Point, xi: Point, evaluator: SymbolEvaluator) -> Result<SymbolTensor> {
    if !(xi.norm() > 0.0) {
        return Err(Error::ZeroCovector);
    }
    let e = inv_sqrt(&metric.g(&x));
    let eta = e * xi;
    let norm = eta.norm();
    let mut out = SymbolTensor::zero();
    match evaluator {
        SymbolEvaluator::Exact => {
            let eps = e * Point::new(-eta.y, eta.x) / norm;
            out.add_quartic(&eps, 4.0 * PI / norm);
        }
        SymbolEvaluator::Mollified(width) => {
            if !(width > 0.0) {
                return Err(Error::InvalidArgument("mollifier width must be positive".into()));
            }
            // δ(u) ≈ exp(-u²/2σ²)/(σ√2π) with σ = width·|η|, so that the
            // bump spans `width` radians around each crossing.
            let sigma = width * norm;
            let norm_const = 1.0 / (sigma * (2.0 * PI).sqrt());
            let dth = 2.0 * PI / MOLLIFIED_NODES as f64;
            for a in 0..MOLLIFIED_NODES {
                let t = a as f64 * dth;
                let omega = e * Point::new(t.cos(), t.sin());
                let u = xi.dot(&omega);
                let delta = norm_const * (-0.5 * (u / sigma).powi(2)).exp();
                if delta < 1e-300 {
                    continue;
                }
                out.add_quartic(&omega, 2.0 * PI * delta * dth);
            }
        }
    }
    Ok(out)
}

/// `g`-unit covariant tensor `ε♭⊗ε♭` with `ε` the `g`-unit vector annihilated
/// by `ξ`; it satisfies `ξ^i f_ij = 0`.
pub fn solenoidal_direction(metric: &MetricField, x: Point, xi: Point) -> Result<[f64; 3]> {
    if !(xi.norm() > 0.0) {
        return Err(Error::ZeroCovector);
    }
    let g = metric.g(&x);
    let e = inv_sqrt(&g);
    let eta = e * xi;
    let eps = e * Point::new(-eta.y, eta.x) / eta.norm();
    let flat = g * eps;
    Ok([flat.x * flat.x, flat.x * flat.y, flat.y * flat.y])
}

/// `½(ξ_k v_l + ξ_l v_k)` in component form.
pub fn potential_direction(xi: Point, v: Point) -> [f64; 3] {
    [xi.x * v.x, 0.5 * (xi.x * v.y + xi.y * v.x), xi.y * v.y]
}

/// Ellipticity constant `s^{ijkl} f̂_ij f̂_kl` on the unit solenoidal direction.
pub fn ellipticity_constant(metric: &MetricField, x: Point, xi: Point, evaluator: SymbolEvaluator) -> Result<f64> {
    let s = principal_symbol(metric, x, xi, evaluator)?;
    let f = solenoidal_direction(metric, x, xi)?;
    Ok(s.pair(&f, &f))
}

/// Which test family the order probe uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeFamily {
    /// `χ sin(k x₁) e₂⊗e₂`.
    Solenoidal,
    /// `d(χ sin(k x₁) e¹ / k)`, evaluated in closed form.
    Potential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderProbeSettings {
    pub n_dirs: usize,
    /// Simpson step as a multiple of `h`.
    pub step_factor: f64,
    /// Radius of the envelope `χ(r) = (1 - r²/a²)³`.
    pub envelope_radius: f64,
}

impl Default for OrderProbeSettings {
    fn default() -> Self {
        Self { n_dirs: 512, step_factor: 0.5, envelope_radius: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderProbeRow {
    pub k: f64,
    pub ratio: f64,
}

pub fn probe_field(domain: Arc<Domain>, family: ProbeFamily, k: f64, envelope_radius: f64) -> SymTensorField {
    SymTensorField::from_fn(domain, Region::M, |x| {
        let (chi, dchi) = bump(envelope_radius, x);
        let (s, c) = (k * x.x).sin_cos();
        match family {
            ProbeFamily::Solenoidal => [0.0, 0.0, chi * s],
            ProbeFamily::Potential => [chi * c + dchi.x * s / k, 0.5 * dchi.y * s / k, 0.0],
        }
    })
}

/// `‖Nf_k‖_{L²(M₁)} / ‖f_k‖_{L²(M)}` for each `k`. Euclidean metrics use the
/// FFT evaluator; others compose ray by ray.
pub fn symbol_order_probe(
    metric: &MetricField,
    domain: Arc<Domain>,
    k_list: &[f64],
    family: ProbeFamily,
    settings: &OrderProbeSettings,
) -> Result<Vec<OrderProbeRow>> {
    let h = domain.h();
    for &k in k_list {
        if k * h > 0.25 + 1e-12 || k < 4.0 {
            return Err(Error::UnresolvedFrequency { k, h });
        }
    }
    let gm = GridMetric::new(metric, domain.clone());
    let step = settings.step_factor * h;
    let fields: Vec<SymTensorField> =
        k_list.iter().map(|&k| probe_field(domain.clone(), family, k, settings.envelope_radius)).collect();
    let images = if metric.is_euclidean() {
        let op = EuclideanNormalFft::new(domain.clone(), settings.n_dirs, step)?;
        fields.iter().map(|f| op.apply(f)).collect::<Result<Vec<_>>>()?
    } else {
        let refs: Vec<&SymTensorField> = fields.iter().collect();
        ComposeOperator::new(metric, domain.clone(), settings.n_dirs, step).apply_batch(&refs)?
    };
    Ok(k_list
        .iter()
        .zip(fields.iter().zip(&images))
        .map(|(&k, (f, nf))| OrderProbeRow {
            k,
            ratio: norm_l2_tensor(&gm, nf, Region::M1) / norm_l2_tensor(&gm, f, Region::M),
        })
        .collect())
}

/// Least-squares slope of `log ratio` against `log k`.
pub fn log_log_slope(rows: &[OrderProbeRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.k.ln(), r.ratio.ln())).collect();
    fit_slope(&pts)
}

pub(crate) fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
