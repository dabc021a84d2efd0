//! Test fields: curl-curl phantoms, random band-limited tensors and random
//! one-forms, all seeded for reproducibility.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Domain, Point, Region};
use crate::fields::{OneFormField, SymTensorField};

/// Deterministic generator used by every ensemble.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `f = (∂₂²ψ, -∂₁∂₂ψ, ∂₁²ψ)` for `ψ = amp·exp(-|x-c|²/w²)`. Divergence-free
/// for the flat metric.
pub fn stream_phantom(domain: Arc<Domain>, center: [f64; 2], width: f64, amp: f64) -> SymTensorField {
    let c = Point::new(center[0], center[1]);
    let w2 = width * width;
    SymTensorField::from_fn(domain, Region::M, |x| {
        let z = x - c;
        let psi = amp * (-z.norm_squared() / w2).exp();
        // ∂_a∂_b ψ = ψ (4 z_a z_b / w⁴ - 2 δ_ab / w²)
        let d11 = psi * (4.0 * z.x * z.x / (w2 * w2) - 2.0 / w2);
        let d22 = psi * (4.0 * z.y * z.y / (w2 * w2) - 2.0 / w2);
        let d12 = psi * 4.0 * z.x * z.y / (w2 * w2);
        [d22, -d12, d11]
    })
}

/// `(1 - r²/a²)³` for `r < a`, and its gradient.
pub fn bump(a: f64, x: &Point) -> (f64, Point) {
    let s = 1.0 - x.norm_squared() / (a * a);
    if s <= 0.0 {
        return (0.0, Point::zeros());
    }
    (s.powi(3), x * (-6.0 * s * s / (a * a)))
}

/// One random Fourier mode `cos(k·x + φ)` with `|k| <= band`.
#[derive(Debug, Clone, Copy)]
struct Mode {
    k: Point,
    phase: f64,
    amp: [f64; 3],
}

fn draw_modes(rng: &mut ChaCha8Rng, n_modes: usize, band: f64) -> Vec<Mode> {
    (0..n_modes)
        .map(|_| {
            let r = band * rng.gen::<f64>().sqrt();
            let t = 2.0 * PI * rng.gen::<f64>();
            Mode {
                k: Point::new(r * t.cos(), r * t.sin()),
                phase: 2.0 * PI * rng.gen::<f64>(),
                amp: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            }
        })
        .collect()
}

/// Parameters of the random tensor ensembles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub size: usize,
    pub seed: u64,
    pub n_modes: usize,
    pub band: f64,
    /// Support radius of the envelope.
    pub support: f64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self { size: 50, seed: 7, n_modes: 10, band: 8.0, support: 0.9 }
    }
}

/// `f_ij = χ(x) Σ_m a_m^{ij} cos(k_m·x + φ_m)` with `χ` the envelope of
/// radius `support`.
pub fn random_tensor(domain: Arc<Domain>, rng: &mut ChaCha8Rng, spec: &EnsembleSpec) -> SymTensorField {
    let modes = draw_modes(rng, spec.n_modes, spec.band);
    SymTensorField::from_fn(domain, Region::M, |x| {
        let (chi, _) = bump(spec.support, x);
        if chi == 0.0 {
            return [0.0; 3];
        }
        let mut out = [0.0; 3];
        for m in &modes {
            let c = (m.k.dot(x) + m.phase).cos();
            for (o, a) in out.iter_mut().zip(&m.amp) {
                *o += chi * a * c;
            }
        }
        out
    })
}

/// The ensemble of `spec.size` tensors drawn in order from `spec.seed`.
pub fn tensor_ensemble(domain: &Arc<Domain>, spec: &EnsembleSpec) -> Vec<SymTensorField> {
    let mut r = rng(spec.seed);
    (0..spec.size).map(|_| random_tensor(domain.clone(), &mut r, spec)).collect()
}

/// Random one-form `v = b(x) Σ_m a_m cos(k_m·x + φ_m)` with `|k| <= band`.
/// With `vanish = true` the factor is `b = (1 - r²)²`, so `v ∈ H¹₀(M)` with
/// `dv` continuous across `∂M`; otherwise `b = 1` on the whole grid.
pub fn random_oneform(
    domain: Arc<Domain>,
    rng: &mut ChaCha8Rng,
    n_modes: usize,
    band: f64,
    vanish: bool,
) -> OneFormField {
    let modes = draw_modes(rng, n_modes, band);
    let region = if vanish { Region::M } else { Region::Grid };
    OneFormField::from_fn(domain, region, |x| {
        let b = if vanish { (1.0 - x.norm_squared()).max(0.0).powi(2) } else { 1.0 };
        let mut out = [0.0; 2];
        for m in &modes {
            let c = (m.k.dot(x) + m.phase).cos();
            out[0] += b * m.amp[0] * c;
            out[1] += b * m.amp[1] * c;
        }
        out
    })
}
