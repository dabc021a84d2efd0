//! Riemannian metrics on the planar chart, with closed-form derivatives.

use nalgebra::Matrix2;

use crate::domain::{Domain, Point, Region};
use crate::error::{Error, Result};

pub type Mat2 = Matrix2<f64>;

/// Christoffel symbols indexed `[k][i][j]` for `Γ^k_ij`.
pub type Christoffel = [[[f64; 2]; 2]; 2];

/// Smooth scalar function used as a conformal exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarFn {
    Constant(f64),
    /// `amp * exp(-|x - center|^2 / width^2)`.
    Gaussian {
        amp: f64,
        center: [f64; 2],
        width: f64,
    },
}

/// Value, gradient and Hessian of a scalar function.
#[derive(Debug, Clone, Copy)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl ScalarFn {
    pub fn jet(&self, x: &Point) -> Jet {
        match *self {
            ScalarFn::Constant(c) => Jet { value: c, grad: [0.0; 2], hess: [[0.0; 2]; 2] },
            ScalarFn::Gaussian { amp, center, width } => {
                let d = [x.x - center[0], x.y - center[1]];
                let s2 = width * width;
                let v = amp * (-(d[0] * d[0] + d[1] * d[1]) / s2).exp();
                let grad = [-2.0 * d[0] / s2 * v, -2.0 * d[1] / s2 * v];
                let mut hess = [[0.0; 2]; 2];
                for (k, row) in hess.iter_mut().enumerate() {
                    for (l, h) in row.iter_mut().enumerate() {
                        let delta = if k == l { 1.0 } else { 0.0 };
                        *h = v * (4.0 * d[k] * d[l] / (s2 * s2) - 2.0 * delta / s2);
                    }
                }
                Jet { value: v, grad, hess }
            }
        }
    }
}

/// Symmetric matrix-valued bump `scale * A * exp(-|x - center|^2 / width^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    /// Entries `(a11, a12, a22)` of the constant shape matrix.
    pub shape: [f64; 3],
    pub center: [f64; 2],
    pub width: f64,
    pub scale: f64,
}

impl Bump {
    fn shape_matrix(&self) -> Mat2 {
        let [a, b, c] = self.shape;
        Mat2::new(a, b, b, c) * self.scale
    }

    fn jet(&self) -> ScalarFn {
        ScalarFn::Gaussian { amp: 1.0, center: self.center, width: self.width }
    }

    /// Rescales `scale` so that the bump has unit C³ distance from zero over
    /// the nodes of `M` in `domain`.
    pub fn normalized(shape: [f64; 3], center: [f64; 2], width: f64, domain: &Domain) -> Result<Bump> {
        let raw = Bump { shape, center, width, scale: 1.0 };
        let probe = MetricField::perturbed(MetricField::euclidean(), 1.0, raw)?;
        let norm = c3_distance(&probe, &MetricField::euclidean(), domain);
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument("perturbation bump is identically zero".into()));
        }
        Ok(Bump { scale: 1.0 / norm, ..raw })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricKind {
    Euclidean,
    /// `g = exp(2 λ) I`.
    Conformal(ScalarFn),
    /// `g = base + eps * bump`.
    Perturbed {
        base: Box<MetricKind>,
        eps: f64,
        bump: Bump,
    },
}

impl MetricKind {
    /// Short descriptor used in reports and file names.
    pub fn describe(&self) -> String {
        match self {
            MetricKind::Euclidean => "euclidean".into(),
            MetricKind::Conformal(ScalarFn::Constant(c)) => format!("conformal-const{c}"),
            MetricKind::Conformal(ScalarFn::Gaussian { amp, .. }) => format!("conformal-gauss{amp}"),
            MetricKind::Perturbed { base, eps, .. } => format!("{}-bump{eps}", base.describe()),
        }
    }
}

/// Metric tensor with its first and second partial derivatives at a point.
#[derive(Debug, Clone, Copy)]
pub struct MetricJet {
    pub g: Mat2,
    /// `dg[k] = ∂_k g`.
    pub dg: [Mat2; 2],
    /// `d2g[k][l] = ∂_k ∂_l g`.
    pub d2g: [[Mat2; 2]; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    kind: MetricKind,
    /// Upper bound of `sqrt(λ_max(g))` over the chart disc, used to size
    /// arclength caps in metric units.
    stretch: f64,
}

/// Radius of the disc on which metrics are sampled for global bounds.
const CHART_RADIUS: f64 = 1.5;

impl MetricField {
    pub fn euclidean() -> Self {
        Self { kind: MetricKind::Euclidean, stretch: 1.0 }
    }

    pub fn conformal(lambda: ScalarFn) -> Result<Self> {
        Self::from_kind(MetricKind::Conformal(lambda))
    }

    pub fn perturbed(base: MetricField, eps: f64, bump: Bump) -> Result<Self> {
        Self::from_kind(MetricKind::Perturbed { base: Box::new(base.kind), eps, bump })
    }

    pub fn from_kind(kind: MetricKind) -> Result<Self> {
        let mut m = Self { kind, stretch: 1.0 };
        let mut stretch: f64 = 0.0;
        let n = 48;
        for a in 0..=n {
            for b in 0..=n {
                let x = Point::new(
                    -CHART_RADIUS + 2.0 * CHART_RADIUS * a as f64 / n as f64,
                    -CHART_RADIUS + 2.0 * CHART_RADIUS * b as f64 / n as f64,
                );
                if x.norm() > CHART_RADIUS {
                    continue;
                }
                let g = m.g(&x);
                let eig = g.symmetric_eigenvalues();
                let (lo, hi) = (eig[0].min(eig[1]), eig[0].max(eig[1]));
                if !(lo > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "metric is not positive definite at ({:.3}, {:.3})",
                        x.x, x.y
                    )));
                }
                stretch = stretch.max(hi.sqrt());
            }
        }
        m.stretch = stretch;
        Ok(m)
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.kind, MetricKind::Euclidean)
    }

    /// Upper bound of the metric length of a Euclidean unit vector.
    pub fn stretch(&self) -> f64 {
        self.stretch
    }

    pub fn g(&self, x: &Point) -> Mat2 {
        g_of(&self.kind, x)
    }

    pub fn g_inv(&self, x: &Point) -> Mat2 {
        inverse(&self.g(x))
    }

    pub fn sqrt_det(&self, x: &Point) -> f64 {
        self.g(x).determinant().sqrt()
    }

    pub fn jet(&self, x: &Point) -> MetricJet {
        jet_of(&self.kind, x)
    }

    pub fn norm(&self, x: &Point, v: &Point) -> f64 {
        (v.dot(&(self.g(x) * v))).sqrt()
    }

    pub fn christoffel(&self, x: &Point) -> Christoffel {
        match &self.kind {
            MetricKind::Euclidean => [[[0.0; 2]; 2]; 2],
            MetricKind::Conformal(lambda) => {
                // Γ^k_ij = δ_ki ∂_jλ + δ_kj ∂_iλ − δ_ij ∂_kλ
                let d = lambda.jet(x).grad;
                let mut out = [[[0.0; 2]; 2]; 2];
                for (k, ok) in out.iter_mut().enumerate() {
                    for (i, oi) in ok.iter_mut().enumerate() {
                        for (j, v) in oi.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            if k == i {
                                acc += d[j];
                            }
                            if k == j {
                                acc += d[i];
                            }
                            if i == j {
                                acc -= d[k];
                            }
                            *v = acc;
                        }
                    }
                }
                out
            }
            MetricKind::Perturbed { .. } => christoffel_from_first(&first_jet(&self.kind, x)),
        }
    }

    /// Christoffel symbols and their first derivatives `dgamma[m][k][i][j] = ∂_m Γ^k_ij`.
    pub fn christoffel_with_derivative(&self, x: &Point) -> (Christoffel, [Christoffel; 2]) {
        if self.is_euclidean() {
            return ([[[0.0; 2]; 2]; 2], [[[[0.0; 2]; 2]; 2]; 2]);
        }
        let jet = self.jet(x);
        let ginv = inverse(&jet.g);
        let gamma = christoffel_from_jet(&jet);
        let mut dgamma = [[[[0.0; 2]; 2]; 2]; 2];
        for m in 0..2 {
            let dginv = -ginv * jet.dg[m] * ginv;
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let mut acc = 0.0;
                        for l in 0..2 {
                            let t = jet.dg[i][(j, l)] + jet.dg[j][(i, l)] - jet.dg[l][(i, j)];
                            let dt = jet.d2g[m][i][(j, l)] + jet.d2g[m][j][(i, l)] - jet.d2g[m][l][(i, j)];
                            acc += dginv[(k, l)] * t + ginv[(k, l)] * dt;
                        }
                        dgamma[m][k][i][j] = 0.5 * acc;
                    }
                }
            }
        }
        (gamma, dgamma)
    }

    pub fn gauss_curvature(&self, x: &Point) -> f64 {
        if self.is_euclidean() {
            return 0.0;
        }
        let (gam, dgam) = self.christoffel_with_derivative(x);
        let g = self.g(x);
        // R^a_{bcd} = ∂_c Γ^a_db − ∂_d Γ^a_cb + Γ^a_ce Γ^e_db − Γ^a_de Γ^e_cb, with (b,c,d) = (2,1,2).
        let (b, c, d) = (1, 0, 1);
        let mut r = [0.0; 2];
        for (a, ra) in r.iter_mut().enumerate() {
            let mut v = dgam[c][a][d][b] - dgam[d][a][c][b];
            for e in 0..2 {
                v += gam[a][c][e] * gam[e][d][b] - gam[a][d][e] * gam[e][c][b];
            }
            *ra = v;
        }
        let r1212 = g[(0, 0)] * r[0] + g[(0, 1)] * r[1];
        r1212 / g.determinant()
    }

    /// Outward unit normal (as a vector, unit in `g`) to the circle of radius
    /// `|x|` at `x`, together with the counter-clockwise unit tangent.
    pub fn circle_frame(&self, x: &Point) -> (Point, Point) {
        let g = self.g(x);
        let ginv = inverse(&g);
        // dF = x / |x| for F = |x|; the normal vector is g^{-1} dF normalized.
        let df = x / x.norm();
        let nu_raw = ginv * df;
        let nu = nu_raw / nu_raw.dot(&(g * nu_raw)).sqrt();
        let t_raw = Point::new(-x.y, x.x);
        let tau = t_raw / t_raw.dot(&(g * t_raw)).sqrt();
        (nu, tau)
    }
}

pub(crate) fn inverse(g: &Mat2) -> Mat2 {
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    Mat2::new(g[(1, 1)], -g[(0, 1)], -g[(1, 0)], g[(0, 0)]) / det
}

fn g_of(kind: &MetricKind, x: &Point) -> Mat2 {
    match kind {
        MetricKind::Euclidean => Mat2::identity(),
        MetricKind::Conformal(lambda) => Mat2::identity() * (2.0 * lambda.jet(x).value).exp(),
        MetricKind::Perturbed { base, eps, bump } => {
            g_of(base, x) + bump.shape_matrix() * (*eps * bump.jet().jet(x).value)
        }
    }
}

fn jet_of(kind: &MetricKind, x: &Point) -> MetricJet {
    match kind {
        MetricKind::Euclidean => {
            MetricJet { g: Mat2::identity(), dg: [Mat2::zeros(); 2], d2g: [[Mat2::zeros(); 2]; 2] }
        }
        MetricKind::Conformal(lambda) => {
            let j = lambda.jet(x);
            let e = (2.0 * j.value).exp();
            let id = Mat2::identity();
            let dg = [id * (2.0 * j.grad[0] * e), id * (2.0 * j.grad[1] * e)];
            let mut d2g = [[Mat2::zeros(); 2]; 2];
            for (k, row) in d2g.iter_mut().enumerate() {
                for (l, m) in row.iter_mut().enumerate() {
                    *m = id * ((4.0 * j.grad[k] * j.grad[l] + 2.0 * j.hess[k][l]) * e);
                }
            }
            MetricJet { g: id * e, dg, d2g }
        }
        MetricKind::Perturbed { base, eps, bump } => {
            let mut out = jet_of(base, x);
            let a = bump.shape_matrix() * *eps;
            let b = bump.jet().jet(x);
            out.g += a * b.value;
            for k in 0..2 {
                out.dg[k] += a * b.grad[k];
                for l in 0..2 {
                    out.d2g[k][l] += a * b.hess[k][l];
                }
            }
            out
        }
    }
}

/// `g` and its first derivatives only.
fn first_jet(kind: &MetricKind, x: &Point) -> (Mat2, [Mat2; 2]) {
    match kind {
        MetricKind::Euclidean => (Mat2::identity(), [Mat2::zeros(); 2]),
        MetricKind::Conformal(lambda) => {
            let j = lambda.jet(x);
            let e = (2.0 * j.value).exp();
            let id = Mat2::identity();
            (id * e, [id * (2.0 * j.grad[0] * e), id * (2.0 * j.grad[1] * e)])
        }
        MetricKind::Perturbed { base, eps, bump } => {
            let (mut g, mut dg) = first_jet(base, x);
            let a = bump.shape_matrix() * *eps;
            let d = [x.x - bump.center[0], x.y - bump.center[1]];
            let s2 = bump.width * bump.width;
            let v = (-(d[0] * d[0] + d[1] * d[1]) / s2).exp();
            g += a * v;
            dg[0] += a * (-2.0 * d[0] / s2 * v);
            dg[1] += a * (-2.0 * d[1] / s2 * v);
            (g, dg)
        }
    }
}

fn christoffel_from_jet(jet: &MetricJet) -> Christoffel {
    christoffel_from_first(&(jet.g, jet.dg))
}

fn christoffel_from_first(first: &(Mat2, [Mat2; 2])) -> Christoffel {
    let (g, dg) = first;
    let ginv = inverse(g);
    let mut out = [[[0.0; 2]; 2]; 2];
    for (k, ok) in out.iter_mut().enumerate() {
        for i in 0..2 {
            for j in i..2 {
                let mut acc = 0.0;
                for l in 0..2 {
                    acc += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
                ok[i][j] = 0.5 * acc;
                ok[j][i] = 0.5 * acc;
            }
        }
    }
    out
}

/// Step for the finite-difference third derivatives in [`c3_distance`].
const C3_FD_STEP: f64 = 1e-4;

/// Discrete C³ distance: the maximum over the nodes of `M` of every metric
/// component and its partial derivatives up to order three. Third
/// derivatives are central differences of the closed-form Hessians.
pub fn c3_distance(a: &MetricField, b: &MetricField, domain: &Domain) -> f64 {
    let mut worst: f64 = 0.0;
    let diff = |x: &Point| -> (MetricJet, MetricJet) { (a.jet(x), b.jet(x)) };
    for idx in domain.region_nodes(Region::M) {
        let x = domain.position(idx);
        let (ja, jb) = diff(&x);
        worst = worst.max((ja.g - jb.g).abs().max());
        for k in 0..2 {
            worst = worst.max((ja.dg[k] - jb.dg[k]).abs().max());
            for l in 0..2 {
                worst = worst.max((ja.d2g[k][l] - jb.d2g[k][l]).abs().max());
            }
        }
        for m in 0..2 {
            let mut e = Point::zeros();
            e[m] = C3_FD_STEP;
            let (pa, pb) = diff(&(x + e));
            let (ma, mb) = diff(&(x - e));
            for k in 0..2 {
                for l in 0..2 {
                    let third = ((pa.d2g[k][l] - pb.d2g[k][l]) - (ma.d2g[k][l] - mb.d2g[k][l])) / (2.0 * C3_FD_STEP);
                    worst = worst.max(third.abs().max());
                }
            }
        }
    }
    worst
}
