use std::sync::Arc;

use tensortomo_core::calculus::{inner_l2_tensor, norm_h1_oneform, norm_l2_tensor, sym_d};
use tensortomo_core::fan::BoundaryFan;
use tensortomo_core::grid::GridMetric;
use tensortomo_core::normal::{normal_compose, normal_kernel, ComposeOperator, EuclideanNormalFft, NormalEvaluator};
use tensortomo_core::phantoms::{random_oneform, rng, tensor_ensemble, EnsembleSpec};
use tensortomo_core::ray_transform::{inner_mu, transform};
use tensortomo_core::{Domain, MetricField, Point, Region, ScalarFn};

fn domain(h: f64) -> Arc<Domain> {
    Arc::new(Domain::with_spacing(h).unwrap())
}

#[test]
fn normal_operator_is_self_adjoint() {
    let d = domain(1.0 / 64.0);
    let gm = GridMetric::new(&MetricField::euclidean(), d.clone());
    let op = EuclideanNormalFft::new(d.clone(), 256, 0.5 / 64.0).unwrap();
    let fields = tensor_ensemble(&d, &EnsembleSpec { size: 4, seed: 3, ..EnsembleSpec::default() });
    for pair in fields.chunks(2) {
        let (f, h) = (&pair[0], &pair[1]);
        let nf = op.apply(f).unwrap();
        let nh = op.apply(h).unwrap();
        let a = inner_l2_tensor(&gm, &nf, &h.restrict(Region::M1), Region::M1);
        let b = inner_l2_tensor(&gm, &nh, &f.restrict(Region::M1), Region::M1);
        let scale = norm_l2_tensor(&gm, f, Region::M) * norm_l2_tensor(&gm, h, Region::M);
        assert!((a - b).abs() <= 0.02 * scale, "{a} vs {b}");
    }
}

#[test]
fn potentials_are_annihilated() {
    let d = domain(1.0 / 64.0);
    let gm = GridMetric::new(&MetricField::euclidean(), d.clone());
    let op = EuclideanNormalFft::new(d.clone(), 256, 0.5 / 64.0).unwrap();
    let mut r = rng(9);
    for _ in 0..3 {
        let v = random_oneform(d.clone(), &mut r, 10, 8.0, true);
        let n = op.apply(&sym_d(&gm, &v).restrict(Region::M)).unwrap();
        let lhs = norm_l2_tensor(&gm, &n, Region::M1);
        let rhs = 1e-3 * norm_h1_oneform(&gm, &v, Region::M);
        assert!(lhs <= rhs, "{lhs} > {rhs}");
    }
}

#[test]
fn pairing_with_normal_equals_data_norm() {
    // ⟨Nf, f⟩ = ‖If‖² in L²(∂₋SM1, dμ).
    let lam = ScalarFn::Gaussian { amp: 0.1, center: [0.0, 0.0], width: 1.0 };
    let d = domain(1.0 / 32.0);
    for metric in [MetricField::euclidean(), MetricField::conformal(lam).unwrap()] {
        let gm = GridMetric::new(&metric, d.clone());
        let f =
            tensor_ensemble(&d, &EnsembleSpec { size: 1, seed: 21, band: 4.0, ..EnsembleSpec::default() }).remove(0);
        let nf = ComposeOperator::new(&metric, d.clone(), 96, 1.0 / 64.0).apply(&f).unwrap();
        let lhs = inner_l2_tensor(&gm, &nf, &f.restrict(Region::M1), Region::M1);
        let fan = Arc::new(BoundaryFan::new(&metric, 1.3, 64, 32).unwrap());
        let data = transform(&metric, &f, &fan, 1e-3).unwrap();
        let rhs = inner_mu(&data, &data).unwrap();
        assert!((lhs - rhs).abs() <= 0.02 * rhs, "{lhs} vs {rhs}");
    }
}

#[test]
fn kernel_and_composition_agree_off_center() {
    let lam = ScalarFn::Gaussian { amp: 0.1, center: [0.2, 0.0], width: 0.9 };
    let metric = MetricField::conformal(lam).unwrap();
    let d = domain(1.0 / 32.0);
    let f = tensor_ensemble(&d, &EnsembleSpec { size: 1, seed: 2, band: 4.0, ..EnsembleSpec::default() }).remove(0);
    for x in [Point::new(0.3, -0.2), Point::new(-0.5, 0.4)] {
        let a = normal_kernel(&metric, &f, x).unwrap();
        let b = normal_compose(&metric, &f, x, 1.3, 256, 2e-3).unwrap();
        let diff = ((a[0] - b[0]).powi(2) + 2.0 * (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        let norm = (b[0].powi(2) + 2.0 * b[1].powi(2) + b[2].powi(2)).sqrt();
        assert!(diff <= 0.05 * norm, "at {x:?}: {a:?} vs {b:?}");
    }
}

#[test]
fn dense_matrix_is_symmetric_and_semidefinite_on_m() {
    let d = domain(0.1);
    let op = NormalEvaluator::new(&MetricField::euclidean(), d.clone(), 128, 0.05).unwrap();
    let a = op.dense_matrix().unwrap();
    let rows = d.region_nodes(Region::M1);
    let cols = d.region_nodes(Region::M);
    assert_eq!(a.shape(), (3 * rows.len(), 3 * cols.len()));
    // Restrict the output to M and apply the flat L² weights (1, 2, 1) h².
    let n = 3 * cols.len();
    let mut b = nalgebra::DMatrix::zeros(n, n);
    for (j, k) in cols.iter().enumerate() {
        let i = rows.iter().position(|r| r == k).unwrap();
        for c in 0..3 {
            let w = if c == 1 { 2.0 } else { 1.0 };
            b.row_mut(3 * j + c).copy_from(&(a.row(3 * i + c) * w));
        }
    }
    let asym = (&b - b.transpose()).norm() / b.norm();
    assert!(asym < 0.02, "asymmetry {asym}");
    let sym = (&b + b.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    assert!(lo > -0.02 * hi, "{lo} vs {hi}");

    let fine = NormalEvaluator::new(&MetricField::euclidean(), domain(1.0 / 64.0), 16, 0.01).unwrap();
    assert!(fine.dense_matrix().is_err());
}
