use std::sync::Arc;

use tensortomo_core::calculus::{norm_l2_tensor, sym_d};
use tensortomo_core::fan::BoundaryFan;
use tensortomo_core::fields::{OneFormField, SymTensorField};
use tensortomo_core::grid::GridMetric;
use tensortomo_core::phantoms::{random_oneform, rng, stream_phantom, tensor_ensemble, EnsembleSpec};
use tensortomo_core::ray_transform::transform;
use tensortomo_core::stability::{
    boundary_pipeline, perturbation_probe, reconstruct_cgls, stability_probe, stability_probe_fields, CglsSettings,
    NormalSettings, PerturbationSettings, ReconstructionOperator, TraceSettings,
};
use tensortomo_core::{Bump, Domain, MetricField, Region, ScalarFn};

fn domain(h: f64) -> Arc<Domain> {
    Arc::new(Domain::with_spacing(h).unwrap())
}

#[test]
fn boundary_pipeline_matches_direct_projection() {
    let metric = MetricField::conformal(ScalarFn::Gaussian { amp: 0.1, center: [0.0, 0.0], width: 1.0 }).unwrap();
    let d = domain(1.0 / 64.0);
    let gm = Arc::new(GridMetric::new(&metric, d.clone()));
    let spec = EnsembleSpec { size: 1, seed: 4, support: 0.85, ..EnsembleSpec::default() };
    let f = tensor_ensemble(&d, &spec).remove(0);
    let report = boundary_pipeline(&metric, gm, &f, TraceSettings::default()).unwrap();
    assert!(report.trace_error <= 0.05, "trace {}", report.trace_error);
    assert!(report.pipeline_error <= 0.05, "pipeline {}", report.pipeline_error);
    assert!(report.consistency <= 0.05, "consistency {}", report.consistency);
    assert!(report.annulus_constant.is_finite() && report.interior_constant.is_finite());
}

#[test]
fn potential_input_gives_small_pipeline_output() {
    let metric = MetricField::euclidean();
    let d = domain(1.0 / 32.0);
    let gm = Arc::new(GridMetric::new(&metric, d.clone()));
    let v = random_oneform(d.clone(), &mut rng(8), 6, 4.0, true);
    let dv = sym_d(&gm, &v).restrict(Region::M);
    let report = boundary_pipeline(&metric, gm.clone(), &dv, TraceSettings::default()).unwrap();
    let fs = norm_l2_tensor(&gm, &report.solenoidal, Region::M);
    assert!(fs <= 0.05 * norm_l2_tensor(&gm, &dv, Region::M));
}

#[test]
fn cgls_recovers_phantom_and_ignores_potentials() {
    let metric = MetricField::euclidean();
    let d = domain(1.0 / 32.0);
    let gm = GridMetric::new(&metric, d.clone());
    let fan = Arc::new(BoundaryFan::new(&metric, 1.0, 48, 24).unwrap());
    let op = ReconstructionOperator::new(&metric, d.clone(), &fan, 1.0 / 8.0, 2e-3).unwrap();
    let settings = CglsSettings::default();

    let f = stream_phantom(d.clone(), [0.1, -0.05], 0.35, 0.1);
    let out = reconstruct_cgls(&op, &transform(&metric, &f, &fan, 2e-3).unwrap(), &settings).unwrap();
    let err = norm_l2_tensor(&gm, &out.field.axpy(-1.0, &f).unwrap(), Region::M) / norm_l2_tensor(&gm, &f, Region::M);
    assert!(err <= 0.05, "error {err}");
    assert!(out.iterations <= 200);

    let v = random_oneform(d.clone(), &mut rng(5), 10, 4.0, true);
    let dv = sym_d(&gm, &v).restrict(Region::M);
    let out = reconstruct_cgls(&op, &transform(&metric, &dv, &fan, 2e-3).unwrap(), &settings).unwrap();
    assert!(norm_l2_tensor(&gm, &out.field, Region::M) <= 0.02 * norm_l2_tensor(&gm, &dv, Region::M));
}

#[test]
fn stability_probe_rejects_potentials_and_is_deterministic() {
    let metric = MetricField::euclidean();
    let d = domain(1.0 / 32.0);
    let gm = GridMetric::new(&metric, d.clone());
    let settings = NormalSettings { n_dirs: 64, step_factor: 1.0 };
    let mut fields = tensor_ensemble(&d, &EnsembleSpec { size: 3, ..EnsembleSpec::default() });
    // A potential whose generator vanishes well inside M is removed exactly
    // by the discrete projection.
    let v = OneFormField::from_fn(d.clone(), Region::Grid, |x| {
        let b = (1.0 - x.norm_squared() / 0.64).max(0.0).powi(3);
        [b * (3.0 * x.y).sin(), b * x.x]
    });
    fields.push(sym_d(&gm, &v).restrict(Region::M));
    let report = stability_probe_fields(&metric, d.clone(), &fields, &settings).unwrap();
    assert_eq!(report.accepted(), 3);
    assert!(!report.samples[3].accepted, "{:?}", report.samples[3]);
    assert!(0.0 < report.c_emp && report.c_emp <= report.c_emp_upper);

    let spec = EnsembleSpec { size: 4, ..EnsembleSpec::default() };
    let a = stability_probe(&metric, d.clone(), &spec, &settings).unwrap();
    let b = stability_probe(&metric, d, &spec, &settings).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unperturbed_metric_has_zero_differences() {
    let d = domain(1.0 / 16.0);
    let bump = Bump::normalized([1.0, 0.3, 0.5], [0.1, 0.0], 0.6, &d).unwrap();
    let settings = PerturbationSettings {
        test_set: EnsembleSpec { size: 2, ..PerturbationSettings::default().test_set },
        ..PerturbationSettings::default()
    };
    let report = perturbation_probe(&MetricField::euclidean(), &bump, &[0.0, 0.05, 0.1], d, &settings).unwrap();
    assert_eq!(report.rows[0].operator_difference, 0.0);
    assert_eq!(report.rows[0].projector_difference, 0.0);
    assert!(report.rows[1].operator_difference > 0.0);
    assert!(report.rows[2].operator_difference >= report.rows[1].operator_difference);
    assert!(report.rows[2].projector_difference >= report.rows[1].projector_difference);
}

#[test]
fn zero_field_reconstructs_to_zero() {
    let metric = MetricField::euclidean();
    let d = domain(1.0 / 16.0);
    let fan = Arc::new(BoundaryFan::new(&metric, 1.0, 16, 8).unwrap());
    let op = ReconstructionOperator::new(&metric, d.clone(), &fan, 0.25, 1e-2).unwrap();
    let zero = SymTensorField::zeros(d, Region::M);
    let out = reconstruct_cgls(&op, &transform(&metric, &zero, &fan, 1e-2).unwrap(), &CglsSettings::default()).unwrap();
    assert_eq!(out.iterations, 0);
    assert!(out.field.is_zero());
}
