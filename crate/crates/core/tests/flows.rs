use fbflow::field::FnField;
use fbflow::{
    fixed_boundary_flow, solve_flow, Bandwidth, DataCloudF64, FlowConfigF64, FlowStatus, ManifoldF32, ManifoldF64,
    SolveOptions,
};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b, c])
}

fn equator_cloud(n: usize, noise: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a: f64 = rng.random_range(-2.0..2.0);
            let z: f64 = rng.random_range(-noise..noise);
            v3(a.cos(), a.sin(), z).normalize()
        })
        .collect()
}

#[test]
fn data_flow_follows_the_equator() {
    let sphere = ManifoldF64::unit_sphere();
    let cloud = DataCloudF64::new(equator_cloud(300, 0.03, 1)).unwrap();
    let x1 = v3(1.0, -1.0, 0.3).normalize();
    let x2 = v3(1.0, 1.0, 0.3).normalize();
    let config = FlowConfigF64 {
        bandwidth: Bandwidth::finite(0.3).unwrap(),
        ..FlowConfigF64::default()
    };
    let r = fixed_boundary_flow(&sphere, &cloud, &x1, &x2, &config).unwrap();
    assert!(r.flow.converged(), "{:?}", r.flow.status);
    assert!(r.flow.objective > r.flow.initial_objective);
    // the geodesic bulges poleward; the flow is pulled back toward the data
    let geodesic_mid = r.flow.initial.points[20][2];
    let mid = r.flow.curve.points[20][2];
    assert!(mid < geodesic_mid - 0.03, "mid z {mid} vs geodesic {geodesic_mid}");
    assert_eq!(r.samples.len(), r.flow.curve.points.len());
    assert_eq!(r.active.len(), 300);
}

#[test]
fn plane_flows_are_scale_equivariant() {
    let plane = ManifoldF64::euclidean(3);
    let pts: Vec<_> = equator_cloud(200, 0.05, 2);
    let x1 = v3(1.0, -1.0, 0.0).normalize();
    let x2 = v3(1.0, 1.0, 0.0).normalize();
    let run = |k: f64| {
        let cloud = DataCloudF64::new(pts.iter().map(|p| p * k).collect()).unwrap();
        let config = FlowConfigF64 {
            bandwidth: Bandwidth::finite(0.4 * k).unwrap(),
            ..FlowConfigF64::default()
        };
        fixed_boundary_flow(&plane, &cloud, &(&x1 * k), &(&x2 * k), &config).unwrap()
    };
    let (a, b) = (run(1.0), run(10.0));
    assert_eq!(a.flow.status, b.flow.status);
    for (p, q) in a.flow.curve.points.iter().zip(&b.flow.curve.points) {
        assert!((p * 10.0 - q).norm() <= 1e-8 * 10.0, "{p} vs {q}");
    }
    assert!((a.flow.objective * 10.0 - b.flow.objective).abs() <= 1e-8 * 10.0);
}

#[test]
fn single_precision_flow_on_the_sphere() {
    let sphere = ManifoldF32::unit_sphere();
    let field = FnField(|x: &DVector<f32>| Ok(DVector::from_vec(vec![-x[1], x[0], 0.0])));
    let z = 0.5f32;
    let rho = (1.0 - z * z).sqrt();
    let x1 = DVector::from_vec(vec![rho, 0.0, z]);
    let x2 = DVector::from_vec(vec![rho * 1f32.cos(), rho * 1f32.sin(), z]);
    let mut options = SolveOptions::<f32> {
        relative_tol: 1e-4,
        ..SolveOptions::default()
    };
    options.newton.tol = 1e-5;
    let r = solve_flow(&sphere, &field, &x1, &x2, &options).unwrap();
    assert_eq!(r.status, FlowStatus::Converged);
    assert_eq!(r.curve.start(), &x1);

    let wide = |v: &DVector<f32>| v.map(f64::from);
    let field64 = FnField(|x: &DVector<f64>| Ok(v3(-x[1], x[0], 0.0)));
    let r64 = solve_flow(&ManifoldF64::unit_sphere(), &field64, &wide(&x1), &wide(&x2), &SolveOptions::default()).unwrap();
    for (p, q) in r.curve.points.iter().zip(&r64.curve.points) {
        assert!(sphere.residual(p) <= 1e-5);
        assert!((wide(p) - q).norm() <= 1e-3, "{p} vs {q}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn endpoints_are_pinned_and_nodes_stay_on_the_cone(a1 in -1.0..-0.2f64, a2 in 0.2..1.0f64, h1 in 0.3..0.9f64, h2 in 0.3..0.9f64) {
        let cone = ManifoldF64::unit_cone();
        let field = FnField(|x: &DVector<f64>| Ok(v3(-x[1], x[0], 0.0)));
        let x1 = v3(h1 * a1.cos(), h1 * a1.sin(), h1);
        let x2 = v3(h2 * a2.cos(), h2 * a2.sin(), h2);
        let r = solve_flow(&cone, &field, &x1, &x2, &SolveOptions::default()).unwrap();
        prop_assert_eq!(r.curve.start(), &x1);
        prop_assert_eq!(r.curve.end(), &x2);
        for p in &r.curve.points {
            prop_assert!(cone.residual(p) <= 1e-10);
        }
        prop_assert!(r.objective <= r.curve.polyline_length() * (1.0 + 1e-3));
    }
}
