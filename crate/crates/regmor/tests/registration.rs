use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regmor::femesh::{structured_mesh, NodeRefs, ReferenceMesh};
use regmor::geometry::{unit_square, Chart};
use regmor::pipeline::{make_sensors, Problem, SensorSettings};
use regmor::quadrature::Rule1d;
use regmor::registration::{
    greedy_registration, Registration, RegistrationConfig, SnapshotOutcome, TemplateSpace,
};
use regmor::sensor::{SensorField, SensorGrid};
use regmor::spaces::{build_rect_space, DisplacementSpace};
use regmor::synthetic::{ManifoldKind, ManifoldSpec};
use regmor::{Mat2, Vec2};

fn gaussian(grid: SensorGrid, c: Vec2, width: f64) -> SensorField {
    SensorField::from_fn(grid, 1, |_, x| (-(x - c).norm_squared() / width).exp()).unwrap()
}

fn square_grid(cells: usize) -> SensorGrid {
    SensorGrid::new(cells, unit_square().ref_box()).unwrap()
}

/// Composite Gauss rule on [0,1]²: `panels` panels of `order` points per direction.
fn composite(panels: usize, order: usize) -> Vec<(Vec2, f64)> {
    let mut nodes = Vec::new();
    for i in 0..panels {
        let r = Rule1d::gauss_legendre(
            order,
            i as f64 / panels as f64,
            (i + 1) as f64 / panels as f64,
        );
        nodes.extend(r.nodes.iter().copied().zip(r.weights.iter().copied()));
    }
    let mut out = Vec::with_capacity(nodes.len() * nodes.len());
    for &(y, wy) in &nodes {
        for &(x, wx) in &nodes {
            out.push((Vec2::new(x, y), wx * wy));
        }
    }
    out
}

fn random_small(rng: &mut ChaCha8Rng, space: &DisplacementSpace, size: f64) -> DVector<f64> {
    let mut a = DVector::from_fn(space.dim(), |_, _| rng.random::<f64>() - 0.5);
    a *= size / a.norm();
    a
}

/// Coefficients along `dir` scaled until min det ∇Φ over a fine grid equals `target`.
fn scaled_to_min_det(space: &DisplacementSpace, dir: &DVector<f64>, target: f64) -> DVector<f64> {
    let grid: Vec<Vec2> = (0..=60)
        .flat_map(|i| (0..=60).map(move |k| Vec2::new(i as f64 / 60.0, k as f64 / 60.0)))
        .collect();
    let min_det = |s: f64| {
        let a = dir * s;
        grid.iter()
            .map(|x| space.jacobian_det(&a, 0, x))
            .fold(f64::INFINITY, f64::min)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while min_det(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if min_det(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    dir * lo
}

#[test]
fn proximity_matches_refined_quadrature() {
    let space = build_rect_space(3).unwrap();
    let chart = unit_square();
    let config = RegistrationConfig {
        quad_order: Some(120),
        ..RegistrationConfig::default()
    };
    let reg = Registration::new(&space, &chart, None, config).unwrap();
    let grid = square_grid(24);
    let template = gaussian(grid, Vec2::new(0.5, 0.5), 0.05);
    let target = gaussian(grid, Vec2::new(0.56, 0.47), 0.05);
    let proj = reg
        .projector(&TemplateSpace::new(vec![template.clone()]).unwrap())
        .unwrap();
    let oracle = |a: &DVector<f64>, rule: &[(Vec2, f64)]| {
        // min over c of ‖s∘Φ − c t‖² = ‖s∘Φ‖² − (s∘Φ, t)²/‖t‖²
        let (mut ss, mut st, mut tt) = (0.0, 0.0, 0.0);
        for (x, w) in rule {
            let s = target.eval(0, &(x + space.eval(a, 0, x)));
            let t = template.eval(0, x);
            ss += w * s * s;
            st += w * s * t;
            tt += w * t * t;
        }
        ss - st * st / tt
    };
    // Panels aligned with the sensor cells integrate the unmapped fields exactly; the
    // registration rule is a single Gauss rule that does not see the cell kinks.
    let zero = DVector::zeros(space.dim());
    let exact = oracle(&zero, &composite(24, 6));
    let f = reg.proximity(&target, &proj, &zero).unwrap();
    assert!((f - exact).abs() <= 1e-5 * exact, "{f} vs {exact}");

    let rule = composite(80, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let a = random_small(&mut rng, &space, 0.05);
        let expect = oracle(&a, &rule);
        let f = reg.proximity(&target, &proj, &a).unwrap();
        assert!((f - expect).abs() <= 1e-5 * expect, "{f} vs {expect}");
    }
}

#[test]
fn constraint_barrier_matches_refined_quadrature() {
    let space = build_rect_space(3).unwrap();
    let chart = unit_square();
    let config = RegistrationConfig {
        quad_order: Some(120),
        c_exp_factor: 0.25,
        ..RegistrationConfig::default()
    };
    let (eps, cexp, delta) = (config.eps, config.c_exp(), config.delta);
    let reg = Registration::new(&space, &chart, None, config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rule = composite(120, 6);
    for _ in 0..3 {
        let dir = random_small(&mut rng, &space, 1.0);
        let a = scaled_to_min_det(&space, &dir, 0.08);
        let mut barrier = 0.0;
        for (x, w) in &rule {
            let d = space.jacobian_det(&a, 0, x);
            barrier += w * (((eps - d) / cexp).exp() + ((d - 1.0 / eps) / cexp).exp());
        }
        assert!(barrier > 1e-6, "barrier should be active, got {barrier}");
        let c = reg.constraint(&a) + delta;
        assert!((c - barrier).abs() <= 1e-4 * barrier, "{c} vs {barrier}");
    }
}

#[test]
fn constraint_gradient_matches_finite_differences() {
    let space = build_rect_space(3).unwrap();
    let chart = unit_square();
    let config = RegistrationConfig {
        quad_order: Some(40),
        ..RegistrationConfig::default()
    };
    let reg = Registration::new(&space, &chart, None, config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let dir = random_small(&mut rng, &space, 1.0);
        let a = scaled_to_min_det(&space, &dir, 0.08);
        let (_, graw) = reg.constraint_raw(&space.expand(&a));
        let g = space.basis().tr_mul(&graw);
        let h = 1e-7;
        let fd = DVector::from_fn(space.dim(), |i, _| {
            let (mut ap, mut am) = (a.clone(), a.clone());
            ap[i] += h;
            am[i] -= h;
            (reg.constraint(&ap) - reg.constraint(&am)) / (2.0 * h)
        });
        assert!(g.norm() > 1e-6);
        assert!((&fd - &g).norm() <= 1e-5 * g.norm());
    }
}

#[test]
fn constraint_at_identity_is_minus_delta_per_element() {
    for kind in [
        ManifoldKind::SquareFront,
        ManifoldKind::AnnulusGaussian,
        ManifoldKind::PartitionedFront,
    ] {
        let problem = Problem::new(ManifoldSpec::new(kind, 1, 1, 0), (2, 4), 1).unwrap();
        let space = problem.space(3, 2).unwrap();
        let config = RegistrationConfig {
            delta: 0.7,
            ..RegistrationConfig::default()
        };
        let reg = Registration::new(&space, problem.chart(), None, config).unwrap();
        let c = reg.constraint(&DVector::zeros(space.dim()));
        assert!((c + 0.7 * space.n_elements() as f64).abs() < 1e-12);
    }
}

#[test]
fn mesh_penalty_at_identity_is_area_times_exp_minus_nine() {
    let problem = Problem::new(
        ManifoldSpec::new(ManifoldKind::PartitionedFront, 1, 1, 0),
        (3, 3),
        2,
    )
    .unwrap();
    let space = problem.space(3, 0).unwrap();
    let reg = Registration::new(
        &space,
        problem.chart(),
        Some((&problem.mesh, &problem.refs)),
        RegistrationConfig::default(),
    )
    .unwrap();
    let m = reg.mesh_penalty(&DVector::zeros(space.dim())).unwrap();
    let expect = 10.0 * (-9.0f64).exp();
    assert!((m - expect).abs() <= 1e-12 * expect);
}

#[test]
fn two_triangle_mesh_penalty_by_hand() {
    let chart = unit_square();
    let nodes = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(1.0, 0.0),
        Vec2::new(1.0, 1.0),
        Vec2::new(0.0, 1.0),
        Vec2::new(0.5, 0.5),
    ];
    let elements = vec![vec![0, 1, 4], vec![1, 2, 4], vec![2, 3, 4], vec![3, 0, 4]];
    let mesh = ReferenceMesh::new(1, nodes.clone(), elements.clone()).unwrap();
    let refs = NodeRefs::compute(&mesh, &chart).unwrap();
    let space = build_rect_space(2).unwrap();
    let config = RegistrationConfig {
        f_msh_max: 1.5,
        ..RegistrationConfig::default()
    };
    let reg = Registration::new(&space, &chart, Some((&mesh, &refs)), config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_small(&mut rng, &space, 0.2);
    let mapped = reg.map_nodes(&a).unwrap();
    assert!(
        (mapped[4] - nodes[4]).norm() > 1e-3,
        "centre node should move"
    );
    let mut expect = 0.0;
    for e in &elements {
        let d = |p: &[Vec2]| Mat2::from_columns(&[p[e[1]] - p[e[0]], p[e[2]] - p[e[0]]]);
        let d0 = d(&nodes);
        let m = d(&mapped) * d0.try_inverse().unwrap();
        let f = 0.5 * m.norm_squared() / m.determinant();
        expect += 0.5 * d0.determinant().abs() * (f - 1.5).exp();
    }
    let got = reg.mesh_penalty(&a).unwrap();
    assert!((got - expect).abs() <= 1e-12 * expect, "{got} vs {expect}");
}

#[test]
fn translated_gaussian_is_recovered() {
    let space = build_rect_space(4).unwrap();
    let chart = unit_square();
    let config = RegistrationConfig {
        quad_order: Some(16),
        ..RegistrationConfig::default()
    };
    let reg = Registration::new(&space, &chart, None, config).unwrap();
    let grid = square_grid(24);
    let c0 = Vec2::new(0.5, 0.5);
    let shift = Vec2::new(0.06, -0.04);
    let template = gaussian(grid, c0, 0.02);
    let target = gaussian(grid, c0 + shift, 0.02);
    let proj = reg
        .projector(&TemplateSpace::new(vec![template]).unwrap())
        .unwrap();
    let r = reg
        .register_one(&target, &proj, &DVector::zeros(space.dim()))
        .unwrap();
    let moved = space.eval(&r.a, 0, &c0);
    assert!((moved - shift).norm() < 0.02, "{moved:?}");
    assert!(
        r.proximity
            < 1e-2
                * reg
                    .proximity(&target, &proj, &DVector::zeros(space.dim()))
                    .unwrap()
    );
}

struct Small {
    problem: Problem,
    space: DisplacementSpace,
    params: Vec<Vec<f64>>,
    sensors: Vec<SensorField>,
}

fn small_square(n: usize) -> Small {
    let spec = ManifoldSpec::new(ManifoldKind::SquareFront, n, 1, 9);
    let problem = Problem::new(spec.clone(), (6, 6), 2).unwrap();
    let space = problem.space(3, 0).unwrap();
    let (params, _) = spec.sample().unwrap();
    let sensors = make_sensors(
        &problem,
        &problem.snapshots(&params),
        SensorSettings {
            cells: 12,
            ..SensorSettings::default()
        },
    )
    .unwrap();
    Small {
        problem,
        space,
        params,
        sensors,
    }
}

fn small_config() -> RegistrationConfig {
    RegistrationConfig {
        quad_order: Some(10),
        max_iter: 60,
        ..RegistrationConfig::default()
    }
}

#[test]
fn infinite_tolerance_stops_after_one_pass() {
    let s = small_square(6);
    let config = RegistrationConfig {
        tol: f64::INFINITY,
        ..small_config()
    };
    let reg = Registration::new(
        &s.space,
        s.problem.chart(),
        Some((&s.problem.mesh, &s.problem.refs)),
        config,
    )
    .unwrap();
    let t = TemplateSpace::new(vec![s.sensors[0].clone()]).unwrap();
    let g = greedy_registration(&reg, &s.params, &s.sensors, t).unwrap();
    assert_eq!(g.history.len(), 1);
    assert_eq!(g.templates.len(), 1);
    assert_eq!(g.n_failed(), 0);
}

#[test]
fn single_snapshot_registers_to_itself() {
    let s = small_square(1);
    let reg = Registration::new(
        &s.space,
        s.problem.chart(),
        Some((&s.problem.mesh, &s.problem.refs)),
        small_config(),
    )
    .unwrap();
    let t = TemplateSpace::new(vec![s.sensors[0].clone()]).unwrap();
    let g = greedy_registration(&reg, &s.params, &s.sensors, t).unwrap();
    let r = g.outcomes[0].result().unwrap();
    assert!(r.proximity < 1e-20);
    assert_eq!(g.history.len(), 1);
    assert!(g.full_coefficients[0].norm() < 1e-12);
}

#[test]
fn registered_maps_are_feasible_and_reproducible() {
    let s = small_square(5);
    let reg = Registration::new(
        &s.space,
        s.problem.chart(),
        Some((&s.problem.mesh, &s.problem.refs)),
        small_config(),
    )
    .unwrap();
    let t = TemplateSpace::new(vec![s.sensors[2].clone()]).unwrap();
    let first = greedy_registration(&reg, &s.params, &s.sensors, t.clone()).unwrap();
    let second = greedy_registration(&reg, &s.params, &s.sensors, t).unwrap();
    for (o1, o2) in first.outcomes.iter().zip(&second.outcomes) {
        let (SnapshotOutcome::Registered(r1), SnapshotOutcome::Registered(r2)) = (o1, o2) else {
            panic!("registration failed");
        };
        assert_eq!(r1.a, r2.a);
        assert!(r1.parts.constraint <= 0.0);
        assert!(reg.admissible(&r1.a));
        let k = (r1.rho_c / reg.config().rho_c).log10().round();
        assert!(k >= 0.0 && k <= reg.config().max_escalations as f64);
    }
}

#[test]
fn penalty_weight_only_grows() {
    let s = small_square(2);
    let config = RegistrationConfig {
        rho_c: 1e-3,
        ..small_config()
    };
    let reg = Registration::new(
        &s.space,
        s.problem.chart(),
        Some((&s.problem.mesh, &s.problem.refs)),
        config,
    )
    .unwrap();
    let proj = reg
        .projector(&TemplateSpace::new(vec![s.sensors[0].clone()]).unwrap())
        .unwrap();
    let r = reg
        .register_one(&s.sensors[1], &proj, &DVector::zeros(s.space.dim()))
        .unwrap();
    assert!(r.rho_c >= 1e-3);
    assert!(r.parts.constraint <= 0.0);
}

#[test]
fn inadmissible_start_is_rejected() {
    let s = small_square(2);
    let reg = Registration::new(
        &s.space,
        s.problem.chart(),
        Some((&s.problem.mesh, &s.problem.refs)),
        small_config(),
    )
    .unwrap();
    let proj = reg
        .projector(&TemplateSpace::new(vec![s.sensors[0].clone()]).unwrap())
        .unwrap();
    let a = DVector::from_element(s.space.dim(), 50.0);
    assert!(reg.register_one(&s.sensors[1], &proj, &a).is_err());
}

#[test]
fn map_pod_tail_equals_discarded_energy() {
    let s = small_square(8);
    let config = RegistrationConfig {
        tol_pod: 1e-2,
        n_max: 1,
        ..small_config()
    };
    let reg = Registration::new(
        &s.space,
        s.problem.chart(),
        Some((&s.problem.mesh, &s.problem.refs)),
        config,
    )
    .unwrap();
    let t = TemplateSpace::new(vec![s.sensors[0].clone()]).unwrap();
    let g = greedy_registration(&reg, &s.params, &s.sensors, t).unwrap();
    let w = &g.modes;
    let m = w.ncols();
    let orth = w.tr_mul(w) - DMatrix::identity(m, m);
    assert!(orth.amax() < 1e-10);
    let residual: f64 = g
        .full_coefficients
        .iter()
        .map(|a| (a - w * w.tr_mul(a)).norm_squared())
        .sum();
    let tail: f64 = g.eigenvalues[m..].iter().sum();
    let total: f64 = g.eigenvalues.iter().sum();
    assert!((residual - tail).abs() <= 1e-9 * total);
    assert!(tail <= 1e-2 * total + 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn proximity_is_nonnegative_and_zero_for_templates(seed in 0u64..1000) {
        let space = build_rect_space(2).unwrap();
        let chart = unit_square();
        let reg = Registration::new(&space, &chart, None, RegistrationConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = square_grid(8);
        let c = Vec2::new(0.3 + 0.4 * rng.random::<f64>(), 0.3 + 0.4 * rng.random::<f64>());
        let t = gaussian(grid, c, 0.05);
        let proj = reg.projector(&TemplateSpace::new(vec![t.clone()]).unwrap()).unwrap();
        let zero = DVector::zeros(space.dim());
        prop_assert!(reg.proximity(&t, &proj, &zero).unwrap().abs() < 1e-12);
        let a = random_small(&mut rng, &space, 0.05);
        prop_assert!(reg.proximity(&t, &proj, &a).unwrap() >= -1e-14);
    }
}

#[test]
fn structured_mesh_penalty_is_smooth_in_coefficients() {
    let chart = unit_square();
    let (mesh, refs) = structured_mesh(&chart, (3, 3), 2).unwrap();
    let space = build_rect_space(3).unwrap();
    let config = RegistrationConfig {
        f_msh_max: 2.0,
        ..RegistrationConfig::default()
    };
    let reg = Registration::new(&space, &chart, Some((&mesh, &refs)), config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_small(&mut rng, &space, 0.1);
    let (_, graw) = reg.mesh_penalty_raw(&space.expand(&a)).unwrap();
    let g = space.basis().tr_mul(&graw);
    let h = 1e-5;
    let fd = DVector::from_fn(space.dim(), |i, _| {
        let (mut ap, mut am) = (a.clone(), a.clone());
        ap[i] += h;
        am[i] -= h;
        (reg.mesh_penalty(&ap).unwrap() - reg.mesh_penalty(&am).unwrap()) / (2.0 * h)
    });
    assert!((&fd - &g).norm() <= 1e-6 * g.norm());
}
