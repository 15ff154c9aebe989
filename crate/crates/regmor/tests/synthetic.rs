use proptest::prelude::*;

use regmor::femesh::{structured_mesh, ReferenceMesh};
use regmor::geometry::unit_square;
use regmor::synthetic::{
    front_position, gaussian_center, gen_annulus_gaussian, gen_partitioned_front, gen_square_front,
    ManifoldKind, ManifoldSpec, FRONT_HEIGHT,
};
use regmor::{Result, Vec2};

type Generator = fn(&ManifoldSpec, &ReferenceMesh, &[Vec<f64>]) -> Result<nalgebra::DMatrix<f64>>;

fn spec(kind: ManifoldKind) -> ManifoldSpec {
    ManifoldSpec::new(kind, 4, 2, 1)
}

#[test]
fn square_front_is_odd_about_its_position() {
    let s = spec(ManifoldKind::SquareFront);
    for mu1 in [0.0, 0.3, 0.5, 1.0] {
        let c = front_position(mu1);
        assert!(s.field(&[mu1], &Vec2::new(c, 0.4)).abs() < 1e-15);
        for d in [0.01, 0.05, 0.2] {
            for y in [0.0, 0.7] {
                let a = s.field(&[mu1], &Vec2::new(c + d, y));
                let b = s.field(&[mu1], &Vec2::new(c - d, y));
                assert!((a + b).abs() < 1e-14);
                assert!(a > 0.0);
            }
        }
    }
    assert_eq!(front_position(0.5), 0.5);
}

#[test]
fn annulus_peak_follows_the_centre() {
    let s = spec(ManifoldKind::AnnulusGaussian);
    assert!((gaussian_center(&[0.0, 0.0]) - Vec2::new(0.5, 0.0)).norm() < 1e-15);
    assert!((gaussian_center(&[0.25, 1.0]) - Vec2::new(0.0, 0.6)).norm() < 1e-15);
    for mu in [[0.0, 0.0], [0.3, 0.7], [0.9, 0.2]] {
        let c = gaussian_center(&mu);
        assert!((s.field(&mu, &c) - 1.0).abs() < 1e-15);
        assert!(s.field(&mu, &(c + Vec2::new(0.1, 0.0))) < 1.0);
    }
}

#[test]
fn annulus_half_turn_in_parameter_is_point_reflection() {
    let s = spec(ManifoldKind::AnnulusGaussian);
    for mu in [[0.1, 0.4], [0.45, 0.9]] {
        let turned = [mu[0] + 0.5, mu[1]];
        for x in [
            Vec2::new(0.3, 0.2),
            Vec2::new(-0.6, 0.1),
            Vec2::new(0.0, -0.9),
        ] {
            assert!((s.field(&turned, &-x) - s.field(&mu, &x)).abs() < 1e-14);
        }
    }
}

#[test]
fn partitioned_front_is_level_at_zero_and_moves_with_mu2() {
    let s = spec(ManifoldKind::PartitionedFront);
    for x1 in [0.0, 0.7, 1.5, 3.0] {
        assert!((s.field(&[0.0, 0.0], &Vec2::new(x1, FRONT_HEIGHT)) - 0.5).abs() < 1e-15);
        let x = Vec2::new(x1, 0.3);
        let shifted = s.field(&[0.05, 0.04], &(x + Vec2::new(0.0, 0.04)));
        assert!((shifted - s.field(&[0.05, 0.0], &x)).abs() < 1e-14);
    }
    // the line pivots about x₁ = 1.5
    assert!((s.field(&[0.08, 0.0], &Vec2::new(1.5, FRONT_HEIGHT)) - 0.5).abs() < 1e-15);
}

#[test]
fn generators_evaluate_at_mesh_nodes() {
    let generators: [(ManifoldKind, Generator); 3] = [
        (ManifoldKind::SquareFront, gen_square_front),
        (ManifoldKind::AnnulusGaussian, gen_annulus_gaussian),
        (ManifoldKind::PartitionedFront, gen_partitioned_front),
    ];
    for (kind, generate) in generators {
        let s = spec(kind);
        let (mesh, _) = s.mesh((2, 3), 2).unwrap();
        let (params, _) = s.sample().unwrap();
        let u = generate(&s, &mesh, &params).unwrap();
        assert_eq!(u.shape(), (mesh.n_nodes(), 4));
        for (k, mu) in params.iter().enumerate() {
            let v = s.values(mu, mesh.nodes());
            assert_eq!(u.column(k).as_slice(), v.as_slice());
        }
        let other: Generator = if kind == ManifoldKind::SquareFront {
            gen_annulus_gaussian
        } else {
            gen_square_front
        };
        assert!(other(&s, &mesh, &params).is_err());
        assert!(generate(&s, &mesh, &[vec![0.1; 3]]).is_err());
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = spec(ManifoldKind::SquareFront);
    s.n_train = 0;
    assert!(s.sample().is_err());
    let mut s = spec(ManifoldKind::SquareFront);
    s.hi = vec![0.0];
    assert!(s.validate().is_err());
    let mut s = spec(ManifoldKind::PartitionedFront);
    s.sharpness = 0.0;
    assert!(s.validate().is_err());
    let mut s = spec(ManifoldKind::AnnulusGaussian);
    s.lo = vec![0.0];
    assert!(s.validate().is_err());
}

#[test]
fn sampling_depends_only_on_seed() {
    let a = ManifoldSpec::new(ManifoldKind::AnnulusGaussian, 6, 4, 11);
    let b = ManifoldSpec::new(ManifoldKind::AnnulusGaussian, 6, 4, 12);
    assert_eq!(a.sample().unwrap(), a.clone().sample().unwrap());
    assert_ne!(a.sample().unwrap(), b.sample().unwrap());
    let mesh = structured_mesh(&unit_square(), (2, 2), 1).unwrap().0;
    let s = spec(ManifoldKind::SquareFront);
    let (p, _) = s.sample().unwrap();
    assert_eq!(s.snapshots(&p, mesh.nodes()), s.snapshots(&p, mesh.nodes()));
}

proptest! {
    #[test]
    fn fields_stay_in_range(
        u in 0.0f64..1.0, v in 0.0f64..1.0,
        x in -1.0f64..3.0, y in -1.0f64..1.0,
    ) {
        let p = Vec2::new(x, y);
        let sq = spec(ManifoldKind::SquareFront).field(&[u], &p);
        prop_assert!((-1.0..=1.0).contains(&sq));
        let an = spec(ManifoldKind::AnnulusGaussian).field(&[u, v], &p);
        prop_assert!(an > 0.0 && an <= 1.0);
        let pf = spec(ManifoldKind::PartitionedFront);
        let mu = [-0.1 + 0.2 * u, -0.08 + 0.16 * v];
        let f = pf.field(&mu, &p);
        prop_assert!((0.0..=1.0).contains(&f));
    }
}
