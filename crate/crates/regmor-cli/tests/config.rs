use nalgebra::{DMatrix, DVector};

use regmor::pipeline::SensorApproach;
use regmor::reduction::Truncation;
use regmor_cli::bundle::MappingBundle;
use regmor_cli::config::RunConfig;
use regmor_cli::error::CliError;

const BASE: &str = r#"
seed = 7

[problem]
kind = "partitioned_front"
n_train = 5
"#;

#[test]
fn minimal_config_takes_problem_presets() {
    let c = RunConfig::from_toml(BASE).unwrap();
    let r = c.resolve().unwrap();
    assert_eq!(r.spec.seed, 7);
    assert_eq!(r.spec.n_test, 20);
    assert_eq!(r.setup.cells, (8, 8));
    assert_eq!(r.setup.sensor.cells, 29);
    assert_eq!(r.setup.registration.n_max, 2);
    assert!(r.registered);
    assert_eq!(r.truncation, Truncation::Tolerance(1e-3));
}

#[test]
fn keys_override_presets() {
    let text = format!(
        "{BASE}
[sensor]
approach = \"physical_smoothing\"
xi_s = 0.01

[reg]
xi = 0.5
n_max = 4

[opt]
max_iter = 17
quad_order = 9

[reduction]
registered = false
sweep = [3, 1, 2]
r2_threshold = 0.5
"
    );
    let r = RunConfig::from_toml(&text).unwrap().resolve().unwrap();
    assert_eq!(r.setup.sensor.approach, SensorApproach::PhysicalSmoothing);
    assert_eq!(r.setup.sensor.xi_s, 0.01);
    assert_eq!(r.setup.registration.xi, 0.5);
    assert_eq!(r.setup.registration.n_max, 4);
    assert_eq!(r.setup.registration.max_iter, 17);
    assert_eq!(r.setup.registration.quad_order, Some(9));
    assert!(!r.registered);
    assert_eq!(r.truncation, Truncation::Fixed(3));
    assert_eq!(r.r2_threshold, 0.5);
}

#[test]
fn serialization_round_trips_bit_exactly() {
    let text = format!(
        "{BASE}
[problem.extra]
"
    );
    assert!(RunConfig::from_toml(&text).is_err());

    let mut c = RunConfig::from_toml(BASE).unwrap();
    c.reg.xi = Some(0.1);
    c.reg.eps = Some(1.0 / 3.0);
    c.reg.xi_msh = Some(1e-300);
    c.sensor.xi_s = Some(f64::MIN_POSITIVE);
    c.problem.lo = Some(vec![-0.1, -std::f64::consts::PI / 40.0]);
    c.problem.hi = Some(vec![0.1 + f64::EPSILON, 0.08]);
    let back = RunConfig::from_toml(&c.to_toml()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.reg.eps.unwrap().to_bits(), (1.0f64 / 3.0).to_bits());
    assert_eq!(back.to_toml(), c.to_toml());
}

#[test]
fn fingerprint_tracks_numerics_not_paths() {
    let c = RunConfig::from_toml(BASE).unwrap();
    let mut moved = c.clone();
    moved.paths.out = Some("elsewhere".into());
    assert_eq!(c.fingerprint(), moved.fingerprint());
    assert_eq!(c.fingerprint().len(), 64);
    let mut reseeded = c.clone();
    reseeded.seed = 8;
    assert_ne!(c.fingerprint(), reseeded.fingerprint());
    let mut tweaked = c.clone();
    tweaked.reg.xi = Some(2e-2);
    assert_ne!(c.fingerprint(), tweaked.fingerprint());
}

#[test]
fn invalid_values_are_input_errors() {
    for extra in [
        "[reg]\neps = 1.5",
        "[reg]\nn_max = 0",
        "[sensor]\napproach = \"magic\"",
        "[sensor]\ncells = 0",
        "[reduction]\nkernel = \"gaussian\"",
        "[reduction]\nsweep = []",
        "[reduction]\ntol = 1.0",
        "[problem.nope]",
    ] {
        let text = format!("{BASE}\n{extra}\n");
        let err = RunConfig::from_toml(&text).and_then(|c| c.resolve().map(|_| ()));
        assert!(matches!(err, Err(CliError::Input(_))), "{extra}");
    }
    let bad_kind = BASE.replace("partitioned_front", "cube");
    assert!(RunConfig::from_toml(&bad_kind).unwrap().resolve().is_err());
}

#[test]
fn load_checks_referenced_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    let missing = format!(
        "{BASE}\n[paths]\nmodel = \"{}\"\n",
        dir.path().join("m.bin").display()
    );
    std::fs::write(&path, &missing).unwrap();
    assert!(matches!(RunConfig::load(&path), Err(CliError::Input(_))));
    std::fs::write(dir.path().join("m.bin"), b"x").unwrap();
    assert!(RunConfig::load(&path).is_ok());
    assert!(RunConfig::load(&dir.path().join("absent.toml")).is_err());
}

#[test]
fn mapping_bundle_round_trips() {
    let b = MappingBundle {
        fingerprint: "f00d".into(),
        params: vec![vec![0.1, 0.2], vec![0.3, -0.4], vec![0.0, 1e-9]],
        modes: DMatrix::from_fn(5, 2, |i, j| (i * 3 + j) as f64 * 0.1),
        eigenvalues: vec![2.0, 0.5, 0.0],
        full: (0..3).map(|k| DVector::from_element(5, k as f64)).collect(),
        reduced: (0..3)
            .map(|k| DVector::from_element(2, -(k as f64)))
            .collect(),
        registered: vec![true, false, true],
    };
    let bytes = b.to_bytes();
    assert_eq!(MappingBundle::from_bytes(&bytes).unwrap(), b);
    assert!(MappingBundle::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut longer = bytes.clone();
    longer.push(1);
    assert!(MappingBundle::from_bytes(&longer).is_err());
}

#[test]
fn library_errors_map_to_exit_codes() {
    let input: CliError = regmor::Error::Input("x".into()).into();
    let numeric: CliError = regmor::Error::LinearAlgebra("y".into()).into();
    assert_eq!(input.exit_code(), 2);
    assert_eq!(numeric.exit_code(), 3);
    assert_eq!(
        numeric.at("reduce").to_string(),
        "reduce: linear algebra failure: y"
    );
}
