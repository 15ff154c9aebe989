use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regmor::femesh::{discrete_bijectivity_check, InnerProductMatrix, NormKind};
use regmor::geometry::{
    facet_point, four_element_layout, rotated_chord_layout, side_by_side, square_grid, unit_square,
    Chart, Partition, PolarChart,
};
use regmor::pipeline::{
    evaluate, make_sensors, run_offline, Offline, OfflineSettings, Problem, ProblemSetup,
    SensorSettings,
};
use regmor::reduction::{
    pod, pod_cardinality, CoefficientRegressor, GateFallback, Truncation, R2_THRESHOLD,
};
use regmor::registration::{Registration, RegistrationConfig, TemplateSpace};
use regmor::spaces::{build_dd_space, build_rect_space, dd_constraints, DisplacementSpace};
use regmor::synthetic::{ManifoldKind, ManifoldSpec};
use regmor::Vec2;

const SEED: u64 = 3;
const N_TRAIN: usize = 30;
const N_HELD_OUT: usize = 20;
const N_BIJECTIVITY: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// A trained problem: registered and unregistered offline runs on the same
/// training set, and the seeded out-of-sample parameters.
struct Trained {
    problem: Problem,
    space: DisplacementSpace,
    registered: Offline,
    unregistered: Offline,
    test: Vec<Vec<f64>>,
    seconds: f64,
}

fn train(kind: ManifoldKind, n_test: usize) -> Trained {
    let t0 = Instant::now();
    let setup = ProblemSetup::for_kind(kind);
    let spec = ManifoldSpec::new(kind, N_TRAIN, n_test, SEED);
    let problem = setup.problem(spec.clone()).expect("problem");
    let space = problem
        .space(setup.space_degree, setup.fourier_order)
        .expect("space");
    let (train, test) = spec.sample().expect("samples");
    let mut settings = OfflineSettings {
        registration: setup.registration.clone(),
        sensor: setup.sensor,
        truncation: Truncation::Fixed(6),
        registered: true,
    };
    let registered =
        run_offline(&problem, &space, &train, &settings, "acceptance").expect("registered offline");
    settings.registered = false;
    let unregistered = run_offline(&problem, &space, &train, &settings, "acceptance")
        .expect("unregistered offline");
    Trained {
        problem,
        space,
        registered,
        unregistered,
        test,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn h1_spectrum(t: &Trained, snapshots: &DMatrix<f64>) -> Vec<f64> {
    let x = InnerProductMatrix::assemble(&t.problem.mesh, NormKind::H1);
    pod(snapshots, &x, Truncation::Fixed(1))
        .expect("pod")
        .0
        .eigenvalues
}

fn bijectivity(annulus: &Trained, front: &Trained) -> Outcome {
    let t0 = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for t in [annulus, front] {
        let g = t.registered.greedy.as_ref().expect("greedy result");
        let mut bad_train = 0;
        for a in &g.full_coefficients {
            let nodes = t.problem.mapped_nodes(&t.space, a).expect("mapped nodes");
            if !discrete_bijectivity_check(&t.problem.mesh, &nodes).passed {
                bad_train += 1;
            }
        }
        let mut bad_test = 0;
        let mut worst_ratio = f64::INFINITY;
        for mu in &t.test {
            let m = t
                .registered
                .model
                .predict_map(
                    mu,
                    &t.space,
                    &t.problem.mesh,
                    &t.problem.refs,
                    t.problem.chart(),
                    None,
                )
                .expect("prediction");
            let report = discrete_bijectivity_check(&t.problem.mesh, &m.nodes);
            if !report.passed {
                bad_test += 1;
            }
            worst_ratio = worst_ratio.min(m.min_radius_ratio);
        }
        pass &= bad_train == 0 && bad_test == 0;
        lines.push(format!(
            "{}: {} training maps with {bad_train} failing, {} predictions with {bad_test} failing, min radius ratio {worst_ratio:.3}",
            t.problem.spec.kind.name(),
            g.full_coefficients.len(),
            t.test.len()
        ));
    }
    let seconds = annulus.seconds + front.seconds + t0.elapsed().as_secs_f64();
    pass &= seconds <= 300.0;
    lines.push(format!(
        "training and checks took {seconds:.1} s (budget 300 s)"
    ));
    outcome(pass, lines.join("; "))
}

fn effectiveness(front: &Trained) -> Outcome {
    let reg = h1_spectrum(front, &front.registered.snapshots);
    let unreg = h1_spectrum(front, &front.unregistered.snapshots);
    let (n_reg, n_unreg) = (pod_cardinality(&reg, 1e-3), pod_cardinality(&unreg, 1e-3));
    let (r_reg, r_unreg) = (reg[4] / reg[0], unreg[4] / unreg[0]);
    let pass = 2 * n_reg <= n_unreg && r_reg <= 1e-2 * r_unreg && front.seconds <= 900.0;
    outcome(
        pass,
        format!(
            "99.9% energy dimension registered {n_reg} vs unregistered {n_unreg}; λ5/λ1 registered {r_reg:.3e} vs unregistered {r_unreg:.3e} (limit {:.3e}); {:.1} s",
            1e-2 * r_unreg,
            front.seconds
        ),
    )
}

fn prediction(fronts: &[&Trained]) -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for t in fronts {
        let test = &t.test[..N_HELD_OUT];
        let mut cells = Vec::new();
        for n in [2, 4, 6] {
            let er = evaluate(
                &t.problem,
                &t.space,
                &t.registered.model.truncated(n).expect("truncate"),
                test,
            )
            .expect("registered evaluation");
            let eu = evaluate(
                &t.problem,
                &t.space,
                &t.unregistered.model.truncated(n).expect("truncate"),
                test,
            )
            .expect("unregistered evaluation");
            pass &= er.e_avg < eu.e_avg;
            cells.push(format!("N={n} {:.4} vs {:.4}", er.e_avg, eu.e_avg));
        }
        lines.push(format!(
            "{} (registered vs unregistered E_avg) {}",
            t.problem.spec.kind.name(),
            cells.join(", ")
        ));
    }
    outcome(pass, lines.join("; "))
}

/// Full objective at random feasible points against central differences.
fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut pass = true;
    let mut lines = Vec::new();
    let cases = [
        (ManifoldKind::SquareFront, (4, 4), 3),
        (ManifoldKind::AnnulusGaussian, (2, 8), 3),
        (ManifoldKind::PartitionedFront, (3, 3), 3),
    ];
    for (kind, cells, j) in cases {
        let spec = ManifoldSpec::new(kind, 2, 1, 5);
        let problem = Problem::new(spec.clone(), cells, 2).expect("problem");
        let space = problem.space(j, 2).expect("space");
        let (params, _) = spec.sample().expect("samples");
        let sensors = make_sensors(
            &problem,
            &problem.snapshots(&params),
            SensorSettings::default(),
        )
        .expect("sensors");
        let config = RegistrationConfig {
            quad_order: Some(8),
            xi: 1e-3,
            xi_msh: 1e-2,
            ..RegistrationConfig::default()
        };
        let reg = Registration::new(
            &space,
            problem.chart(),
            Some((&problem.mesh, &problem.refs)),
            config,
        )
        .expect("registration");
        let proj = reg
            .projector(&TemplateSpace::new(vec![sensors[0].clone()]).expect("templates"))
            .expect("projector");
        let mut worst: f64 = 0.0;
        let mut points = 0;
        while points < 20 {
            let mut a = DVector::from_fn(space.dim(), |_, _| rng.random::<f64>() - 0.5);
            a *= 0.05 * rng.random::<f64>() / a.norm();
            if reg.constraint(&a) > 0.0 || !reg.admissible(&a) {
                continue;
            }
            points += 1;
            let (_, g, _) = reg
                .objective(&sensors[1], &proj, &a, 10.0)
                .expect("objective");
            let h = 1e-6;
            let fd = DVector::from_fn(space.dim(), |i, _| {
                let (mut ap, mut am) = (a.clone(), a.clone());
                ap[i] += h;
                am[i] -= h;
                let fp = reg
                    .objective(&sensors[1], &proj, &ap, 10.0)
                    .expect("objective")
                    .0;
                let fm = reg
                    .objective(&sensors[1], &proj, &am, 10.0)
                    .expect("objective")
                    .0;
                (fp - fm) / (2.0 * h)
            });
            worst = worst.max((&fd - &g).norm() / g.norm());
        }
        pass &= worst <= 1e-5;
        lines.push(format!(
            "{:?} space worst relative error {worst:.2e}",
            space.kind()
        ));
    }
    outcome(pass, lines.join("; "))
}

fn calibration() -> Outcome {
    let spec = ManifoldSpec::new(ManifoldKind::PartitionedFront, 1, 1, 0);
    let problem = Problem::new(spec, (4, 4), 2).expect("problem");
    let space = problem.space(4, 0).expect("space");
    let config = RegistrationConfig::default();
    let (eps, c_exp, delta, fmax) = (
        config.eps,
        config.c_exp_factor * config.eps,
        config.delta,
        config.f_msh_max,
    );
    let reg = Registration::new(
        &space,
        problem.chart(),
        Some((&problem.mesh, &problem.refs)),
        config,
    )
    .expect("registration");
    let zero = DVector::zeros(space.dim());
    let c = reg.constraint(&zero);
    let expect_c = -delta * space.n_elements() as f64;
    let m = reg.mesh_penalty(&zero).expect("mesh penalty");
    let expect_m = problem.chart().total_area() * (-9.0f64).exp();
    let rel = (m - expect_m).abs() / expect_m;
    let pass = (c - expect_c).abs() <= 1e-8 && rel <= 1e-10 && fmax == 10.0;
    outcome(
        pass,
        format!(
            "c(0) = {c:.12} vs {expect_c} (ε={eps}, C_exp={c_exp}, δ={delta}); mesh penalty {m:.15e} vs {expect_m:.15e}, relative {rel:.1e}"
        ),
    )
}

fn null_dim_oracle(c: &DMatrix<f64>) -> usize {
    let n = c.ncols();
    let mut sq = DMatrix::zeros(c.nrows().max(n), n);
    sq.rows_mut(0, c.nrows()).copy_from(c);
    let s = sq.singular_values();
    let smax = s.max();
    n - s.iter().filter(|&&v| v > 1e-10 * smax).count()
}

fn dimensions() -> Outcome {
    let mut pass = true;
    let mut rect = Vec::new();
    for j in 2..=8 {
        let d = build_rect_space(j).expect("rect space").dim();
        pass &= d == 2 * (j + 1) * (j + 1) - 4 * (j + 1);
        rect.push(d.to_string());
    }
    let mut dd = Vec::new();
    for (name, p) in [
        ("two-element", side_by_side()),
        ("2x2 grid", square_grid(2)),
        ("four-element", four_element_layout()),
    ] {
        let s = build_dd_space(&p, 4).expect("dd space");
        let oracle = null_dim_oracle(&dd_constraints(&p, 4));
        pass &= s.dim() == oracle;
        dd.push(format!("{name} {} vs oracle {oracle}", s.dim()));
    }
    let p = four_element_layout();
    let j = 10;
    let s = build_dd_space(&p, j).expect("dd space");
    let closed = (2 * (j + 1) * (j + 1) - 4 * (j + 1)) * 4 - (j - 1) * p.n_interior_facets();
    outcome(
        pass,
        format!(
            "rect J=2..8 dims {}; dd {}; four-element J=10: computed {}, closed form {closed}, reported 608 (not asserted)",
            rect.join(","),
            dd.join(", "),
            s.dim()
        ),
    )
}

fn convex_combination_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut left_circle = 0;
    let mut count = 0;
    for _ in 0..100 {
        let th: f64 = std::f64::consts::TAU * rng.random::<f64>();
        // two boundary-preserving maps: rotations by random angles
        let (r1, r2) = (
            std::f64::consts::TAU * rng.random::<f64>(),
            std::f64::consts::TAU * rng.random::<f64>(),
        );
        let p1 = Vec2::new((th + r1).cos(), (th + r1).sin());
        let p2 = Vec2::new((th + r2).cos(), (th + r2).sin());
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let phi = p1 * (1.0 - t) + p2 * t;
            let expect = 1.0 + (t * t - t) * (p2 - p1).norm_squared();
            worst = worst.max((phi.norm_squared() - expect).abs());
            if t > 0.0 && t < 1.0 && (p2 - p1).norm() > 1e-8 && phi.norm_squared() < 1.0 {
                left_circle += 1;
            }
            count += 1;
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max deviation {worst:.2e} over {count} evaluations; {left_circle} interior combinations fall inside the circle"),
    )
}

fn truncation_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut mismatches = 0;
    for case in 0..50usize {
        let k = rng.random_range(1..40);
        let mut l: Vec<f64> = (0..k)
            .map(|_| {
                rng.random::<f64>().powi(1 + (case % 7) as i32) * 10f64.powi(-((case % 5) as i32))
            })
            .collect();
        l.sort_by(|a, b| b.total_cmp(a));
        let tol = [1e-1, 1e-2, 1e-3, 1e-4, 0.0][case % 5];
        let prefix: Vec<f64> = l
            .iter()
            .scan(0.0, |s, v| {
                *s += v;
                Some(*s)
            })
            .collect();
        let total = *prefix.last().expect("nonempty");
        let oracle = prefix
            .iter()
            .position(|&p| p >= (1.0 - tol) * total)
            .map_or(k, |i| i + 1);
        if pod_cardinality(&l, tol) != oracle {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches on 50 random spectra"),
    )
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut gh: f64 = 0.0;
    let layouts: Vec<Partition> = vec![
        unit_square(),
        four_element_layout(),
        rotated_chord_layout(0.3, 0.2).expect("curved layout"),
    ];
    for p in &layouts {
        for e in p.elements() {
            for _ in 0..100 {
                let x = Vec2::new(rng.random(), rng.random());
                let y = e.inverse(&e.forward(&x)).expect("inverse");
                gh = gh.max((y - x).norm());
            }
        }
    }
    let polar = PolarChart::new(0.2, 1.0).expect("annulus");
    let mut pol: f64 = 0.0;
    for _ in 0..100 {
        // θ lives in (−1/2, 1/2]
        let x = Vec2::new(rng.random(), 0.5 - rng.random::<f64>());
        let y = polar
            .polar_inverse(&polar.polar_forward(&x).expect("forward"))
            .expect("inverse");
        pol = pol.max((y - x).norm());
    }
    let p = four_element_layout();
    let s = build_dd_space(&p, 6).expect("dd space");
    let mut iface: f64 = 0.0;
    for _ in 0..10 {
        let mut a = DVector::from_fn(s.dim(), |_, _| rng.random::<f64>() - 0.5);
        a *= 0.05 / a.norm();
        let raw = s.expand(&a);
        for (q, l, link) in p.interfaces() {
            for _ in 0..10 {
                let t: f64 = rng.random();
                let x = facet_point(l, t);
                let y = facet_point(link.facet, if link.same_orientation { t } else { 1.0 - t });
                let from_q = p.forward(q, &(x + s.eval_raw(raw.as_slice(), q, &x)));
                let from_other = p.forward(
                    link.element,
                    &(y + s.eval_raw(raw.as_slice(), link.element, &y)),
                );
                iface = iface.max((from_q - from_other).norm());
            }
        }
    }
    outcome(
        gh <= 1e-9 && pol <= 1e-9 && iface <= 1e-9,
        format!("Gordon-Hall {gh:.2e}, polar {pol:.2e}, interface mismatch {iface:.2e}"),
    )
}

fn gating() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params: Vec<Vec<f64>> = (0..40)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let mut targets = DMatrix::zeros(params.len(), 4);
    for (k, m) in params.iter().enumerate() {
        targets[(k, 0)] = 2.0 * m[0] - 3.0 * m[1] + 0.5;
        targets[(k, 1)] = rng.random::<f64>() - 0.5;
        targets[(k, 2)] = -m[1] + 1.0;
        targets[(k, 3)] = rng.random::<f64>() - 0.5;
    }
    let r = CoefficientRegressor::fit(&params, &targets, GateFallback::Zero).expect("fit");
    let c = r.coordinates();
    let pass = c[0].active
        && c[0].r2 >= 0.999
        && c[2].active
        && c[2].r2 >= 0.999
        && !c[1].active
        && c[1].r2 <= R2_THRESHOLD
        && !c[3].active
        && c[3].r2 <= R2_THRESHOLD;
    outcome(
        pass,
        format!(
            "linear R² {:.6}, {:.6} (active {}, {}); noise R² {:.3}, {:.3} (active {}, {})",
            c[0].r2, c[2].r2, c[0].active, c[2].active, c[1].r2, c[3].r2, c[1].active, c[3].active
        ),
    )
}

fn report(index: usize, name: &str, started: Instant, o: Outcome, failures: &mut usize) {
    if !o.pass {
        *failures += 1;
    }
    println!(
        "{} criterion {index} {name}: {} [{:.1} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
}

fn main() -> ExitCode {
    let mut failures = 0;

    let t = Instant::now();
    let annulus = train(ManifoldKind::AnnulusGaussian, N_BIJECTIVITY);
    let front = train(ManifoldKind::PartitionedFront, N_BIJECTIVITY);
    report(
        1,
        "bijectivity",
        t,
        bijectivity(&annulus, &front),
        &mut failures,
    );

    let t = Instant::now();
    report(
        2,
        "registration effectiveness",
        t,
        effectiveness(&front),
        &mut failures,
    );

    let t = Instant::now();
    let square = train(ManifoldKind::SquareFront, N_HELD_OUT);
    report(
        3,
        "prediction improvement",
        t,
        prediction(&[&square, &front]),
        &mut failures,
    );

    let t = Instant::now();
    report(4, "gradient correctness", t, gradients(), &mut failures);
    let t = Instant::now();
    report(5, "constraint calibration", t, calibration(), &mut failures);
    let t = Instant::now();
    report(6, "space dimensions", t, dimensions(), &mut failures);
    let t = Instant::now();
    report(
        7,
        "convex combination identity",
        t,
        convex_combination_identity(),
        &mut failures,
    );
    let t = Instant::now();
    report(
        8,
        "POD truncation rule",
        t,
        truncation_rule(),
        &mut failures,
    );
    let t = Instant::now();
    report(9, "geometry round trips", t, round_trips(), &mut failures);
    let t = Instant::now();
    report(10, "regression gating", t, gating(), &mut failures);

    if failures == 0 {
        println!("all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} of 10 criteria failed");
        ExitCode::FAILURE
    }
}
