use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use regmor::femesh::write_matrix;
use regmor::io::{csv_string, parse_csv};
use regmor::pipeline::{
    central_sample, evaluate, fit_model, make_sensors, register_training, registered_snapshots,
    Problem,
};
use regmor::reduction::{CoefficientRegressor, ReducedModel};
use regmor::registration::SnapshotOutcome;
use regmor::spaces::DisplacementSpace;

use crate::bundle::MappingBundle;
use crate::config::{Resolved, RunConfig};
use crate::error::CliError;

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub force: bool,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, data: impl AsRef<[u8]>) -> Result<(), CliError> {
        write_file(&self.path(name), data)
    }

    fn setup(&self) -> Result<(Resolved, Problem, DisplacementSpace), CliError> {
        let r = self.config.resolve()?;
        let problem = r
            .setup
            .problem(r.spec.clone())
            .map_err(|e| CliError::from(e).at("mesh"))?;
        let space = problem
            .space(r.setup.space_degree, r.setup.fourier_order)
            .map_err(|e| CliError::from(e).at("displacement space"))?;
        Ok((r, problem, space))
    }

    fn check_fingerprint(&self, found: &str, what: &str) -> Result<(), CliError> {
        let expect = self.config.fingerprint();
        if found == expect {
            return Ok(());
        }
        if self.force {
            log::warn!("{what} was built with a different configuration; continuing (--force)");
            Ok(())
        } else {
            Err(CliError::Input(format!(
                "{what} fingerprint {found} does not match the configuration ({expect}); \
                 rerun the earlier stage or pass --force"
            )))
        }
    }
}

fn write_file(path: &Path, data: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, data)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn mu_header(p: usize) -> Vec<String> {
    (1..=p).map(|d| format!("mu{d}")).collect()
}

fn params_csv(params: &[Vec<f64>]) -> String {
    let p = params.first().map_or(0, Vec::len);
    let h = mu_header(p);
    let h: Vec<&str> = h.iter().map(String::as_str).collect();
    csv_string(&h, params)
}

fn header_refs(h: &[String]) -> Vec<&str> {
    h.iter().map(String::as_str).collect()
}

/// Exports the mesh, parameter samples and nodal snapshots of a manifold.
pub fn synth(ctx: &Context) -> Result<(), CliError> {
    let (r, problem, _) = ctx.setup()?;
    let (train, test) = r.spec.sample()?;
    ctx.write("config.toml", ctx.config.to_toml())?;
    ctx.write("mesh.txt", problem.mesh.to_text())?;
    ctx.write("params_train.csv", params_csv(&train))?;
    ctx.write("params_test.csv", params_csv(&test))?;
    ctx.write(
        "snapshots_train.txt",
        write_matrix(&problem.snapshots(&train)),
    )?;
    ctx.write(
        "snapshots_test.txt",
        write_matrix(&problem.snapshots(&test)),
    )?;
    log::info!(
        "wrote {} training and {} test snapshots on {} nodes",
        train.len(),
        test.len(),
        problem.mesh.n_nodes()
    );
    Ok(())
}

pub fn register(ctx: &Context) -> Result<(), CliError> {
    let (r, problem, space) = ctx.setup()?;
    let (train, _) = r.spec.sample()?;
    let t0 = Instant::now();
    let sensors = make_sensors(&problem, &problem.snapshots(&train), r.setup.sensor)
        .map_err(|e| CliError::from(e).at("sensor construction"))?;
    let t_sensor = t0.elapsed().as_secs_f64();
    let seed = central_sample(&train, &r.spec.lo, &r.spec.hi);
    let t1 = Instant::now();
    let g = register_training(
        &problem,
        &space,
        &r.setup.registration,
        &train,
        &sensors,
        seed,
    )
    .map_err(|e| CliError::from(e).at("greedy registration"))?;
    let t_reg = t1.elapsed().as_secs_f64();

    let bundle = MappingBundle {
        fingerprint: ctx.config.fingerprint(),
        params: train.clone(),
        modes: g.modes.clone(),
        eigenvalues: g.eigenvalues.clone(),
        full: g.full_coefficients.clone(),
        reduced: g.coefficients.clone(),
        registered: g.outcomes.iter().map(|o| o.result().is_some()).collect(),
    };
    ctx.write("config.toml", ctx.config.to_toml())?;
    ctx.write("mapping.bin", bundle.to_bytes())?;

    let p = r.spec.n_params();
    let mut h = vec!["k".to_string()];
    h.extend(mu_header(p));
    h.extend((1..=space.dim()).map(|i| format!("a{i}")));
    let rows: Vec<Vec<f64>> = train
        .iter()
        .zip(&g.full_coefficients)
        .enumerate()
        .map(|(k, (mu, a))| {
            let mut row = vec![k as f64];
            row.extend(mu);
            row.extend(a.iter());
            row
        })
        .collect();
    ctx.write("map_coefficients.csv", csv_string(&header_refs(&h), &rows))?;

    let rows: Vec<Vec<f64>> = g
        .outcomes
        .iter()
        .enumerate()
        .map(|(k, o)| match o {
            SnapshotOutcome::Registered(res) => vec![
                k as f64,
                1.0,
                res.proximity,
                res.iterations as f64,
                res.rho_c,
                res.parts.constraint,
            ],
            SnapshotOutcome::Failed(_) => vec![k as f64, 0.0, f64::NAN, 0.0, f64::NAN, f64::NAN],
        })
        .collect();
    ctx.write(
        "registration_report.csv",
        csv_string(
            &[
                "k",
                "registered",
                "proximity",
                "iterations",
                "rho_c",
                "constraint",
            ],
            &rows,
        ),
    )?;
    let rows: Vec<Vec<f64>> = g
        .history
        .iter()
        .enumerate()
        .map(|(i, it)| {
            vec![
                i as f64,
                it.n_templates as f64,
                it.max_proximity,
                it.worst as f64,
                it.n_modes as f64,
            ]
        })
        .collect();
    ctx.write(
        "registration_history.csv",
        csv_string(
            &[
                "iteration",
                "n_templates",
                "max_proximity",
                "worst",
                "n_modes",
            ],
            &rows,
        ),
    )?;
    ctx.write("map_eigenvalues.csv", eigen_csv(&g.eigenvalues))?;
    // wall-clock times are the only non-reproducible output
    ctx.write(
        "timings.txt",
        format!("sensors {t_sensor:.3} s\nregistration {t_reg:.3} s\n"),
    )?;
    log::info!(
        "registered {} snapshots with N = {}, M = {} in {t_reg:.1} s",
        train.len(),
        g.templates.len(),
        g.modes.ncols()
    );

    let mut failures = String::new();
    for (k, o) in g.outcomes.iter().enumerate() {
        if let SnapshotOutcome::Failed(msg) = o {
            let _ = write!(failures, "; snapshot {k}: {msg}");
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "registration failed for {} snapshot(s){failures}",
            g.n_failed()
        )))
    }
}

fn eigen_csv(l: &[f64]) -> String {
    let top = l.first().copied().unwrap_or(0.0);
    let rows: Vec<Vec<f64>> = l
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ratio = if top > 0.0 { v / top } else { 0.0 };
            vec![(i + 1) as f64, v, ratio]
        })
        .collect();
    csv_string(&["n", "lambda", "ratio"], &rows)
}

fn gate(reg: &mut CoefficientRegressor, threshold: f64) {
    for c in 0..reg.n_outputs() {
        let active = reg.coordinates()[c].r2 > threshold;
        reg.set_active(c, active);
    }
}

fn gating_rows(set: f64, reg: &CoefficientRegressor) -> Vec<Vec<f64>> {
    reg.coordinates()
        .iter()
        .enumerate()
        .map(|(c, rc)| vec![set, (c + 1) as f64, rc.r2, rc.active as u8 as f64])
        .collect()
}

pub fn reduce(ctx: &Context) -> Result<(), CliError> {
    let (r, problem, space) = ctx.setup()?;
    let (train, test) = r.spec.sample()?;
    let bundle = if r.registered {
        let path = ctx
            .config
            .paths
            .mapping
            .clone()
            .unwrap_or_else(|| ctx.path("mapping.bin"));
        let b = MappingBundle::from_bytes(&read_file(&path)?)
            .map_err(|e| e.at(&path.display().to_string()))?;
        ctx.check_fingerprint(&b.fingerprint, "mapping bundle")?;
        if b.params != train || b.full.iter().any(|a| a.len() != space.dim()) {
            return Err(CliError::Input(
                "mapping bundle does not match the configured training set and space".into(),
            ));
        }
        Some(b)
    } else {
        None
    };
    let snapshots = match &bundle {
        Some(b) => registered_snapshots(&problem, &space, &train, &b.full)
            .map_err(|e| CliError::from(e).at("registered snapshots"))?,
        None => problem.snapshots(&train),
    };
    let mut model = fit_model(
        &problem,
        &space,
        &train,
        bundle.as_ref().map(|b| (&b.modes, b.reduced.as_slice())),
        &snapshots,
        r.truncation,
        &ctx.config.fingerprint(),
    )
    .map_err(|e| CliError::from(e).at("POD and regression"))?;
    gate(&mut model.field_regressor, r.r2_threshold);
    if let Some(m) = model.map_regressor.as_mut() {
        gate(m, r.r2_threshold);
    }
    ctx.write("model.bin", model.to_bytes())?;
    ctx.write("eigenvalues.csv", eigen_csv(&model.pod.eigenvalues))?;

    let mut gating = gating_rows(0.0, &model.field_regressor);
    if let Some(m) = &model.map_regressor {
        gating.extend(gating_rows(1.0, m));
    }
    ctx.write(
        "gating.csv",
        csv_string(&["set", "coordinate", "r2", "active"], &gating),
    )?;

    let sizes = r.sweep.clone().unwrap_or_else(|| vec![model.pod.n()]);
    let mut rows = Vec::new();
    for n in sizes {
        if n > model.pod.n() {
            log::warn!(
                "N = {n} exceeds the {} available modes; skipped",
                model.pod.n()
            );
            continue;
        }
        let m = model.truncated(n)?;
        let e_train = evaluate(&problem, &space, &m, &train)
            .map_err(|e| CliError::from(e).at("training error"))?;
        let e_test = evaluate(&problem, &space, &m, &test)
            .map_err(|e| CliError::from(e).at("test error"))?;
        log::info!(
            "N = {n}: E_avg {:.3e} (training), {:.3e} (test)",
            e_train.e_avg,
            e_test.e_avg
        );
        rows.push(vec![n as f64, e_train.e_avg, e_test.e_avg]);
    }
    ctx.write(
        "e_avg.csv",
        csv_string(&["N", "e_avg_train", "e_avg_test"], &rows),
    )?;
    Ok(())
}

/// Parameters from `--mu a,b` values, a CSV file, or the configured test sample.
pub fn parameters(
    ctx: &Context,
    mus: &[String],
    file: Option<&Path>,
) -> Result<Vec<Vec<f64>>, CliError> {
    let mut out = Vec::new();
    for s in mus {
        let mu = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(format!("malformed parameter '{s}': {e}")))?;
        out.push(mu);
    }
    if let Some(f) = file {
        let text = String::from_utf8(read_file(f)?)
            .map_err(|_| CliError::Input(format!("{} is not text", f.display())))?;
        out.extend(parse_csv(&text)?.1);
    }
    if out.is_empty() {
        out = ctx.config.resolve()?.spec.sample()?.1;
    }
    Ok(out)
}

pub fn predict(ctx: &Context, params: &[Vec<f64>]) -> Result<(), CliError> {
    let path = ctx
        .config
        .paths
        .model
        .clone()
        .unwrap_or_else(|| ctx.path("model.bin"));
    let model = ReducedModel::from_bytes(&read_file(&path)?)
        .map_err(|e| CliError::from(e).at(&path.display().to_string()))?;
    ctx.check_fingerprint(&model.fingerprint, "model bundle")?;
    let (_, problem, space) = ctx.setup()?;
    let p = model.n_params();
    for (i, mu) in params.iter().enumerate() {
        if mu.len() != p || mu.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Input(format!(
                "parameter {i} has {} finite components, the model expects {p}",
                mu.len()
            )));
        }
    }
    let mut rows = Vec::with_capacity(params.len());
    for (i, mu) in params.iter().enumerate() {
        let (m, u) = model
            .predict_field(
                mu,
                &space,
                &problem.mesh,
                &problem.refs,
                problem.chart(),
                None,
            )
            .map_err(|e| CliError::from(e).at(&format!("prediction {i}")))?;
        if !m.in_box {
            log::warn!("parameter {i} {mu:?} lies outside the training box");
        }
        if !m.bijectivity.passed {
            log::warn!(
                "parameter {i}: {} inverted element(s)",
                m.bijectivity.offending.len()
            );
        }
        let mesh = problem.mesh_with_nodes(m.nodes.clone())?;
        ctx.write(&format!("pred_{i:04}_mesh.txt"), mesh.to_text())?;
        ctx.write(&format!("pred_{i:04}_field.csv"), field_csv(&m.nodes, &u))?;
        let mut row = vec![i as f64];
        row.extend(mu);
        row.extend([
            m.in_box as u8 as f64,
            m.bijectivity.passed as u8 as f64,
            m.bijectivity.min_det,
            m.min_radius_ratio,
        ]);
        rows.push(row);
    }
    let mut h = vec!["index".to_string()];
    h.extend(mu_header(p));
    h.extend(
        ["in_box", "bijective", "min_det", "min_radius_ratio"]
            .iter()
            .map(|s| s.to_string()),
    );
    ctx.write("predictions.csv", csv_string(&header_refs(&h), &rows))?;
    Ok(())
}

fn field_csv(nodes: &[regmor::Vec2], u: &DVector<f64>) -> String {
    let rows: Vec<Vec<f64>> = nodes
        .iter()
        .zip(u.iter())
        .map(|(x, v)| vec![x.x, x.y, *v])
        .collect();
    csv_string(&["x", "y", "u"], &rows)
}

/// Bins of the radius-ratio distribution table.
const RADIUS_BINS: usize = 10;

/// Summary tables of whatever a run directory holds; missing artifacts give
/// empty tables and a warning.
pub fn report(out: &Path) -> Result<(), CliError> {
    let table = |name: &str| -> Result<Option<(Vec<String>, Vec<Vec<f64>>)>, CliError> {
        let path = out.join(name);
        if !path.exists() {
            log::warn!("{} is missing", path.display());
            return Ok(None);
        }
        let text = String::from_utf8(read_file(&path)?)
            .map_err(|_| CliError::Input(format!("{} is not text", path.display())))?;
        Ok(Some(parse_csv(&text)?))
    };
    let col = |h: &[String], name: &str| h.iter().position(|c| c == name);

    let mut eig = Vec::new();
    if let Some((h, rows)) = table("eigenvalues.csv")? {
        if let (Some(n), Some(r)) = (col(&h, "n"), col(&h, "ratio")) {
            eig = rows.iter().map(|row| vec![row[n], row[r]]).collect();
        }
    }
    write_file(
        &out.join("report_eigenvalues.csv"),
        csv_string(&["n", "ratio"], &eig),
    )?;

    let mut err = Vec::new();
    if let Some((h, rows)) = table("e_avg.csv")? {
        let idx: Option<Vec<usize>> = ["N", "e_avg_train", "e_avg_test"]
            .iter()
            .map(|c| col(&h, c))
            .collect();
        if let Some(idx) = idx {
            err = rows
                .iter()
                .map(|row| idx.iter().map(|&i| row[i]).collect())
                .collect();
        }
    }
    write_file(
        &out.join("report_error.csv"),
        csv_string(&["N", "e_avg_train", "e_avg_test"], &err),
    )?;

    let mut counts = [0usize; RADIUS_BINS];
    let mut any = false;
    if let Some((h, rows)) = table("predictions.csv")? {
        if let Some(c) = col(&h, "min_radius_ratio") {
            for row in &rows {
                any = true;
                let b =
                    ((row[c].clamp(0.0, 1.0) * RADIUS_BINS as f64) as usize).min(RADIUS_BINS - 1);
                counts[b] += 1;
            }
        }
    }
    let radius: Vec<Vec<f64>> = if any {
        (0..RADIUS_BINS)
            .map(|b| {
                vec![
                    b as f64 / RADIUS_BINS as f64,
                    (b + 1) as f64 / RADIUS_BINS as f64,
                    counts[b] as f64,
                ]
            })
            .collect()
    } else {
        Vec::new()
    };
    write_file(
        &out.join("report_radius.csv"),
        csv_string(&["bin_lo", "bin_hi", "count"], &radius),
    )?;
    Ok(())
}
