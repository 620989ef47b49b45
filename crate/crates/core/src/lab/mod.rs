//! Experiment runner: configuration, initial data, the two-phase stability
//! protocol, gauge round trips and persisted outputs.

pub mod config;
pub mod io;
mod perturb;

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{json, Value};

pub use config::{
    DiagnosticsConfig, ExperimentConfig, ExperimentKind, FlowConfig, GridConfig, NeighborhoodConfig,
    PerturbationConfig, PerturbationKind,
};
pub use perturb::make_perturbed_metric;

use crate::diagnostics::{self, fill_dlambda_dt, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::flows::{self, Controls, DtPolicy, FlowKind, FlowState, IntegrationError, StepSettings, TerminalReason};
use crate::gauge::{integrate_diffeo, pullback_metric, DiffeoMap};
use crate::geometry::{self, norm_weighted};
use crate::grid::{MetricField, VectorField};

/// Assumed absolute accuracy of each recorded lambda.
pub const LAMBDA_NOISE: f64 = 1e-13;
/// Relative bound on `|dlambda/dt - 2 grad^2|` in the monotonicity check.
pub const MONOTONICITY_TOL: f64 = 0.05;
pub const ROUNDTRIP_TOL: f64 = 5e-3;
pub const LINEAR_STABILITY_TOP: f64 = 1e-6;
pub const LINEAR_STABILITY_REL: f64 = 0.01;
/// Records with `|lambda|` at or below this are not used for the power fit.
pub const LOJASIEWICZ_FLOOR: f64 = 1e-12;
pub const LOJASIEWICZ_R2: f64 = 0.95;
/// Final `|lambda|` accepted as converged.
pub const LIMIT_LAMBDA_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            pass: value <= limit,
        }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            pass: value >= limit,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub verdict: String,
    pub terminal_reason: String,
    pub seed: u64,
    pub resolution: Vec<usize>,
    pub lambda_final: Option<f64>,
    pub travel: Option<f64>,
    pub theta_fit: Option<f64>,
    pub wall_time: f64,
    pub checks: Vec<Check>,
    pub reports: Value,
    pub error: Option<String>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.verdict == "PASS"
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: FlowState,
}

/// An experiment that stopped on an error. Whatever was computed has been
/// written to the output directory.
#[derive(Debug, thiserror::Error)]
#[error("{experiment} failed: {error}")]
pub struct RunError {
    pub experiment: String,
    pub error: Error,
    pub summary: Box<Summary>,
}

/// Progress sink; the CLI prints to stderr unless quiet.
pub type Log<'a> = &'a dyn Fn(&str);

struct Partial {
    records: Vec<DiagnosticsRecord>,
    states: Vec<(String, FlowState)>,
    reports: Value,
    reason: String,
}

impl Partial {
    fn new() -> Self {
        Self {
            records: Vec::new(),
            states: Vec::new(),
            reports: json!({}),
            reason: "ERROR".into(),
        }
    }

    fn absorb(&mut self, e: &IntegrationError, tag: &str) {
        append_records(&mut self.records, &e.partial.records);
        if let Some(s) = e.partial.states.last() {
            self.states.push((tag.into(), s.clone()));
        }
    }
}

fn append_records(into: &mut Vec<DiagnosticsRecord>, more: &[DiagnosticsRecord]) {
    let skip = match (into.last(), more.first()) {
        (Some(a), Some(b)) if a.t == b.t => 1,
        _ => 0,
    };
    into.extend(more.iter().skip(skip).cloned());
}

/// Runs the configured experiment and, when `out_dir` is given, writes the
/// config echo, `diagnostics.csv`, `summary.json` and snapshots there.
pub fn run(cfg: &ExperimentConfig, out_dir: Option<&Path>, log: Log) -> std::result::Result<RunOutcome, RunError> {
    let start = Instant::now();
    let fail = |error: Error, partial: Partial, start: Instant| -> RunError {
        let summary = Summary {
            experiment: cfg.experiment.name().into(),
            verdict: "FAIL".into(),
            terminal_reason: partial.reason.clone(),
            seed: cfg.seed,
            resolution: cfg.grid.build().map(|g| g.resolution().to_vec()).unwrap_or_default(),
            lambda_final: partial.records.last().map(|r| r.lambda),
            travel: None,
            theta_fit: None,
            wall_time: start.elapsed().as_secs_f64(),
            checks: Vec::new(),
            reports: partial.reports.clone(),
            error: Some(error.to_string()),
        };
        if let Some(dir) = out_dir {
            let mut records = partial.records.clone();
            fill_dlambda_dt(&mut records);
            if let Err(e) = persist(cfg, dir, &summary, &records, &partial.states) {
                log(&format!("could not persist partial outputs: {e}"));
            }
        }
        RunError {
            experiment: cfg.experiment.name().into(),
            error,
            summary: Box::new(summary),
        }
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, Partial::new(), start));
    }
    let mut partial = Partial::new();
    let result = match cfg.experiment {
        ExperimentKind::Stability | ExperimentKind::Monotonicity | ExperimentKind::Lojasiewicz => {
            two_phase(cfg, log, &mut partial)
        }
        ExperimentKind::Roundtrip => roundtrip(cfg, log, &mut partial),
        ExperimentKind::LinearStability => stability_spectrum(cfg, log, &mut partial),
    };
    let body = match result {
        Ok(b) => b,
        Err(e) => return Err(fail(e, partial, start)),
    };
    let pass = body.checks.iter().all(|c| c.pass);
    let summary = Summary {
        experiment: cfg.experiment.name().into(),
        verdict: if pass { "PASS" } else { "FAIL" }.into(),
        terminal_reason: body.reason,
        seed: cfg.seed,
        resolution: body.final_state.g.grid().resolution().to_vec(),
        lambda_final: body.records.last().map(|r| r.lambda),
        travel: body.travel,
        theta_fit: body.theta_fit,
        wall_time: start.elapsed().as_secs_f64(),
        checks: body.checks,
        reports: body.reports,
        error: None,
    };
    if let Some(dir) = out_dir {
        if let Err(e) = persist(cfg, dir, &summary, &body.records, &body.snapshots) {
            let p = Partial {
                records: body.records,
                states: body.snapshots,
                reports: summary.reports,
                reason: summary.terminal_reason,
            };
            return Err(fail(e, p, start));
        }
    }
    log(&format!(
        "{} {} ({}) in {:.1} s",
        summary.experiment, summary.verdict, summary.terminal_reason, summary.wall_time
    ));
    Ok(RunOutcome {
        summary,
        records: body.records,
        final_state: body.final_state,
    })
}

fn persist(
    cfg: &ExperimentConfig,
    dir: &Path,
    summary: &Summary,
    records: &[DiagnosticsRecord],
    states: &[(String, FlowState)],
) -> Result<()> {
    let snaps = dir.join("snapshots");
    fs::create_dir_all(&snaps)?;
    io::write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    io::write_records_csv(records, &dir.join("diagnostics.csv"))?;
    for (tag, state) in states {
        io::snapshot_write(state, &snaps.join(format!("{tag}.snap")))?;
    }
    let text = serde_json::to_string_pretty(summary).map_err(|e| Error::Config(e.to_string()))?;
    io::write_atomic(&dir.join("summary.json"), text.as_bytes())
}

/// Output directory for a run: the explicit override, else the config entry.
pub fn output_dir(cfg: &ExperimentConfig, overridden: Option<&Path>) -> Option<PathBuf> {
    overridden.map(Path::to_path_buf).or_else(|| cfg.output_dir.clone())
}

struct Body {
    records: Vec<DiagnosticsRecord>,
    snapshots: Vec<(String, FlowState)>,
    final_state: FlowState,
    checks: Vec<Check>,
    reports: Value,
    reason: String,
    travel: Option<f64>,
    theta_fit: Option<f64>,
}

fn controls(cfg: &ExperimentConfig) -> Controls {
    Controls {
        dt: cfg.flow.dt.map_or(DtPolicy::Cfl, DtPolicy::Fixed),
        settings: StepSettings {
            c_cfl: cfg.flow.c_cfl,
            eigen_tol: cfg.flow.eigen_tol,
        },
        state_every: usize::MAX,
        proxy_order: cfg.neighborhood.proxy_order,
        ..Controls::default()
    }
}

fn remaining_budget(cfg: &ExperimentConfig, start: Instant) -> Option<Duration> {
    cfg.flow
        .wall_budget
        .map(|s| Duration::from_secs_f64(s).saturating_sub(start.elapsed()))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn two_phase(cfg: &ExperimentConfig, log: Log, partial: &mut Partial) -> Result<Body> {
    let start = Instant::now();
    let grid = cfg.grid.build()?;
    let g0 = make_perturbed_metric(&grid, &cfg.perturbation, cfg.neighborhood.proxy_order, cfg.seed)?;
    let flat = MetricField::flat(&grid);
    partial.states.push(("initial".into(), FlowState::new(0.0, g0.clone())));
    let switch = cfg.flow.phase_switch;

    let mut records = Vec::new();
    let mut snapshots = vec![("initial".to_string(), FlowState::new(0.0, g0.clone()))];
    let mut reason = TerminalReason::Completed;
    let mut g_switch = g0.clone();
    if switch > 0.0 {
        log(&format!("phase 1: Ricci-DeTurck flow on [0, {switch}]"));
        let c = Controls {
            wall_budget: remaining_budget(cfg, start),
            ..controls(cfg)
        };
        let traj = flows::integrate(&g0, &FlowKind::DeTurck(flat.clone()), 0.0, switch, &c).map_err(|e| {
            partial.absorb(&e, "failure");
            e.error
        })?;
        log(&format!("phase 1: {} steps, {}", traj.steps, traj.reason.as_str()));
        append_records(&mut records, &traj.records);
        partial.records = records.clone();
        reason = traj.reason.clone();
        g_switch = traj.last_state().g.clone();
        snapshots.push(("switch".into(), traj.last_state().clone()));
    }
    let mut phase2 = Vec::new();
    let mut final_state = FlowState::new(switch, g_switch.clone());
    if reason == TerminalReason::Completed {
        log(&format!("phase 2: modified flow on [{switch}, {}]", cfg.flow.t_end));
        let c = Controls {
            convergence: Some((cfg.flow.ric_tol, cfg.flow.grad_tol)),
            ball_radius: Some(cfg.neighborhood.radius),
            wall_budget: remaining_budget(cfg, start),
            ..controls(cfg)
        };
        let traj = flows::integrate(&g_switch, &FlowKind::Modified, switch, cfg.flow.t_end, &c).map_err(|e| {
            partial.absorb(&e, "failure");
            e.error
        })?;
        log(&format!("phase 2: {} steps, {}", traj.steps, traj.reason.as_str()));
        phase2 = traj.records.clone();
        append_records(&mut records, &traj.records);
        reason = traj.reason.clone();
        final_state = traj.last_state().clone();
    }
    fill_dlambda_dt(&mut records);
    snapshots.push(("final".into(), final_state.clone()));

    let last = records.last().cloned().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let dim = grid.dim();
    let mut reports = serde_json::Map::new();
    let mut checks = Vec::new();

    // convergence verdict of the stability protocol
    let converged = reason == TerminalReason::Converged
        || (reason == TerminalReason::Completed && last.max_ric <= cfg.flow.ric_tol && last.grad_norm <= cfg.flow.grad_tol);
    reports.insert(
        "convergence".into(),
        json!({ "converged": converged, "limit_lambda": last.lambda, "final_max_ric": last.max_ric, "t_final": last.t }),
    );

    let mono = if records.len() >= 3 {
        Some(diagnostics::monotonicity_report(&records, LAMBDA_NOISE)?)
    } else {
        None
    };
    let evolution = if records.len() >= 3 {
        Some(diagnostics::evolution_inequality_check(&records, dim, cfg.diagnostics.evolution_tol)?)
    } else {
        None
    };
    reports.insert("monotonicity".into(), to_json(&mono));
    reports.insert("evolution".into(), to_json(&evolution));

    let samples: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.lambda.abs() > LOJASIEWICZ_FLOOR && r.dist_to_base_ck <= cfg.neighborhood.radius)
        .map(|r| (r.lambda, r.grad_norm))
        .collect();
    let loj = if samples.len() >= 3 {
        Some(diagnostics::lojasiewicz_report(&samples, cfg.diagnostics.inequality_theta)?)
    } else {
        None
    };
    reports.insert("lojasiewicz".into(), to_json(&loj));

    let travel_report = if phase2.len() >= 3 {
        let theta = loj.as_ref().map_or(0.5, |l| l.theta_fit.clamp(1e-3, 0.5));
        Some(diagnostics::interpolation_and_travel(&phase2, cfg.diagnostics.eta, theta)?)
    } else {
        None
    };
    let travel = travel_report.as_ref().map(|r| r.travel).unwrap_or_else(|| {
        phase2
            .windows(2)
            .map(|w| 0.5 * (w[0].velocity_ck + w[1].velocity_ck) * (w[1].t - w[0].t))
            .fold(0.0, |a, b| a + b)
    });
    reports.insert("travel".into(), to_json(&travel_report));

    match cfg.experiment {
        ExperimentKind::Stability => {
            checks.push(Check {
                name: "converged".into(),
                value: f64::from(u8::from(converged)),
                limit: 1.0,
                pass: converged,
            });
            checks.push(Check::at_most("final_max_ric", last.max_ric, cfg.flow.ric_tol));
            checks.push(Check::at_most("limit_lambda_abs", last.lambda.abs(), LIMIT_LAMBDA_TOL));
        }
        ExperimentKind::Monotonicity => {
            if let Some(m) = &mono {
                checks.push(Check::at_most("lambda_decreases", m.decreases.len() as f64, 0.0));
                checks.push(Check::at_most("dlambda_dt_mismatch", m.max_relative_mismatch, MONOTONICITY_TOL));
            }
            if let Some(e) = &evolution {
                checks.push(Check::at_most("evolution_violations", e.violations.len() as f64, 0.0));
            }
        }
        ExperimentKind::Lojasiewicz => {
            checks.push(Check::at_least("lojasiewicz_samples", samples.len() as f64, 3.0));
            if let Some(l) = &loj {
                checks.push(Check::at_most("lojasiewicz_violations", l.violations as f64, 0.0));
                checks.push(Check::at_least("fit_r_squared", l.r_squared, LOJASIEWICZ_R2));
            }
        }
        _ => unreachable!("two_phase serves flow experiments only"),
    }
    if reason == TerminalReason::BallEscape {
        checks.push(Check {
            name: "ball_escape".into(),
            value: last.dist_to_base_ck,
            limit: cfg.neighborhood.radius,
            pass: false,
        });
    }

    Ok(Body {
        records,
        snapshots,
        final_state,
        checks,
        reports: Value::Object(reports),
        reason: reason.as_str().into(),
        travel: Some(travel),
        theta_fit: loj.map(|l| l.theta_fit),
    })
}

/// Relative `L^2(dV)` distance of `b` from `a`, measured with `a`.
pub fn relative_l2(a: &MetricField, b: &MetricField) -> Result<f64> {
    let diff = b.tensor().sub(a.tensor())?;
    Ok(norm_weighted(&diff, a, None)? / norm_weighted(a.tensor(), a, None)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundtripPoint {
    pub t: f64,
    pub discrepancy: f64,
}

fn roundtrip(cfg: &ExperimentConfig, log: Log, partial: &mut Partial) -> Result<Body> {
    let start = Instant::now();
    let grid = cfg.grid.build()?;
    let g0 = make_perturbed_metric(&grid, &cfg.perturbation, cfg.neighborhood.proxy_order, cfg.seed)?;
    partial.states.push(("initial".into(), FlowState::new(0.0, g0.clone())));
    let t_end = cfg.flow.t_end;
    let base = Controls {
        wall_budget: remaining_budget(cfg, start),
        ..controls(cfg)
    };

    log(&format!("Ricci flow on [0, {t_end}]"));
    let direct = flows::integrate(&g0, &FlowKind::Ricci, 0.0, t_end, &Controls { state_every: 1, ..base.clone() })
        .map_err(|e| {
            partial.absorb(&e, "failure");
            e.error
        })?;
    log(&format!("modified flow on [0, {t_end}]"));
    let modified = flows::integrate(&g0, &FlowKind::Modified, 0.0, t_end, &Controls { state_every: 1, ..base })
        .map_err(|e| {
            partial.absorb(&e, "failure");
            e.error
        })?;
    partial.records = modified.records.clone();
    if direct.reason != TerminalReason::Completed || modified.reason != TerminalReason::Completed {
        partial.reason = format!("{}/{}", direct.reason.as_str(), modified.reason.as_str());
        return Err(Error::InvalidArgument(format!(
            "round trip needs both flows to reach t_end; got {} and {}",
            direct.reason.as_str(),
            modified.reason.as_str()
        )));
    }

    // phi solves d phi/dt = grad f(g~(t)) (phi), with the field linear in time
    // between recorded states; phi_t^* g~(t) reconstructs the Ricci flow.
    let fields: Vec<(f64, VectorField)> = modified
        .states
        .iter()
        .map(|s| {
            let f = match &s.spec {
                Some(spec) => spec.f.clone(),
                None => crate::spectral::lambda_of(&s.g, cfg.flow.eigen_tol)?.f,
            };
            Ok((s.t, geometry::gradient(&f, &s.g)?))
        })
        .collect::<Result<_>>()?;
    let checkpoints = 10.min(direct.states.len() - 1).max(1);
    let stride = ((direct.states.len() - 1) / checkpoints).max(1);
    let mut phi = DiffeoMap::identity(&grid);
    let mut points = Vec::new();
    let mut last_reconstructed = g0.clone();
    for k in 0..fields.len() {
        if k > 0 {
            let (t0, x0) = &fields[k - 1];
            let (t1, x1) = &fields[k];
            let span = t1 - t0;
            let provider = |t: f64| -> Result<VectorField> {
                let s = if span > 0.0 { (t - t0) / span } else { 0.0 };
                let data = x0.data.iter().zip(&x1.data).map(|(a, b)| (1.0 - s) * a + s * b).collect();
                VectorField::new(x0.grid.clone(), data)
            };
            phi = integrate_diffeo(&provider, *t0, *t1, 1, &phi)?;
        }
        let at_checkpoint = k % stride == 0 || k + 1 == fields.len();
        if at_checkpoint && k > 0 {
            let state = &modified.states[k];
            let reference = direct
                .states
                .iter()
                .min_by(|a, b| (a.t - state.t).abs().total_cmp(&(b.t - state.t).abs()))
                .expect("trajectory holds states");
            let reconstructed = pullback_metric(&phi, &state.g)?;
            let d = relative_l2(&reference.g, &reconstructed)?;
            points.push(RoundtripPoint { t: state.t, discrepancy: d });
            last_reconstructed = reconstructed;
        }
    }
    let worst_final = points.last().map_or(0.0, |p| p.discrepancy);
    log(&format!("round trip discrepancy at t = {t_end}: {worst_final:.3e}"));

    let final_state = direct.last_state().clone();
    let snapshots = vec![
        ("initial".to_string(), FlowState::new(0.0, g0)),
        ("final".to_string(), final_state.clone()),
        ("reconstructed".to_string(), FlowState::new(final_state.t, last_reconstructed)),
    ];
    let reports = json!({
        "roundtrip": points,
        "jacobian_floor": phi.jacobian_floor(),
        "steps": { "ricci": direct.steps, "modified": modified.steps },
    });
    Ok(Body {
        records: modified.records,
        snapshots,
        final_state,
        checks: vec![Check::at_most("final_discrepancy", worst_final, ROUNDTRIP_TOL)],
        reports,
        reason: TerminalReason::Completed.as_str().into(),
        travel: None,
        theta_fit: None,
    })
}

/// Eigenvalues sorted descending with multiplicity; returns the top value and
/// the first one clearly separated from it.
pub fn top_and_second(values: &[f64]) -> (f64, Option<f64>) {
    let top = values[0];
    let gap = 1e-6 * values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    (top, values.iter().copied().find(|v| *v < top - gap))
}

fn stability_spectrum(cfg: &ExperimentConfig, log: Log, partial: &mut Partial) -> Result<Body> {
    let grid = cfg.grid.build()?;
    let flat = MetricField::flat(&grid);
    let state = FlowState::new(0.0, flat.clone());
    partial.states.push(("background".into(), state.clone()));
    // constant tensors span the kernel; one more mode reaches the first nonzero value
    let n_modes = cfg.diagnostics.n_modes.max(grid.sym_components() + 1);
    log(&format!("block Lanczos for {n_modes} modes"));
    let values = diagnostics::linear_stability_seeded(&flat, n_modes, cfg.seed)?;
    let (top, second) = top_and_second(&values);
    let l_max = grid.periods().iter().cloned().fold(0.0, f64::max);
    let expected = -(2.0 * PI / l_max).powi(2);
    let mut checks = vec![Check::at_most("top_eigenvalue", top, LINEAR_STABILITY_TOP)];
    let second_rel = second.map_or(f64::INFINITY, |s| ((s - expected) / expected).abs());
    checks.push(Check::at_most("second_eigenvalue_rel", second_rel, LINEAR_STABILITY_REL));
    let record = flows::diagnose(&flat, 0.0, &FlowKind::Ricci, &controls(cfg))?;
    Ok(Body {
        records: vec![record],
        snapshots: vec![("background".into(), state.clone())],
        final_state: state,
        checks,
        reports: json!({ "eigenvalues": values, "top": top, "second": second, "expected_second": expected }),
        reason: TerminalReason::Completed.as_str().into(),
        travel: None,
        theta_fit: None,
    })
}
