//! Explicit time integration of Ricci flow, Ricci-DeTurck flow and the
//! modified flow `d/dt g = -2(Ric + Hess f_g)`.

use std::time::{Duration, Instant};

use crate::diagnostics::{fill_dlambda_dt, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::geometry::{self, NodeFrame};
use crate::grid::{MetricField, ScalarField, SymTensorField, VectorField};
use crate::nodal;
use crate::spectral::{self, SpectralResult, DEFAULT_TOL};

pub const DEFAULT_C_CFL: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub enum FlowKind {
    Ricci,
    /// Ricci-DeTurck flow with a fixed background metric.
    DeTurck(MetricField),
    Modified,
}

impl FlowKind {
    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::Ricci => "ricci",
            FlowKind::DeTurck(_) => "deturck",
            FlowKind::Modified => "modified",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub g: MetricField,
    pub spec: Option<SpectralResult>,
}

impl FlowState {
    pub fn new(t: f64, g: MetricField) -> Self {
        Self { t, g, spec: None }
    }

    /// Attaches a cached spectrum after rechecking its residual against `g`.
    pub fn with_spectrum(t: f64, g: MetricField, spec: SpectralResult, tol: f64) -> Result<Self> {
        spec.w.grid.check_same(g.grid())?;
        let op = spectral::SchrodingerOperator::new(&g)?;
        let (_, residual) = op.rayleigh(&spec.w.values);
        if residual > 10.0 * tol * spec.lambda.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "cached spectrum has residual {residual:e} for this metric"
            )));
        }
        Ok(Self {
            t,
            g,
            spec: Some(spec),
        })
    }
}

/// The Lie derivative term `L_W g` of the DeTurck flow, with
/// `W^k = g^ij (Gamma^k_ij(g) - Gamma^k_ij(background))`.
pub fn deturck_term(g: &MetricField, background: &MetricField) -> Result<SymTensorField> {
    g.grid().check_same(background.grid())?;
    let grid = g.grid();
    let dim = grid.dim();
    let lowered = geometry::nodewise(grid, dim, |p, out| {
        let frame = NodeFrame::new(g, p)?;
        let base = NodeFrame::new(background, p)?;
        let mut w = [0.0; 3];
        for k in 0..dim {
            for i in 0..dim {
                for j in 0..dim {
                    w[k] += frame.ginv[i][j] * (frame.gamma[k][i][j] - base.gamma[k][i][j]);
                }
            }
        }
        for j in 0..dim {
            out[j] = (0..dim).map(|k| frame.g[j][k] * w[k]).sum();
        }
        Ok(())
    })?;
    let w = VectorField {
        grid: grid.clone(),
        data: lowered,
    };
    Ok(geometry::sym_gradient(&w, g)?.scaled(2.0))
}

fn ricci_velocity(g: &MetricField, kind: &FlowKind) -> Result<SymTensorField> {
    let mut v = geometry::ricci(g)?.scaled(-2.0);
    if let FlowKind::DeTurck(background) = kind {
        let lie = deturck_term(g, background)?;
        for (a, b) in v.data.iter_mut().zip(&lie.data) {
            *a += b;
        }
    }
    Ok(v)
}

/// Velocity of the chosen flow at `g`. For the modified flow the ground state
/// is recomputed, warm-started from `warm` when given, and returned.
pub fn velocity_at(
    g: &MetricField,
    kind: &FlowKind,
    tol: f64,
    warm: Option<&ScalarField>,
) -> Result<(SymTensorField, Option<SpectralResult>)> {
    match kind {
        FlowKind::Modified => {
            let spec = spectral::lambda_of_warm(g, tol, warm)?;
            let v = spectral::lambda_gradient(g, &spec)?.scaled(2.0);
            Ok((v, Some(spec)))
        }
        _ => Ok((ricci_velocity(g, kind)?, None)),
    }
}

pub fn velocity(state: &FlowState, kind: &FlowKind) -> Result<SymTensorField> {
    match (kind, &state.spec) {
        (FlowKind::Modified, Some(spec)) => Ok(spectral::lambda_gradient(&state.g, spec)?.scaled(2.0)),
        _ => Ok(velocity_at(&state.g, kind, DEFAULT_TOL, None)?.0),
    }
}

/// Parabolic stability limit `c * min h^2 / (4 max eig g^{-1})`.
pub fn cfl_limit(g: &MetricField, c_cfl: f64) -> f64 {
    let grid = g.grid();
    let dim = grid.dim();
    let h_min = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let min_eig = (0..grid.node_count())
        .map(|p| nodal::min_eigenvalue(dim, &g.mat(p)))
        .fold(f64::INFINITY, f64::min);
    c_cfl * h_min * h_min * min_eig / 4.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSettings {
    pub c_cfl: f64,
    pub eigen_tol: f64,
}

impl Default for StepSettings {
    fn default() -> Self {
        Self {
            c_cfl: DEFAULT_C_CFL,
            eigen_tol: DEFAULT_TOL,
        }
    }
}

pub fn step(state: &FlowState, dt: f64, kind: &FlowKind) -> Result<FlowState> {
    step_with(state, dt, kind, StepSettings::default())
}

pub fn step_with(
    state: &FlowState,
    dt: f64,
    kind: &FlowKind,
    settings: StepSettings,
) -> Result<FlowState> {
    let (k1, spec) = match (kind, &state.spec) {
        (FlowKind::Modified, Some(spec)) => (velocity(state, kind)?, Some(spec.clone())),
        _ => velocity_at(&state.g, kind, settings.eigen_tol, None)?,
    };
    let g = rk4(&state.g, dt, kind, settings, k1, spec.as_ref().map(|s| &s.w))?;
    Ok(FlowState::new(state.t + dt, g))
}

fn check_dt(g: &MetricField, dt: f64, c_cfl: f64) -> Result<()> {
    let limit = cfl_limit(g, c_cfl);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, limit });
    }
    Ok(())
}

/// Classical four-stage Runge-Kutta update given the first-stage velocity.
fn rk4(
    g: &MetricField,
    dt: f64,
    kind: &FlowKind,
    settings: StepSettings,
    k1: SymTensorField,
    warm: Option<&ScalarField>,
) -> Result<MetricField> {
    check_dt(g, dt, settings.c_cfl)?;
    let floor = g.spd_floor();
    let base = g.tensor();
    let stage = |k: &SymTensorField, c: f64| MetricField::with_floor(base.axpy(c, k)?, floor);
    let mut warm = warm.cloned();
    let mut eval = |m: &MetricField| -> Result<SymTensorField> {
        let (v, spec) = velocity_at(m, kind, settings.eigen_tol, warm.as_ref())?;
        if let Some(s) = spec {
            warm = Some(s.w);
        }
        Ok(v)
    };
    let k2 = eval(&stage(&k1, 0.5 * dt)?)?;
    let k3 = eval(&stage(&k2, 0.5 * dt)?)?;
    let k4 = eval(&stage(&k3, dt)?)?;
    let mut data = base.data.clone();
    let s = dt / 6.0;
    for (i, d) in data.iter_mut().enumerate() {
        *d += s * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
    }
    MetricField::with_floor(
        SymTensorField {
            grid: base.grid.clone(),
            data,
        },
        floor,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtPolicy {
    Fixed(f64),
    /// `cfl_limit` re-evaluated before every step.
    Cfl,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TerminalReason {
    Completed,
    Converged,
    RecordedSingularity,
    BallEscape,
    WallBudget,
}

impl TerminalReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminalReason::Completed => "COMPLETED",
            TerminalReason::Converged => "CONVERGED",
            TerminalReason::RecordedSingularity => "RECORDED_SINGULARITY",
            TerminalReason::BallEscape => "BALL_ESCAPE",
            TerminalReason::WallBudget => "WALL_BUDGET",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Controls {
    pub dt: DtPolicy,
    pub settings: StepSettings,
    /// Keep every `state_every`-th state (the first and last are always kept).
    pub state_every: usize,
    /// Order of the proxy norms written to the records.
    pub proxy_order: usize,
    /// Reference metric for `dist_to_base_ck`; flat when absent.
    pub base: Option<MetricField>,
    /// Stop as converged once `max|Ric| <= ric_tol` and `grad_norm <= grad_tol`.
    pub convergence: Option<(f64, f64)>,
    /// Stop with a recorded singularity once `max|Ric|` exceeds this.
    pub ric_ceiling: f64,
    /// Stop with `BallEscape` once `dist_to_base_ck` exceeds this.
    pub ball_radius: Option<f64>,
    pub wall_budget: Option<Duration>,
}

impl Default for Controls {
    fn default() -> Self {
        Self {
            dt: DtPolicy::Cfl,
            settings: StepSettings::default(),
            state_every: 100,
            proxy_order: 2,
            base: None,
            convergence: None,
            ric_ceiling: 1e8,
            ball_radius: None,
            wall_budget: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub kind: FlowKind,
    pub states: Vec<FlowState>,
    pub records: Vec<DiagnosticsRecord>,
    pub reason: TerminalReason,
    pub steps: usize,
}

impl Trajectory {
    pub fn last_state(&self) -> &FlowState {
        self.states.last().expect("trajectory holds its initial state")
    }
}

/// A step error that ended integration, with everything computed so far.
#[derive(Debug, thiserror::Error)]
#[error("integration stopped at t = {t}: {error}")]
pub struct IntegrationError {
    pub t: f64,
    pub error: Error,
    pub partial: Box<Trajectory>,
}

struct Evaluation {
    spec: SpectralResult,
    velocity: SymTensorField,
    record: DiagnosticsRecord,
}

fn evaluate(
    g: &MetricField,
    t: f64,
    kind: &FlowKind,
    controls: &Controls,
    base: &MetricField,
    warm: Option<&ScalarField>,
) -> Result<Evaluation> {
    let tol = controls.settings.eigen_tol;
    let spec = spectral::lambda_of_warm(g, tol, warm)?;
    let ric = geometry::ricci(g)?;
    let hess = geometry::hessian(&spec.f, g)?;
    let mut grad = ric.clone();
    for (a, b) in grad.data.iter_mut().zip(&hess.data) {
        *a += b;
    }
    let velocity = match kind {
        FlowKind::Modified => grad.scaled(-2.0),
        _ => ricci_velocity(g, kind)?,
    };
    let record = DiagnosticsRecord {
        t,
        lambda: spec.lambda,
        grad_norm: geometry::norm_weighted(&grad, g, Some(&spec.f))?,
        velocity_l2: geometry::norm_weighted(&velocity, g, None)?,
        velocity_ck: geometry::norm_ck_proxy(&velocity, controls.proxy_order),
        dist_to_base_ck: geometry::norm_ck_proxy(&g.tensor().sub(base.tensor())?, controls.proxy_order),
        max_ric: geometry::max_tensor_norm(&ric, g)?,
        dlambda_dt: 0.0,
    };
    Ok(Evaluation {
        spec,
        velocity,
        record,
    })
}

/// The diagnostics record of `g` at time `t`, as `integrate` would write it.
pub fn diagnose(g: &MetricField, t: f64, kind: &FlowKind, controls: &Controls) -> Result<DiagnosticsRecord> {
    let base = controls.base.clone().unwrap_or_else(|| MetricField::flat(g.grid()));
    Ok(evaluate(g, t, kind, controls, &base, None)?.record)
}

/// Integrates from `(t0, g0)` to `t_end` or an earlier stop.
pub fn integrate(
    g0: &MetricField,
    kind: &FlowKind,
    t0: f64,
    t_end: f64,
    controls: &Controls,
) -> std::result::Result<Trajectory, IntegrationError> {
    let start = Instant::now();
    let base = controls
        .base
        .clone()
        .unwrap_or_else(|| MetricField::flat(g0.grid()));
    let mut traj = Trajectory {
        kind: kind.clone(),
        states: Vec::new(),
        records: Vec::new(),
        reason: TerminalReason::Completed,
        steps: 0,
    };
    let fail = |traj: Trajectory, t: f64, error: Error| {
        let mut partial = traj;
        fill_dlambda_dt(&mut partial.records);
        IntegrationError {
            t,
            error,
            partial: Box::new(partial),
        }
    };
    if !(t_end > t0) {
        return Err(fail(
            traj,
            t0,
            Error::InvalidArgument(format!("t_end {t_end} must exceed t0 {t0}")),
        ));
    }
    let mut g = g0.clone();
    let mut t = t0;
    let mut eval = match evaluate(&g, t, kind, controls, &base, None) {
        Ok(e) => e,
        Err(e) => return Err(fail(traj, t, e)),
    };
    traj.records.push(eval.record.clone());
    let mut kept_last = true;
    traj.states.push(FlowState {
        t,
        g: g.clone(),
        spec: Some(eval.spec.clone()),
    });

    loop {
        let rec = &eval.record;
        if let Some(r) = controls.ball_radius {
            if rec.dist_to_base_ck > r {
                traj.reason = TerminalReason::BallEscape;
                break;
            }
        }
        if rec.max_ric > controls.ric_ceiling || !rec.max_ric.is_finite() {
            traj.reason = TerminalReason::RecordedSingularity;
            break;
        }
        if let Some((ric_tol, grad_tol)) = controls.convergence {
            if rec.max_ric <= ric_tol && rec.grad_norm <= grad_tol {
                traj.reason = TerminalReason::Converged;
                break;
            }
        }
        let remaining = t_end - t;
        if remaining <= 1e-12 * t_end.abs().max(1.0) {
            traj.reason = TerminalReason::Completed;
            break;
        }
        if let Some(budget) = controls.wall_budget {
            if start.elapsed() > budget {
                traj.reason = TerminalReason::WallBudget;
                break;
            }
        }

        if eval.velocity.max_abs() == 0.0 {
            // exact fixed point: the rest of the trajectory is constant
            let mut rec = eval.record.clone();
            rec.t = t_end;
            t = t_end;
            traj.steps += 1;
            traj.records.push(rec);
            kept_last = false;
            traj.reason = TerminalReason::Completed;
            break;
        }
        let dt = match controls.dt {
            DtPolicy::Fixed(dt) => dt,
            DtPolicy::Cfl => cfl_limit(&g, controls.settings.c_cfl),
        };
        let (dt, last) = if dt >= remaining {
            (remaining, true)
        } else {
            (dt, false)
        };
        let warm = Some(&eval.spec.w);
        let next = match rk4(&g, dt, kind, controls.settings, eval.velocity.clone(), warm) {
            Ok(next) => next,
            Err(Error::SpdViolation { .. }) => {
                traj.reason = TerminalReason::RecordedSingularity;
                break;
            }
            Err(e) => return Err(fail(traj, t, e)),
        };
        let t_next = if last { t_end } else { t + dt };
        let next_eval = match evaluate(&next, t_next, kind, controls, &base, Some(&eval.spec.w)) {
            Ok(e) => e,
            Err(Error::SpdViolation { .. }) => {
                traj.reason = TerminalReason::RecordedSingularity;
                break;
            }
            Err(e) => return Err(fail(traj, t, e)),
        };
        g = next;
        t = t_next;
        eval = next_eval;
        traj.steps += 1;
        traj.records.push(eval.record.clone());
        kept_last = traj.steps.is_multiple_of(controls.state_every.max(1));
        if kept_last {
            traj.states.push(FlowState {
                t,
                g: g.clone(),
                spec: Some(eval.spec.clone()),
            });
        }
    }
    if !kept_last {
        traj.states.push(FlowState {
            t,
            g,
            spec: Some(eval.spec),
        });
    }
    fill_dlambda_dt(&mut traj.records);
    Ok(traj)
}
