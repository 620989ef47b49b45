//! Checks of monotonicity, the evolution inequality, the Lojasiewicz
//! inequality, travel bounds and linear stability along trajectories.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::SliceProjector;
use crate::geometry::{self, LichnerowiczVariant};
use crate::grid::{MetricField, SymTensorField};

/// `|lambda|` below this is treated as numerically zero.
pub const LAMBDA_FLOOR: f64 = 1e-12;
pub const MONOTONICITY_SLACK: f64 = 1e-10;
pub const DEFAULT_ETA: f64 = 0.1;

/// Per-step diagnostics of a flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub lambda: f64,
    /// `||Ric + Hess f||` in `L^2(e^{-f} dV_g)`.
    pub grad_norm: f64,
    pub velocity_l2: f64,
    pub velocity_ck: f64,
    pub dist_to_base_ck: f64,
    pub max_ric: f64,
    pub dlambda_dt: f64,
}

/// Fills `dlambda_dt` with second-order differences on the (possibly
/// nonuniform) record times: centered inside, one-sided at the ends.
pub fn fill_dlambda_dt(records: &mut [DiagnosticsRecord]) {
    let n = records.len();
    if n < 2 {
        for r in records.iter_mut() {
            r.dlambda_dt = 0.0;
        }
        return;
    }
    if n == 2 {
        let d = (records[1].lambda - records[0].lambda) / (records[1].t - records[0].t);
        records[0].dlambda_dt = d;
        records[1].dlambda_dt = d;
        return;
    }
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let l: Vec<f64> = records.iter().map(|r| r.lambda).collect();
    // derivative at t[k] of the quadratic through (a, b, c)
    let quad = |k: usize, a: usize, b: usize, c: usize| {
        let (x, xa, xb, xc) = (t[k], t[a], t[b], t[c]);
        l[a] * ((x - xb) + (x - xc)) / ((xa - xb) * (xa - xc))
            + l[b] * ((x - xa) + (x - xc)) / ((xb - xa) * (xb - xc))
            + l[c] * ((x - xa) + (x - xb)) / ((xc - xa) * (xc - xb))
    };
    for k in 0..n {
        records[k].dlambda_dt = if k == 0 {
            quad(0, 0, 1, 2)
        } else if k == n - 1 {
            quad(k, k - 2, k - 1, k)
        } else {
            quad(k, k - 1, k, k + 1)
        };
    }
}

fn require(records: usize, needed: usize) -> Result<()> {
    if records < needed {
        Err(Error::InsufficientData {
            needed,
            got: records,
        })
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport {
    /// Indices `k` with `lambda[k+1] < lambda[k] - slack`.
    pub decreases: Vec<usize>,
    pub max_decrease: f64,
    /// Largest `|dlambda/dt - 2 grad^2| / (2 grad^2)` over the compared records.
    pub max_relative_mismatch: f64,
    pub compared: usize,
    /// Records with `2 grad^2` below this were not compared.
    pub signal_floor: f64,
    /// Time window of the compared records: the central half of the span
    /// where the signal is above the floor. NaN when there is none.
    pub window: (f64, f64),
}

/// Compares `lambda` increments and `dlambda/dt` against `2 ||grad||^2`.
///
/// `lambda_noise` is the absolute accuracy assumed for each recorded lambda.
/// A centered difference then carries an error of about `lambda_noise / dt`,
/// so only interior records whose `2 grad^2` exceeds a hundred times that
/// count as signal. Of those, the ones in the central half of their time span
/// are compared; the ends carry start-up transients and the decay into noise.
pub fn monotonicity_report(
    records: &[DiagnosticsRecord],
    lambda_noise: f64,
) -> Result<MonotonicityReport> {
    require(records.len(), 3)?;
    let mut decreases = Vec::new();
    let mut max_decrease = 0.0f64;
    for (k, pair) in records.windows(2).enumerate() {
        let drop = pair[0].lambda - pair[1].lambda;
        max_decrease = max_decrease.max(drop);
        if drop > MONOTONICITY_SLACK {
            decreases.push(k);
        }
    }
    let mut signal_floor = 0.0f64;
    let mut bearing = Vec::new();
    for k in 1..records.len() - 1 {
        let dt = 0.5 * (records[k + 1].t - records[k - 1].t);
        let floor = 100.0 * lambda_noise / dt;
        signal_floor = signal_floor.max(floor);
        let expected = 2.0 * records[k].grad_norm * records[k].grad_norm;
        if expected >= floor && expected > 0.0 {
            bearing.push(k);
        }
    }
    let mut max_rel = 0.0f64;
    let mut compared = 0;
    let mut window = (f64::NAN, f64::NAN);
    if let (Some(&a), Some(&b)) = (bearing.first(), bearing.last()) {
        let (ta, tb) = (records[a].t, records[b].t);
        let quarter = 0.25 * (tb - ta);
        window = (ta + quarter, tb - quarter);
        for &k in &bearing {
            let t = records[k].t;
            if t < window.0 || t > window.1 {
                continue;
            }
            let expected = 2.0 * records[k].grad_norm * records[k].grad_norm;
            compared += 1;
            max_rel = max_rel.max((records[k].dlambda_dt - expected).abs() / expected);
        }
    }
    Ok(MonotonicityReport {
        decreases,
        max_decrease,
        max_relative_mismatch: max_rel,
        compared,
        signal_floor,
        window,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvolutionReport {
    pub violations: Vec<usize>,
    pub checked: usize,
    /// Smallest `dlambda/dt - (2/n) lambda^2` seen.
    pub min_slack: f64,
}

/// Checks `dlambda/dt >= (2/n) lambda^2 - tol` at interior records.
pub fn evolution_inequality_check(
    records: &[DiagnosticsRecord],
    n: usize,
    tol: f64,
) -> Result<EvolutionReport> {
    require(records.len(), 3)?;
    let mut violations = Vec::new();
    let mut min_slack = f64::INFINITY;
    for (k, r) in records.iter().enumerate().take(records.len() - 1).skip(1) {
        let slack = r.dlambda_dt - 2.0 / n as f64 * r.lambda * r.lambda;
        min_slack = min_slack.min(slack);
        if slack < -tol {
            violations.push(k);
        }
    }
    Ok(EvolutionReport {
        violations,
        checked: records.len() - 2,
        min_slack,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LojasiewiczReport {
    pub theta_fit: f64,
    pub fit_intercept: f64,
    pub r_squared: f64,
    pub inequality_theta: f64,
    pub violations: usize,
    pub samples: usize,
}

impl LojasiewiczReport {
    /// `sigma = theta - eta + theta eta` for the fitted exponent.
    pub fn sigma(&self, eta: f64) -> f64 {
        sigma(self.theta_fit, eta)
    }
}

pub fn sigma(theta: f64, eta: f64) -> f64 {
    theta - eta + theta * eta
}

/// Fits `log grad = (1 - theta) log|lambda| + b` and counts samples with
/// `grad < |lambda|^(1 - inequality_theta)`. Samples with `|lambda|` at or
/// below [`LAMBDA_FLOOR`] are ignored.
pub fn lojasiewicz_report(samples: &[(f64, f64)], inequality_theta: f64) -> Result<LojasiewiczReport> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(l, g)| l.abs() > LAMBDA_FLOOR && *g > 0.0)
        .map(|&(l, g)| (l.abs(), g))
        .collect();
    require(pts.len(), 10)?;
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: 1,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    let violations = pts
        .iter()
        .filter(|(l, g)| *g < l.powf(1.0 - inequality_theta))
        .count();
    Ok(LojasiewiczReport {
        theta_fit: 1.0 - slope,
        fit_intercept: intercept,
        r_squared,
        inequality_theta,
        violations,
        samples: pts.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TravelReport {
    /// `max velocity_ck / velocity_l2^(1 - eta)` over records with motion.
    pub c_interp: f64,
    /// `int velocity_ck dt` by the trapezoid rule.
    pub travel: f64,
    pub sigma: f64,
    /// `(c_interp / sigma) |lambda(t_0)|^sigma`, reported only.
    pub bound: f64,
}

pub fn interpolation_and_travel(
    records: &[DiagnosticsRecord],
    eta: f64,
    theta: f64,
) -> Result<TravelReport> {
    require(records.len(), 3)?;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidArgument(format!("eta must lie in (0,1), got {eta}")));
    }
    let c_interp = records
        .iter()
        .filter(|r| r.velocity_l2 > 0.0)
        .map(|r| r.velocity_ck / r.velocity_l2.powf(1.0 - eta))
        .fold(0.0, f64::max);
    let travel = records
        .windows(2)
        .map(|w| 0.5 * (w[0].velocity_ck + w[1].velocity_ck) * (w[1].t - w[0].t))
        .sum();
    let s = sigma(theta, eta);
    let bound = if s > 0.0 {
        c_interp / s * records[0].lambda.abs().powf(s)
    } else {
        f64::INFINITY
    };
    Ok(TravelReport {
        c_interp,
        travel,
        sigma: s,
        bound,
    })
}

const STABILITY_RESIDUAL: f64 = 1e-7;
const STABILITY_MAX_DIM: usize = 3000;

/// Largest `n_modes` eigenvalues (descending, with multiplicity) of the
/// Lichnerowicz Laplacian restricted to divergence-free tensors, by block
/// Lanczos with full reorthogonalization in `L^2(dV)`.
pub fn linear_stability(background: &MetricField, n_modes: usize) -> Result<Vec<f64>> {
    linear_stability_seeded(background, n_modes, 0x5eed)
}

pub fn linear_stability_seeded(background: &MetricField, n_modes: usize, seed: u64) -> Result<Vec<f64>> {
    if n_modes == 0 {
        return Ok(Vec::new());
    }
    let grid = background.grid();
    let projector = SliceProjector::new(background)?;
    let len = grid.node_count() * grid.sym_components();
    let block = n_modes + grid.sym_components();
    let max_dim = STABILITY_MAX_DIM.min(len);

    let as_field = |v: &[f64]| SymTensorField {
        grid: grid.clone(),
        data: v.to_vec(),
    };
    let project = |v: &[f64]| -> Result<Vec<f64>> { Ok(projector.project(&as_field(v))?.0.data) };
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let lv = geometry::lichnerowicz_apply(&as_field(v), background, LichnerowiczVariant::Lichnerowicz)?;
        project(&lv.data)
    };
    let inner = |a: &[f64], b: &[f64]| projector.inner(a, b);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut images: Vec<Vec<f64>> = Vec::new();
    let mut pending: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())
        .map(|v| project(&v))
        .collect::<Result<_>>()?;
    let mut best_residual = f64::INFINITY;
    let mut iterations = 0;
    // lower triangle of the projected operator, grown row by row
    let mut tmat: Vec<Vec<f64>> = Vec::new();
    let mut last_check = 0;

    loop {
        // orthonormalize the new block against everything kept so far
        let mut added = 0;
        for mut v in pending.drain(..) {
            let scale = inner_scale(&v, &projector);
            for _ in 0..2 {
                for b in &basis {
                    let c = inner(b, &v);
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= c * bi;
                    }
                }
            }
            let norm = inner(&v, &v).sqrt();
            if norm > 1e-10 * scale && basis.len() < max_dim {
                v.iter_mut().for_each(|x| *x /= norm);
                let image = apply(&v)?;
                let row: Vec<f64> = basis
                    .iter()
                    .zip(&images)
                    .map(|(b, im)| 0.5 * (inner(b, &image) + inner(&v, im)))
                    .chain(std::iter::once(inner(&v, &image)))
                    .collect();
                tmat.push(row);
                images.push(image);
                basis.push(v);
                added += 1;
            }
        }
        iterations += 1;
        let dim = basis.len();
        let exhausted = added == 0 || dim >= max_dim;
        if !exhausted && dim < last_check + last_check / 8 + 2 * block {
            let start = dim - added;
            pending = images[start..].to_vec();
            continue;
        }
        last_check = dim;
        let t = DMatrix::from_fn(dim, dim, |i, j| if j <= i { tmat[i][j] } else { tmat[j][i] });
        let eig = t.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let want = n_modes.min(dim);
        let mut worst = 0.0f64;
        let mut values = Vec::with_capacity(want);
        for &k in order.iter().take(want) {
            let theta = eig.eigenvalues[k];
            let s: DVector<f64> = eig.eigenvectors.column(k).into_owned();
            let mut r = vec![0.0; len];
            for (c, (b, im)) in s.iter().zip(basis.iter().zip(&images)) {
                for ((ri, bi), ii) in r.iter_mut().zip(b).zip(im) {
                    *ri += c * (ii - theta * bi);
                }
            }
            worst = worst.max(inner(&r, &r).sqrt());
            values.push(theta);
        }
        best_residual = best_residual.min(worst);
        if want == n_modes && worst <= STABILITY_RESIDUAL {
            return Ok(values);
        }
        if exhausted {
            if want == n_modes && dim == len {
                return Ok(values);
            }
            return Err(Error::NoConvergence {
                iterations,
                best_residual,
            });
        }
        let start = dim - added;
        pending = images[start..].to_vec();
    }
}

fn inner_scale(v: &[f64], projector: &SliceProjector) -> f64 {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    max * projector.total_mass().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64, lambda: f64, grad: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            t,
            lambda,
            grad_norm: grad,
            velocity_l2: 0.0,
            velocity_ck: 0.0,
            dist_to_base_ck: 0.0,
            max_ric: 0.0,
            dlambda_dt: 0.0,
        }
    }

    #[test]
    fn differences_are_exact_on_quadratics() {
        let ts = [0.0, 0.1, 0.25, 0.3, 0.7];
        let mut recs: Vec<_> = ts.iter().map(|&t| record(t, 1.0 + 2.0 * t - 3.0 * t * t, 0.0)).collect();
        fill_dlambda_dt(&mut recs);
        for r in &recs {
            assert!((r.dlambda_dt - (2.0 - 6.0 * r.t)).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_series_is_exact() {
        let mut recs: Vec<_> = (0..5).map(|k| record(k as f64, 0.0, 0.0)).collect();
        fill_dlambda_dt(&mut recs);
        let rep = monotonicity_report(&recs, 1e-14).unwrap();
        assert!(rep.decreases.is_empty());
        assert_eq!(rep.max_relative_mismatch, 0.0);
        assert_eq!(rep.compared, 0);
        let ev = evolution_inequality_check(&recs, 2, 1e-8).unwrap();
        assert!(ev.violations.is_empty());
    }

    #[test]
    fn reversed_series_flags_every_step() {
        let mut recs: Vec<_> = (0..6).map(|k| record(k as f64 * 0.1, -(-(k as f64)).exp(), 0.1)).collect();
        let lambdas: Vec<f64> = recs.iter().rev().map(|r| r.lambda).collect();
        for (r, l) in recs.iter_mut().zip(lambdas) {
            r.lambda = l;
        }
        fill_dlambda_dt(&mut recs);
        let rep = monotonicity_report(&recs, 1e-14).unwrap();
        assert_eq!(rep.decreases, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn consistent_series_compares_the_central_half() {
        // lambda = t^2 with 2 grad^2 = 2t.
        let mut recs: Vec<_> = (0..=20).map(|k| {
            let t = k as f64 * 0.1;
            record(t, t * t, t.sqrt())
        }).collect();
        fill_dlambda_dt(&mut recs);
        let rep = monotonicity_report(&recs, 1e-14).unwrap();
        assert!(rep.decreases.is_empty());
        assert!(rep.max_relative_mismatch < 1e-12);
        assert!((rep.window.0 - 0.55).abs() < 1e-12 && (rep.window.1 - 1.45).abs() < 1e-12);
        assert_eq!(rep.compared, 9);
    }

    #[test]
    fn evolution_counterexample() {
        let recs = vec![record(0.0, -1.0, 0.0), record(1.0, -1.0, 0.0), record(2.0, -1.0, 0.0)];
        let ev = evolution_inequality_check(&recs, 2, 1e-8).unwrap();
        assert_eq!(ev.violations, vec![1]);
    }

    #[test]
    fn lojasiewicz_recovers_exact_power() {
        let samples: Vec<(f64, f64)> = (1..30)
            .map(|k| {
                let l = -(10f64).powf(-(k as f64) * 0.3);
                (l, l.abs().powf(0.5))
            })
            .collect();
        let rep = lojasiewicz_report(&samples, 0.5).unwrap();
        assert!((rep.theta_fit - 0.5).abs() < 1e-10);
        assert!((rep.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(rep.violations, 0);
        assert!(matches!(
            lojasiewicz_report(&samples[..5], 0.5),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn travel_of_constant_velocity() {
        let recs: Vec<_> = (0..4)
            .map(|k| DiagnosticsRecord {
                velocity_ck: 2.5,
                velocity_l2: 1.0,
                ..record(k as f64 * 0.5, -0.1, 0.0)
            })
            .collect();
        let rep = interpolation_and_travel(&recs, 0.1, 0.5).unwrap();
        assert_eq!(rep.travel, 2.5 * 1.5);
        assert_eq!(rep.c_interp, 2.5);
        assert!((rep.sigma - 0.45).abs() < 1e-15);
    }
}
