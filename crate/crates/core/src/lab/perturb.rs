//! Seeded initial data near the flat metric.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{PerturbationConfig, PerturbationKind};
use crate::error::Result;
use crate::gauge::slice_project;
use crate::geometry::norm_ck_proxy;
use crate::grid::{MetricField, ScalarField, SymTensorField, TorusGrid};

/// Nonzero wave vectors with entries in `-k..=k` whose first nonzero entry is
/// positive, so that `k` and `-k` are not both present.
fn half_space_modes(dim: usize, k: usize) -> Vec<[i64; 3]> {
    let k = k as i64;
    let mut modes = Vec::new();
    let range = |a: usize| if a < dim { -k..=k } else { 0..=0 };
    for a in range(0) {
        for b in range(1) {
            for c in range(2) {
                let m = [a, b, c];
                match m.iter().find(|&&x| x != 0) {
                    Some(&first) if first > 0 => modes.push(m),
                    _ => {}
                }
            }
        }
    }
    modes
}

/// Random trigonometric sum over the band, mean zero, not yet normalized.
fn band_limited(grid: &TorusGrid, max_frequency: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = grid.dim();
    let periods = grid.periods();
    let terms: Vec<([i64; 3], f64, f64)> = half_space_modes(dim, max_frequency)
        .into_iter()
        .map(|m| (m, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    (0..grid.node_count())
        .map(|p| {
            let x = grid.position(p);
            terms
                .iter()
                .map(|(m, a, b)| {
                    let phase: f64 = (0..dim).map(|i| 2.0 * PI * m[i] as f64 * x[i] / periods[i]).sum();
                    a * phase.cos() + b * phase.sin()
                })
                .sum()
        })
        .collect()
}

/// Builds the initial metric for a run.
///
/// Conformal: `exp(2u) delta` with `max |u| = amplitude`. Tensor-slice: a random
/// symmetric field scaled to proxy norm `amplitude`, projected onto the
/// divergence-free slice at the flat metric and added to it.
pub fn make_perturbed_metric(
    grid: &TorusGrid,
    cfg: &PerturbationConfig,
    proxy_order: usize,
    seed: u64,
) -> Result<MetricField> {
    if cfg.amplitude == 0.0 {
        return Ok(MetricField::flat(grid));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match cfg.kind {
        PerturbationKind::Conformal => {
            let mut u = band_limited(grid, cfg.max_frequency, &mut rng);
            let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > 0.0 {
                u.iter_mut().for_each(|v| *v *= cfg.amplitude / peak);
            }
            MetricField::conformal(&ScalarField::new(grid.clone(), u)?)
        }
        PerturbationKind::TensorSlice => {
            let m = grid.sym_components();
            let comps: Vec<Vec<f64>> = (0..m).map(|_| band_limited(grid, cfg.max_frequency, &mut rng)).collect();
            let mut data = vec![0.0; grid.node_count() * m];
            for (c, comp) in comps.iter().enumerate() {
                for (p, v) in comp.iter().enumerate() {
                    data[p * m + c] = *v;
                }
            }
            let h = SymTensorField::new(grid.clone(), data)?;
            let norm = norm_ck_proxy(&h, proxy_order);
            let h = if norm > 0.0 { h.scaled(cfg.amplitude / norm) } else { h };
            let flat = MetricField::flat(grid);
            let (h_slice, _) = slice_project(&h, &flat)?;
            let g = flat.tensor().axpy(1.0, &h_slice)?;
            MetricField::new(g)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::divergence_norm;
    use crate::geometry::norm_weighted;

    fn cfg(kind: PerturbationKind, amplitude: f64) -> PerturbationConfig {
        PerturbationConfig {
            kind,
            amplitude,
            max_frequency: 2,
        }
    }

    #[test]
    fn mode_count() {
        assert_eq!(half_space_modes(2, 2).len(), 12);
        assert_eq!(half_space_modes(1, 2).len(), 2);
        assert_eq!(half_space_modes(3, 1).len(), 13);
    }

    #[test]
    fn zero_amplitude_is_flat() {
        let grid = TorusGrid::unit(2, 8).unwrap();
        for kind in [PerturbationKind::Conformal, PerturbationKind::TensorSlice] {
            let g = make_perturbed_metric(&grid, &cfg(kind, 0.0), 2, 3).unwrap();
            assert_eq!(g, MetricField::flat(&grid));
        }
    }

    #[test]
    fn conformal_amplitude_and_mean() {
        let grid = TorusGrid::unit(2, 16).unwrap();
        let g = make_perturbed_metric(&grid, &cfg(PerturbationKind::Conformal, 0.05), 2, 7).unwrap();
        let u: Vec<f64> = (0..grid.node_count()).map(|p| 0.5 * g.tensor().get(p, 0, 0).ln()).collect();
        let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.05).abs() < 1e-15);
        assert!(u.iter().sum::<f64>().abs() / (u.len() as f64) < 1e-15);
        let again = make_perturbed_metric(&grid, &cfg(PerturbationKind::Conformal, 0.05), 2, 7).unwrap();
        assert_eq!(g, again);
        let other = make_perturbed_metric(&grid, &cfg(PerturbationKind::Conformal, 0.05), 2, 8).unwrap();
        assert_ne!(g, other);
    }

    #[test]
    fn tensor_slice_is_divergence_free() {
        let grid = TorusGrid::unit(2, 16).unwrap();
        let g = make_perturbed_metric(&grid, &cfg(PerturbationKind::TensorSlice, 0.5), 2, 1).unwrap();
        let flat = MetricField::flat(&grid);
        let h = g.tensor().sub(flat.tensor()).unwrap();
        let div = divergence_norm(&h, &flat).unwrap();
        let size = norm_weighted(&h, &flat, None).unwrap();
        assert!(size > 0.0);
        assert!(div <= 1e-8 * size, "{div} vs {size}");
    }

    #[test]
    fn oversized_tensor_perturbation_breaks_spd() {
        let grid = TorusGrid::unit(2, 8).unwrap();
        let c = PerturbationConfig {
            kind: PerturbationKind::Conformal,
            amplitude: 0.05,
            max_frequency: 2,
        };
        assert!(make_perturbed_metric(&grid, &c, 2, 0).is_ok());
        let err = make_perturbed_metric(&grid, &cfg(PerturbationKind::TensorSlice, 1e4), 0, 0).unwrap_err();
        assert!(matches!(err, crate::Error::SpdViolation { .. }), "{err:?}");
    }
}
