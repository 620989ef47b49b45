//! Structural invariants checked on random metrics and fields.

use std::f64::consts::PI;

use proptest::prelude::*;

use riccilab::diagnostics::{fill_dlambda_dt, DiagnosticsRecord};
use riccilab::flows::FlowState;
use riccilab::gauge::{pullback_metric, DiffeoMap, SliceProjector};
use riccilab::geometry::{inner_weighted, lichnerowicz_apply, norm_weighted, ricci, LichnerowiczVariant};
use riccilab::lab::io;
use riccilab::spectral::{lambda_of, SchrodingerOperator, DEFAULT_TOL};
use riccilab::{MetricField, ScalarField, SymTensorField, TorusGrid};

const N: usize = 8;

fn grid() -> TorusGrid {
    TorusGrid::new(&[N, N], &[1.0, 1.3]).unwrap()
}

/// Smooth random metric: a positive conformal factor times a constant SPD matrix.
fn metric(c: &[f64]) -> MetricField {
    let grid = grid();
    let u = ScalarField::from_fn(&grid, |x| {
        c[0] * (2.0 * PI * x[0]).sin() + c[1] * (2.0 * PI * x[1] / 1.3).cos() + c[2] * (2.0 * PI * (x[0] + x[1] / 1.3)).sin()
    });
    let (a, b) = (1.0 + c[3].abs(), 0.3 * c[4]);
    let data = (0..grid.node_count())
        .flat_map(|p| {
            let s = (2.0 * u.values[p]).exp();
            [s * a, s * b, s * (1.0 + c[5].abs())]
        })
        .collect();
    MetricField::new(SymTensorField::new(grid, data).unwrap()).unwrap()
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.15f64..0.15, 6)
}

fn nodal_values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

fn tensor(values: Vec<f64>) -> SymTensorField {
    SymTensorField::new(grid(), values).unwrap()
}

/// Symmetric field built from the lowest Fourier modes.
fn smooth_tensor(c: &[f64]) -> SymTensorField {
    SymTensorField::from_fn(&grid(), |x| {
        let (a, b) = (2.0 * PI * x[0], 2.0 * PI * x[1] / 1.3);
        (0..3)
            .map(|k| {
                let c = &c[4 * k..4 * k + 4];
                c[0] * a.sin() + c[1] * b.cos() + c[2] * (a + b).sin() + c[3] * (a - b).cos()
            })
            .collect()
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schrodinger_form_is_symmetric(c in coeffs(), u in nodal_values(N * N), v in nodal_values(N * N)) {
        let op = SchrodingerOperator::new(&metric(&c)).unwrap();
        let a = dot(&u, &op.weighted_apply(&v));
        let b = dot(&op.weighted_apply(&u), &v);
        let scale = dot(&u, &u).sqrt() * dot(&v, &v).sqrt() * op.weighted_apply(&u).iter().fold(1.0f64, |m, x| m.max(x.abs()));
        prop_assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
    }

    #[test]
    fn ricci_is_scale_invariant(c in coeffs(), s in 0.2f64..5.0) {
        let g = metric(&c);
        let r = ricci(&g).unwrap();
        let rs = ricci(&g.scaled(s).unwrap()).unwrap();
        let diff = r.sub(&rs).unwrap().max_abs();
        prop_assert!(diff <= 1e-11 * r.max_abs().max(1.0), "{diff}");
    }

    #[test]
    fn lambda_scales_inversely(c in coeffs(), s in 0.5f64..4.0) {
        let g = metric(&c);
        let a = lambda_of(&g, DEFAULT_TOL).unwrap().lambda;
        let b = lambda_of(&g.scaled(s).unwrap(), DEFAULT_TOL).unwrap().lambda;
        prop_assert!((b * s - a).abs() <= 1e-8 * a.abs().max(1e-6), "{a} vs {b}");
    }

    #[test]
    fn weighted_inner_product_is_symmetric_and_positive(
        c in coeffs(),
        a in nodal_values(3 * N * N),
        b in nodal_values(3 * N * N),
        f in nodal_values(N * N),
    ) {
        let g = metric(&c);
        let f = ScalarField::new(grid(), f).unwrap();
        let (a, b) = (tensor(a), tensor(b));
        let ab = inner_weighted(&a, &b, &g, Some(&f)).unwrap();
        let ba = inner_weighted(&b, &a, &g, Some(&f)).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-14 * ab.abs().max(1.0));
        let aa = inner_weighted(&a, &a, &g, Some(&f)).unwrap();
        prop_assert!(aa > 0.0);
        prop_assert!(ab.abs() <= aa.sqrt() * inner_weighted(&b, &b, &g, Some(&f)).unwrap().sqrt() * (1.0 + 1e-12));
    }

    #[test]
    fn pullback_commutes_with_scaling(c in coeffs(), shift in prop::collection::vec(-0.5f64..0.5, 2), s in 0.2f64..5.0) {
        let g = metric(&c);
        let phi = DiffeoMap::translation(&grid(), &shift);
        let a = pullback_metric(&phi, &g.scaled(s).unwrap()).unwrap();
        let b = pullback_metric(&phi, &g).unwrap().scaled(s).unwrap();
        let diff = a.tensor().sub(b.tensor()).unwrap().max_abs();
        prop_assert!(diff <= 1e-13 * s * g.tensor().max_abs(), "{diff}");
    }

    #[test]
    fn slice_projection_is_idempotent(c in coeffs(), h in prop::collection::vec(-1.0f64..1.0, 12)) {
        let g = metric(&c);
        let proj = SliceProjector::new(&g).unwrap();
        let (once, _) = proj.project(&smooth_tensor(&h)).unwrap();
        let (twice, _) = proj.project(&once).unwrap();
        let diff = norm_weighted(&twice.sub(&once).unwrap(), &g, None).unwrap();
        let size = norm_weighted(&once, &g, None).unwrap();
        prop_assert!(diff <= 1e-8 * size.max(1e-12), "{diff} vs {size}");
    }

    #[test]
    fn flat_slice_projection_handles_rough_fields(h in nodal_values(3 * N * N)) {
        let flat = MetricField::flat(&grid());
        let proj = SliceProjector::new(&flat).unwrap();
        let (once, _) = proj.project(&tensor(h)).unwrap();
        let (twice, _) = proj.project(&once).unwrap();
        let diff = norm_weighted(&twice.sub(&once).unwrap(), &flat, None).unwrap();
        let size = norm_weighted(&once, &flat, None).unwrap();
        prop_assert!(diff <= 1e-8 * size.max(1e-12), "{diff} vs {size}");
    }

    #[test]
    fn lichnerowicz_is_symmetric_at_flat(a in nodal_values(3 * N * N), b in nodal_values(3 * N * N)) {
        let flat = MetricField::flat(&grid());
        let (a, b) = (tensor(a), tensor(b));
        let la = lichnerowicz_apply(&a, &flat, LichnerowiczVariant::Lichnerowicz).unwrap();
        let lb = lichnerowicz_apply(&b, &flat, LichnerowiczVariant::Lichnerowicz).unwrap();
        let x = inner_weighted(&la, &b, &flat, None).unwrap();
        let y = inner_weighted(&a, &lb, &flat, None).unwrap();
        prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{x} vs {y}");
        prop_assert!(inner_weighted(&la, &a, &flat, None).unwrap() <= 1e-10);
    }

    #[test]
    fn snapshots_round_trip_bit_exact(c in coeffs(), t in -1e3f64..1e3) {
        let state = FlowState::new(t, metric(&c));
        let back = io::snapshot_parse(&io::snapshot_bytes(&state).unwrap()).unwrap();
        prop_assert_eq!(back.t.to_bits(), t.to_bits());
        prop_assert!(back.g.tensor().data.iter().zip(&state.g.tensor().data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn lambda_differences_exact_on_quadratics(
        steps in prop::collection::vec(0.01f64..1.0, 3..20),
        q in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let mut t = 0.0;
        let mut records = Vec::new();
        for dt in std::iter::once(0.0).chain(steps) {
            t += dt;
            records.push(DiagnosticsRecord {
                t,
                lambda: q[0] + q[1] * t + q[2] * t * t,
                grad_norm: 0.0,
                velocity_l2: 0.0,
                velocity_ck: 0.0,
                dist_to_base_ck: 0.0,
                max_ric: 0.0,
                dlambda_dt: 0.0,
            });
        }
        fill_dlambda_dt(&mut records);
        for r in &records {
            let exact = q[1] + 2.0 * q[2] * r.t;
            prop_assert!((r.dlambda_dt - exact).abs() <= 1e-9 * (1.0 + r.t * r.t), "{} vs {exact}", r.dlambda_dt);
        }
    }
}
