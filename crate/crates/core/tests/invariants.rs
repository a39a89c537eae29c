use std::collections::BTreeSet;

use probekit_core::data::RawTable;
use probekit_core::synth::joint::smoothed_mi;
use probekit_core::synth::paths::allocate;
use probekit_core::sample::from_fn;
use probekit_core::synth::{
    extract_paths, fit_surrogate, generate_for_paths, CartParams, Cell, Table,
};
use probekit_core::testers::expr::GroupExpr;
use probekit_core::testers::metrics::{classification_scores, group_metrics, rmse_gain};
use probekit_core::testers::text::{apply_noise, apply_typo, undo_typo};
use probekit_core::testers::timeseries::{make_windows, transform_series, MetamorphicSpec, SeriesWindow, TransformKind};
use probekit_core::{JointModel, JointModel32, Prediction, Sample};
use proptest::prelude::*;
use serde_json::json;

fn raw_table(rows: &[(u8, f64, u8)]) -> RawTable {
    RawTable {
        headers: vec!["g".into(), "x".into(), "h".into()],
        rows: rows
            .iter()
            .map(|(g, x, h)| vec![format!("g{g}"), format!("{x:.3}"), format!("h{h}")])
            .collect(),
    }
}

fn window(values: &[f64], horizon: usize) -> SeriesWindow {
    let points: Vec<(i64, f64)> = values.iter().enumerate().map(|(i, v)| (i as i64 * 60, *v)).collect();
    let split = points.len() - horizon;
    SeriesWindow {
        history: points[..split].to_vec(),
        horizon: points[split..].to_vec(),
    }
}

proptest! {
    #[test]
    fn swapping_groups_inverts_di_and_negates_parity(
        mt in 1usize..200, jt in 1usize..200, mf_frac in 0.01f64..1.0, jf_frac in 0.01f64..1.0,
    ) {
        let mf = ((mt as f64 * mf_frac).ceil() as usize).clamp(1, mt);
        let jf = ((jt as f64 * jf_frac).ceil() as usize).clamp(1, jt);
        let a = group_metrics::<f64>(mf, mt, jf, jt).unwrap();
        let b = group_metrics::<f64>(jf, jt, mf, mt).unwrap();
        prop_assert!((a.disparate_impact * b.disparate_impact - 1.0).abs() < 1e-12);
        prop_assert!((a.demographic_parity + b.demographic_parity).abs() < 1e-12);
        prop_assert!((a.disparate_impact - (mf as f64 / mt as f64) / (jf as f64 / jt as f64)).abs() < 1e-12);
    }

    #[test]
    fn classification_scores_are_bounded(pairs in prop::collection::vec((0u8..4, 0u8..4), 1..60)) {
        let owned: Vec<(String, String)> = pairs.iter().map(|(g, p)| (format!("c{g}"), format!("c{p}"))).collect();
        let refs: Vec<(&str, &str)> = owned.iter().map(|(g, p)| (g.as_str(), p.as_str())).collect();
        let s = classification_scores::<f64>(&refs);
        for v in [s.accuracy, s.precision, s.recall, s.f_score] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let correct = pairs.iter().filter(|(g, p)| g == p).count() as f64 / pairs.len() as f64;
        prop_assert!((s.accuracy - correct).abs() < 1e-12);

        let perfect: Vec<(&str, &str)> = refs.iter().map(|(g, _)| (*g, *g)).collect();
        let s = classification_scores::<f64>(&perfect);
        prop_assert_eq!([s.accuracy, s.precision, s.recall, s.f_score], [1.0; 4]);
    }

    #[test]
    fn typos_are_deterministic_counted_and_reversible(text in "[a-zA-Z]{1,9}( [a-zA-Z]{1,9}){0,8}", level in 0usize..6, seed: u64) {
        let t = apply_typo(&text, level, seed);
        prop_assert_eq!(&t, &apply_typo(&text, level, seed));
        prop_assert_eq!(t.operations.len() + t.shortfall, level);
        prop_assert_eq!(undo_typo(&t).unwrap(), text);
    }

    #[test]
    fn noise_only_inserts_at_boundaries(text in "[a-z]{1,8}( [a-z]{1,8}){0,6}", level in 0usize..6, seed: u64) {
        let t = apply_noise(&text, level, seed);
        prop_assert_eq!(&t, &apply_noise(&text, level, seed));
        prop_assert_eq!(t.text.chars().count(), text.chars().count() + level);
        // Every original word survives as a substring of some noisy token.
        let tokens: Vec<&str> = t.text.split(' ').collect();
        for (word, token) in text.split(' ').zip(&tokens) {
            prop_assert!(token.contains(word), "{word:?} not inside {token:?}");
        }
    }

    #[test]
    fn shifts_move_every_point_by_one_constant(
        values in prop::collection::vec(-1e3f64..1e3, 6..40), min in -50.0f64..0.0, span in 0.0f64..100.0,
    ) {
        let w = window(&values, 3);
        for kind in [TransformKind::SmallLinear, TransformKind::LargeLinear] {
            let spec = MetamorphicSpec { kind, threshold: 0.1, training_min: min, training_max: min + span, seed: 0 };
            let t = transform_series(&w, &spec).unwrap();
            let c = t.history[0].1 - w.history[0].1;
            for (a, b) in w.history.iter().chain(&w.horizon).zip(t.history.iter().chain(&t.horizon)) {
                prop_assert_eq!(a.0, b.0);
                prop_assert!((b.1 - a.1 - c).abs() <= 1e-9 * (1.0 + a.1.abs()));
            }
            if kind == TransformKind::LargeLinear {
                prop_assert!((c - 10.0 * span).abs() <= 1e-9 * (1.0 + c.abs()));
            }
        }
    }

    #[test]
    fn reordering_permutes_history_only(values in prop::collection::vec(-1e3f64..1e3, 6..40), seed: u64) {
        let w = window(&values, 4);
        let spec = MetamorphicSpec { kind: TransformKind::Unordered, threshold: 0.1, training_min: 0.0, training_max: 1.0, seed };
        let t = transform_series(&w, &spec).unwrap();
        prop_assert_eq!(&t.horizon, &w.horizon);
        let mut a = w.history.clone();
        let mut b = t.history.clone();
        a.sort_by_key(|p| p.0);
        b.sort_by_key(|p| p.0);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn shifting_forecast_and_actuals_together_keeps_rmse(
        f in prop::collection::vec(-100f64..100.0, 1..12), noise in prop::collection::vec(-5f64..5.0, 12), c in -1e3f64..1e3,
    ) {
        let actual: Vec<f64> = f.iter().zip(&noise).map(|(x, n)| x + n).collect();
        let fs: Vec<f64> = f.iter().map(|x| x + c).collect();
        let a_s: Vec<f64> = actual.iter().map(|x| x + c).collect();
        let g = rmse_gain(&f, &fs, &actual, &a_s).unwrap();
        prop_assert!((g.rmse_original - g.rmse_transformed).abs() < 1e-6);
    }

    #[test]
    fn windows_are_contiguous_slices(n in 5usize..120, h in 1usize..10, k in 1usize..6, stride in 1usize..7, limit in 1usize..50) {
        let series: Vec<(i64, f64)> = (0..n).map(|i| (i as i64, i as f64)).collect();
        match make_windows(&series, h, k, stride, limit) {
            Err(_) => prop_assert!(n < h + k),
            Ok(ws) => {
                prop_assert_eq!(ws.len(), ((n - h - k) / stride + 1).min(limit));
                for (i, w) in ws.iter().enumerate() {
                    prop_assert_eq!(w.history.len(), h);
                    prop_assert_eq!(w.horizon.len(), k);
                    prop_assert_eq!(w.history[0].0, (i * stride) as i64);
                    prop_assert_eq!(w.horizon[0].0, (i * stride + h) as i64);
                }
            }
        }
    }

    #[test]
    fn smoothed_mi_is_symmetric_and_nonnegative(pairs in prop::collection::vec((0usize..4, 0usize..3), 1..200)) {
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let ab = smoothed_mi(&a, &b, 4, 3);
        prop_assert!(ab >= -1e-12);
        prop_assert!((ab - smoothed_mi(&b, &a, 3, 4)).abs() < 1e-12);
    }

    #[test]
    fn joint_model_samples_stay_in_support(
        rows in prop::collection::vec((0u8..3, -50f64..50.0, 0u8..2), 20..120), seed: u64,
    ) {
        let table: Table<f64> = Table::from_raw(&raw_table(&rows), &[]).unwrap();
        let model = JointModel::fit(&table, 5).unwrap();
        prop_assert_eq!(model.edges.len(), 2);
        prop_assert!(model.total_mi() >= -1e-12);
        for m in &model.marginals {
            prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let seen_g: BTreeSet<String> = rows.iter().map(|r| format!("g{}", r.0)).collect();
        let (lo, hi) = table.rows.iter().filter_map(|r| r[1].num()).fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)));
        let sample = model.sample(200, seed);
        prop_assert_eq!(&sample, &model.sample(200, seed));
        for row in &sample {
            for (j, m) in model.marginals.iter().enumerate() {
                prop_assert!(m.state_of(&row[j]).is_some());
            }
            match (&row[0], &row[1]) {
                (Cell::Cat(g), Cell::Num(x)) => {
                    prop_assert!(seen_g.contains(g));
                    prop_assert!(*x >= lo && *x <= hi, "{x} outside [{lo}, {hi}]");
                }
                other => prop_assert!(false, "unexpected cells {other:?}"),
            }
        }
    }

    #[test]
    fn allocation_is_even(n in 0usize..10_000, k in 1usize..64) {
        let a = allocate(n, k);
        prop_assert_eq!(a.iter().sum::<usize>(), n);
        prop_assert!(a.iter().max().unwrap() - a.iter().min().unwrap() <= 1);
    }

    #[test]
    fn negated_group_expression_complements(v in "[ABC]", w in "[ABC]", n in 0u8..4, k in 0u8..4) {
        let e = GroupExpr::parse(&format!("g == \"{v}\" and (n == {k} or g != '{w}')")).unwrap();
        for g in ["A", "B", "C"] {
            let row = json!({"g": g, "n": n}).as_object().unwrap().clone();
            prop_assert_eq!(e.negate().eval(&row), !e.eval(&row));
            let direct = g == v && (n == k || g != w);
            prop_assert_eq!(e.eval(&row), direct);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn path_guided_rows_satisfy_their_path(cutoff in -8f64..8.0, seed in 0u64..1000) {
        let rows: Vec<(u8, f64, u8)> = (0..400).map(|i| ((i % 3) as u8, -10.0 + (i as f64) * 0.05, (i % 2) as u8)).collect();
        let table: Table<f64> = Table::from_raw(&raw_table(&rows), &[]).unwrap();
        let model = from_fn(move |s: &Sample| {
            let x = s.as_row().and_then(|r| r["x"].as_f64()).unwrap_or(0.0);
            let g = s.as_row().and_then(|r| r["g"].as_str().map(str::to_string)).unwrap_or_default();
            Ok(Prediction::label(if x > cutoff || g == "g1" { "yes" } else { "no" }))
        });
        let params = CartParams { seed, ..CartParams::default() };
        let tree = fit_surrogate(&table.schema, &table.rows, &model, params).unwrap();
        let paths = extract_paths(&tree);
        let joint = JointModel::fit(&table, 10).unwrap();
        let out = generate_for_paths(&paths, &joint, 120, seed).unwrap();
        prop_assert_eq!(out.rows.len(), 120);
        for g in out.rows.iter().filter(|g| !g.fallback) {
            let path = paths.iter().find(|p| p.leaf == g.leaf).unwrap();
            prop_assert!(path.satisfied_by(&table.schema, &g.row));
        }
    }
}

#[test]
fn single_precision_instantiation_fits_and_samples() {
    let rows: Vec<(u8, f64, u8)> = (0..60).map(|i| ((i % 3) as u8, i as f64 / 7.0, (i % 2) as u8)).collect();
    let table: Table<f32> = Table::from_raw(&raw_table(&rows), &[]).unwrap();
    let model = JointModel32::fit(&table, 4).unwrap();
    let sample = model.sample(50, 1);
    assert_eq!(sample.len(), 50);
    assert!(sample.iter().all(|r| r.len() == 3));
    assert!(model.total_mi() >= 0.0);
}
