use std::collections::HashMap;

use proptest::prelude::*;
use shape_synth::evaluate::{
    ci_coverage, composite_scores, mae, pearson_r, CompositeOptions, MetricRecord,
};

fn varied(v: &[f64]) -> bool {
    v.iter().any(|x| (x - v[0]).abs() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..60),
        a in 0.1f64..10.0,
        b in -50.0f64..50.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(varied(&x) && varied(&y));
        let r = pearson_r(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - pearson_r(&y, &x).unwrap()).abs() < 1e-12);
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((r - pearson_r(&xs, &y).unwrap()).abs() < 1e-9);
        let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        prop_assert!((r + pearson_r(&neg, &y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn mae_triangle_inequality(
        triples in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0, 0.0f64..100.0), 1..50),
    ) {
        let x: Vec<f64> = triples.iter().map(|t| t.0).collect();
        let y: Vec<f64> = triples.iter().map(|t| t.1).collect();
        let z: Vec<f64> = triples.iter().map(|t| t.2).collect();
        prop_assert!(mae(&x, &z).unwrap() <= mae(&x, &y).unwrap() + mae(&y, &z).unwrap() + 1e-9);
        prop_assert!(mae(&x, &x).unwrap() == 0.0);
    }

    #[test]
    fn widening_intervals_never_lowers_coverage(
        rows in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0, 0.0f64..10.0), 1..40),
        widen in 0.0f64..5.0,
    ) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("z{i}")).collect();
        let est: Vec<(&str, f64)> = ids.iter().zip(&rows).map(|(id, r)| (id.as_str(), r.0)).collect();
        let narrow: HashMap<&str, (f64, f64)> =
            ids.iter().zip(&rows).map(|(id, r)| (id.as_str(), (r.1 - r.2, r.1 + r.2))).collect();
        let wide: HashMap<&str, (f64, f64)> =
            narrow.iter().map(|(k, (lo, hi))| (*k, (lo - widen, hi + widen))).collect();
        let a = ci_coverage(&est, &narrow).unwrap();
        let b = ci_coverage(&est, &wide).unwrap();
        prop_assert!(b.fraction >= a.fraction);
        prop_assert!((0.0..=1.0).contains(&a.fraction));
    }

    #[test]
    fn grid_deviations_sum_to_zero(values in prop::collection::vec((0.0f64..1.0, 0.1f64..8.0, 0.0f64..1.0), 4..40)) {
        let metrics: Vec<MetricRecord> = values
            .iter()
            .enumerate()
            .map(|(i, (r, m, c))| MetricRecord {
                model: format!("m{}", i % 2),
                region: "x".into(),
                outcome: format!("o{}", i / 2),
                r: Some(*r),
                r2: Some(r * r),
                mae: Some(*m),
                ci_coverage: Some(*c),
                ci_covered: None,
                n: 10,
                excluded: 0,
            })
            .collect();
        let maes: Vec<f64> = values.iter().map(|v| v.1).collect();
        prop_assume!(varied(&maes));
        let opts = CompositeOptions { missing: shape_synth::evaluate::MissingPolicy::Skip, ..Default::default() };
        let report = composite_scores(&metrics, &opts).unwrap();
        let sums = report.deviations.iter().fold((0.0, 0.0, 0.0), |acc, d| (acc.0 + d.r_dev, acc.1 + d.mae_dev, acc.2 + d.ci_dev));
        prop_assert!(sums.0.abs() < 1e-9 && sums.1.abs() < 1e-9 && sums.2.abs() < 1e-9);
        let total: f64 = report.composites.iter().map(|c| c.score).sum();
        prop_assert!(total.abs() < 1e-9);
    }
}

#[test]
fn r_squared_and_zero_coverage() {
    let r: f64 = 0.731;
    assert_eq!((r * r * 1000.0).round() / 1000.0, 0.534);
    let ids: Vec<String> = (0..62).map(|i| format!("z{i}")).collect();
    let est: Vec<(&str, f64)> = ids.iter().map(|id| (id.as_str(), 9.0)).collect();
    let ci: HashMap<&str, (f64, f64)> = ids.iter().map(|id| (id.as_str(), (5.0, 8.9))).collect();
    let c = ci_coverage(&est, &ci).unwrap();
    assert_eq!((c.fraction, c.covered, c.n), (0.0, 0, 62));
}
