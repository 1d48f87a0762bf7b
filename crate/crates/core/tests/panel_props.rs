use gdfm::panel::{clean_outliers, read_csv, standardize, unstandardize, write_csv, Layout, Panel};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn panel_from(values: Vec<f64>, t: usize, n: usize) -> Panel<f64> {
    Panel::from_matrix(DMatrix::from_vec(t, n, values)).unwrap()
}

fn matrix(t: usize, n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, t * n)
}

proptest! {
    #[test]
    fn standardize_round_trips(values in matrix(30, 3)) {
        let raw = panel_from(values, 30, 3);
        prop_assume!(raw.values().column_iter().all(|c| c.variance() > 1e-6));
        let std = standardize(&raw).unwrap();
        let t = std.n_obs() as f64;
        for c in std.values().column_iter() {
            prop_assert!(c.mean().abs() < 1e-12);
            prop_assert!((c.norm_squared() / t - 1.0).abs() < 1e-12);
        }
        let back = unstandardize(&std);
        prop_assert!((back.values() - raw.values()).amax() < 1e-9);
    }

    #[test]
    fn outlier_cleaning_is_idempotent(
        values in matrix(40, 2),
        spike in 100.0f64..1e4,
        at in 0usize..40,
        threshold in 2.0f64..10.0,
    ) {
        let mut values = values;
        values[at] += spike;
        let raw = panel_from(values, 40, 2);
        let (once, _) = clean_outliers(&raw, threshold).unwrap();
        let (twice, report) = clean_outliers(&once, threshold).unwrap();
        prop_assert!(report.imputations.is_empty());
        prop_assert_eq!(once.values(), twice.values());
    }

    #[test]
    fn plain_csv_round_trips(values in matrix(12, 4)) {
        let raw = panel_from(values, 12, 4);
        let mut buf = Vec::new();
        write_csv(&raw, None, &mut buf).unwrap();
        let back = read_csv::<f64, _>(buf.as_slice(), Layout::Plain).unwrap().panel;
        prop_assert_eq!(back.values(), raw.values());
        prop_assert_eq!(back.series_ids(), raw.series_ids());
    }
}
