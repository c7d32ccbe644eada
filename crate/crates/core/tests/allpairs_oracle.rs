mod common;

use adprog::allpairs::{transform_mode, transform_pairs, transform_triplets, Mode};
use adprog::seed;
use common::{choose, g8, matrix_rows, oracle_rows, random_cohort};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pairs_match_nested_loops(s in any::<u64>(), p in 0.0f64..0.5) {
        let records = random_cohort(&mut seed::rng(s), 8, 6, p);
        let m = transform_pairs(&records, &g8()).unwrap();
        prop_assert_eq!(matrix_rows(&m), oracle_rows(&records, Mode::Pairs));
    }

    #[test]
    fn triplets_match_nested_loops(s in any::<u64>(), p in 0.0f64..0.5) {
        let records = random_cohort(&mut seed::rng(s), 8, 6, p);
        let m = transform_triplets(&records, &g8()).unwrap();
        prop_assert_eq!(matrix_rows(&m), oracle_rows(&records, Mode::Triplets));
    }

    #[test]
    fn complete_data_counts(s in any::<u64>()) {
        let records = random_cohort(&mut seed::rng(s), 8, 6, 0.0);
        for (mode, k) in [(Mode::Pairs, 2), (Mode::Triplets, 3)] {
            let m = transform_mode(&records, &g8(), mode).unwrap();
            let expected: usize = records.iter().map(|r| choose(r.len(), k)).sum();
            prop_assert_eq!(m.n_rows(), expected);
            prop_assert_eq!(m.report.candidates, expected);
        }
    }

    #[test]
    fn report_accounts_for_every_candidate(s in any::<u64>(), p in 0.0f64..0.6) {
        let records = random_cohort(&mut seed::rng(s), 8, 6, p);
        for (mode, k) in [(Mode::Pairs, 2), (Mode::Triplets, 3)] {
            let m = transform_mode(&records, &g8(), mode).unwrap();
            let r = m.report;
            prop_assert_eq!(r.candidates, records.iter().map(|x| choose(x.len(), k)).sum::<usize>());
            prop_assert_eq!(r.emitted + r.missing_target + r.unusable_source, r.candidates);
            prop_assert_eq!(r.emitted, m.n_rows());
        }
    }

    #[test]
    fn provenance_points_at_ordered_exams(s in any::<u64>()) {
        let records = random_cohort(&mut seed::rng(s), 6, 6, 0.2);
        let m = transform_triplets(&records, &g8()).unwrap();
        for (p, dx) in m.provenance.iter().zip(&m.y) {
            let r = records.iter().find(|r| r.patient_id() == p.patient_id).unwrap();
            prop_assert!(p.sources[0] < p.sources[1] && p.sources[1] < p.target);
            prop_assert_eq!(r.exams()[p.target].diagnosis, Some(*dx));
        }
    }
}

#[test]
fn time_column_is_elapsed_months() {
    let records = random_cohort(&mut seed::rng(11), 4, 5, 0.0);
    let m = transform_pairs(&records, &g8()).unwrap();
    for (row, p) in m.x.rows().into_iter().zip(&m.provenance) {
        let r = records.iter().find(|r| r.patient_id() == p.patient_id).unwrap();
        let days = (r.exams()[p.target].date - r.exams()[p.sources[0]].date).num_days();
        assert_eq!(row[0], days as f64 / 30.4375);
        assert!(row[0] > 0.0);
    }
}
