mod common;

use adprog::allpairs::{build_prediction_vector, transform_mode, Mode};
use adprog::cohort::{feature_group, months_between, Diagnosis, PatientRecord};
use adprog::eval::{
    cross_validate, evaluate_forward, forecast_monthly, forward_targets, grid_search, make_folds, random_splits,
    Experiment, ForwardTarget, Grid, GridProtocol, Grouping,
};
use adprog::ingest::split_tadpole;
use adprog::model::{fit, predict_proba, MlpHyperparams, MlpModel};
use adprog::seed;
use adprog::synth::{generate, CohortSpec};
use chrono::Days;
use ndarray::Array2;
use std::collections::BTreeSet;

fn cohort(n: usize, s: u64) -> Vec<PatientRecord> {
    generate(&CohortSpec {
        n_patients: n,
        seed: s,
        ..CohortSpec::default()
    })
    .unwrap()
}

fn quick_hp() -> MlpHyperparams {
    MlpHyperparams {
        hidden_sizes: vec![6],
        max_epochs: 8,
        ..MlpHyperparams::default()
    }
}

fn quick_model(records: &[PatientRecord], mode: Mode) -> MlpModel {
    let m = transform_mode(records, &feature_group("G8").unwrap(), mode).unwrap();
    fit(&m, &quick_hp()).unwrap()
}

fn late() -> BTreeSet<String> {
    BTreeSet::from(["ADNI2".to_string()])
}

#[test]
fn forward_probability_is_mean_over_last_three_visits() {
    let records = cohort(30, 1);
    let model = quick_model(&records, Mode::Pairs);
    let patient = records.iter().find(|r| r.len() >= 5).unwrap();
    let exams = patient.exams();
    let target_date = exams.last().unwrap().date + Days::new(400);
    let target = ForwardTarget {
        patient_id: patient.patient_id().into(),
        date: target_date,
        diagnosis: Diagnosis::Mci,
    };
    let report = evaluate_forward(&model, std::slice::from_ref(patient), std::slice::from_ref(&target)).unwrap();
    assert_eq!(report.samples.len(), 1);
    assert_eq!(report.samples[0].n_vectors, 3);

    let mut expected = [0.0; 3];
    for e in &exams[exams.len() - 3..] {
        let t = months_between(target_date, e.date).unwrap();
        let v = build_prediction_vector(e, t, &model.group, Mode::Pairs, None).unwrap();
        let p = predict_proba(&model, Array2::from_shape_vec((1, v.len()), v).unwrap().view()).unwrap();
        for k in 0..3 {
            expected[k] += p[[0, k]] / 3.0;
        }
    }
    for (got, want) in report.samples[0].probs.iter().zip(expected) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn forward_excludes_targets_not_after_the_sources() {
    let records = cohort(20, 2);
    let model = quick_model(&records, Mode::Pairs);
    let patient = &records[0];
    let last = patient.exams().last().unwrap().date;
    let target = ForwardTarget {
        patient_id: patient.patient_id().into(),
        date: last,
        diagnosis: Diagnosis::Nl,
    };
    let report = evaluate_forward(&model, std::slice::from_ref(patient), &[target]).unwrap();
    assert!(report.samples.is_empty());
    assert_eq!(report.excluded.len(), 1);
    assert!(report.mauc.is_none());
}

#[test]
fn forecast_has_one_row_per_month_and_normalized_probs() {
    let records = cohort(40, 3);
    for mode in [Mode::Pairs, Mode::Triplets] {
        let model = quick_model(&records, mode);
        let split = split_tadpole(&records, "ADNI1", &late());
        let table = forecast_monthly(&model, &split.lb2, 84).unwrap();
        let patients = table.patients();
        assert!(!patients.is_empty());
        assert_eq!(table.rows.len(), 84 * patients.len());
        for (i, row) in table.rows.iter().enumerate() {
            assert_eq!(row.month as usize, i % 84 + 1);
            assert!((row.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn patient_folds_never_share_patients() {
    let g = feature_group("G8").unwrap();
    for s in 0..10 {
        let records = common::random_cohort(&mut seed::rng(s), 8, 6, 0.1);
        let records: Vec<PatientRecord> = records
            .into_iter()
            .enumerate()
            .map(|(i, r)| PatientRecord::new(format!("Q{i}"), r.into_exams()).unwrap())
            .collect();
        if records.len() < 3 {
            continue;
        }
        for fold in make_folds(&records, &g, Mode::Pairs, 3, Grouping::Patient, s).unwrap() {
            let train: BTreeSet<&str> = fold.train.provenance.iter().map(|p| p.patient_id.as_str()).collect();
            let test: BTreeSet<&str> = fold.test.provenance.iter().map(|p| p.patient_id.as_str()).collect();
            assert!(train.is_disjoint(&test));
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let records = cohort(40, 4);
    let exp = Experiment {
        group: feature_group("G8").unwrap(),
        mode: Mode::Pairs,
        hp: quick_hp(),
    };
    let one = cross_validate(&records, &exp, 4, Grouping::Patient, 9, 1).unwrap();
    let many = cross_validate(&records, &exp, 4, Grouping::Patient, 9, 3).unwrap();
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&many).unwrap());

    let a = random_splits(&records, &exp, 4, 0.7, 9, 1).unwrap();
    let b = random_splits(&records, &exp, 4, 0.7, 9, 2).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn grid_counts_every_configuration_and_repeat() {
    let records = cohort(30, 5);
    let exp = Experiment {
        group: feature_group("G8").unwrap(),
        mode: Mode::Pairs,
        hp: MlpHyperparams {
            max_epochs: 2,
            ..quick_hp()
        },
    };
    let grid = Grid {
        alpha: vec![1e-4, 1e-2],
        learning_rate: vec![1e-3],
        hidden: vec![3, 5],
    };
    let report = grid_search(&records, &exp, &grid, 2, &GridProtocol::Split { train_fraction: 0.7 }, 1, 1).unwrap();
    assert_eq!(report.runs, 8);
    assert_eq!(report.entries.len(), 4);
    assert_eq!(report.entries[0].rank, 1);
}

#[test]
fn forward_targets_carry_no_measurements() {
    let records = cohort(30, 6);
    let split = split_tadpole(&records, "ADNI1", &late());
    let targets = forward_targets(&split.lb4);
    let expected: usize = split.lb4.iter().map(|r| r.exams().iter().filter(|e| e.diagnosis.is_some()).count()).sum();
    assert_eq!(targets.len(), expected);
    let ids: BTreeSet<&str> = split.lb2.iter().map(|r| r.patient_id()).collect();
    assert!(targets.iter().all(|t| ids.contains(t.patient_id.as_str())));
}
