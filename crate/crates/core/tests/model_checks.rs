mod common;

use adprog::allpairs::{Mode, TrainingMatrix, TransformReport};
use adprog::cohort::{Diagnosis, FeatureGroup};
use adprog::model::{deserialize, fit, predict_proba, serialize, MlpHyperparams, Scaler, Solver};
use adprog::seed;
use common::{max_gradient_error, random_batch, random_model};
use ndarray::Array2;
use rand::Rng;

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = seed::rng(2024);
    for trial in 0..24 {
        let depth = 1 + trial % 2;
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(3..=32)).collect();
        let n_in = rng.random_range(2..=10);
        let alpha = if trial % 3 == 0 { 0.0 } else { rng.random_range(0.0..0.1) };
        let model = random_model(&mut rng, n_in, hidden.clone(), alpha);
        // redraw until no ReLU sits within a step of its kink
        let (x, y) = loop {
            let n = rng.random_range(1..=16);
            let (x, y) = random_batch(&mut rng, n, n_in);
            if common::min_hidden_margin(&model, &x) > 1e-3 {
                break (x, y);
            }
        };
        let err = max_gradient_error(&model, &x, &y, 1e-5);
        assert!(err < 1e-4, "trial {trial} hidden {hidden:?}: relative error {err:e}");
    }
}

fn blobs(n: usize, s: u64) -> TrainingMatrix {
    let centers = [(0.0, 0.0), (3.0, 0.0), (1.5, 2.5)];
    let mut rng = seed::rng(s);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 3;
        x[[i, 0]] = centers[k].0 + rng.random_range(-1.5..1.5);
        x[[i, 1]] = centers[k].1 + rng.random_range(-1.5..1.5);
        y.push(Diagnosis::ALL[k]);
    }
    TrainingMatrix {
        x,
        y,
        column_names: vec!["u".into(), "v".into()],
        provenance: Vec::new(),
        group: FeatureGroup::custom("blobs", Vec::new()),
        mode: Mode::Pairs,
        report: TransformReport::default(),
    }
}

#[test]
fn full_batch_descent_never_raises_the_loss() {
    let m = blobs(90, 5);
    let hp = MlpHyperparams {
        hidden_sizes: vec![8],
        learning_rate: 1e-4,
        batch_size: m.n_rows(),
        max_epochs: 50,
        solver: Solver::Sgd,
        tol: 0.0,
        n_iter_no_change: 1000,
        seed: 3,
        ..MlpHyperparams::default()
    };
    let model = fit(&m, &hp).unwrap();
    assert_eq!(model.loss_curve.len(), 50);
    for w in model.loss_curve.windows(2) {
        assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
    }
}

#[test]
fn probabilities_sum_to_one() {
    let mut rng = seed::rng(9);
    for _ in 0..10 {
        let width = rng.random_range(3..20);
        let model = random_model(&mut rng, 5, vec![width], 0.0);
        let x = Array2::from_shape_simple_fn((50, 5), || rng.random_range(-1e3..1e3));
        let p = predict_proba(&model, x.view()).unwrap();
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn scaler_standardizes_training_columns() {
    let mut rng = seed::rng(4);
    let mut x = Array2::from_shape_simple_fn((200, 4), || rng.random_range(-50.0..300.0));
    x.column_mut(3).fill(7.0);
    let s = Scaler::fit(x.view());
    let z = s.transform(x.view());
    for c in 0..3 {
        let col = z.column(c);
        let mu = col.mean().unwrap();
        let sd = (col.mapv(|v| (v - mu) * (v - mu)).mean().unwrap()).sqrt();
        assert!(mu.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
    }
    assert_eq!(s.sd[3], 1.0);
}

#[test]
fn fixture_blob_reproduces_reference_outputs() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let model = deserialize(&std::fs::read(dir.join("mlp_g8_pairs.json")).unwrap()).unwrap();
    let expected: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("mlp_g8_pairs_expected.json")).unwrap()).unwrap();
    let rows = |key: &str| -> Vec<Vec<f64>> { serde_json::from_value(expected[key].clone()).unwrap() };
    let inputs = rows("inputs");
    let x = Array2::from_shape_vec((inputs.len(), inputs[0].len()), inputs.concat()).unwrap();
    let p = predict_proba(&model, x.view()).unwrap();
    for (got, want) in p.rows().into_iter().zip(rows("probs")) {
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-12, "{} vs {}", got[k], want[k]);
        }
    }
    // round trip is lossless
    let again = deserialize(&serialize(&model).unwrap()).unwrap();
    assert_eq!(again, model);
}

#[test]
fn training_is_seed_deterministic() {
    let m = blobs(60, 1);
    let hp = MlpHyperparams {
        hidden_sizes: vec![6],
        max_epochs: 15,
        seed: 8,
        ..MlpHyperparams::default()
    };
    assert_eq!(serialize(&fit(&m, &hp).unwrap()).unwrap(), serialize(&fit(&m, &hp).unwrap()).unwrap());
}
