use evmcnn::cnn::{train, Model, TrainConfig};
use evmcnn::featex::{FeatureImage, Planes};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Feature images whose rows carry a sinusoid at the label's frequency.
fn pulse_set(n: usize, seed: u64) -> Vec<(FeatureImage, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let bpm: f64 = rng.random_range(60.0..120.0);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            let mut p = Planes::zeros(25, 25);
            for c in 0..3 {
                for r in 0..25 {
                    for t in 0..25 {
                        let v = (2.0 * PI * bpm / 60.0 * t as f64 / 25.0 + phase).sin() * (c + 1) as f64;
                        p.set(c, r, t, v + rng.random_range(-0.05..0.05));
                    }
                }
            }
            (p, bpm)
        })
        .collect()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = pulse_set(30, 1);
    let cfg = TrainConfig { base_lr: 0.0, max_iterations: 5, val_interval: 5, ..TrainConfig::default() };
    let init = Model::table_one(2);
    let out = train(init.clone(), &data, &cfg).unwrap();
    for ((na, a), (_, b)) in init.named_params().iter().zip(out.final_model.named_params()) {
        assert_eq!(*a, b, "{na} changed");
    }
}

#[test]
fn same_seed_same_curves() {
    let data = pulse_set(40, 3);
    let cfg = TrainConfig { max_iterations: 20, val_interval: 10, seed: 9, ..TrainConfig::default() };
    let a = train(Model::table_one(9), &data, &cfg).unwrap();
    let b = train(Model::table_one(9), &data, &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.final_model, b.final_model);
}

#[test]
fn empty_dataset_rejected() {
    assert!(train(Model::table_one(0), &[], &TrainConfig::default()).is_err());
}

#[test]
fn loss_falls_tenfold_in_2000_iterations() {
    let data = pulse_set(200, 7);
    let cfg = TrainConfig { max_iterations: 2000, val_interval: 500, seed: 7, ..TrainConfig::default() };
    let out = train(Model::table_one(7), &data, &cfg).unwrap();
    let mean = |rows: &[evmcnn::cnn::TrainLogRow]| rows.iter().map(|r| r.train_loss).sum::<f64>() / rows.len() as f64;
    let initial = out.log[0].train_loss;
    let last = mean(&out.log[out.log.len() - 100..]);
    assert!(last < initial / 10.0, "initial {initial:.5}, final {last:.5}");
}
