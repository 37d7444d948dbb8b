use fedrewind::data::make_blobs;
use fedrewind::nn::{
    accuracy, average_params, forward, init_model, loss_and_grad, train, train_counted, ArchSpec,
    Batch, ModelParams, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(arch: ArchSpec, rng: &mut ChaCha8Rng) -> ModelParams {
    let theta = (0..arch.parameter_count())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    ModelParams::from_theta(arch, theta).unwrap()
}

fn random_batch(arch: &ArchSpec, n: usize, rng: &mut ChaCha8Rng) -> Batch {
    let x = (0..n * arch.input_dim)
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let y = (0..n).map(|_| rng.gen_range(0..arch.num_classes)).collect();
    Batch::new(x, y, arch.input_dim).unwrap()
}

/// Naive forward pass straight from the documented parameter layout.
fn oracle_logits(model: &ModelParams, batch: &Batch) -> Vec<Vec<f64>> {
    let a = model.arch();
    let t = model.theta();
    let (d, h, c) = (a.input_dim, a.hidden_dim, a.num_classes);
    let x = |r: usize, k: usize| batch.features()[r * d + k];
    (0..batch.len())
        .map(|r| {
            if h == 0 {
                (0..c)
                    .map(|o| {
                        let mut s = t[d * c + o];
                        for k in 0..d {
                            s += x(r, k) * t[k * c + o];
                        }
                        s
                    })
                    .collect()
            } else {
                let hidden: Vec<f64> = (0..h)
                    .map(|u| {
                        let mut s = t[d * h + u];
                        for k in 0..d {
                            s += x(r, k) * t[k * h + u];
                        }
                        s.max(0.0)
                    })
                    .collect();
                let w2 = d * h + h;
                (0..c)
                    .map(|o| {
                        let mut s = t[w2 + h * c + o];
                        for u in 0..h {
                            s += hidden[u] * t[w2 + u * c + o];
                        }
                        s
                    })
                    .collect()
            }
        })
        .collect()
}

#[test]
fn forward_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for arch in [
        ArchSpec::new(7, 0, 4).unwrap(),
        ArchSpec::new(9, 6, 3).unwrap(),
    ] {
        for _ in 0..5 {
            let m = random_model(arch, &mut rng);
            let b = random_batch(&arch, 13, &mut rng);
            let got = forward(&m, &b).unwrap();
            for (r, want) in oracle_logits(&m, &b).iter().enumerate() {
                for (g, w) in got.row(r).iter().zip(want) {
                    assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
                }
            }
        }
    }
}

fn loss_only(model: &ModelParams, batch: &Batch) -> f64 {
    loss_and_grad(model, batch).unwrap().0
}

#[test]
fn backprop_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    for arch in [
        ArchSpec::new(6, 0, 3).unwrap(),
        ArchSpec::new(6, 5, 4).unwrap(),
    ] {
        for _ in 0..10 {
            let m = random_model(arch, &mut rng);
            let b = random_batch(&arch, 8, &mut rng);
            let (_, grad) = loss_and_grad(&m, &b).unwrap();
            for _ in 0..20 {
                let k = rng.gen_range(0..arch.parameter_count());
                let mut plus = m.theta().to_vec();
                let mut minus = m.theta().to_vec();
                plus[k] += h;
                minus[k] -= h;
                let fd = (loss_only(&ModelParams::from_theta(arch, plus).unwrap(), &b)
                    - loss_only(&ModelParams::from_theta(arch, minus).unwrap(), &b))
                    / (2.0 * h);
                let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-8);
                assert!(
                    rel < 1e-4 || (grad[k] - fd).abs() < 1e-9,
                    "coord {k}: {} vs {fd}",
                    grad[k]
                );
            }
        }
    }
}

#[test]
fn zero_parameters_give_ln_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in [2, 3, 10] {
        let arch = ArchSpec::new(5, 4, c).unwrap();
        let b = random_batch(&arch, 17, &mut rng);
        let loss = loss_only(&ModelParams::zeros(arch), &b);
        assert!((loss - (c as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn duplicating_samples_keeps_loss_and_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let arch = ArchSpec::new(4, 3, 3).unwrap();
    let m = random_model(arch, &mut rng);
    let b = random_batch(&arch, 6, &mut rng);
    let mut x = b.features().to_vec();
    x.extend_from_slice(b.features());
    let mut y = b.labels().to_vec();
    y.extend_from_slice(b.labels());
    let doubled = Batch::new(x, y, 4).unwrap();
    let (l1, g1) = loss_and_grad(&m, &b).unwrap();
    let (l2, g2) = loss_and_grad(&m, &doubled).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_full_batch_step_is_gradient_step() {
    let ds = make_blobs(3, 4, 10, 0.2, 5).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let view = ds.view(&all);
    let arch = ArchSpec::new(4, 0, 3).unwrap();
    let m = init_model(arch, 8).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.3,
        batch_size: 64,
        shuffle_seed: 1,
    };
    let (stepped, steps) = train_counted(&m, &view, 1, &cfg).unwrap();
    assert_eq!(steps, 1);
    // Full batch: the shuffle only permutes rows, so compare against the unshuffled gradient.
    let (_, grad) = loss_and_grad(&m, &Batch::from_view(&view)).unwrap();
    for ((new, old), g) in stepped.theta().iter().zip(m.theta()).zip(&grad) {
        assert!((new - (old - 0.3 * g)).abs() < 1e-12);
    }
}

#[test]
fn zero_epochs_is_identity_and_input_untouched() {
    let ds = make_blobs(2, 3, 10, 0.1, 0).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let m = init_model(ArchSpec::new(3, 4, 2).unwrap(), 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 4,
        shuffle_seed: 0,
    };
    assert_eq!(train(&m, &ds.view(&all), 0, &cfg).unwrap(), m);
    let copy = m.clone();
    let trained = train(&m, &ds.view(&all), 2, &cfg).unwrap();
    assert_eq!(m, copy);
    assert_ne!(trained, m);
}

#[test]
fn step_count_is_epochs_times_batches() {
    let ds = make_blobs(2, 3, 25, 0.1, 0).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let m = init_model(ArchSpec::new(3, 0, 2).unwrap(), 1).unwrap();
    for (batch, epochs) in [(7, 3), (50, 2), (64, 1), (1, 2)] {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: batch,
            shuffle_seed: 0,
        };
        let (_, steps) = train_counted(&m, &ds.view(&all), epochs, &cfg).unwrap();
        assert_eq!(steps, epochs * 50usize.div_ceil(batch));
    }
}

#[test]
fn separable_blobs_reach_high_training_accuracy() {
    let ds = make_blobs(2, 2, 50, 0.1, 11).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let view = ds.view(&all);
    let m = init_model(ArchSpec::new(2, 0, 2).unwrap(), 3).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.5,
        batch_size: 16,
        shuffle_seed: 4,
    };
    let trained = train(&m, &view, 50, &cfg).unwrap();
    let acc = accuracy(&trained, &view).unwrap();
    assert!(acc >= 0.99, "train accuracy {acc}");
    let mlp = init_model(ArchSpec::new(2, 8, 2).unwrap(), 3).unwrap();
    assert!(accuracy(&train(&mlp, &view, 50, &cfg).unwrap(), &view).unwrap() >= 0.95);
}

#[test]
fn small_steps_do_not_increase_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..100 {
        let arch = if trial % 2 == 0 {
            ArchSpec::new(5, 0, 3).unwrap()
        } else {
            ArchSpec::new(5, 4, 3).unwrap()
        };
        let m = random_model(arch, &mut rng);
        let b = random_batch(&arch, 10, &mut rng);
        let (loss, grad) = loss_and_grad(&m, &b).unwrap();
        let theta: Vec<f64> = m
            .theta()
            .iter()
            .zip(&grad)
            .map(|(t, g)| t - 1e-4 * g)
            .collect();
        let after = loss_only(&ModelParams::from_theta(arch, theta).unwrap(), &b);
        assert!(after <= loss, "trial {trial}: {after} > {loss}");
    }
}

#[test]
fn average_matches_scalar_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let arch = ArchSpec::new(6, 3, 4).unwrap();
    let models: Vec<ModelParams> = (0..5).map(|_| random_model(arch, &mut rng)).collect();
    let avg = average_params(&models).unwrap();
    for k in 0..arch.parameter_count() {
        let mut s = 0.0;
        for m in &models {
            s += m.theta()[k];
        }
        assert!((avg.theta()[k] - s / 5.0).abs() < 1e-12);
    }
}

#[test]
fn accuracy_matches_per_sample_loop() {
    let ds = make_blobs(4, 5, 30, 0.3, 1).unwrap();
    let idx: Vec<usize> = (0..ds.len()).step_by(3).collect();
    let view = ds.view(&idx);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = random_model(ArchSpec::new(5, 6, 4).unwrap(), &mut rng);
    let mut correct = 0;
    for p in 0..view.len() {
        let b = Batch::new(view.row(p).to_vec(), vec![view.label(p)], 5).unwrap();
        let logits = forward(&m, &b).unwrap();
        let row = logits.row(0);
        let mut best = 0;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        correct += usize::from(best == view.label(p));
    }
    assert_eq!(
        accuracy(&m, &view).unwrap(),
        correct as f64 / view.len() as f64
    );
}

#[test]
fn zero_model_on_balanced_two_class_set_is_half() {
    let ds = make_blobs(2, 3, 5, 0.1, 0).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let m = ModelParams::zeros(ArchSpec::new(3, 2, 2).unwrap());
    assert_eq!(accuracy(&m, &ds.view(&all)).unwrap(), 0.5);
}

#[test]
fn perfect_model_scores_one() {
    // One-hot features with identity weights classify every sample correctly.
    let arch = ArchSpec::new(2, 0, 2).unwrap();
    let feats: Vec<f64> = (0..10)
        .flat_map(|i| if i % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect();
    let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
    let ds = fedrewind::data::Dataset::new("onehot", feats, labels, 2, 2).unwrap();
    let all: Vec<usize> = (0..10).collect();
    let m = ModelParams::from_theta(arch, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(accuracy(&m, &ds.view(&all)).unwrap(), 1.0);
    assert!(accuracy(&m, &ds.view(&[])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_training_equals_single_call(e1 in 0usize..4, e2 in 0usize..4, seed in any::<u64>(), batch in 1usize..20) {
        let ds = make_blobs(3, 4, 12, 0.2, 3).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let view = ds.view(&all);
        let m = init_model(ArchSpec::new(4, 5, 3).unwrap(), seed).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, batch_size: batch, shuffle_seed: seed };
        let split = train(&train(&m, &view, e1, &cfg).unwrap(), &view, e2, &cfg.advanced(e1)).unwrap();
        prop_assert_eq!(split, train(&m, &view, e1 + e2, &cfg).unwrap());
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>()) {
        let ds = make_blobs(2, 3, 10, 0.2, 1).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let m = init_model(ArchSpec::new(3, 4, 2).unwrap(), seed).unwrap();
        let cfg = TrainConfig { learning_rate: 0.1, batch_size: 3, shuffle_seed: seed };
        prop_assert_eq!(train(&m, &ds.view(&all), 2, &cfg).unwrap(), train(&m, &ds.view(&all), 2, &cfg).unwrap());
    }

    #[test]
    fn average_is_permutation_invariant(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = ArchSpec::new(3, 2, 2).unwrap();
        let models: Vec<ModelParams> = (0..n).map(|_| random_model(arch, &mut rng)).collect();
        let mut shuffled = models.clone();
        shuffled.reverse();
        shuffled.rotate_left(seed as usize % n);
        let a = average_params(&models).unwrap();
        let b = average_params(&shuffled).unwrap();
        for (x, y) in a.theta().iter().zip(b.theta()) {
            prop_assert!((x - y).abs() < 1e-15);
        }
    }
}
