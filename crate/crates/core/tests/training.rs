use beamgrid::nn::{accuracy, build_saba_with, train, train_with_observer, Hyperparams, Network, Optimizer, Sample};
use beamgrid::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two Gaussian blobs in the plane, 25 per class.
fn blobs(seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..50)
        .map(|i| {
            let label = i % 2;
            let c = if label == 0 { -1.0 } else { 1.0 };
            Sample { input: vec![c + rng.random_range(-0.6..0.6), c + rng.random_range(-0.6..0.6)], aux: vec![], label }
        })
        .collect()
}

fn tiny_mlp(seed: u64) -> Network {
    build_saba_with(2, &[8, 8, 2], seed).unwrap()
}

fn hp(epochs: usize) -> Hyperparams {
    Hyperparams { learning_rate: 1e-2, batch_size: 8, epochs, seed: 42, ..Hyperparams::default() }
}

#[test]
fn tiny_mlp_overfits_toy_set() {
    let data = blobs(1);
    let mut net = tiny_mlp(3);
    let history = train(&mut net, &data, &[], &hp(200)).unwrap();
    assert!(accuracy(&net, &data).unwrap() >= 0.95);
    assert!(history.epochs.last().unwrap().train_accuracy >= 0.95);
    let loss = history.train_loss();
    assert!(loss[loss.len() - 1] < loss[0]);
}

#[test]
fn sgd_with_momentum_also_learns() {
    let data = blobs(2);
    let mut net = tiny_mlp(4);
    let h = Hyperparams { optimizer: Optimizer::Sgd { momentum: 0.9 }, learning_rate: 0.05, ..hp(100) };
    train(&mut net, &data, &[], &h).unwrap();
    assert!(accuracy(&net, &data).unwrap() >= 0.95);
}

#[test]
fn same_seed_gives_bitwise_identical_history() {
    let data = blobs(5);
    let val = blobs(6);
    let run = || {
        let mut net = tiny_mlp(9);
        let h = train(&mut net, &data, &val, &hp(15)).unwrap();
        (h, net)
    };
    let (h1, n1) = run();
    let (h2, n2) = run();
    assert_eq!(h1, h2);
    for (a, b) in h1.epochs.iter().zip(&h2.epochs) {
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
    }
    assert_eq!(n1, n2);
    assert_eq!(h1.val_accuracy().len(), 15);
}

#[test]
fn permutations_change_every_epoch() {
    let data = blobs(7);
    let mut net = tiny_mlp(1);
    let h = train(&mut net, &data, &[], &hp(5)).unwrap();
    for k in 0..4 {
        assert_ne!(h.epochs[k].permutation, h.epochs[k + 1].permutation, "epoch {k}");
    }
    for e in &h.epochs {
        let mut p = e.permutation.clone();
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}

#[test]
fn disabling_reshuffle_changes_the_history() {
    let data = blobs(8);
    let mut a = tiny_mlp(2);
    let mut b = tiny_mlp(2);
    let ha = train(&mut a, &data, &[], &hp(6)).unwrap();
    let hb = train(&mut b, &data, &[], &Hyperparams { shuffle_each_epoch: false, ..hp(6) }).unwrap();
    assert!(hb.epochs.windows(2).all(|w| w[0].permutation == w[1].permutation));
    assert_eq!(ha.epochs[0].permutation, hb.epochs[0].permutation);
    assert_eq!(ha.epochs[0].train_loss.to_bits(), hb.epochs[0].train_loss.to_bits());
    assert_ne!(ha.train_loss(), hb.train_loss());
    assert_ne!(a, b);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = blobs(9);
    let mut net = tiny_mlp(5);
    let before = net.clone();
    for opt in [Optimizer::default(), Optimizer::Sgd { momentum: 0.9 }] {
        train(&mut net, &data, &[], &Hyperparams { learning_rate: 0.0, optimizer: opt, ..hp(3) }).unwrap();
        assert_eq!(net, before);
    }
}

#[test]
fn observer_sees_every_epoch() {
    let data = blobs(10);
    let mut net = tiny_mlp(6);
    let mut seen = Vec::new();
    train_with_observer(&mut net, &data, &[], &hp(4), |e, _| {
        seen.push(e);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![0, 1, 2, 3]);
}

#[test]
fn training_errors() {
    let mut net = tiny_mlp(0);
    assert!(matches!(train(&mut net, &[], &[], &hp(1)), Err(Error::EmptyDataset)));
    let bad = vec![Sample { input: vec![0.0, 0.0], aux: vec![], label: 2 }];
    assert!(matches!(train(&mut net, &bad, &[], &hp(1)), Err(Error::Config(_))));
    let huge = vec![Sample { input: vec![f64::MAX, -f64::MAX], aux: vec![], label: 0 }; 4];
    assert!(matches!(train(&mut net, &huge, &[], &hp(1)), Err(Error::DivergenceDetected { epoch: 0, .. })));
}
