use std::sync::Arc;

use sll_core::attack::*;
use sll_core::data::{gen_synthetic, ImageDataset, SyntheticSpec};
use sll_core::models;
use sll_core::nn::{loss, LayerSpec, Network, Optimizer, OptimizerConfig, Tensor};
use sll_core::protocol::SnapshotStore;
use sll_core::rng::Rng;
use sll_core::Error;

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn aux(n: usize, seed: u64) -> Arc<ImageDataset> {
    Arc::new(gen_synthetic(&SyntheticSpec::default(), n, &mut Rng::new(seed, 22)).unwrap())
}

fn logistic_loss(d: &mut Network<f64>, z_priv: &Tensor<f64>, z_aux: &Tensor<f64>) -> f64 {
    let p = d.forward(z_priv).unwrap();
    let a = d.forward(z_aux).unwrap();
    let lp: f64 = p.data().iter().map(|&s| -loss::sigmoid(s).ln()).sum::<f64>() / p.data().len() as f64;
    let la: f64 = a.data().iter().map(|&s| -(1.0 - loss::sigmoid(s)).ln()).sum::<f64>() / a.data().len() as f64;
    lp + la
}

#[test]
fn discriminator_step_descends_its_objective() {
    let smashed = [4, 4, 4];
    for objective in [DiscObjective::Literal, DiscObjective::Logistic] {
        for seed in 0..10 {
            let mut rng = Rng::new(seed, 0);
            let mut d = Network::<f64>::new(models::discriminator_specs(&smashed).unwrap(), &smashed, &mut rng).unwrap();
            let z_priv = randn(&[8, 4, 4, 4], &mut rng).map(|v| v + 0.5);
            let z_aux = randn(&[8, 4, 4, 4], &mut rng);
            let mut opt = Optimizer::new(OptimizerConfig::sgd(1e-3, 0.0)).unwrap();
            let (before, after) = match objective {
                DiscObjective::Literal => {
                    let before = disc_step(&mut d, &mut opt, &z_priv, &z_aux, objective).unwrap();
                    let mut frozen = Optimizer::new(OptimizerConfig::sgd(1e-300, 0.0)).unwrap();
                    (before, disc_step(&mut d, &mut frozen, &z_priv, &z_aux, objective).unwrap())
                }
                DiscObjective::Logistic => {
                    let before = logistic_loss(&mut d, &z_priv, &z_aux);
                    disc_step(&mut d, &mut opt, &z_priv, &z_aux, objective).unwrap();
                    (before, logistic_loss(&mut d, &z_priv, &z_aux))
                }
            };
            assert!(after < before, "{objective:?} seed {seed}: {before} -> {after}");
        }
    }
}

#[test]
fn discriminator_loss_at_one_half() {
    let smashed = [2, 4, 4];
    let specs = vec![LayerSpec::Linear { in_features: 32, out_features: 1 }];
    let mut d = Network::<f64>::new(specs, &smashed, &mut Rng::new(0, 0)).unwrap();
    d.params_mut().into_iter().for_each(|p| p.data_mut().iter_mut().for_each(|v| *v = 0.0));
    let z = randn(&[4, 2, 4, 4], &mut Rng::new(1, 0));
    let l = disc_loss(&mut d, &z, &z).unwrap();
    assert!((l - 2.0 * 0.5f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_discriminator_has_lower_loss() {
    let smashed = [1, 4, 4];
    let specs = vec![LayerSpec::Linear { in_features: 16, out_features: 1 }];
    let mut d = Network::<f64>::new(specs, &smashed, &mut Rng::new(0, 0)).unwrap();
    for p in d.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    d.params_mut()[0].data_mut().iter_mut().for_each(|v| *v = 0.1);
    let priv_ = Tensor::<f64>::full(&[4, 1, 4, 4], 1.0);
    let aux = Tensor::<f64>::full(&[4, 1, 4, 4], -1.0);
    let mild = disc_loss(&mut d, &priv_, &aux).unwrap();
    d.params_mut()[0].data_mut().iter_mut().for_each(|v| *v = 0.5);
    let sharp = disc_loss(&mut d, &priv_, &aux).unwrap();
    assert!(sharp < mild && mild < 2.0 * 0.5f64.ln());
}

fn linear_pair(seed: u64) -> (Network<f64>, Network<f64>) {
    let specs = vec![LayerSpec::conv(3, 2, 3, 2, 1)];
    let image = [3, 8, 8];
    let target = Network::new(specs.clone(), &image, &mut Rng::new(seed, 1)).unwrap();
    let sub = Network::new(specs, &image, &mut Rng::new(seed, 2)).unwrap();
    (target, sub)
}

#[test]
fn mmd_only_substitute_training_reduces_discrepancy() {
    for seed in 0..10 {
        let (mut target, mut sub) = linear_pair(seed);
        let mut rng = Rng::new(seed, 3);
        let x_priv = randn(&[32, 3, 8, 8], &mut rng);
        let z_priv = target.forward(&x_priv).unwrap();
        let x_aux = randn(&[32, 3, 8, 8], &mut rng);
        let mut d = Network::<f64>::new(models::discriminator_specs(&[2, 4, 4]).unwrap(), &[2, 4, 4], &mut rng).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-2)).unwrap();
        let loss = SubstituteLoss { disc_weight: 1.0, mmd_weight: 1.0, no_disc: true, no_mkmmd: false, kernels: 5 };
        let mut history = Vec::new();
        for _ in 0..100 {
            history.push(substitute_step(&mut sub, &mut opt, &mut d, &z_priv, &x_aux, loss).unwrap().1);
        }
        let head: f64 = history[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = history[95..].iter().sum::<f64>() / 5.0;
        assert!(tail < 0.75 * head, "seed {seed}: {head} -> {tail}");
    }
}

#[test]
fn disabled_losses_leave_substitute_untouched() {
    let (mut target, mut sub) = linear_pair(0);
    let mut rng = Rng::new(0, 3);
    let x = randn(&[4, 3, 8, 8], &mut rng);
    let z = target.forward(&x).unwrap();
    let mut d = Network::<f64>::new(models::discriminator_specs(&[2, 4, 4]).unwrap(), &[2, 4, 4], &mut rng).unwrap();
    let before = sub.flat_params();
    let mut opt = Optimizer::new(OptimizerConfig::adam(1e-2)).unwrap();
    let loss = SubstituteLoss { disc_weight: 1.0, mmd_weight: 1.0, no_disc: true, no_mkmmd: true, kernels: 5 };
    assert_eq!(substitute_step(&mut sub, &mut opt, &mut d, &z, &x, loss).unwrap(), (0.0, 0.0));
    assert_eq!(sub.flat_params(), before);
}

#[test]
fn substitute_shape_mismatch_is_rejected() {
    let (_, mut sub) = linear_pair(0);
    let mut rng = Rng::new(0, 3);
    let x = randn(&[4, 3, 8, 8], &mut rng);
    let wrong = randn(&[4, 3, 4, 4], &mut rng);
    let mut d = Network::<f64>::new(models::discriminator_specs(&[3, 4, 4]).unwrap(), &[3, 4, 4], &mut rng).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::adam(1e-2)).unwrap();
    let loss = SubstituteLoss { disc_weight: 1.0, mmd_weight: 1.0, no_disc: false, no_mkmmd: false, kernels: 5 };
    assert!(matches!(substitute_step(&mut sub, &mut opt, &mut d, &wrong, &x, loss), Err(Error::Shape(_))));
}

#[test]
fn inverse_of_identity_substitute_converges() {
    let data = aux(256, 5);
    let image = data.image_shape().to_vec();
    let mut sub = Network::<f64>::identity(&image);
    let specs = vec![LayerSpec::conv(3, 3, 1, 1, 0), LayerSpec::Tanh];
    let mut inv = Network::<f64>::new(specs, &image, &mut Rng::new(1, 0)).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::adam(2e-2)).unwrap();
    let history = train_inverse(&mut inv, &mut opt, &mut sub, &data, 60, 32, &mut Rng::new(2, 0)).unwrap();
    assert!(history.last().unwrap() < &1e-3, "{history:?}");
    assert!(history.last() < history.first());
}

#[test]
fn inverse_output_stays_in_pixel_range() {
    let data = aux(64, 6);
    let smashed = [16, 8, 8];
    let mut sub = Network::<f64>::new(
        models::substitute_specs(models::SubstituteFamily::Vgg, data.image_shape(), &smashed, 8).unwrap(),
        data.image_shape(),
        &mut Rng::new(0, 0),
    )
    .unwrap();
    let mut inv = Network::<f64>::new(models::inverse_specs(&smashed, data.image_shape(), 8).unwrap(), &smashed, &mut Rng::new(1, 0)).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3)).unwrap();
    train_inverse(&mut inv, &mut opt, &mut sub, &data, 2, 16, &mut Rng::new(2, 0)).unwrap();
    let out = inv.forward(&randn(&[4, 16, 8, 8], &mut Rng::new(3, 0)).map(|v| 10.0 * v)).unwrap();
    assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn inverse_shape_mismatch_is_rejected() {
    let data = aux(16, 7);
    let mut sub = Network::<f64>::identity(data.image_shape());
    let mut inv = Network::<f64>::new(vec![LayerSpec::conv(3, 3, 3, 2, 1)], data.image_shape(), &mut Rng::new(0, 0)).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3)).unwrap();
    assert!(matches!(train_inverse(&mut inv, &mut opt, &mut sub, &data, 1, 8, &mut Rng::new(0, 0)), Err(Error::Shape(_))));
}

fn small_config() -> AttackConfig {
    AttackConfig { substitute_width: 4, inverse_width: 4, inverse_epochs: 1, ..AttackConfig::default() }
}

#[test]
fn reconstruction_is_phase_gated_and_batch_preserving() {
    let smashed = [16, 8, 8];
    let mut attacker = ForaAttacker::<f32>::new(small_config(), aux(32, 8), &smashed, 1).unwrap();
    let batch = randn(&[8, 16, 8, 8], &mut Rng::new(4, 0)).map(|v| v.max(0.0)).cast::<f32>();
    attacker.train_on(&batch).unwrap();
    let mut snap = SnapshotStore::new();
    snap.begin_epoch(0);
    snap.record(0, batch.clone());
    assert!(matches!(attacker.reconstruct(&snap), Err(Error::Phase(_))));
    attacker.fit_inverse().unwrap();
    assert_eq!(attacker.phase(), AttackPhase::InverseTrained);
    let out = attacker.reconstruct(&snap).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].shape(), &[8, 3, 16, 16]);
    assert!(matches!(attacker.train_on(&batch), Err(Error::Phase(_))));
    assert!(matches!(attacker.reconstruct(&SnapshotStore::new()), Err(Error::Empty(_))));
}

#[test]
fn untrained_variant_never_updates_the_substitute() {
    let smashed = [16, 8, 8];
    let cfg = AttackConfig { train_substitute: false, ..small_config() };
    assert_eq!(cfg.variant(), "untrained");
    let mut attacker = ForaAttacker::<f64>::new(cfg, aux(32, 9), &smashed, 1).unwrap();
    let before = attacker.substitute().flat_params();
    let batch = randn(&[8, 16, 8, 8], &mut Rng::new(4, 0));
    for _ in 0..3 {
        attacker.train_on(&batch).unwrap();
    }
    assert_eq!(attacker.substitute().flat_params(), before);
    assert_eq!(attacker.batches_seen(), 3);
}

#[test]
fn variant_labels() {
    let base = AttackConfig::default();
    assert_eq!(base.variant(), "fora");
    assert_eq!(AttackConfig { no_disc: true, ..base.clone() }.variant(), "no_disc");
    assert_eq!(AttackConfig { no_mkmmd: true, ..base.clone() }.variant(), "no_mkmmd");
    assert!(AttackConfig { every: 0, ..base }.validate().is_err());
}

#[test]
fn kernel_sets_reject_invalid_weights() {
    assert!(KernelSet::new(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
    assert!(KernelSet::new(vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
    assert!(KernelSet::new(vec![1.0, -2.0], vec![0.5, 0.5]).is_err());
    assert!(KernelSet::new(vec![1.0, 2.0], vec![0.25, 0.75]).is_ok());
}

#[test]
fn median_distance_examples() {
    let two = [[0.0, 0.0], [2.0, 0.0]];
    let pts: Vec<&[f64]> = two.iter().map(|p| &p[..]).collect();
    assert_eq!(median_distance(&pts).unwrap(), 2.0);
    let mut rng = Rng::new(9, 0);
    let a = randn(&[50, 8], &mut rng);
    let b = randn(&[50, 8], &mut rng);
    let m = median_bandwidth(&a, &b).unwrap();
    assert!((m / 16f64.sqrt() - 1.0).abs() < 0.1, "{m}");
    let same = Tensor::<f64>::zeros(&[4, 3]);
    assert_eq!(median_bandwidth(&same, &same).unwrap(), 1.0);
}
