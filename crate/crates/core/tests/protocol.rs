use std::sync::Arc;

use sll_core::data::{gen_synthetic, ImageDataset, SyntheticSpec};
use sll_core::nn::{Network, OptimizerConfig, Scalar};
use sll_core::protocol::*;
use sll_core::rng::Rng;
use sll_core::Result;

fn data(n: usize, seed: u64) -> Arc<ImageDataset> {
    Arc::new(gen_synthetic(&SyntheticSpec::default(), n, &mut Rng::new(seed, 20)).unwrap())
}

fn cfg(split: usize, topology: Topology, transport: TransportKind) -> SessionConfig {
    SessionConfig {
        topology,
        transport,
        max_iterations: Some(100),
        seed: 3,
        ..SessionConfig::new(split, 8, 100)
    }
}

/// Records the kind and label presence of every message it sees.
#[derive(Default)]
struct Tap {
    seen: Vec<(MessageKind, u64, bool)>,
    frames: Vec<Vec<u8>>,
}

impl<T: Scalar> Observer<T> for Tap {
    fn observe(&mut self, msg: &Message<T>) -> Result<()> {
        self.seen.push((msg.kind, msg.batch_id, msg.labels.is_some()));
        self.frames.push(msg.encode()?);
        Ok(())
    }
}

fn flat(net: &Network<f64>) -> Vec<f64> {
    net.flat_params()
}

#[test]
fn split_training_matches_monolithic_reference() {
    let d = data(96, 1);
    for topology in [Topology::LabelShare, Topology::LabelProtected] {
        for transport in [TransportKind::InProcess, TransportKind::Framed] {
            let c = cfg(2, topology, transport);
            let model = SplitModel::<f64>::reference(&c, d.image_shape(), d.num_classes()).unwrap();
            let mono = monolithic_reference(&c, &model, &d).unwrap();
            let out = run_session(&c, model, d.clone(), &mut [], None).unwrap();
            assert_eq!(out.iterations(), 100);
            let diff = flat(&mono).iter().zip(out.flat_params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-10, "{topology:?}/{transport:?}: {diff}");
        }
    }
}

#[test]
fn transports_and_drivers_agree_bitwise() {
    let d = data(64, 2);
    let reference = run_training::<f64>(&cfg(1, Topology::LabelShare, TransportKind::InProcess), d.clone(), &mut [], None).unwrap();
    for transport in [TransportKind::InProcess, TransportKind::Framed] {
        for driver in [DriverKind::Lockstep, DriverKind::Threaded] {
            let c = SessionConfig { driver, ..cfg(1, Topology::LabelShare, transport) };
            let out = run_training::<f64>(&c, d.clone(), &mut [], None).unwrap();
            assert_eq!(out.flat_params(), reference.flat_params(), "{transport:?}/{driver:?}");
        }
    }
}

#[test]
fn split_zero_is_server_only_training() {
    let d = data(48, 3);
    let c = cfg(0, Topology::LabelShare, TransportKind::InProcess);
    let model = SplitModel::<f64>::reference(&c, d.image_shape(), d.num_classes()).unwrap();
    assert!(model.client.is_identity());
    let mono = monolithic_reference(&c, &model, &d).unwrap();
    let out = run_session(&c, model, d.clone(), &mut [], None).unwrap();
    assert_eq!(out.server.net().flat_params(), mono.flat_params());
}

#[test]
fn label_protected_sessions_never_carry_labels() {
    let d = data(40, 4);
    let mut tap = Tap::default();
    let c = SessionConfig { max_iterations: None, ..cfg(2, Topology::LabelProtected, TransportKind::Framed) };
    let c = SessionConfig { epochs: 2, ..c };
    let out = run_label_protected::<f32>(&c, d.clone(), &mut [&mut tap], None).unwrap();
    assert!(tap.seen.iter().all(|(_, _, labels)| !labels));
    assert_eq!(out.server.snapshot().len(), 5);
    let mut share_tap = Tap::default();
    let c = SessionConfig { topology: Topology::LabelShare, ..c };
    let share = run_training::<f32>(&c, d, &mut [&mut share_tap], None).unwrap();
    let sizes = |o: &SessionOutcome<f32>| o.server.snapshot().entries().iter().map(|e| (e.batch_id, e.smashed.shape().to_vec())).collect::<Vec<_>>();
    assert_eq!(sizes(&out).len(), sizes(&share).len());
    let count = |t: &Tap| t.seen.iter().filter(|s| s.0 == MessageKind::SmashedData).count();
    assert_eq!(count(&tap), count(&share_tap));
    assert!(share_tap.seen.iter().any(|s| s.2));
}

#[test]
fn snapshot_holds_exactly_the_final_epoch() {
    let d = data(50, 5);
    let c = SessionConfig { max_iterations: None, epochs: 3, ..cfg(2, Topology::LabelShare, TransportKind::InProcess) };
    let out = run_training::<f32>(&c, d.clone(), &mut [], None).unwrap();
    let snap = out.server.snapshot();
    assert_eq!(snap.len(), 50usize.div_ceil(8));
    assert_eq!(snap.epoch(), Some(2));
    assert_eq!(snap.samples(), 50);
    let idx = out.client.ledger().align(snap).unwrap();
    let mut sorted = idx.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
}

#[test]
fn observer_does_not_change_client_traffic() {
    let d = data(32, 6);
    let c = cfg(2, Topology::LabelShare, TransportKind::Framed);
    let plain = run_training::<f64>(&c, d.clone(), &mut [], None).unwrap();
    let mut tap = Tap::default();
    let tapped = run_training::<f64>(&c, d, &mut [&mut tap], None).unwrap();
    assert_eq!(plain.flat_params(), tapped.flat_params());
    assert_eq!(plain.transcript, tapped.transcript);
    let mut ids: Vec<(MessageKind, u64)> = tap.seen.iter().map(|s| (s.0, s.1)).collect();
    let ups: Vec<u64> = ids.iter().filter(|(k, _)| matches!(k, MessageKind::SmashedData | MessageKind::Control)).map(|s| s.1).collect();
    assert!(ups.windows(2).all(|w| w[1] == w[0] + 1), "client-to-server ids must be consecutive");
    ids.retain(|(k, _)| *k == MessageKind::GradientReturn);
    assert!(ids.windows(2).all(|w| w[1].1 == w[0].1 + 1));
}

#[test]
fn handshake_rejects_mismatched_server() {
    let d = data(16, 7);
    let c = cfg(2, Topology::LabelShare, TransportKind::InProcess);
    let mut model = SplitModel::<f32>::reference(&c, d.image_shape(), d.num_classes()).unwrap();
    let other = SplitModel::<f32>::reference(&cfg(1, Topology::LabelShare, TransportKind::InProcess), d.image_shape(), d.num_classes()).unwrap();
    model.server = other.server;
    assert!(run_session(&c, model, d, &mut [], None).is_err());
}

#[test]
fn honest_training_learns_the_synthetic_task() {
    let d = data(512, 8);
    let test = gen_synthetic(&SyntheticSpec::default(), 256, &mut Rng::new(8, 21)).unwrap();
    let c = SessionConfig { max_iterations: None, epochs: 3, batch_size: 16, ..cfg(2, Topology::LabelShare, TransportKind::InProcess) };
    let out = run_training::<f32>(&c, d, &mut [], Some(&test)).unwrap();
    assert_eq!(out.epoch_accuracy.len(), 3);
    let acc = out.final_test_accuracy().unwrap();
    assert!(acc > 0.9, "test accuracy {acc}");
    assert!(out.transcript.last().unwrap().test_accuracy.is_some());
}

#[test]
fn adam_sessions_also_match_reference() {
    let d = data(40, 9);
    let adam = OptimizerConfig::adam(1e-3);
    let c = SessionConfig {
        client_optimizer: adam,
        server_optimizer: adam,
        top_optimizer: adam,
        max_iterations: Some(20),
        ..cfg(3, Topology::LabelProtected, TransportKind::Framed)
    };
    let model = SplitModel::<f64>::reference(&c, d.image_shape(), d.num_classes()).unwrap();
    let mono = monolithic_reference(&c, &model, &d).unwrap();
    let out = run_session(&c, model, d, &mut [], None).unwrap();
    let diff = flat(&mono).iter().zip(out.flat_params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-10);
}
