use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::driver::{drive_lockstep, drive_threaded, joint_accuracy, DriverKind, EpochAccuracy};
use super::party::{ClientParty, ClientSetup, Observer, ServerBehavior, ServerParty, SessionStatus, Topology};
use super::transport::TransportKind;
use crate::data::ImageDataset;
use crate::defense::DefenseConfig;
use crate::detection::{GradientsScrutinizer, GsConfig, Verdict};
use crate::error::{Error, Result};
use crate::models;
use crate::nn::loss::cross_entropy;
use crate::nn::{Network, Optimizer, OptimizerConfig, Scalar};
use crate::rng::{streams, Rng};

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::sgd(0.05, 0.9)
}

/// Everything that determines one split-learning session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub topology: Topology,
    pub split_point: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many iterations even if epochs remain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default = "default_optimizer")]
    pub client_optimizer: OptimizerConfig,
    #[serde(default = "default_optimizer")]
    pub server_optimizer: OptimizerConfig,
    #[serde(default = "default_optimizer")]
    pub top_optimizer: OptimizerConfig,
    #[serde(default)]
    pub transport: TransportKind,
    #[serde(default)]
    pub driver: DriverKind,
    #[serde(default)]
    pub server_behavior: ServerBehavior,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<GsConfig>,
    #[serde(default)]
    pub seed: u64,
}

impl SessionConfig {
    pub fn new(split_point: usize, batch_size: usize, epochs: usize) -> Self {
        Self {
            topology: Topology::LabelShare,
            split_point,
            batch_size,
            epochs,
            max_iterations: None,
            client_optimizer: default_optimizer(),
            server_optimizer: default_optimizer(),
            top_optimizer: default_optimizer(),
            transport: TransportKind::InProcess,
            driver: DriverKind::Lockstep,
            server_behavior: ServerBehavior::Honest,
            defense: DefenseConfig::None,
            monitor: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.split_point > models::TARGET_BLOCKS {
            return Err(Error::Config(format!("split point must be in 0..={}", models::TARGET_BLOCKS)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::Config("max iterations must be positive".into()));
        }
        for o in [&self.client_optimizer, &self.server_optimizer, &self.top_optimizer] {
            o.validate()?;
        }
        self.defense.validate()?;
        if let Some(m) = &self.monitor {
            m.validate()?;
        }
        if self.server_behavior == ServerBehavior::HijackStub && self.topology == Topology::LabelProtected {
            return Err(Error::Config("the hijack stub requires the label-share topology".into()));
        }
        Ok(())
    }

    /// Iterations per epoch for `n` private samples.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Freshly initialized client, server and (label-protected) top networks.
#[derive(Debug, Clone)]
pub struct SplitModel<T: Scalar> {
    pub client: Network<T>,
    pub server: Network<T>,
    pub top: Option<Network<T>>,
}

impl<T: Scalar> SplitModel<T> {
    /// The reference target architecture split at `cfg.split_point`.
    pub fn reference(cfg: &SessionConfig, image_shape: &[usize], num_classes: usize) -> Result<Self> {
        let protected = cfg.topology == Topology::LabelProtected;
        let client = Network::new(
            models::client_specs(image_shape, cfg.split_point)?,
            image_shape,
            &mut Rng::new(cfg.seed, streams::INIT_CLIENT),
        )?;
        let server = Network::new(
            models::server_specs(image_shape, cfg.split_point, num_classes, protected)?,
            client.output_shape(),
            &mut Rng::new(cfg.seed, streams::INIT_SERVER),
        )?;
        let top = protected
            .then(|| Network::new(models::top_specs(num_classes), server.output_shape(), &mut Rng::new(cfg.seed, streams::INIT_TOP)))
            .transpose()?;
        Ok(Self { client, server, top })
    }

    /// All three parts chained into one network.
    pub fn monolithic(&self) -> Result<Network<T>> {
        let mut parts = vec![&self.client, &self.server];
        parts.extend(self.top.as_ref());
        Network::chain(&parts)
    }
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub batch_id: u64,
    pub batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub smashed_norm: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dcor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

pub struct SessionOutcome<T: Scalar> {
    pub status: SessionStatus,
    pub client: ClientParty<T>,
    pub server: ServerParty<T>,
    pub transcript: Vec<TranscriptRecord>,
    pub epoch_accuracy: Vec<EpochAccuracy>,
}

impl<T: Scalar> SessionOutcome<T> {
    pub fn iterations(&self) -> usize {
        self.transcript.len()
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epoch_accuracy.last().map(|e| e.accuracy)
    }

    /// Current parameters of every part, client first.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = self.client.net().flat_params();
        out.extend(self.server.net().flat_params());
        if let Some(top) = self.client.top() {
            out.extend(top.flat_params());
        }
        out
    }
}

/// Run a session on the reference architecture.
pub fn run_training<T: Scalar>(
    cfg: &SessionConfig,
    data: Arc<ImageDataset>,
    observers: &mut [&mut dyn Observer<T>],
    eval: Option<&ImageDataset>,
) -> Result<SessionOutcome<T>> {
    let model = SplitModel::reference(cfg, data.image_shape(), data.num_classes())?;
    run_session(cfg, model, data, observers, eval)
}

/// [`run_training`] for the label-protected topology.
pub fn run_label_protected<T: Scalar>(
    cfg: &SessionConfig,
    data: Arc<ImageDataset>,
    observers: &mut [&mut dyn Observer<T>],
    eval: Option<&ImageDataset>,
) -> Result<SessionOutcome<T>> {
    let cfg = SessionConfig { topology: Topology::LabelProtected, ..cfg.clone() };
    run_training(&cfg, data, observers, eval)
}

/// Run a session on caller-supplied networks.
pub fn run_session<T: Scalar>(
    cfg: &SessionConfig,
    model: SplitModel<T>,
    data: Arc<ImageDataset>,
    observers: &mut [&mut dyn Observer<T>],
    eval: Option<&ImageDataset>,
) -> Result<SessionOutcome<T>> {
    cfg.validate()?;
    if (cfg.topology == Topology::LabelProtected) != model.top.is_some() {
        return Err(Error::Config("a top model is required exactly in the label-protected topology".into()));
    }
    let top = match model.top {
        Some(t) => Some((t, Optimizer::new(cfg.top_optimizer)?)),
        None => None,
    };
    let monitor = cfg.monitor.map(GradientsScrutinizer::new).transpose()?;
    let mut client = ClientParty::new(ClientSetup {
        net: model.client,
        optimizer: Optimizer::new(cfg.client_optimizer)?,
        top,
        data,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        max_iterations: cfg.max_iterations,
        seed: cfg.seed,
        defense: cfg.defense,
        monitor,
    })?;
    let mut server = ServerParty::new(
        model.server,
        Optimizer::new(cfg.server_optimizer)?,
        cfg.topology,
        cfg.server_behavior,
        cfg.seed,
    )?;
    let epoch_accuracy = match cfg.driver {
        DriverKind::Lockstep => drive_lockstep(&mut client, &mut server, observers, cfg.transport, eval)?,
        DriverKind::Threaded => {
            drive_threaded(&mut client, &mut server, observers, cfg.transport)?;
            match eval {
                Some(d) => {
                    let epoch = client.log().last().map_or(0, |r| r.epoch);
                    vec![EpochAccuracy { epoch, accuracy: joint_accuracy(&mut client, &mut server, d)? }]
                }
                None => Vec::new(),
            }
        }
    };
    let transcript = build_transcript(&client, &server, &epoch_accuracy, cfg.defense.nominal_epsilon());
    Ok(SessionOutcome { status: client.status(), client, server, transcript, epoch_accuracy })
}

fn build_transcript<T: Scalar>(
    client: &ClientParty<T>,
    server: &ServerParty<T>,
    epochs: &[EpochAccuracy],
    nominal_epsilon: Option<f64>,
) -> Vec<TranscriptRecord> {
    let by_batch: HashMap<u64, _> = server.log().iter().map(|r| (r.batch_id, r)).collect();
    let log = client.log();
    log.iter()
        .enumerate()
        .map(|(i, c)| {
            let s = by_batch.get(&c.batch_id);
            let last_of_epoch = log.get(i + 1).is_none_or(|n| n.epoch != c.epoch);
            TranscriptRecord {
                iteration: c.iteration,
                epoch: c.epoch,
                batch_id: c.batch_id,
                batch_size: c.batch_size,
                loss: c.top_loss.or(s.and_then(|s| s.loss)),
                accuracy: c.top_accuracy.or(s.and_then(|s| s.accuracy)),
                smashed_norm: c.smashed_norm,
                grad_norm: c.grad_norm,
                dcor: c.dcor,
                nominal_epsilon,
                verdict: c.verdict,
                test_accuracy: if last_of_epoch { epochs.iter().find(|e| e.epoch == c.epoch).map(|e| e.accuracy) } else { None },
            }
        })
        .collect()
}

/// Transcript as line-delimited JSON, preceded by a header line.
pub fn transcript_jsonl(header: &serde_json::Value, records: &[TranscriptRecord]) -> Result<String> {
    let mut out = serde_json::to_string(header)?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Train the chained model directly, with the same initialization, batch
/// order and optimizer as a split session. Requires a single optimizer
/// configuration and no defense.
pub fn monolithic_reference<T: Scalar>(cfg: &SessionConfig, model: &SplitModel<T>, data: &ImageDataset) -> Result<Network<T>> {
    cfg.validate()?;
    if cfg.client_optimizer != cfg.server_optimizer || (model.top.is_some() && cfg.top_optimizer != cfg.server_optimizer) {
        return Err(Error::Config("the monolithic reference needs one optimizer configuration".into()));
    }
    if cfg.defense != DefenseConfig::None {
        return Err(Error::Config("the monolithic reference does not model defenses".into()));
    }
    let mut net = model.monolithic()?;
    let mut opt = Optimizer::new(cfg.server_optimizer)?;
    let mut shuffle = Rng::new(cfg.seed, streams::SHUFFLE);
    let mut done = 0;
    'epochs: for _ in 0..cfg.epochs {
        let order = shuffle.permutation(data.len());
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_iterations.is_some_and(|m| done >= m) {
                break 'epochs;
            }
            let (x, labels) = data.batch::<T>(chunk)?;
            net.zero_grad();
            let logits = net.forward(&x)?;
            let loss = cross_entropy(&logits, &labels)?;
            net.backward(&loss.grad)?;
            opt.step(&mut net)?;
            done += 1;
        }
    }
    Ok(net)
}
