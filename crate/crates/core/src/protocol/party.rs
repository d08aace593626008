use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::message::{Message, MessageKind, END_OF_SESSION};
use super::snapshot::{GroundTruthLedger, SnapshotStore};
use crate::data::ImageDataset;
use crate::defense::{dcor_client_grad, dp_sanitize, noise_obfuscate, DefenseConfig, MIN_DCOR_SAMPLES};
use crate::detection::{GradientsScrutinizer, Verdict};
use crate::error::{Error, Result};
use crate::nn::loss::{accuracy, cross_entropy};
use crate::nn::{Network, Optimizer, Scalar, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Labels travel with the smashed data and the loss is computed on the server.
    #[default]
    LabelShare,
    /// Labels stay on the client, which holds a top model after the server.
    LabelProtected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerBehavior {
    #[default]
    Honest,
    /// Returns gradients drawn independently of the labels, as a hijacking
    /// server would. Only meaningful for exercising the detector.
    HijackStub,
}

/// Read-only tap on the server's traffic. Observers see every message the
/// server receives or sends but cannot change any of them.
pub trait Observer<T: Scalar>: Send {
    fn observe(&mut self, msg: &Message<T>) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Completed,
    /// The client's detector flagged the server and ended the session.
    Aborted,
}

fn expect_next(last: &mut Option<u64>, id: u64, who: &str) -> Result<()> {
    let want = last.map_or(0, |l| l + 1);
    if id != want {
        return Err(Error::Protocol(format!("{who} expected batch id {want}, got {id}")));
    }
    *last = Some(id);
    Ok(())
}

/// Per-iteration client log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub batch_id: u64,
    pub batch_size: usize,
    pub smashed_norm: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dcor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClientState {
    Start,
    EpochStart,
    Ready,
    AwaitTop,
    AwaitGradient,
    Finished,
}

struct Pending<T: Scalar> {
    x: Tensor<T>,
    z: Tensor<T>,
    labels: Vec<usize>,
    record: ClientRecord,
}

/// Data-owning party. Runs the bottom of the model, applies its defense and
/// detector, and (label-protected) the top model.
pub struct ClientParty<T: Scalar> {
    net: Network<T>,
    opt: Optimizer<T>,
    top: Option<(Network<T>, Optimizer<T>)>,
    data: Arc<ImageDataset>,
    batch_size: usize,
    epochs: usize,
    max_iterations: Option<usize>,
    shuffle_rng: Rng,
    defense: DefenseConfig,
    defense_rng: Rng,
    monitor: Option<GradientsScrutinizer>,
    state: ClientState,
    epoch: usize,
    order: Vec<usize>,
    cursor: usize,
    next_out: u64,
    last_in: Option<u64>,
    pending: Option<Pending<T>>,
    ledger: GroundTruthLedger,
    log: Vec<ClientRecord>,
    status: SessionStatus,
    final_verdict: Option<Verdict>,
}

pub struct ClientSetup<T: Scalar> {
    pub net: Network<T>,
    pub optimizer: Optimizer<T>,
    pub top: Option<(Network<T>, Optimizer<T>)>,
    pub data: Arc<ImageDataset>,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_iterations: Option<usize>,
    pub seed: u64,
    pub defense: DefenseConfig,
    pub monitor: Option<GradientsScrutinizer>,
}

impl<T: Scalar> ClientParty<T> {
    pub fn new(setup: ClientSetup<T>) -> Result<Self> {
        use crate::rng::streams;
        setup.defense.validate()?;
        if setup.batch_size == 0 || setup.epochs == 0 {
            return Err(Error::InvalidArgument("batch size and epochs must be positive".into()));
        }
        if setup.data.is_empty() {
            return Err(Error::Empty("private dataset"));
        }
        if setup.net.input_shape() != setup.data.image_shape() {
            return Err(Error::Shape(format!(
                "client expects {:?}, images are {:?}",
                setup.net.input_shape(),
                setup.data.image_shape()
            )));
        }
        if let Some((top, _)) = &setup.top {
            if top.output_shape() != [setup.data.num_classes()] {
                return Err(Error::Shape(format!("top model outputs {:?}, dataset has {} classes", top.output_shape(), setup.data.num_classes())));
            }
        }
        Ok(Self {
            net: setup.net,
            opt: setup.optimizer,
            top: setup.top,
            data: setup.data,
            batch_size: setup.batch_size,
            epochs: setup.epochs,
            max_iterations: setup.max_iterations,
            shuffle_rng: Rng::new(setup.seed, streams::SHUFFLE),
            defense: setup.defense,
            defense_rng: Rng::new(setup.seed, streams::DEFENSE),
            monitor: setup.monitor,
            state: ClientState::Start,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            next_out: 0,
            last_in: None,
            pending: None,
            ledger: GroundTruthLedger::default(),
            log: Vec::new(),
            status: SessionStatus::Completed,
            final_verdict: None,
        })
    }

    pub fn net(&self) -> &Network<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn top(&self) -> Option<&Network<T>> {
        self.top.as_ref().map(|(n, _)| n)
    }

    pub fn top_mut(&mut self) -> Option<&mut Network<T>> {
        self.top.as_mut().map(|(n, _)| n)
    }

    pub fn ledger(&self) -> &GroundTruthLedger {
        &self.ledger
    }

    pub fn log(&self) -> &[ClientRecord] {
        &self.log
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn final_verdict(&self) -> Option<&Verdict> {
        self.final_verdict.as_ref()
    }

    pub fn iterations(&self) -> usize {
        self.log.len()
    }

    pub fn is_finished(&self) -> bool {
        self.state == ClientState::Finished
    }

    /// True while a reply from the server is outstanding.
    pub fn awaiting_reply(&self) -> bool {
        matches!(self.state, ClientState::AwaitTop | ClientState::AwaitGradient)
    }

    fn next_id(&mut self) -> u64 {
        let id = self.next_out;
        self.next_out += 1;
        id
    }

    fn end(&mut self) -> Message<T> {
        self.state = ClientState::Finished;
        let id = self.next_id();
        Message::control(id, END_OF_SESSION)
    }

    /// Next message the client wants to send, or `None` once finished.
    pub fn poll(&mut self) -> Result<Option<Message<T>>> {
        loop {
            match self.state {
                ClientState::Finished => return Ok(None),
                ClientState::AwaitTop | ClientState::AwaitGradient => {
                    return Err(Error::Phase("client polled while awaiting a reply"))
                }
                ClientState::Start => {
                    self.state = ClientState::EpochStart;
                    let id = self.next_id();
                    return Ok(Some(Message::handshake(id, self.net.output_shape())));
                }
                ClientState::EpochStart => {
                    if self.epoch >= self.epochs || self.limit_reached() {
                        return Ok(Some(self.end()));
                    }
                    self.order = self.shuffle_rng.permutation(self.data.len());
                    self.cursor = 0;
                    self.ledger.begin_epoch(self.epoch);
                    self.state = ClientState::Ready;
                    let id = self.next_id();
                    return Ok(Some(Message::control(id, self.epoch as f64)));
                }
                ClientState::Ready => {
                    if self.limit_reached() {
                        return Ok(Some(self.end()));
                    }
                    if self.cursor >= self.order.len() {
                        self.epoch += 1;
                        self.state = ClientState::EpochStart;
                        continue;
                    }
                    return self.send_batch().map(Some);
                }
            }
        }
    }

    fn limit_reached(&self) -> bool {
        self.max_iterations.is_some_and(|m| self.log.len() >= m)
    }

    fn send_batch(&mut self) -> Result<Message<T>> {
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let (x, labels) = self.data.batch::<T>(&indices)?;
        self.net.zero_grad();
        let z = self.net.forward(&x)?;
        let sent = match self.defense {
            DefenseConfig::Noise { sigma } => noise_obfuscate(&z, sigma, &mut self.defense_rng)?,
            _ => z.detach(),
        };
        let id = self.next_id();
        self.ledger.record(id, indices);
        let record = ClientRecord {
            iteration: self.log.len(),
            epoch: self.epoch,
            batch_id: id,
            batch_size: labels.len(),
            smashed_norm: sent.l2_norm(),
            grad_norm: 0.0,
            top_loss: None,
            top_accuracy: None,
            dcor: None,
            verdict: None,
        };
        let mut msg = Message::new(MessageKind::SmashedData, id, sent);
        if self.top.is_none() {
            msg = msg.with_labels(labels.clone());
            self.state = ClientState::AwaitGradient;
        } else {
            self.state = ClientState::AwaitTop;
        }
        self.pending = Some(Pending { x, z, labels, record });
        Ok(msg)
    }

    /// Handle a server message; returns the reply, if any.
    pub fn handle(&mut self, msg: Message<T>) -> Result<Option<Message<T>>> {
        expect_next(&mut self.last_in, msg.batch_id, "client")?;
        match (self.state, msg.kind) {
            (ClientState::AwaitTop, MessageKind::TopForward) => self.on_top_forward(msg).map(Some),
            (ClientState::AwaitGradient, MessageKind::GradientReturn) => self.on_gradient(msg),
            (state, kind) => Err(Error::Protocol(format!("client in state {state:?} cannot handle {kind:?}"))),
        }
    }

    fn on_top_forward(&mut self, msg: Message<T>) -> Result<Message<T>> {
        let pending = self.pending.as_mut().ok_or(Error::Phase("no batch in flight"))?;
        let (top, opt) = self.top.as_mut().ok_or(Error::Phase("no top model"))?;
        if msg.labels.is_some() {
            return Err(Error::Protocol("server message carries labels".into()));
        }
        top.zero_grad();
        let logits = top.forward(&msg.payload)?;
        let loss = cross_entropy(&logits, &pending.labels)?;
        let g = top.backward(&loss.grad)?;
        opt.step(top)?;
        pending.record.top_loss = Some(loss.value);
        pending.record.top_accuracy = Some(accuracy(&logits, &pending.labels));
        self.state = ClientState::AwaitGradient;
        let id = self.next_id();
        Ok(Message::new(MessageKind::TopGradient, id, g))
    }

    fn on_gradient(&mut self, msg: Message<T>) -> Result<Option<Message<T>>> {
        let mut pending = self.pending.take().ok_or(Error::Phase("no batch in flight"))?;
        if msg.payload.shape() != pending.z.shape() {
            return Err(Error::Shape(format!("gradient {:?} for smashed data {:?}", msg.payload.shape(), pending.z.shape())));
        }
        pending.record.grad_norm = msg.payload.l2_norm();
        if let Some(gs) = self.monitor.as_mut() {
            if pending.labels.len() >= 2 {
                if let Some(v) = gs.update(&msg.payload, &pending.labels)? {
                    pending.record.verdict = Some(v);
                    self.final_verdict = Some(v);
                    if v.attack {
                        self.status = SessionStatus::Aborted;
                        self.log.push(pending.record);
                        return Ok(Some(self.end()));
                    }
                }
            }
        }
        let grad = match self.defense {
            DefenseConfig::Dp { clip, scale } => dp_sanitize(&msg.payload, clip, scale, &mut self.defense_rng)?,
            DefenseConfig::Dcor { alpha } if pending.z.batch() >= MIN_DCOR_SAMPLES => {
                let (g, d) = dcor_client_grad(&pending.x, &pending.z, &msg.payload, alpha)?;
                pending.record.dcor = Some(d);
                g
            }
            DefenseConfig::Dcor { alpha } => msg.payload.map(|v| v * T::from_f64(1.0 - alpha)),
            _ => msg.payload,
        };
        self.net.backward(&grad)?;
        self.opt.step(&mut self.net)?;
        self.log.push(pending.record);
        self.state = ClientState::Ready;
        Ok(None)
    }
}

/// Per-batch server log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerRecord {
    pub batch_id: u64,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Model-hosting party. Also the natural home of a passive attacker, which
/// is why it keeps the snapshot store.
pub struct ServerParty<T: Scalar> {
    net: Network<T>,
    opt: Optimizer<T>,
    topology: Topology,
    behavior: ServerBehavior,
    stub_rng: Rng,
    smashed_shape: Option<Vec<usize>>,
    next_out: u64,
    last_in: Option<u64>,
    in_flight: bool,
    snapshot: SnapshotStore<T>,
    log: Vec<ServerRecord>,
    finished: bool,
}

impl<T: Scalar> ServerParty<T> {
    pub fn new(net: Network<T>, opt: Optimizer<T>, topology: Topology, behavior: ServerBehavior, seed: u64) -> Result<Self> {
        if behavior == ServerBehavior::HijackStub && topology == Topology::LabelProtected {
            return Err(Error::InvalidArgument("the hijack stub only runs in the label-share topology".into()));
        }
        Ok(Self {
            net,
            opt,
            topology,
            behavior,
            stub_rng: Rng::new(seed, crate::rng::streams::HIJACK_STUB),
            smashed_shape: None,
            next_out: 0,
            last_in: None,
            in_flight: false,
            snapshot: SnapshotStore::new(),
            log: Vec::new(),
            finished: false,
        })
    }

    pub fn net(&self) -> &Network<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn snapshot(&self) -> &SnapshotStore<T> {
        &self.snapshot
    }

    pub fn take_snapshot(&mut self) -> SnapshotStore<T> {
        std::mem::take(&mut self.snapshot)
    }

    pub fn log(&self) -> &[ServerRecord] {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn next_id(&mut self) -> u64 {
        let id = self.next_out;
        self.next_out += 1;
        id
    }

    /// Process one inbound message, letting every observer see it and the
    /// reply (if any).
    pub fn handle(&mut self, msg: Message<T>, observers: &mut [&mut dyn Observer<T>]) -> Result<Option<Message<T>>> {
        expect_next(&mut self.last_in, msg.batch_id, "server")?;
        if self.finished {
            return Err(Error::Protocol("message after end of session".into()));
        }
        for o in observers.iter_mut() {
            o.observe(&msg)?;
        }
        let reply = match msg.kind {
            MessageKind::Control => {
                self.on_control(&msg)?;
                None
            }
            MessageKind::SmashedData => Some(self.on_smashed(msg)?),
            MessageKind::TopGradient => Some(self.on_top_gradient(msg)?),
            kind => return Err(Error::Protocol(format!("server cannot handle {kind:?}"))),
        };
        if let Some(r) = &reply {
            for o in observers.iter_mut() {
                o.observe(r)?;
            }
        }
        Ok(reply)
    }

    fn on_control(&mut self, msg: &Message<T>) -> Result<()> {
        if let Some(shape) = msg.handshake_shape() {
            if self.smashed_shape.is_some() {
                return Err(Error::Protocol("repeated handshake".into()));
            }
            if shape != self.net.input_shape() {
                return Err(Error::Protocol(format!(
                    "handshake failed: client sends {shape:?}, server expects {:?}",
                    self.net.input_shape()
                )));
            }
            self.smashed_shape = Some(shape);
            return Ok(());
        }
        match msg.control_value() {
            Some(v) if v == END_OF_SESSION => self.finished = true,
            Some(v) if v >= 0.0 && v.fract() == 0.0 => self.snapshot.begin_epoch(v as usize),
            _ => return Err(Error::Protocol(format!("malformed control payload {:?}", msg.payload.shape()))),
        }
        Ok(())
    }

    fn on_smashed(&mut self, msg: Message<T>) -> Result<Message<T>> {
        let shape = self.smashed_shape.as_ref().ok_or(Error::Protocol("smashed data before handshake".into()))?;
        if msg.payload.rank() != shape.len() + 1 || msg.payload.shape()[1..] != shape[..] {
            return Err(Error::Protocol(format!("smashed data {:?} does not match handshake {shape:?}", msg.payload.shape())));
        }
        if self.in_flight {
            return Err(Error::Protocol("new batch before the previous one completed".into()));
        }
        self.snapshot.record(msg.batch_id, msg.payload.clone());
        let id = self.next_id();
        if self.behavior == ServerBehavior::HijackStub {
            let rng = &mut self.stub_rng;
            let data: Vec<T> = (0..msg.payload.numel()).map(|_| T::from_f64(1e-2 * rng.normal())).collect();
            self.log.push(ServerRecord { batch_id: msg.batch_id, loss: None, accuracy: None });
            return Ok(Message::new(MessageKind::GradientReturn, id, Tensor::new(msg.payload.shape(), data)?));
        }
        self.net.zero_grad();
        let out = self.net.forward(&msg.payload)?;
        match self.topology {
            Topology::LabelShare => {
                let labels = msg.labels.as_ref().ok_or(Error::Protocol("label-share batch without labels".into()))?;
                let loss = cross_entropy(&out, labels)?;
                let g = self.net.backward(&loss.grad)?;
                self.opt.step(&mut self.net)?;
                self.log.push(ServerRecord { batch_id: msg.batch_id, loss: Some(loss.value), accuracy: Some(accuracy(&out, labels)) });
                Ok(Message::new(MessageKind::GradientReturn, id, g))
            }
            Topology::LabelProtected => {
                if msg.labels.is_some() {
                    return Err(Error::Protocol("labels sent in the label-protected topology".into()));
                }
                self.in_flight = true;
                self.log.push(ServerRecord { batch_id: msg.batch_id, loss: None, accuracy: None });
                Ok(Message::new(MessageKind::TopForward, id, out))
            }
        }
    }

    fn on_top_gradient(&mut self, msg: Message<T>) -> Result<Message<T>> {
        if !self.in_flight {
            return Err(Error::Protocol("top gradient without a forward in flight".into()));
        }
        self.in_flight = false;
        let g = self.net.backward(&msg.payload)?;
        self.opt.step(&mut self.net)?;
        let id = self.next_id();
        Ok(Message::new(MessageKind::GradientReturn, id, g))
    }
}
