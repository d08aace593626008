use serde::{Deserialize, Serialize};

use super::party::{ClientParty, Observer, ServerParty};
use super::transport::{transport_pair, TransportKind};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::nn::loss::accuracy;
use crate::nn::{Network, Scalar, Tensor};

/// Rows per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    /// Both parties on the calling thread, strictly alternating.
    #[default]
    Lockstep,
    /// Client on a worker thread, server and observers on the caller.
    Threaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochAccuracy {
    pub epoch: usize,
    pub accuracy: f64,
}

/// Eval-mode forward in batches; the network's mode is restored afterwards.
pub fn eval_forward<T: Scalar>(net: &mut Network<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mode = net.mode();
    net.eval();
    let n = x.batch();
    let result = (0..n)
        .step_by(EVAL_BATCH)
        .map(|start| {
            let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
            net.forward(&x.select_rows(&idx)?)
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|parts| Tensor::concat_rows(&parts.iter().collect::<Vec<_>>()));
    net.set_mode(mode);
    result
}

/// Accuracy of the joint model on `data`, evaluated with running statistics.
pub fn joint_accuracy<T: Scalar>(client: &mut ClientParty<T>, server: &mut ServerParty<T>, data: &ImageDataset) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, labels) = data.batch::<T>(&idx)?;
    let z = eval_forward(client.net_mut(), &x)?;
    let h = eval_forward(server.net_mut(), &z)?;
    let logits = match client.top_mut() {
        Some(top) => eval_forward(top, &h)?,
        None => h,
    };
    Ok(accuracy(&logits, &labels))
}

/// Run a session to completion on one thread. When `eval` is given, the
/// joint model is scored on it at the end of every epoch.
pub fn drive_lockstep<T: Scalar>(
    client: &mut ClientParty<T>,
    server: &mut ServerParty<T>,
    observers: &mut [&mut dyn Observer<T>],
    transport: TransportKind,
    eval: Option<&ImageDataset>,
) -> Result<Vec<EpochAccuracy>> {
    let (mut c_end, mut s_end) = transport_pair::<T>(transport);
    let mut scores = Vec::new();
    let mut epoch_seen: Option<usize> = None;
    while let Some(out) = client.poll()? {
        if let (Some(data), Some(v)) = (eval, out.control_value()) {
            if let Some(done) = epoch_seen {
                scores.push(EpochAccuracy { epoch: done, accuracy: joint_accuracy(client, server, data)? });
            }
            epoch_seen = (v >= 0.0).then_some(v as usize);
        }
        c_end.send(out)?;
        loop {
            while let Some(m) = s_end.try_recv()? {
                if let Some(reply) = server.handle(m, observers)? {
                    s_end.send(reply)?;
                }
            }
            if !client.awaiting_reply() {
                break;
            }
            let m = c_end.try_recv()?.ok_or(Error::Protocol("client is waiting but the server sent nothing".into()))?;
            if let Some(reply) = client.handle(m)? {
                c_end.send(reply)?;
            }
        }
    }
    while let Some(m) = s_end.try_recv()? {
        server.handle(m, observers)?;
    }
    if !server.is_finished() {
        return Err(Error::Protocol("server never saw the end of the session".into()));
    }
    Ok(scores)
}

/// Run a session with the client on its own thread.
pub fn drive_threaded<T: Scalar>(
    client: &mut ClientParty<T>,
    server: &mut ServerParty<T>,
    observers: &mut [&mut dyn Observer<T>],
    transport: TransportKind,
) -> Result<()> {
    let (mut c_end, mut s_end) = transport_pair::<T>(transport);
    std::thread::scope(|scope| {
        let worker = scope.spawn(move || -> Result<()> {
            while let Some(out) = client.poll()? {
                c_end.send(out)?;
                while client.awaiting_reply() {
                    let m = c_end.recv()?;
                    if let Some(reply) = client.handle(m)? {
                        c_end.send(reply)?;
                    }
                }
            }
            Ok(())
        });
        let served = (|| -> Result<()> {
            while !server.is_finished() {
                let m = s_end.recv()?;
                if let Some(reply) = server.handle(m, observers)? {
                    s_end.send(reply)?;
                }
            }
            Ok(())
        })();
        drop(s_end);
        let client_result = worker.join().map_err(|_| Error::Protocol("client thread panicked".into()))?;
        match (served, client_result) {
            (Err(Error::TransportClosed), Err(e)) => Err(e),
            (Err(e), _) => Err(e),
            (Ok(()), r) => r,
        }
    })
}
