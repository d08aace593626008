use std::sync::mpsc::{channel, Receiver, Sender, TryRecvError};

use serde::{Deserialize, Serialize};

use super::message::Message;
use crate::error::{Error, Result};
use crate::nn::Scalar;

/// Bytes per chunk written to a framed stream; frames larger than this are
/// split across chunks, so the receiver has to reassemble them.
pub const STREAM_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    InProcess,
    Framed,
}

/// One side of a duplex FIFO link.
pub trait Endpoint<T: Scalar>: Send {
    fn send(&mut self, msg: Message<T>) -> Result<()>;
    /// Blocks until a message arrives or the peer hangs up.
    fn recv(&mut self) -> Result<Message<T>>;
    fn try_recv(&mut self) -> Result<Option<Message<T>>>;
    /// Payload bytes pushed onto the link so far (zero for in-process queues).
    fn bytes_sent(&self) -> u64 {
        0
    }
}

pub type BoxedEndpoint<T> = Box<dyn Endpoint<T>>;

/// Connected `(client, server)` endpoints.
pub fn transport_pair<T: Scalar>(kind: TransportKind) -> (BoxedEndpoint<T>, BoxedEndpoint<T>) {
    match kind {
        TransportKind::InProcess => {
            let (a, b) = QueueEndpoint::pair();
            (Box::new(a), Box::new(b))
        }
        TransportKind::Framed => {
            let (a, b) = FramedEndpoint::pair();
            (Box::new(a), Box::new(b))
        }
    }
}

/// Passes messages by value through in-process channels.
pub struct QueueEndpoint<T: Scalar> {
    tx: Sender<Message<T>>,
    rx: Receiver<Message<T>>,
}

impl<T: Scalar> QueueEndpoint<T> {
    pub fn pair() -> (Self, Self) {
        let (tx_a, rx_b) = channel();
        let (tx_b, rx_a) = channel();
        (Self { tx: tx_a, rx: rx_a }, Self { tx: tx_b, rx: rx_b })
    }
}

impl<T: Scalar> Endpoint<T> for QueueEndpoint<T> {
    fn send(&mut self, msg: Message<T>) -> Result<()> {
        self.tx.send(msg).map_err(|_| Error::TransportClosed)
    }

    fn recv(&mut self) -> Result<Message<T>> {
        self.rx.recv().map_err(|_| Error::TransportClosed)
    }

    fn try_recv(&mut self) -> Result<Option<Message<T>>> {
        match self.rx.try_recv() {
            Ok(m) => Ok(Some(m)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(Error::TransportClosed),
        }
    }
}

/// Serializes every message into a length-prefixed frame and ships the
/// bytes as an unstructured stream of chunks.
pub struct FramedEndpoint<T: Scalar> {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    inbox: Vec<u8>,
    sent: u64,
    _marker: std::marker::PhantomData<fn() -> T>,
}

impl<T: Scalar> FramedEndpoint<T> {
    pub fn pair() -> (Self, Self) {
        let (tx_a, rx_b) = channel();
        let (tx_b, rx_a) = channel();
        let mk = |tx, rx| Self { tx, rx, inbox: Vec::new(), sent: 0, _marker: std::marker::PhantomData };
        (mk(tx_a, rx_a), mk(tx_b, rx_b))
    }

    fn take_frame(&mut self) -> Result<Option<Message<T>>> {
        if self.inbox.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(self.inbox[..4].try_into().expect("4 bytes")) as usize;
        if self.inbox.len() < 4 + len {
            return Ok(None);
        }
        let msg = Message::decode(&self.inbox[4..4 + len])?;
        self.inbox.drain(..4 + len);
        Ok(Some(msg))
    }
}

impl<T: Scalar> Endpoint<T> for FramedEndpoint<T> {
    fn send(&mut self, msg: Message<T>) -> Result<()> {
        let frame = msg.encode()?;
        let len = u32::try_from(frame.len()).map_err(|_| Error::Frame("frame exceeds 4 GiB".into()))?;
        let mut bytes = len.to_le_bytes().to_vec();
        bytes.extend_from_slice(&frame);
        self.sent += bytes.len() as u64;
        for chunk in bytes.chunks(STREAM_CHUNK) {
            self.tx.send(chunk.to_vec()).map_err(|_| Error::TransportClosed)?;
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Message<T>> {
        loop {
            if let Some(m) = self.take_frame()? {
                return Ok(m);
            }
            let chunk = self.rx.recv().map_err(|_| Error::TransportClosed)?;
            self.inbox.extend_from_slice(&chunk);
        }
    }

    fn try_recv(&mut self) -> Result<Option<Message<T>>> {
        loop {
            if let Some(m) = self.take_frame()? {
                return Ok(Some(m));
            }
            match self.rx.try_recv() {
                Ok(chunk) => self.inbox.extend_from_slice(&chunk),
                Err(TryRecvError::Empty) => return Ok(None),
                Err(TryRecvError::Disconnected) => return Err(Error::TransportClosed),
            }
        }
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::protocol::MessageKind;

    fn msgs() -> Vec<Message<f64>> {
        (0..5)
            .map(|i| {
                let n = 1 + i * 200;
                let data: Vec<f64> = (0..n).map(|k| (k as f64).sin() * 1e-3 + i as f64).collect();
                Message::new(MessageKind::SmashedData, i as u64, Tensor::from_f64(&[n], &data).unwrap())
            })
            .collect()
    }

    #[test]
    fn both_transports_are_fifo_and_lossless() {
        for kind in [TransportKind::InProcess, TransportKind::Framed] {
            let (mut a, mut b) = transport_pair::<f64>(kind);
            assert!(b.try_recv().unwrap().is_none());
            for m in msgs() {
                a.send(m).unwrap();
            }
            for m in msgs() {
                assert_eq!(b.recv().unwrap(), m);
            }
            assert!(b.try_recv().unwrap().is_none());
            b.send(Message::control(0, 1.0)).unwrap();
            assert_eq!(a.try_recv().unwrap().unwrap().control_value(), Some(1.0));
        }
    }

    #[test]
    fn hangup_is_reported() {
        let (mut a, b) = transport_pair::<f32>(TransportKind::Framed);
        drop(b);
        assert!(matches!(a.recv(), Err(Error::TransportClosed)));
    }
}
