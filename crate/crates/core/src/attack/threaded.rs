use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::protocol::{Message, Observer};

/// Runs an observer on its own thread, fed through a bounded queue. The
/// inner observer sees messages in the same order as a direct one would.
pub struct ThreadedObserver<T: Scalar, O> {
    tx: Option<SyncSender<Message<T>>>,
    handle: Option<JoinHandle<Result<O>>>,
}

impl<T: Scalar, O: Observer<T> + 'static> ThreadedObserver<T, O> {
    pub fn spawn(mut inner: O, bound: usize) -> Self {
        let (tx, rx) = sync_channel::<Message<T>>(bound.max(1));
        let handle = std::thread::spawn(move || {
            for msg in rx {
                inner.observe(&msg)?;
            }
            Ok(inner)
        });
        Self { tx: Some(tx), handle: Some(handle) }
    }

    /// Drain the queue and hand back the inner observer.
    pub fn finish(mut self) -> Result<O> {
        self.tx.take();
        let handle = self.handle.take().expect("joined once");
        handle.join().map_err(|_| Error::Protocol("observer thread panicked".into()))?
    }
}

impl<T: Scalar, O: Observer<T> + 'static> Observer<T> for ThreadedObserver<T, O> {
    fn observe(&mut self, msg: &Message<T>) -> Result<()> {
        let tx = self.tx.as_ref().ok_or(Error::TransportClosed)?;
        tx.send(msg.clone()).map_err(|_| Error::Protocol("observer thread stopped early".into()))
    }
}

impl<T: Scalar, O> Drop for ThreadedObserver<T, O> {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
