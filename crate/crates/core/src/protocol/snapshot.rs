use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotEntry<T: Scalar> {
    pub batch_id: u64,
    pub smashed: Tensor<T>,
}

/// Server-side archive of the smashed data received during the most recent
/// epoch. It holds nothing but what crossed the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotStore<T: Scalar> {
    epoch: Option<usize>,
    entries: Vec<SnapshotEntry<T>>,
}

impl<T: Scalar> Default for SnapshotStore<T> {
    fn default() -> Self {
        Self { epoch: None, entries: Vec::new() }
    }
}

impl<T: Scalar> SnapshotStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Discards the previous epoch.
    pub fn begin_epoch(&mut self, epoch: usize) {
        self.epoch = Some(epoch);
        self.entries.clear();
    }

    pub fn record(&mut self, batch_id: u64, smashed: Tensor<T>) {
        self.entries.push(SnapshotEntry { batch_id, smashed });
    }

    pub fn epoch(&self) -> Option<usize> {
        self.epoch
    }

    pub fn entries(&self) -> &[SnapshotEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.entries.iter().map(|e| e.smashed.batch()).sum()
    }

    /// All snapshot rows stacked in arrival order.
    pub fn stacked(&self) -> Result<Tensor<T>> {
        let parts: Vec<&Tensor<T>> = self.entries.iter().map(|e| &e.smashed).collect();
        if parts.is_empty() {
            return Err(Error::Empty("snapshot store"));
        }
        Tensor::concat_rows(&parts)
    }
}

/// Client-side record of which private samples went into each smashed
/// batch of the most recent epoch. Used only to score reconstructions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthLedger {
    epoch: Option<usize>,
    entries: Vec<(u64, Vec<usize>)>,
}

impl GroundTruthLedger {
    pub fn begin_epoch(&mut self, epoch: usize) {
        self.epoch = Some(epoch);
        self.entries.clear();
    }

    pub fn record(&mut self, batch_id: u64, indices: Vec<usize>) {
        self.entries.push((batch_id, indices));
    }

    pub fn epoch(&self) -> Option<usize> {
        self.epoch
    }

    pub fn entries(&self) -> &[(u64, Vec<usize>)] {
        &self.entries
    }

    /// Dataset indices aligned row by row with `snapshot`.
    pub fn align<T: Scalar>(&self, snapshot: &SnapshotStore<T>) -> Result<Vec<usize>> {
        if snapshot.epoch() != self.epoch || snapshot.len() != self.entries.len() {
            return Err(Error::Protocol(format!(
                "snapshot (epoch {:?}, {} batches) does not match ledger (epoch {:?}, {} batches)",
                snapshot.epoch(),
                snapshot.len(),
                self.epoch,
                self.entries.len()
            )));
        }
        let mut out = Vec::with_capacity(snapshot.samples());
        for (entry, (id, idx)) in snapshot.entries().iter().zip(&self.entries) {
            if entry.batch_id != *id || entry.smashed.batch() != idx.len() {
                return Err(Error::Protocol(format!("snapshot batch {} does not match ledger batch {id}", entry.batch_id)));
            }
            out.extend_from_slice(idx);
        }
        Ok(out)
    }

    /// Ground-truth images aligned with `snapshot`, stacked.
    pub fn truth_images<T: Scalar>(&self, data: &ImageDataset, snapshot: &SnapshotStore<T>) -> Result<Tensor<f64>> {
        data.images().select_rows(&self.align(snapshot)?)
    }
}
