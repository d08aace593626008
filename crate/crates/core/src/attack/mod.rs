//! Feature-oriented reconstruction attack run by a semi-honest server.

pub mod fora;
pub mod mmd;
mod threaded;

pub use fora::{
    disc_loss, disc_step, substitute_step, train_inverse, AttackConfig, AttackPhase, AttackStepRecord, DiscObjective, ForaAttacker,
    SubstituteLoss, PROB_CLAMP,
};
pub use mmd::{median_bandwidth, median_distance, mmd2, mmd2_with_grad, KernelSet};
pub use threaded::ThreadedObserver;
