//! Two-party split-learning engine.
//!
//! The client and server are message-driven state machines joined by a
//! transport; drivers pump messages between them either in lockstep on one
//! thread or with the client on its own thread.

mod driver;
mod message;
mod party;
mod session;
mod snapshot;
mod transport;

pub use driver::{drive_lockstep, drive_threaded, eval_forward, joint_accuracy, DriverKind, EpochAccuracy, EVAL_BATCH};
pub use message::{Message, MessageKind, END_OF_SESSION, FRAME_MAGIC, WIDE_PAYLOAD_FLAG};
pub use party::{
    ClientParty, ClientRecord, ClientSetup, Observer, ServerBehavior, ServerParty, ServerRecord, SessionStatus, Topology,
};
pub use session::{
    monolithic_reference, run_label_protected, run_session, run_training, transcript_jsonl, SessionConfig,
    SessionOutcome, SplitModel, TranscriptRecord,
};
pub use snapshot::{GroundTruthLedger, SnapshotEntry, SnapshotStore};
pub use transport::{transport_pair, BoxedEndpoint, Endpoint, FramedEndpoint, QueueEndpoint, TransportKind, STREAM_CHUNK};
