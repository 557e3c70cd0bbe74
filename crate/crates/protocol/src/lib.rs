//! Commit, prove and verify fairness certificates against a committed model.

mod bigint_serde;
pub mod checks;
pub mod circuit;
pub mod commitment;
pub mod encoding;
pub mod error;
pub mod exact;
pub mod merkle;
pub mod mutation;
pub mod prover;
pub mod transcript;
pub mod verifier;

pub use checks::{CheckBackend, Replay};
pub use circuit::{compile_check, evaluate_constraints, ConstraintBackend};
pub use commitment::{commit_model, Commitment, ProverState};
pub use encoding::{FixedPointEncoding, QuantizedModel, QuantizedSpec};
pub use error::{ProtocolError, Result};
pub use prover::{CacheStats, Prover};
pub use transcript::{CheckKind, ProofTranscript, SubProof};
pub use verifier::{verify_certificate, verify_with, RejectKind, Rejection, Verdict};
