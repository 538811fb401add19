//! Parallel-measurement quantum state tomography: measurement planning with
//! perfect hash families, shot sampling, locally-purified-state
//! reconstruction and state metrics.

pub mod circuits;
pub mod hashfam;
pub mod optim;
pub mod pauli;
pub mod simstate;
pub mod metrics;
pub mod sampler;
pub mod lps;
