//! Decentralized downlink power control for cell-free massive MIMO.
//!
//! The crate is organised bottom-up:
//!
//! * [`netenv`] draws AP/UE deployments, long-term path-loss and imperfect
//!   short-term CSI.
//! * [`objective`] evaluates conjugate-beamforming SINR and sum-rates.
//! * [`csgd`] is the cooperative projected-SGD optimizer used as the
//!   performance upper bound.
//! * [`neuralcore`] is a small dense-network engine with hand-written
//!   backpropagation and Adam.
//! * [`coplearn`] builds the cooperative-learning pipeline (uplink message
//!   network, pooled CP network, decision network) and its baselines.
//! * [`harness`] wires everything into reproducible experiments and a CLI.

pub mod coplearn;
pub mod csgd;
pub mod error;
pub mod harness;
pub mod netenv;
pub mod neuralcore;
pub mod objective;

pub use error::{Error, Result};
