//! Federated adversarial training of two-layer ReLU networks.
//!
//! The library is generic over the scalar type (`f32` or `f64`) through
//! [`Real`]; the aliases at the crate root fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod data;
pub mod error;
pub mod federation;
pub mod linalg;
pub mod manifold;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod verification;

pub use adversary::{perturb, worst_case_loss, AdversaryConfig, AdversaryMode, InputModel};
pub use error::{FalError, Result};
pub use federation::{run_fal, run_fedavg, FalConfig, GradientReport, Regime, RoundRecord};
pub use model::LossKind;
pub use rng::RngStream;
pub use scalar::Real;

pub type Vector = linalg::Vector<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type NetParams = model::NetParams<f64>;
pub type InitAnchor = model::InitAnchor<f64>;
pub type DataPoint = data::DataPoint<f64>;
pub type ClientDataset = data::ClientDataset<f64>;
pub type FederatedDataset = data::FederatedDataset<f64>;
pub type RunOutcome = federation::RunOutcome<f64>;

pub type Vector32 = linalg::Vector<f32>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type NetParams32 = model::NetParams<f32>;
