//! Higher-order information analysis of small MLPs.
//!
//! The pipeline: train a 784-20-20-20-10 network on MNIST ([`mlp`]), extract
//! hidden pre-activations, copula-normalize them with the class label
//! ([`gcmi`]), score neuron multiplets by O-information ([`omega`]), search for
//! the most synergistic or redundant multiplets per layer ([`search`]) and
//! retrain the subnetworks they pick ([`experiments`]).

pub mod data;
pub mod error;
pub mod experiments;
pub mod gcmi;
pub mod mlp;
pub mod omega;
pub mod oracle;
pub mod search;
pub mod store;

pub use data::{load_mnist_dir, Dataset};
pub use error::{Error, Result};
pub use gcmi::{
    copula_transform, copula_transform_with_target, correlation_model, Column, CorrelationModel,
    EntropyOptions,
};
pub use mlp::{
    ActivationMatrix, Checkpoint, FreezeMode, FreezePlan, LayerId, NetworkConfig, Params,
    TrainConfig,
};
pub use omega::{omega, omega_batch, OmegaValue};
pub use search::{Multiplet, Objective, SearchMethod, SearchOptions, SearchProfile};
