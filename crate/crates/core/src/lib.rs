//! Subject-invariant EEG representations with adversarially censored
//! conditional variational autoencoders.

pub mod dataio;
pub mod diffcore;
pub mod evaluation;
pub mod models;
pub mod objectives;
pub mod training;
