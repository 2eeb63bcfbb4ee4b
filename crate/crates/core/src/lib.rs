//! Adversarial uncertainty sampling for neural-network potential energy surfaces.
//!
//! A committee of small MLPs is trained on labeled configurations; attacks then
//! push configurations toward regions where the committee disagrees while the
//! Boltzmann weight of the mean prediction stays appreciable. Selected
//! configurations are labeled by a reference potential and added to the data.

pub mod adversary;
pub mod alloop;
pub mod committee;
pub mod cvgeom;
pub mod dual;
pub mod error;
pub mod io;
pub mod potentials;
pub mod rng;
pub mod selection;
pub mod trainer;

pub use committee::{Committee, CommitteeStats, MlpArchitecture, ModelParameters, VarianceKind};
pub use error::{Error, Result};
pub use potentials::{Configuration, LabeledSample, PotentialSpec};
