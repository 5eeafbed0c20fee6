//! Discovery of emergent behaviors in two-type swarms of computation-free robots.
//!
//! The pipeline: [`sim`] turns a nine-value [`Genome`] into a [`Trajectory`];
//! [`metrics`] (or an external embedder via [`embed`]) maps trajectories to
//! behavior vectors; [`search`] fills an [`Archive`] by novelty search or random
//! sampling; [`cluster`] extracts a taxonomy of representatives; [`hil`] runs the
//! interactive discovery sessions.

pub mod archive;
pub mod cluster;
pub mod embed;
pub mod error;
pub mod genome;
pub mod hil;
pub mod metrics;
pub mod render;
pub mod run;
pub mod search;
pub mod sim;
pub mod taxonomy;
pub mod trajectory_io;

pub use archive::{Archive, ArchiveEntry};
pub use error::{Error, Result};
pub use genome::{Controller, Genome};
pub use metrics::{BehaviorVector, Featurizer, HandCrafted, MetricWindow, Representation};
pub use search::SearchConfig;
pub use sim::{simulate, AgentState, AgentType, SimConfig, Trajectory};
