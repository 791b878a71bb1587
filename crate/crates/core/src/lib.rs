//! Decentralized actor-critic for cooperative multi-agent reinforcement
//! learning with overparameterized ReLU networks and gossip consensus.
//!
//! Agents share a global state, act independently, and each observes its own
//! reward. Every agent trains a neural critic by projected TD learning, the
//! critics and the TD errors are averaged with neighbours over a
//! communication graph, and each actor takes a normalized policy-gradient
//! step. The [`oracle`] module solves small tabular problems exactly and backs
//! the test suite.

pub mod actor;
pub mod checkpoint;
pub mod config;
pub mod consensus;
pub mod critic;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod runlog;
pub mod seed;
pub mod stats;
pub mod verify;

pub use actor::{train, ActorConfig, DirectionSignal, StepSchedule, TdSign, TrainOutcome, TrainSetup};
pub use config::{AxisValue, ResolvedSweep, RunConfig, SweepAxis, SweepSpec};
pub use consensus::{CommGraph, ConsensusMatrix, Topology};
pub use critic::CriticConfig;
pub use env::{GridSpread, GridSpreadConfig, Mamdp, RestartKernel, TabularMdp};
pub use error::{Error, Result};
pub use nn::{FcNet, TrainableSet};
pub use policy::{ActorPool, Policy, PolicyTable};
pub use runlog::{EpisodeRecord, RunLog, RunSummary};
pub use seed::SeedStream;
