//! Threshold voter models on the torus `{1..r}^d`: an exact event-driven
//! simulator, coupled constructions, the auxiliary ball-in-box processes,
//! closed-form and exact-enumeration oracles, and an experiment harness.
//!
//! Oracle and curve routines are generic over the floating-point type
//! ([`Real`]); the simulator keeps time in `f64`. Concrete `f64` aliases are
//! exported at the crate root.

pub mod ballgame;
pub mod config;
pub mod coupling;
pub mod error;
pub mod harness;
pub mod observables;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod torus;

pub use config::Configuration;
pub use error::{Error, Result};
pub use rng::{RngStream, SimRng};
pub use scalar::Real;
pub use sim::{run, Engine, FlipEvent, FlipRule, Observer, Simulation, Step, Trajectory};
pub use torus::{TorusShape, VertexId};

pub use ballgame::BoxState;
pub use coupling::{CoupledTrajectory, EtaZetaCoupling, MonotoneCoupling};
pub use harness::{run_experiment, ExperimentSpec, Mode, SpecInput};
pub use observables::Series;

/// `f64` instances of the generic oracle types.
pub type Ldp = oracle::LdpConstants<f64>;
pub type DeathLaw = oracle::DeathLaw<f64>;
pub type ExpectedCounts = oracle::ExpectedCounts<f64>;
pub type FluidPoint = observables::FluidPoint<f64>;
