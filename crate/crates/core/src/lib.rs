//! Adversarial simulation of particle trajectories.
//!
//! A stochastic recurrent generator extends short coordinate histories into
//! full trajectories; a convolutional discriminator scores segments; an
//! adversarial trainer couples the two. The statistics module provides the
//! evaluation pipeline (time-averaged MSD, power-law scaling exponents,
//! velocity distributions, Pearson correlation matrices, and accuracy /
//! generalization scores), and the synth module supplies Langevin-dynamics
//! ground truth so the whole pipeline runs without external data.

pub mod discriminator;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod io;
pub mod param;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
pub use param::Parameter;
pub use tape::{Activation, Mode, NodeId, Tape};
pub use tensor::Tensor;
pub use trajectory::{Component, Coordinate, NormStats, Trajectory};
