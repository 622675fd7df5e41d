//! Non-negative CP decomposition of transaction tensors, calibration of a
//! coupled GBM/OU model on the time factors, and Monte Carlo pricing of
//! digital claims on factor growth.

pub mod calibration;
pub mod cp;
pub mod error;
pub mod ingest;
pub mod payoff;
pub mod pipeline;
pub mod rng;
pub mod stochastic;
pub mod synthetic;
pub mod tensor;

pub use cp::{nncp_decompose, FactorSet, FitTrace, SolverConfig};
pub use error::{Error, ErrorKind, Result};
pub use tensor::{Matrix, Mode, Tensor3};
