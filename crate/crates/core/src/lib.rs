//! Numerical core of a Siamese selective-state-space segmentation network:
//! dense-array primitives, selective scan kernels with exact adjoints,
//! four-direction 2D scanning, cross/concat multi-modal fusion, the full
//! encoder/fusion/decoder forward pass, and the complexity analysis tooling
//! that accompanies it.

pub mod analysis;
pub mod blocks;
pub mod error;
pub mod fusion;
pub mod io;
pub mod model;
pub mod reference;
pub mod rng;
pub mod scalar;
pub mod scan2d;
pub mod ssm;
pub mod tensor;

pub use error::{Result, SigmaError};
pub use scalar::Scalar;
pub use tensor::{DenseArray, FeatureMap};
