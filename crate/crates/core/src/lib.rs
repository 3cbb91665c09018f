//! Regularized tomographic reconstruction: parallel-beam projectors,
//! edge-preserving Laplacian, TV and TV-l2 penalties, least-squares and
//! Poisson solvers, data simulation and benchmark reporting.

pub mod error;
pub mod experiment;
pub mod io;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod projector;
pub mod recon;
pub mod regularizers;
pub mod solvers;
pub mod simulate;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
pub use model::{uniform_angles, GridSpec, Image, RegionMask, Sinogram};
pub use phantom::{generate_ct_phantom, generate_et_phantom, EtPhantom, PhantomDescriptor, Primitive};
pub use projector::{build_projector, Kernel, ProjectionOperator, ProjectorSpec};
pub use regularizers::{
    build_gradient_matrix, compute_el_weights, penalty_value, PenaltyKind, RegularizerMatrix,
};
pub use sparse::CsrMatrix;
