//! Certified bounds on Schmidt-number robustness of bipartite states,
//! distributed measurements and teleportation instruments, plus the
//! state-discrimination game whose advantage they quantify.

extern crate openblas_src as _;

pub mod cone;
pub mod error;
pub mod game;
pub mod linalg;
pub mod objects;
pub mod random;
pub mod robustness;
pub mod sdp;
pub mod serde_complex;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
