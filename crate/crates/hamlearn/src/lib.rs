//! Learning Lindbladians from time traces of Pauli expectation values.
//!
//! Pipeline: simulate traces ([`sim`], [`exact`]), fit them with robust
//! polynomials and extract derivatives at zero ([`interp`]), then invert the
//! linear isolation relations ([`isolation`]). [`shadows`] estimates many
//! Pauli transfer-matrix entries from shared randomized measurements.

pub mod error;
pub mod exact;
pub mod generator;
pub mod interp;
pub mod isolation;
pub mod lp;
pub mod model;
pub mod pauli;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod shadows;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
pub use pauli::{PauliAxis, PauliString, ProductStateSpec, Sign};
pub use scalar::Real;
pub use sim::{NoiseMode, SimConfig, TimeTrace};

pub type StateVector = state::StateVector<f64>;
pub type LindbladModel = model::LindbladModel<f64>;
pub type Lindbladian = generator::Lindbladian<f64>;
pub type DensityMatrix = exact::DensityMatrix<f64>;
pub type PolynomialFit = interp::PolynomialFit<f64>;
