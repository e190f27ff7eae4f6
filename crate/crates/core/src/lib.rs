//! Random recurrent neural networks: finite-size simulation, dynamic
//! mean-field equations, chaos diagnostics, trajectory-measure densities and
//! the Fokker-Planck analysis of sparse inhibitory integrate-and-fire
//! networks.
//!
//! The deterministic solvers ([`quadrature`], [`meanfield`], [`twopop`]) are
//! generic over the scalar type through [`Scalar`]; the aliases below fix
//! them to `f64`, which is what the simulators and the CLI use.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod fokker;
pub mod girsanov;
pub mod io;
pub mod meanfield;
pub mod netsim;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod transfer;
pub mod twopop;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MeanFieldParams64 = meanfield::MeanFieldParams<f64>;
pub type PotentialLaw64 = meanfield::PotentialLaw<f64>;
pub type MomentSeries64 = meanfield::MomentSeries<f64>;
pub type CrossSeries64 = meanfield::CrossSeries<f64>;
pub type BalancedMap64 = meanfield::BalancedMap<f64>;
pub type ChaosCell64 = meanfield::ChaosCell<f64>;
pub type TwoPopParams64 = twopop::TwoPopParams<f64>;
pub type GDPoint64 = twopop::GDPoint<f64>;
pub type MapSettings64 = twopop::MapSettings<f64>;
pub type GaussHermite64 = quadrature::GaussHermite<f64>;
pub type CompositeLegendre64 = quadrature::CompositeLegendre<f64>;
pub type QuadratureRule64 = quadrature::QuadratureRule<f64>;
pub type TransferFunction64 = transfer::TransferFunction<f64>;
