//! Bike-sharing rebalancing with trucks and customer incentives.
//!
//! The core is generic over the scalar type where exact arithmetic is
//! useful (utility, QP); the aliases below fix the common choices.

pub mod corpus;
pub mod customer;
pub mod demand;
pub mod num;
pub mod pricing;
pub mod qp;
pub mod routing;
pub mod seed;
pub mod sim;
pub mod utility;

pub use num_rational::Ratio;

/// Exact rational scalar used by the utility oracles.
pub type Rational = Ratio<i64>;

pub type Plateau = utility::Plateau<f64>;
pub type ExactPlateau = utility::Plateau<Rational>;
pub type PlateauTable = utility::PlateauTable<f64>;
pub type FillTrajectory = utility::FillTrajectory<f64>;
pub type ExactFillTrajectory = utility::FillTrajectory<Rational>;

pub type QpInstance = qp::QpInstance<f64>;
pub type QpInstance32 = qp::QpInstance<f32>;
pub type QpSolution = qp::QpSolution<f64>;
pub type QpSettings = qp::QpSettings<f64>;
