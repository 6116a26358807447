//! Budget-constrained parameterized auctions over bidding quantile functions.
//!
//! Buyers are described by bidding quantile functions (the bid at each uniform
//! quantile). Five single-item mechanisms are supported: bid-discount and
//! pacing first-price auctions, bid-discount and pacing second-price auctions,
//! and the boosted-reserve optimal auction that ranks by virtual bids. The
//! crate evaluates expected outcomes by quadrature, solves for
//! budget-extracting parameter tuples, maps bidding profiles between
//! mechanisms while preserving outcomes, and cross-checks everything with a
//! Monte Carlo oracle.

pub mod error;
pub mod evaluate;
pub mod example;
pub mod mechanisms;
pub mod oracle;
pub mod qfspace;
pub mod quadrature;
pub mod roots;
pub mod solvers;
pub mod transforms;

pub use error::{Error, Result};
pub use evaluate::{outcome_profile, BuyerOutcome, Evaluator, OutcomeProfile};
pub use mechanisms::{Buyer, MechanismKind, MechanismSpec, Scenario};
pub use qfspace::QuantileFunction;
pub use quadrature::QuadratureConfig;
