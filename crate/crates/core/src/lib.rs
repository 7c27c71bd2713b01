//! Multitype Galton-Watson trees conditioned on their size.
//!
//! - [`model`]: alphabets, offspring configurations and kernels, mean matrices
//!   and their recurrent/transient classification.
//! - [`sim`]: plain and size-conditioned sampling, exact enumeration of small
//!   trees.
//! - [`empirical`]: empirical offspring and pair measures, consistency and its
//!   repair.
//! - [`rate`]: the rate functions `I_p`, `I`, `J`, `J_k`, `K`, the infimum
//!   identity oracle and a minimizer of `J` over total-variation balls.
//! - [`tilting`]: exponentially tilted kernels, Radon-Nikodym weights and
//!   importance-sampling estimators.
//! - [`cli`], [`verify`]: the `gwldp` command line and its acceptance checks.
//!
//! ```
//! use gwldp::law::CountLaw;
//! use gwldp::rate::legendre_ip;
//!
//! let p = CountLaw::geometric(0.5).unwrap();
//! let i0 = legendre_ip(&p, 0.0).unwrap().value();
//! assert!((i0 - 2f64.ln()).abs() < 1e-12);
//! ```

// `!(x >= 0.0)` is how NaN gets rejected along with negatives
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod empirical;
pub mod error;
pub mod law;
pub mod model;
pub mod par;
pub mod rate;
pub mod sim;
pub mod spec_doc;
pub mod tilting;
pub mod tree;
pub mod verify;
