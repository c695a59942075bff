//! Differentially private convolutional deep belief networks.
//!
//! The CRBM energy is made polynomial by replacing the logistic with a
//! truncated Chebyshev expansion, and its coefficients are perturbed once
//! with Laplace noise (functional mechanism). Training epochs then consume
//! no further privacy budget.

pub mod cheb_approx;
pub mod energy_model;
pub mod dp_softmax;
pub mod functional_mech;
pub mod network;
pub mod data_io;
pub mod cli;
