// SPDX-License-Identifier: Apache-2.0

//! Causal influence between scalar time series, measured two ways.
//!
//! * Probabilistically: transfer entropy `T_{y->x} = h(X'|X) - h(X'|X,Y)`
//!   from k-nearest-neighbor (Kozachenko-Leonenko) entropy estimates
//!   ([`entropy`]).
//! * Geometrically: `GeoC_{y->x}`, the drop in the correlation dimension
//!   the future of `x` adds once `y` is known ([`corr_dim`]).
//!
//! Both are checked against closed-form and quadrature ground truth
//! ([`oracles`]), numerical transfer operators and the total-variation
//! lower bound on transfer entropy ([`transfer_op`]), and seeded synthetic
//! systems ([`synth`]). [`io`] holds CSV ingestion and report writing.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corr_dim;
pub mod entropy;
pub mod error;
pub mod io;
pub mod maps;
pub mod neighbors;
pub mod oracles;
pub mod series;
pub mod synth;
pub mod transfer_op;

pub use error::{Error, Result};
pub use series::{join, standardize, JoinSpec, PointCloud, TimeSeries, Transitions};
