//! Stationary rates and pairwise correlations of linear Galves-Löcherbach
//! (LGL) spiking networks.
//!
//! The crate has three layers:
//!
//! * [`pairsolve`] solves the stationary problem of one neuronal pair under
//!   independent Poisson drive, either through the Fredholm system for the
//!   boundary functions `h_i`, `h_j` or, without drive, in closed form.
//! * [`rmf`] closes the network by self-consistency: first-order
//!   (every neuron alone), pair-partition and all-pair replica mean-field
//!   limits.
//! * [`simulate`] runs exact event-driven simulations of the original
//!   network and of its finite-`M` replica versions.
//!
//! Only the no-relaxation regime (`tau = ∞`) has analytical solvers; the
//! simulator handles both.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod model;
pub mod numerics;
pub mod pairkernel;
pub mod pairsolve;
pub mod rmf;
pub mod simulate;
pub mod singlesolve;

pub use model::{Drive, NetworkSpec, NeuronParams, PairProblem, PartitionSpec, Tau};
pub use pairsolve::{pair_exact, solve_pair, PairSolution, SolverConfig};
pub use rmf::{solve_all_pair, solve_first_order, solve_pair_partition, RmfConfig, RmfSolution};
pub use simulate::{simulate, ReplicaMode, SimConfig, SimEstimate};
