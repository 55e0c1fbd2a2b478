// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reverse-mode differentiation over dense tensors.
//!
//! The graph only differentiates with respect to leaves created through
//! [`Graph::variable`] or [`Graph::param`]; model weights are borrowed
//! constants, so no weight gradients are ever materialized.

mod fdcheck;
mod graph;

pub use fdcheck::{finite_difference_check, FdEntry, FdReport};
pub use graph::{Gradients, Graph, NodeId, ScalarParam};
