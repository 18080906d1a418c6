//! Joint estimation of a multi-task regression coefficient matrix and its
//! row, column and bi-cluster structure through convex fusion penalties.

pub mod datagen;
pub mod error;
pub mod formulation1;
pub mod formulation2;
pub mod lasso;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prox;
pub mod selection;
mod union_find;
pub mod weights;

pub use error::{Error, Result};
pub use model::*;
