//! Grid approximation of chain control sets.

mod bounds;
mod graph;
mod grid;
mod sets;

pub use bounds::*;
pub use graph::*;
pub use grid::*;
pub use sets::*;

#[cfg(test)]
mod tests;
