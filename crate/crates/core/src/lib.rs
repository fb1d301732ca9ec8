//! Classical planning with width-based search guided by policy sketches,
//! indexical features and sketch modules.

pub mod engine;
pub mod features;
pub mod fixtures;
pub mod ground;
pub mod novelty;
pub mod pddl;
pub mod sexpr;
pub mod sketch;
pub mod termination;
