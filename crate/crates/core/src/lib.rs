//! Generation of labeled vulnerable C samples: a value-flow-aware context
//! model locates injection sites, and mined edit patterns inject the bug.

pub mod code;
pub mod corpus;
pub mod fixtures;
pub mod flow;
pub mod model;
pub mod pattern;
pub mod pipeline;
pub mod pretrain;
pub mod synth;
