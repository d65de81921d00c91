pub mod codec;
pub mod error;
pub mod geometry;
pub mod hgat;
pub mod merge;
pub mod pipeline;
pub mod scenario;
pub mod stgraph;
