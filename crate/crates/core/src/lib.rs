pub mod data;
pub mod forest;
pub mod importance;
mod linalg;
pub mod lmm;
pub mod simgen;
pub mod survstats;
pub mod tree;
