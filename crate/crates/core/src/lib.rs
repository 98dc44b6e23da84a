pub mod consensus;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod knowledge_base;
pub mod linalg;
pub mod simulator;
pub mod sparse_coding;
pub mod task_model;
