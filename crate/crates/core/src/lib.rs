pub mod action;
pub mod cli;
pub mod entity;
pub mod io;
pub mod linguistic;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod relation;
pub mod selftest;
pub mod tensor;
pub mod tgfe;
