pub mod engine;
pub mod network;
pub mod pwl;
pub mod query;
pub mod summaries;
pub mod toolkit;
