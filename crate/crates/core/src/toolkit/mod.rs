//! Instance generation, exact certification, validation, benchmarking and
//! batch file formats.

pub mod bench;
pub mod certify;
pub mod generate;
pub mod io;
pub mod validate;
