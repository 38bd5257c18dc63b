pub mod brinkman;
pub mod diagnostics;
pub mod evolution;
pub mod field;
pub mod harness;
