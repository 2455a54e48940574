//! Library surface of the command line front end: WAV I/O, the experiment
//! harness, and error classification.

pub mod error;
pub mod harness;
pub mod wav;
