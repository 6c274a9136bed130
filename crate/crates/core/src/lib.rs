pub mod bench;
pub mod codec;
pub mod cli;
pub mod crypto;
pub mod merkle;
pub mod pprl;
pub mod registry;
pub mod service;
pub mod synth;
pub mod workflows;
