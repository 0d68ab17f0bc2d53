pub mod annotate;
pub mod cli;
pub mod corpus;
pub mod fusion;
pub mod metrics;
pub mod noiser;
pub mod probing;
pub mod rng;
pub mod text;
