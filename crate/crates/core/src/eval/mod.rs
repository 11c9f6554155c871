//! Corpus generation, text metrics, experiment orchestration and reports.

pub mod config;
pub mod corpus;
pub mod decode;
pub mod pipeline;
pub mod report;
pub mod text;
