//! Experiment harness for the CRN simulator and trainer: configuration
//! loading, training/evaluation orchestration, metric logging, the sensing
//! study, and the brute-force allocation oracle.

pub mod config;
pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod study;
