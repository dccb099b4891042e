//! Streaming analysis of tri-axial accelerometer logs from laying hens.

pub mod calendar;
pub mod classify;
pub mod dictionary;
pub mod ingest;
pub mod slicer;
pub mod report;
pub mod synthkit;
pub mod cli;
