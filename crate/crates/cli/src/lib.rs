//! Experiment runner: strict configuration files, parallel replica
//! execution and reproducible artifacts (`msd.csv`, `fit.json`,
//! `table.csv`, `manifest.json`, SVG plots).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod plot;
pub mod runner;
