//! Glioma grade and survival prediction pipeline.
//!
//! End-to-end machinery for the two classification tasks: NIfTI volume
//! loading and RAS reorientation, intensity windowing and slice-stack
//! extraction, clinical cohort assembly with imputation and balancing,
//! dual-input (image + tabular) transfer-learning models over a backbone
//! registry, grade/survival evaluation metrics, and the experiment sweeps
//! (backbone comparison, one-at-a-time hyperparameter search, Monte Carlo
//! split evaluation, final evaluation).

pub mod backbones;
pub mod cohort;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod intensity;
pub mod metrics;
pub mod model;
pub mod nifti;
pub mod nn;
pub mod synthdata;
pub mod tensorstore;
