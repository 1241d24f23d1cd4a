//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use margpost::models::regression::RegressionModel;

#[path = "../../src/test_util.rs"]
pub mod oracle;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn presets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

/// One-covariate regression through the origin on a handful of points.
pub fn tiny_regression(x: &[f64], y: &[f64], g: f64, a0: f64, b0: f64) -> RegressionModel {
    RegressionModel::new(
        DMatrix::from_column_slice(x.len(), 1, x),
        DVector::from_column_slice(y),
        g,
        a0,
        b0,
    )
    .unwrap()
}

/// Relative closeness on the log scale.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
