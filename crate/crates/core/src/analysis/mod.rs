//! Filterbank geometry and deformation stability.

pub mod deform;
pub mod distance;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use deform::{
    deform, smooth_test_image, stability_curve, DeformationKind, DeformationSpec, ALL_KINDS,
};
pub use distance::{
    arc_distance, distance_trajectory, filterbank_distance, hungarian, morlet_distance, FilterMatch,
};

/// `kind,strength,normalized_distance` rows.
pub fn stability_csv(rows: &[(DeformationKind, f64, f64)]) -> String {
    let mut out = String::from("kind,strength,normalized_distance\n");
    for (k, s, d) in rows {
        writeln!(out, "{k},{s},{d}").expect("write to string");
    }
    out
}

/// `epoch,distance` rows.
pub fn trajectory_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("epoch,distance\n");
    for (e, d) in rows {
        writeln!(out, "{e},{d}").expect("write to string");
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
