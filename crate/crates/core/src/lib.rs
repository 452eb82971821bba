//! Decision-uncertainty detection for autonomous UAV flights.
//!
//! The detector watches only the heading of the obstacle-avoidance module's
//! safe waypoints. Headings are unwrapped, resampled, cut into overlapping
//! zero-centered windows and scored by a convolutional autoencoder trained
//! on nominal flight segments; a rolling mean of the reconstruction loss
//! raises alarms. The crate also carries the statistics used to relate
//! detected uncertainty to flight safety, a trajectory fitness for test
//! generation, and a synthetic flight generator.

pub mod autoenc;
pub mod detector;
pub mod error;
pub mod evalstats;
pub mod flightdata;
pub mod geometry;
pub mod preprocess;
pub mod synthgen;

pub use error::{Error, Result};

use std::io::Write;
use std::path::Path;

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
