pub mod cnn;
pub mod detect;
pub mod eval;
pub mod power;
pub mod synth;
pub mod train;

use std::path::Path;

use trapnode_core::imaging::{load_pgm, GrayImage};

use crate::error::{read_bytes, CliError, CliResult};

/// Image id used in reports: the file stem.
pub fn image_id(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

/// Loads a PGM, returning the raw bytes for digesting as well.
pub fn load_image(path: &Path) -> CliResult<(GrayImage, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let img = load_pgm(&bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok((img, bytes))
}

/// `.pgm` files of a directory in name order.
pub fn pgm_files(dir: &Path) -> CliResult<Vec<std::path::PathBuf>> {
    let rd =
        std::fs::read_dir(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry
            .map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?
            .path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::input(format!("{}: no .pgm files", dir.display())));
    }
    Ok(files)
}
