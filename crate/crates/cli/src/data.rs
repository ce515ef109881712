//! Corpus directories: `DIR/<SOURCE_TAG>/NNNNN.motion`.

use std::path::{Path, PathBuf};

use mpgen_core::corpus::Datasets;

use crate::error::{CliError, Result};
use crate::motion_file::{read_motion_file, write_motion_file, MotionFile, EXTENSION};

pub fn sample_path(dir: &Path, tag: mpgen_core::SourceTag, index: usize) -> PathBuf {
    dir.join(tag.as_str()).join(format!("{index:05}.{EXTENSION}"))
}

/// Writes every sample; returns the number of files.
pub fn write_datasets(dir: &Path, data: &Datasets) -> Result<usize> {
    let mut count = 0;
    for (&tag, samples) in data {
        for (i, s) in samples.iter().enumerate() {
            write_motion_file(&MotionFile::from(s.clone()), &sample_path(dir, tag, i))?;
            count += 1;
        }
    }
    Ok(count)
}

/// Motion files under `path` (itself, if a file) in sorted order.
pub fn motion_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::Runtime(format!("{}: no such file or directory", path.display())));
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| CliError::from(e).in_file(&dir))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == EXTENSION) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Every motion file under `path`, grouped by the source tag in its header.
pub fn read_datasets(path: &Path) -> Result<Datasets> {
    let mut data = Datasets::new();
    for p in motion_files(path)? {
        let file = read_motion_file(&p)?;
        data.entry(file.sample.source_tag).or_default().push(file.sample);
    }
    if data.is_empty() {
        return Err(CliError::Runtime(format!("{}: no .{EXTENSION} files", path.display())));
    }
    Ok(data)
}
