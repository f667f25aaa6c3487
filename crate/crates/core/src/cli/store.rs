//! On-disk layout of phantom and dataset directories.
//!
//! Phantoms: `phantom_%05d.nimg` plus `manifest.csv` (`index,seed,file`).
//! Datasets: `z_%05d.nimg`, `r_%05d.nimg`, `x_%05d.nimg` (ground truth) and
//! `sino_%05d.nimg` plus `manifest.csv`
//! (`index,kind,split,noise_level,delta`).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::formats::{load_nimg, save_nimg};
use crate::tensor::Tensor;
use crate::training::{Dataset, Sample, SampleKind, Split, SplitKind};

pub const MANIFEST: &str = "manifest.csv";
pub const RESOLVED_CONFIG: &str = "resolved.cfg";

pub fn phantom_file(i: usize) -> String {
    format!("phantom_{i:05}.nimg")
}

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::invalid("manifest", format!("{}:{line}: {msg}", path.display()))
}

/// Manifest rows without the header, split on commas.
fn read_manifest(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == header => {}
        _ => return Err(parse_err(path, 1, format!("expected header `{header}`"))),
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if cols.len() != width {
            return Err(parse_err(path, k + 2, format!("expected {width} columns")));
        }
        rows.push(cols);
    }
    Ok(rows)
}

pub fn write_phantom_manifest(dir: &Path, seeds: &[u64]) -> Result<()> {
    let mut s = String::from("index,seed,file\n");
    for (i, seed) in seeds.iter().enumerate() {
        s += &format!("{i},{seed},{}\n", phantom_file(i));
    }
    fs::write(dir.join(MANIFEST), s)?;
    Ok(())
}

/// Phantom paths in manifest order.
pub fn phantom_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let path = dir.join(MANIFEST);
    let rows = read_manifest(&path, "index,seed,file")?;
    Ok(rows.into_iter().map(|r| dir.join(&r[2])).collect())
}

pub fn save_dataset(dir: &Path, ds: &Dataset<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("index,kind,split,noise_level,delta\n");
    for (i, s) in ds.samples.iter().enumerate() {
        save_nimg(dir.join(format!("z_{i:05}.nimg")), &s.z)?;
        save_nimg(dir.join(format!("r_{i:05}.nimg")), &s.r)?;
        save_nimg(dir.join(format!("x_{i:05}.nimg")), &s.truth)?;
        save_nimg(dir.join(format!("sino_{i:05}.nimg")), &s.sinogram)?;
        let split = ds.split.kind_of(i).map(SplitKind::name).unwrap_or("none");
        manifest += &format!("{i},{},{split},{:?},{:?}\n", s.kind, s.noise_level, s.delta);
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset<f64>> {
    let path = dir.join(MANIFEST);
    let rows = read_manifest(&path, "index,kind,split,noise_level,delta")?;
    let mut samples = Vec::with_capacity(rows.len());
    let mut split = Split::default();
    for (k, r) in rows.iter().enumerate() {
        let line = k + 2;
        let i: usize = r[0].parse().map_err(|_| parse_err(&path, line, "bad index"))?;
        if i != k {
            return Err(parse_err(&path, line, format!("index {i} out of order")));
        }
        let kind = SampleKind::parse(&r[1]).ok_or_else(|| parse_err(&path, line, format!("bad kind `{}`", r[1])))?;
        let part = SplitKind::parse(&r[2]).ok_or_else(|| parse_err(&path, line, format!("bad split `{}`", r[2])))?;
        let noise_level: f64 = r[3].parse().map_err(|_| parse_err(&path, line, "bad noise_level"))?;
        let delta: f64 = r[4].parse().map_err(|_| parse_err(&path, line, "bad delta"))?;
        let load = |prefix: &str| -> Result<Tensor<f64>> { load_nimg(dir.join(format!("{prefix}_{i:05}.nimg"))) };
        samples.push(Sample {
            z: load("z")?,
            r: load("r")?,
            truth: load("x")?,
            sinogram: load("sino")?,
            kind,
            noise_level,
            delta,
        });
        match part {
            SplitKind::Train => split.train.push(i),
            SplitKind::Validation => split.validation.push(i),
            SplitKind::Test => split.test.push(i),
        }
    }
    Dataset::new(samples, split)
}
