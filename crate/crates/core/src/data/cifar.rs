use std::fs;
use std::path::{Path, PathBuf};

use super::{ImageDataset, Provenance};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// One label byte followed by 32x32 R, G and B planes.
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

pub const CIFAR10_CLASSES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];
pub const CIFAR10_LIVING: &[usize] = &[2, 3, 4, 5, 6, 7];

fn parse(bytes: &[u8], images: &mut Vec<f64>, labels: &mut Vec<usize>, origin: &Path) -> Result<()> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a positive multiple of {CIFAR_RECORD_LEN}",
            origin.display(),
            bytes.len()
        )));
    }
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format(format!("{}: record {i} has label byte {}", origin.display(), rec[0])));
        }
        labels.push(rec[0] as usize);
        images.extend(rec[1..].iter().map(|&b| b as f64 / 127.5 - 1.0));
    }
    Ok(())
}

/// Load one CIFAR-10 binary batch file, or every `*.bin` file in a directory
/// (sorted by name).
pub fn load_cifar10(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Format(format!("{}: no .bin files", path.display())));
        }
        load_cifar10_files(&files)
    } else {
        load_cifar10_files(&[path.to_path_buf()])
    }
}

pub fn load_cifar10_files(paths: &[PathBuf]) -> Result<ImageDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        parse(&fs::read(p)?, &mut images, &mut labels, p)?;
    }
    let n = labels.len();
    let tensor = Tensor::new(&[n, 3, 32, 32], images)?;
    ImageDataset::new(tensor, labels, CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(), Provenance::Cifar10Bin)
}

/// Write 32x32 RGB images in CIFAR-10 binary layout, quantizing values with
/// `round((x + 1) * 127.5)`.
pub fn write_cifar10(ds: &ImageDataset, path: impl AsRef<Path>) -> Result<()> {
    if ds.image_shape() != [3, 32, 32] {
        return Err(Error::Shape(format!("CIFAR records hold [3, 32, 32], got {:?}", ds.image_shape())));
    }
    if ds.labels().iter().any(|&l| l > 9) {
        return Err(Error::InvalidArgument("CIFAR labels must be < 10".into()));
    }
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD_LEN);
    for i in 0..ds.len() {
        out.push(ds.labels()[i] as u8);
        out.extend(ds.images().row(i).iter().map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8));
    }
    fs::write(path, out)?;
    Ok(())
}
