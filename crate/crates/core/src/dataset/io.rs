//! Binary embedding container and JSON dataset manifest.
//!
//! Embedding file layout (little-endian):
//!
//! ```text
//! b"PGCD" | version: u16 = 1 | n: u32 | d: u32 | n*d f32, row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::Scalar;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"PGCD";
pub const EMBEDDING_VERSION: u16 = 1;

pub(crate) fn write_header(out: &mut Vec<u8>, magic: &[u8; 4], version: u16, dims: &[u32]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
}

/// Parses a header of `dims.len()` u32 fields and returns them with the rest
/// of the buffer.
pub(crate) fn read_header<'a>(
    path: &Path,
    bytes: &'a [u8],
    magic: &[u8; 4],
    version: u16,
    fields: usize,
) -> Result<(Vec<u32>, &'a [u8])> {
    let header_len = 6 + 4 * fields;
    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = &bytes[..bytes.len().min(4)];
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    if bytes.len() < header_len {
        return Err(Error::format(
            path,
            format!("truncated header: {} of {header_len} bytes", bytes.len()),
        ));
    }
    let found = u16::from_le_bytes([bytes[4], bytes[5]]);
    if found != version {
        return Err(Error::format(
            path,
            format!("unsupported version {found}, expected {version}"),
        ));
    }
    let dims = (0..fields)
        .map(|i| {
            let o = 6 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4-byte slice"))
        })
        .collect();
    Ok((dims, &bytes[header_len..]))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

/// Writes an `n x d` matrix as `f32`.
pub fn write_embeddings<T: Scalar>(path: &Path, features: &Array2<T>) -> Result<()> {
    let (n, d) = features.dim();
    let mut out = Vec::with_capacity(14 + 4 * n * d);
    write_header(
        &mut out,
        EMBEDDING_MAGIC,
        EMBEDDING_VERSION,
        &[n as u32, d as u32],
    );
    for &x in features.iter() {
        out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
    write_file(path, &out)
}

pub fn read_embeddings<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    let bytes = read_file(path)?;
    let (dims, payload) = read_header(path, &bytes, EMBEDDING_MAGIC, EMBEDDING_VERSION, 2)?;
    let (n, d) = (dims[0] as usize, dims[1] as usize);
    let expected = n * d * 4;
    if payload.len() < expected {
        return Err(Error::format(
            path,
            format!(
                "truncated payload: header declares {n}x{d} floats ({expected} bytes), found {} bytes",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64))
        .collect();
    Array2::from_shape_vec((n, d), values).map_err(|e| Error::format(path, e.to_string()))
}

/// JSON document describing a dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Embedding file, relative to the manifest's directory unless absolute.
    pub features_path: PathBuf,
    pub num_classes: usize,
    pub true_labels: Vec<usize>,
    pub labeled_indices: Vec<usize>,
    pub old_classes: Vec<usize>,
    pub seed: Option<u64>,
}

fn features_path_for(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("pgcd")
}

/// Writes `<manifest_path>` (JSON) and a sibling `.pgcd` embedding file.
pub fn save_dataset<T: Scalar>(dataset: &EmbeddingDataset<T>, manifest_path: &Path) -> Result<()> {
    let features_file = features_path_for(manifest_path);
    write_embeddings(&features_file, dataset.features())?;
    let manifest = DatasetManifest {
        features_path: PathBuf::from(
            features_file
                .file_name()
                .expect("manifest path has a file name"),
        ),
        num_classes: dataset.num_classes(),
        true_labels: dataset.true_labels.clone(),
        labeled_indices: (0..dataset.len())
            .filter(|&i| dataset.is_labeled(i))
            .collect(),
        old_classes: dataset.old_classes().iter().copied().collect(),
        seed: dataset.seed(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_file(manifest_path, text.as_bytes())
}

pub fn load_dataset<T: Scalar>(manifest_path: &Path) -> Result<EmbeddingDataset<T>> {
    let text = read_file(manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_slice(&text)
        .map_err(|e| Error::format(manifest_path, format!("invalid manifest: {e}")))?;
    let features_path = if manifest.features_path.is_absolute() {
        manifest.features_path.clone()
    } else {
        manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&manifest.features_path)
    };
    let features = read_embeddings::<T>(&features_path)?;
    let n = features.nrows();
    if manifest.true_labels.len() != n {
        return Err(Error::format(
            manifest_path,
            format!("{} labels for {n} feature rows", manifest.true_labels.len()),
        ));
    }
    let mut mask = vec![false; n];
    for &i in &manifest.labeled_indices {
        if i >= n {
            return Err(Error::format(
                manifest_path,
                format!("labeled index {i} out of range"),
            ));
        }
        mask[i] = true;
    }
    EmbeddingDataset::new(
        features,
        manifest.true_labels,
        mask,
        manifest.old_classes.into_iter().collect(),
        manifest.num_classes,
    )
    .map(|ds| ds.with_seed(manifest.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SamplesPerClass, SyntheticConfig};

    fn small() -> EmbeddingDataset<f64> {
        generate_synthetic::<f64>(&SyntheticConfig {
            samples_per_class: SamplesPerClass::Constant(20),
            seed: 3,
            ..SyntheticConfig::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        let ds = small();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset::<f64>(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn bad_magic_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        save_dataset(&small(), &path).unwrap();
        let emb = path.with_extension("pgcd");
        let mut bytes = fs::read(&emb).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        fs::write(&emb, bytes).unwrap();
        let err = load_dataset::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("magic") && err.contains("XXXX"), "{err}");
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.pgcd");
        write_embeddings(&path, &small().features().clone()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9;
        fs::write(&path, bytes).unwrap();
        let err = read_embeddings::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.pgcd");
        write_embeddings(&path, &small().features().clone()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        let err = read_embeddings::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn norm_violation_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        save_dataset(&small(), &path).unwrap();
        let emb = path.with_extension("pgcd");
        let mut bytes = fs::read(&emb).unwrap();
        bytes[14..18].copy_from_slice(&5.0f32.to_le_bytes());
        fs::write(&emb, bytes).unwrap();
        assert!(matches!(
            load_dataset::<f64>(&path),
            Err(Error::Integrity(_))
        ));
    }
}
