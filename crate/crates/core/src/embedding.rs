//! Precomputed embedding files (`SFEMB`) and their batching.
//!
//! Layout, little-endian: magic `SFEMB\0`, u32 version, u16 source-name
//! length + name, u32 dim, u32 row count, then per row a u32 id length + id,
//! `dim` f32 values and an i32 label (-1 when unlabeled).

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"SFEMB\0";
pub const VERSION: u32 = 1;

/// Embedding length of each known extractor.
pub const KNOWN_SOURCES: [(&str, usize); 12] = [
    ("cnn14", 2048),
    ("mobilenetv1", 1024),
    ("res1dnet30", 2048),
    ("resnet38", 2048),
    ("wavegram", 2048),
    ("xception", 2048),
    ("vgg19", 4096),
    ("resnet50", 2048),
    ("inceptionv3", 2048),
    ("mobilenetv2", 1280),
    ("densenet121", 1024),
    ("nasnetlarge", 4032),
];

/// Expected dimension for a known source name (case-insensitive).
pub fn known_dim(source: &str) -> Option<usize> {
    let key = source.to_ascii_lowercase();
    KNOWN_SOURCES.iter().find(|(n, _)| *n == key).map(|(_, d)| *d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub vector: Vec<f32>,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    source: String,
    dim: usize,
    rows: Vec<EmbeddingRow>,
}

impl EmbeddingSet {
    /// Validates dims, provenance and id uniqueness.
    pub fn new(source: &str, dim: usize, rows: Vec<EmbeddingRow>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("embedding dimension must be >= 1".into()));
        }
        match known_dim(source) {
            Some(expected) if expected != dim => {
                return Err(Error::Provenance(format!(
                    "{source} embeddings have {expected} dimensions, file declares {dim}"
                )));
            }
            Some(_) => {}
            None => log::warn!("unknown embedding source {source:?}; accepting dimension {dim}"),
        }
        let mut seen = HashSet::new();
        for row in &rows {
            if row.vector.len() != dim {
                return Err(Error::Shape(format!(
                    "row {} has {} values, expected {dim}",
                    row.id,
                    row.vector.len()
                )));
            }
            if row.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {} has non-finite values", row.id)));
            }
            if row.label.is_some_and(|l| l > i32::MAX as usize) {
                return Err(Error::Label(format!("row {} label out of range", row.id)));
            }
            if !seen.insert(row.id.as_str()) {
                return Err(Error::Data(format!("duplicate clip id {}", row.id)));
            }
        }
        Ok(Self {
            source: source.to_string(),
            dim,
            rows,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[EmbeddingRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Labeled rows shuffled under `seed` and cut into batches of `batch`.
    pub fn to_batches(&self, batch: usize, seed: u64) -> Result<Vec<Vec<&EmbeddingRow>>> {
        if batch == 0 {
            return Err(Error::Spec("batch size must be >= 1".into()));
        }
        let mut labeled: Vec<&EmbeddingRow> = self.rows.iter().filter(|r| r.label.is_some()).collect();
        if labeled.is_empty() {
            return Err(Error::Data("no labeled embedding rows".into()));
        }
        labeled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(labeled.chunks(batch).map(|c| c.to_vec()).collect())
    }
}

pub fn write_embeddings<W: Write>(set: &EmbeddingSet, mut w: W) -> Result<()> {
    let name = set.source.as_bytes();
    let name_len = u16::try_from(name.len())
        .map_err(|_| Error::Data("source name longer than 65535 bytes".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&name_len.to_le_bytes())?;
    w.write_all(name)?;
    w.write_all(&(set.dim as u32).to_le_bytes())?;
    w.write_all(&(set.rows.len() as u32).to_le_bytes())?;
    for row in &set.rows {
        w.write_all(&(row.id.len() as u32).to_le_bytes())?;
        w.write_all(row.id.as_bytes())?;
        for v in &row.vector {
            w.write_all(&v.to_le_bytes())?;
        }
        let label = row.label.map_or(-1, |l| l as i32);
        w.write_all(&label.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Corruption("embedding file truncated".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<EmbeddingSet> {
    let mut magic = [0u8; 6];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad embedding file magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported embedding version {version}")));
    }
    let mut len = [0u8; 2];
    read_exact(&mut r, &mut len)?;
    let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
    read_exact(&mut r, &mut name)?;
    let source =
        String::from_utf8(name).map_err(|_| Error::Format("source name is not UTF-8".into()))?;
    let dim = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let mut rows = Vec::new();
    let mut vec_bytes = vec![0u8; dim * 4];
    for _ in 0..count {
        let id_len = read_u32(&mut r)? as usize;
        let mut id = Vec::new();
        // take() keeps a corrupt length from allocating gigabytes up front
        (&mut r).take(id_len as u64).read_to_end(&mut id)?;
        if id.len() != id_len {
            return Err(Error::Corruption("embedding file truncated".into()));
        }
        let id = String::from_utf8(id).map_err(|_| Error::Format("clip id is not UTF-8".into()))?;
        read_exact(&mut r, &mut vec_bytes)?;
        let vector = vec_bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mut label = [0u8; 4];
        read_exact(&mut r, &mut label)?;
        let label = match i32::from_le_bytes(label) {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(Error::Label(format!("row {id}: label {l}"))),
        };
        rows.push(EmbeddingRow { id, vector, label });
    }
    EmbeddingSet::new(&source, dim, rows)
}

pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_embeddings(set, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    read_embeddings(std::io::BufReader::new(fs::File::open(path)?))
}

/// Class-separable Gaussian embeddings: each class gets a centroid with
/// N(0, 1) coordinates and rows scatter around it with deviation `spread`.
///
/// Ids are `<prefix><class>_<n>`; rows are ordered class by class.
pub fn synth_embeddings(
    source: &str,
    dim: usize,
    classes: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
    prefix: &str,
) -> Result<EmbeddingSet> {
    let rows: Vec<(String, usize)> = (0..classes)
        .flat_map(|c| (0..per_class).map(move |n| (format!("{prefix}{c}_{n}"), c)))
        .collect();
    synth_labeled(source, dim, classes, &rows, spread, seed)
}

/// Like [`synth_embeddings`] for caller-chosen `(id, class)` rows, in order.
pub fn synth_labeled(
    source: &str,
    dim: usize,
    classes: usize,
    rows: &[(String, usize)],
    spread: f64,
    seed: u64,
) -> Result<EmbeddingSet> {
    let noise = Normal::new(0.0, spread).map_err(|e| Error::Spec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect())
        .collect();
    let rows = rows
        .iter()
        .map(|(id, class)| {
            let centre = centroids
                .get(*class)
                .ok_or_else(|| Error::Label(format!("class {class} >= {classes}")))?;
            Ok(EmbeddingRow {
                id: id.clone(),
                vector: centre.iter().map(|c| (c + noise.sample(&mut rng)) as f32).collect(),
                label: Some(*class),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(source, dim, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, dim: usize, label: Option<usize>) -> EmbeddingRow {
        EmbeddingRow {
            id: id.into(),
            vector: (0..dim).map(|i| i as f32 * 0.5).collect(),
            label,
        }
    }

    #[test]
    fn known_source_dims_are_enforced() {
        assert!(EmbeddingSet::new("cnn14", 2048, vec![row("a", 2048, Some(0))]).is_ok());
        let err = EmbeddingSet::new("mobilenetv1", 2048, vec![]).unwrap_err();
        assert!(matches!(err, Error::Provenance(_)));
        assert!(EmbeddingSet::new("NASNetLarge", 4032, vec![]).is_ok());
        assert!(EmbeddingSet::new("homemade", 7, vec![row("a", 7, None)]).is_ok());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let rows = vec![row("a", 3, Some(0)), row("a", 3, Some(1))];
        assert!(matches!(EmbeddingSet::new("x", 3, rows), Err(Error::Data(_))));
    }

    #[test]
    fn empty_file_round_trips() {
        let set = EmbeddingSet::new("cnn14", 2048, vec![]).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&set, &mut buf).unwrap();
        assert_eq!(read_embeddings(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let set = synth_embeddings("resnet38", 2048, 3, 4, 0.5, 1, "c").unwrap();
        let mut a = Vec::new();
        write_embeddings(&set, &mut a).unwrap();
        let back = read_embeddings(a.as_slice()).unwrap();
        let mut b = Vec::new();
        write_embeddings(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_and_magic() {
        let set = EmbeddingSet::new("x", 2, vec![row("a", 2, Some(1))]).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&set, &mut buf).unwrap();
        assert!(matches!(
            read_embeddings(&buf[..buf.len() - 2]),
            Err(Error::Corruption(_))
        ));
        buf[0] = b'Z';
        assert!(matches!(read_embeddings(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn batches_cover_labeled_rows_once() {
        let mut rows: Vec<EmbeddingRow> = (0..10).map(|i| row(&format!("r{i}"), 2, Some(i % 3))).collect();
        rows.push(row("unlabeled", 2, None));
        let set = EmbeddingSet::new("x", 2, rows).unwrap();
        let batches = set.to_batches(4, 9).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let mut ids: Vec<&str> = batches.iter().flatten().map(|r| r.id.as_str()).collect();
        let again: Vec<&str> = set.to_batches(4, 9).unwrap().iter().flatten().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, again);
        ids.sort_unstable();
        let mut expected: Vec<String> = (0..10).map(|i| format!("r{i}")).collect();
        expected.sort_unstable();
        assert_eq!(ids, expected);
        let none = EmbeddingSet::new("x", 2, vec![row("u", 2, None)]).unwrap();
        assert!(matches!(none.to_batches(4, 0), Err(Error::Data(_))));
    }
}
