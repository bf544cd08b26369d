//! Shared-embedding classifier: category names map into one semantic
//! embedding space and the resulting vectors act as classifier rows, plus a
//! learnable background vector as the trailing entry.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::DatasetSpec;

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Array1<f64>>,
    background: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingFile {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Build from raw vectors. Non-background vectors are L2-normalized;
    /// files may store unnormalized vectors.
    pub fn new(dim: usize, raw: BTreeMap<String, Vec<f64>>, background: Array1<f64>) -> Result<Self> {
        if background.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: background.len(),
            });
        }
        let mut entries = BTreeMap::new();
        for (name, v) in raw {
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            let mut arr = Array1::from_vec(v);
            if arr.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding `{name}`")));
            }
            let norm = arr.dot(&arr).sqrt();
            if norm == 0.0 {
                return Err(Error::NonFinite(format!("zero-norm embedding `{name}`")));
            }
            arr /= norm;
            entries.insert(name, arr);
        }
        Ok(Self {
            dim,
            entries,
            background,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: EmbeddingFile = serde_json::from_str(&text)?;
        let background = Array1::zeros(file.dim);
        Self::new(file.dim, file.entries, background)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = EmbeddingFile {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.to_vec()))
                .collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, name: &str) -> Option<&Array1<f64>> {
        self.entries.get(name)
    }

    pub fn background(&self) -> &Array1<f64> {
        &self.background
    }

    pub fn set_background(&mut self, background: Array1<f64>) -> Result<()> {
        if background.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: background.len(),
            });
        }
        self.background = background;
        Ok(())
    }

    /// Check that every category of every spec resolves to an entry.
    pub fn validate_against(&self, specs: &[DatasetSpec]) -> Result<()> {
        for spec in specs {
            for name in spec.vocabulary_names()? {
                if !self.entries.contains_key(name) {
                    return Err(Error::MissingCategory(name.to_string()));
                }
            }
        }
        Ok(())
    }
}

/// Class logits for an embedding against a vocabulary: entry k is the dot
/// product with category k's classifier row, the last entry is the dot
/// product with the background vector.
pub fn classify(
    class_embedding: &Array1<f64>,
    table: &EmbeddingTable,
    vocabulary: &[&str],
) -> Result<Array1<f64>> {
    classify_with_background(class_embedding, table, vocabulary, table.background())
}

/// Same as [`classify`] but with an explicit background vector (the trainable
/// head owns its own copy).
pub fn classify_with_background(
    class_embedding: &Array1<f64>,
    table: &EmbeddingTable,
    vocabulary: &[&str],
    background: &Array1<f64>,
) -> Result<Array1<f64>> {
    if class_embedding.len() != table.dim() {
        return Err(Error::DimMismatch {
            expected: table.dim(),
            got: class_embedding.len(),
        });
    }
    let mut logits = Array1::zeros(vocabulary.len() + 1);
    for (k, name) in vocabulary.iter().enumerate() {
        let row = table
            .get(name)
            .ok_or_else(|| Error::MissingCategory(name.to_string()))?;
        logits[k] = class_embedding.dot(row);
    }
    logits[vocabulary.len()] = class_embedding.dot(background);
    Ok(logits)
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic stand-in for a frozen text encoder: each name maps to a
/// unit vector that depends only on (name, dim, seed), so identical names
/// across datasets share one classifier row.
pub fn pseudo_embeddings(names: &[&str], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if dim < 2 {
        return Err(Error::DimMismatch { expected: 2, got: dim });
    }
    let mut raw = BTreeMap::new();
    for name in names {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
        let v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
        raw.insert(name.to_string(), v);
    }
    EmbeddingTable::new(dim, raw, Array1::zeros(dim))
}

/// Box-Muller sample; avoids depending on distribution crates for one draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table_2d() -> EmbeddingTable {
        let mut raw = BTreeMap::new();
        raw.insert("a".to_string(), vec![1.0, 0.0]);
        raw.insert("b".to_string(), vec![0.0, 1.0]);
        EmbeddingTable::new(2, raw, Array1::zeros(2)).unwrap()
    }

    #[test]
    fn unit_dot_products() {
        let table = table_2d();
        let logits = classify(&array![1.0, 0.0], &table, &["a"]).unwrap();
        assert_eq!(logits.to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn zero_embedding_zero_logits() {
        let table = table_2d();
        let logits = classify(&array![0.0, 0.0], &table, &["a", "b"]).unwrap();
        assert_eq!(logits.to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn direct_dot_products() {
        let table = table_2d();
        let logits = classify(&array![0.6, 0.8], &table, &["a", "b"]).unwrap();
        assert!((logits[0] - 0.6).abs() < 1e-12);
        assert!((logits[1] - 0.8).abs() < 1e-12);
        assert_eq!(logits[2], 0.0);
    }

    #[test]
    fn missing_category_is_an_error() {
        let table = table_2d();
        match classify(&array![1.0, 0.0], &table, &["zebra"]) {
            Err(Error::MissingCategory(name)) => assert_eq!(name, "zebra"),
            other => panic!("expected MissingCategory, got {other:?}"),
        }
    }

    #[test]
    fn classify_is_linear_in_the_embedding() {
        let table = table_2d();
        let e = array![0.3, -0.7];
        let a = 2.5;
        let lhs = classify(&(a * &e), &table, &["a", "b"]).unwrap();
        let rhs = a * classify(&e, &table, &["a", "b"]).unwrap();
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn loader_normalizes_vectors() {
        let mut raw = BTreeMap::new();
        raw.insert("long".to_string(), vec![3.0, 4.0]);
        let table = EmbeddingTable::new(2, raw, Array1::zeros(2)).unwrap();
        let v = table.get("long").unwrap();
        assert!((v.dot(v).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pseudo_embeddings_deterministic_and_shared() {
        let t1 = pseudo_embeddings(&["circle", "square"], 8, 7).unwrap();
        let t2 = pseudo_embeddings(&["square", "circle", "extra"], 8, 7).unwrap();
        assert_eq!(
            t1.get("circle").unwrap().to_vec(),
            t2.get("circle").unwrap().to_vec()
        );
        assert_eq!(
            t1.get("square").unwrap().to_vec(),
            t2.get("square").unwrap().to_vec()
        );
        let t3 = pseudo_embeddings(&["circle"], 8, 8).unwrap();
        assert_ne!(
            t1.get("circle").unwrap().to_vec(),
            t3.get("circle").unwrap().to_vec()
        );
    }

    #[test]
    fn pseudo_embeddings_near_orthogonal() {
        let names: Vec<String> = (0..100).map(|i| format!("cat{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let table = pseudo_embeddings(&refs, 32, 3).unwrap();
        let vecs: Vec<_> = refs.iter().map(|n| table.get(n).unwrap()).collect();
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..vecs.len() {
            for j in (i + 1)..vecs.len() {
                sum += vecs[i].dot(vecs[j]).abs();
                count += 1;
            }
        }
        let mean = sum / count as f64;
        assert!(mean < 0.5, "mean |cos| = {mean}");
    }
}
