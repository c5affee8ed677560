//! Fixed word embedding tables.
//!
//! Tables are loaded once and never mutated afterwards; both the taggers and
//! the policy encoders read from the same table, which is what makes policies
//! portable across datasets that share an embedding space. The checksum
//! exists so callers can assert immutability across a whole run.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::parse;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major, one row of `dim` floats per word.
    vecs: Vec<f64>,
    unk: Vec<f64>,
    duplicates_ignored: usize,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` entries. Later duplicates of a
    /// word are dropped (the count is kept); the unknown-word vector is the
    /// mean of all kept vectors.
    pub fn from_entries(dim: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut words = Vec::new();
        let mut index = HashMap::new();
        let mut vecs = Vec::new();
        let mut duplicates_ignored = 0;
        for (word, v) in entries {
            if v.len() != dim {
                return Err(Error::Validation(format!(
                    "vector for {word:?} has length {}, expected {dim}",
                    v.len()
                )));
            }
            if index.contains_key(&word) {
                duplicates_ignored += 1;
                continue;
            }
            index.insert(word.clone(), words.len());
            words.push(word);
            vecs.extend_from_slice(&v);
        }
        if words.is_empty() {
            return Err(Error::Validation("embedding table has no entries".into()));
        }
        let n = words.len() as f64;
        let mut unk = vec![0.0; dim];
        for row in 0..words.len() {
            for d in 0..dim {
                unk[d] += vecs[row * dim + d];
            }
        }
        for u in &mut unk {
            *u /= n;
        }
        if duplicates_ignored > 0 {
            log::warn!("embedding load ignored {duplicates_ignored} duplicate words");
        }
        Ok(EmbeddingTable { dim, words, index, vecs, unk, duplicates_ignored })
    }

    /// Reads the plain-text format: one entry per line, the word followed by
    /// exactly `expected_dim` floats, whitespace separated.
    pub fn load(path: impl AsRef<Path>, expected_dim: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-empty line has a first field");
            let floats: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let floats = floats
                .map_err(|e| parse(lineno, format!("bad float in embedding entry: {e}")))?;
            if floats.len() != expected_dim {
                return Err(parse(
                    lineno,
                    format!("entry has {} values, expected {expected_dim}", floats.len()),
                ));
            }
            entries.push((word.to_string(), floats));
        }
        if entries.is_empty() {
            return Err(Error::Validation("embedding file has no entries".into()));
        }
        Self::from_entries(expected_dim, entries)
    }

    /// Writes the same plain-text format `load` reads; floats are printed
    /// with round-trip-exact formatting.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for (row, word) in self.words.iter().enumerate() {
            out.push_str(word);
            for d in 0..self.dim {
                write!(out, " {}", self.vecs[row * self.dim + d]).expect("string write");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn duplicates_ignored(&self) -> usize {
        self.duplicates_ignored
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// The stored vector for `word`, or the unknown-word vector. Never fails.
    pub fn lookup(&self, word: &str) -> &[f64] {
        match self.index.get(word) {
            Some(&row) => &self.vecs[row * self.dim..(row + 1) * self.dim],
            None => &self.unk,
        }
    }

    pub fn unk_vector(&self) -> &[f64] {
        &self.unk
    }

    /// Order-sensitive digest of every stored float; constant for the life
    /// of the table unless something mutates it.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&(self.dim as u64).to_le_bytes());
        for w in &self.words {
            eat(w.as_bytes());
        }
        for v in self.vecs.iter().chain(&self.unk) {
            eat(&v.to_bits().to_le_bytes());
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_two_words_unk_is_mean() {
        let f = write_temp("a 1.0 2.0\nb 3.0 4.0\n");
        let t = EmbeddingTable::load(f.path(), 2).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.unk_vector(), &[2.0, 3.0]);
    }

    #[test]
    fn load_rejects_dimension_mismatch() {
        let f = write_temp("a 1.0 2.0\nb 3.0 4.0\n");
        match EmbeddingTable::load(f.path(), 3) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_empty_file() {
        let f = write_temp("\n\n");
        assert!(EmbeddingTable::load(f.path(), 2).is_err());
    }

    #[test]
    fn forty_dim_table_loads() {
        let vals: Vec<String> = (0..40).map(|i| format!("{}", i as f64 / 10.0)).collect();
        let f = write_temp(&format!("w {}\n", vals.join(" ")));
        let t = EmbeddingTable::load(f.path(), 40).unwrap();
        assert_eq!(t.dim(), 40);
        assert_eq!(t.lookup("w").len(), 40);
    }

    #[test]
    fn lookup_known_unknown_and_pure() {
        let t = EmbeddingTable::from_entries(
            2,
            vec![("a".into(), vec![1.0, 2.0]), ("b".into(), vec![3.0, 4.0])],
        )
        .unwrap();
        assert_eq!(t.lookup("a"), &[1.0, 2.0]);
        assert_eq!(t.lookup("zzz"), t.unk_vector());
        assert_eq!(t.lookup("a"), t.lookup("a"));
    }

    #[test]
    fn duplicates_keep_first_and_count() {
        let t = EmbeddingTable::from_entries(
            1,
            vec![("a".into(), vec![1.0]), ("a".into(), vec![9.0]), ("b".into(), vec![3.0])],
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup("a"), &[1.0]);
        assert_eq!(t.duplicates_ignored(), 1);
        assert_eq!(t.unk_vector(), &[2.0]);
    }

    #[test]
    fn checksum_tracks_contents() {
        let t = EmbeddingTable::from_entries(1, vec![("a".into(), vec![1.0])]).unwrap();
        let u = EmbeddingTable::from_entries(1, vec![("a".into(), vec![1.0])]).unwrap();
        let v = EmbeddingTable::from_entries(1, vec![("a".into(), vec![1.5])]).unwrap();
        assert_eq!(t.checksum(), u.checksum());
        assert_ne!(t.checksum(), v.checksum());
    }

    #[test]
    fn write_then_load_round_trips() {
        let t = EmbeddingTable::from_entries(
            3,
            vec![
                ("alpha".into(), vec![0.1, -2.5, 1.0 / 3.0]),
                ("beta".into(), vec![1e-17, 4.0, -0.0]),
            ],
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        t.write(f.path()).unwrap();
        let back = EmbeddingTable::load(f.path(), 3).unwrap();
        assert_eq!(t.checksum(), back.checksum());
    }
}
