//! Sparse binary adjacency tensor for multi-relational data.
//!
//! A dataset of `N` entities and `K` relations is stored as `K` frontal
//! slices, each a sorted list of `(subject, object)` coordinates whose cell
//! value is one. Every cell that is not stored is an observed zero.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{RescalError, Result};

/// Largest entity count for which dense `N x N` slices are materialized.
pub const DEFAULT_DENSE_CAP: usize = 5_000;

/// A single true statement `relation(subject, object)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    /// Builds a triple from raw labels, trimming whitespace. Empty labels are
    /// rejected; `location` names the record in the error message.
    pub fn parse(subject: &str, relation: &str, object: &str, location: &str) -> Result<Self> {
        let fields = [("subject", subject), ("relation", relation), ("object", object)];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(RescalError::Parse {
                    location: location.to_string(),
                    message: format!("empty {name} label"),
                });
            }
        }
        Ok(Triple {
            subject: subject.trim().to_string(),
            relation: relation.trim().to_string(),
            object: object.trim().to_string(),
        })
    }

    pub fn new(subject: &str, relation: &str, object: &str) -> Result<Self> {
        Self::parse(subject, relation, object, "triple")
    }
}

/// Bidirectional label/index map with dense indices `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

pub type EntityDictionary = Dictionary;
pub type RelationDictionary = Dictionary;

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `label`, assigning the next free index on first sight.
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&idx) = self.index.get(label) {
            return idx;
        }
        let idx = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), idx);
        idx
    }

    /// Rebuilds a dictionary from labels listed in index order.
    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut dict = Dictionary::new();
        for label in labels {
            let label = label.into();
            if dict.index.contains_key(&label) {
                return Err(RescalError::Parse {
                    location: "dictionary".into(),
                    message: format!("duplicate label {label:?}"),
                });
            }
            dict.intern(&label);
        }
        Ok(dict)
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, idx: usize) -> Option<&str> {
        self.labels.get(idx).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One cell `(i, j, k)` of the adjacency tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Cell {
    pub fn new(i: usize, j: usize, k: usize) -> Self {
        Cell { i, j, k }
    }
}

/// Binary `N x N x K` tensor in per-slice coordinate form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseAdjacencyTensor {
    n_entities: usize,
    slices: Vec<Vec<(usize, usize)>>,
}

impl SparseAdjacencyTensor {
    /// Builds a tensor from raw coordinate lists. Coordinates are
    /// deduplicated and sorted; out-of-range entries are rejected.
    pub fn from_slices(n_entities: usize, slices: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        let mut slices = slices;
        for (k, slice) in slices.iter_mut().enumerate() {
            if let Some(&(i, j)) = slice.iter().find(|&&(i, j)| i >= n_entities || j >= n_entities) {
                return Err(RescalError::Index(format!(
                    "coordinate ({i}, {j}) in slice {k} outside N={n_entities}"
                )));
            }
            slice.sort_unstable();
            slice.dedup();
        }
        Ok(SparseAdjacencyTensor { n_entities, slices })
    }

    /// The all-zero tensor.
    pub fn zeros(n_entities: usize, n_relations: usize) -> Self {
        SparseAdjacencyTensor {
            n_entities,
            slices: vec![Vec::new(); n_relations],
        }
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.slices.len()
    }

    /// Coordinates of slice `k` in canonical (sorted) order.
    pub fn slice(&self, k: usize) -> &[(usize, usize)] {
        &self.slices[k]
    }

    pub fn slices(&self) -> &[Vec<(usize, usize)>] {
        &self.slices
    }

    pub fn nnz_slice(&self, k: usize) -> usize {
        self.slices[k].len()
    }

    pub fn nnz(&self) -> usize {
        self.slices.iter().map(Vec::len).sum()
    }

    /// Total cell count `N^2 K`.
    pub fn n_cells(&self) -> usize {
        self.n_entities * self.n_entities * self.slices.len()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.slices
            .get(k)
            .is_some_and(|s| s.binary_search(&(i, j)).is_ok())
    }

    pub fn check_cell(&self, cell: Cell) -> Result<()> {
        if cell.i >= self.n_entities || cell.j >= self.n_entities || cell.k >= self.slices.len() {
            return Err(RescalError::Index(format!(
                "cell ({}, {}, {}) outside tensor of N={}, K={}",
                cell.i,
                cell.j,
                cell.k,
                self.n_entities,
                self.slices.len()
            )));
        }
        Ok(())
    }

    /// Fails when `N` exceeds `cap`.
    pub fn check_dense_cap(&self, cap: usize) -> Result<()> {
        if self.n_entities > cap {
            return Err(RescalError::ResourceLimit {
                n: self.n_entities,
                cap,
            });
        }
        Ok(())
    }

    /// Materializes slice `k` as a dense 0/1 matrix.
    pub fn dense_slice(&self, k: usize, cap: usize) -> Result<DMatrix<f64>> {
        if k >= self.slices.len() {
            return Err(RescalError::Index(format!(
                "relation {k} outside K={}",
                self.slices.len()
            )));
        }
        self.check_dense_cap(cap)?;
        let n = self.n_entities;
        let mut m = DMatrix::zeros(n, n);
        for &(i, j) in &self.slices[k] {
            m[(i, j)] = 1.0;
        }
        Ok(m)
    }

    /// Returns a copy with every listed cell forced to zero.
    pub fn mask_cells<'a, I>(&self, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Cell>,
    {
        let mut per_slice: Vec<HashSet<(usize, usize)>> = vec![HashSet::new(); self.slices.len()];
        for &cell in cells {
            self.check_cell(cell)?;
            per_slice[cell.k].insert((cell.i, cell.j));
        }
        let slices = self
            .slices
            .iter()
            .zip(&per_slice)
            .map(|(slice, masked)| {
                if masked.is_empty() {
                    slice.clone()
                } else {
                    slice.iter().copied().filter(|c| !masked.contains(c)).collect()
                }
            })
            .collect();
        Ok(SparseAdjacencyTensor {
            n_entities: self.n_entities,
            slices,
        })
    }

    /// Re-emits the stored facts as labelled triples, slice by slice.
    pub fn to_triples(&self, entities: &Dictionary, relations: &Dictionary) -> Result<Vec<Triple>> {
        let lookup = |dict: &Dictionary, idx: usize| {
            dict.label(idx)
                .map(str::to_string)
                .ok_or_else(|| RescalError::Index(format!("no label for index {idx}")))
        };
        let mut out = Vec::with_capacity(self.nnz());
        for (k, slice) in self.slices.iter().enumerate() {
            for &(i, j) in slice {
                out.push(Triple {
                    subject: lookup(entities, i)?,
                    relation: lookup(relations, k)?,
                    object: lookup(entities, j)?,
                });
            }
        }
        Ok(out)
    }

    /// SHA-256 over the canonical content (dimensions and sorted coordinates), hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(self.checksum_bytes())
    }

    pub fn checksum_bytes(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.n_entities as u64).to_le_bytes());
        hasher.update((self.slices.len() as u64).to_le_bytes());
        for slice in &self.slices {
            hasher.update((slice.len() as u64).to_le_bytes());
            for &(i, j) in slice {
                hasher.update((i as u64).to_le_bytes());
                hasher.update((j as u64).to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Indexes a stream of triples. Labels get indices in first-appearance
/// order (subject before object within a triple); duplicates collapse.
pub fn from_triples<'a, I>(triples: I) -> (EntityDictionary, RelationDictionary, SparseAdjacencyTensor)
where
    I: IntoIterator<Item = &'a Triple>,
{
    let mut entities = Dictionary::new();
    let mut relations = Dictionary::new();
    let mut slices: Vec<Vec<(usize, usize)>> = Vec::new();
    for t in triples {
        let i = entities.intern(&t.subject);
        let k = relations.intern(&t.relation);
        let j = entities.intern(&t.object);
        if k == slices.len() {
            slices.push(Vec::new());
        }
        slices[k].push((i, j));
    }
    for slice in &mut slices {
        slice.sort_unstable();
        slice.dedup();
    }
    let tensor = SparseAdjacencyTensor {
        n_entities: entities.len(),
        slices,
    };
    (entities, relations, tensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str, r: &str, o: &str) -> Triple {
        Triple::new(s, r, o).unwrap()
    }

    #[test]
    fn empty_input() {
        let (e, r, x) = from_triples(&[]);
        assert_eq!((e.len(), r.len(), x.n_entities(), x.n_relations()), (0, 0, 0, 0));
        assert_eq!(x.nnz(), 0);
    }

    #[test]
    fn duplicates_collapse() {
        let triples = vec![t("a", "r", "b"), t("a", "r", "b")];
        let (e, r, x) = from_triples(&triples);
        assert_eq!(e.len(), 2);
        assert_eq!(r.len(), 1);
        assert_eq!(x.slice(0), &[(0, 1)]);
    }

    #[test]
    fn first_appearance_order_and_canonical_slices() {
        let triples = vec![t("a", "r", "b"), t("b", "s", "a"), t("a", "s", "a")];
        let (e, r, x) = from_triples(&triples);
        assert_eq!(e.labels(), &["a", "b"]);
        assert_eq!(r.labels(), &["r", "s"]);
        assert_eq!(x.slice(0), &[(0, 1)]);
        assert_eq!(x.slice(1), &[(0, 0), (1, 0)]);
    }

    #[test]
    fn empty_label_rejected() {
        let err = Triple::parse("a", "  ", "b", "line 3").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(err.to_string().contains("relation"), "{err}");
    }

    #[test]
    fn labels_are_trimmed() {
        let triple = t(" a ", "r\t", "b");
        assert_eq!(triple.subject, "a");
        assert_eq!(triple.relation, "r");
    }

    #[test]
    fn dense_slice_examples() {
        let x = SparseAdjacencyTensor::from_slices(2, vec![vec![], vec![(0, 1)], vec![(1, 0), (0, 0)]])
            .unwrap();
        assert_eq!(x.dense_slice(0, 10).unwrap(), DMatrix::from_row_slice(2, 2, &[0., 0., 0., 0.]));
        assert_eq!(x.dense_slice(1, 10).unwrap(), DMatrix::from_row_slice(2, 2, &[0., 1., 0., 0.]));
        assert_eq!(x.dense_slice(2, 10).unwrap(), DMatrix::from_row_slice(2, 2, &[1., 0., 1., 0.]));
    }

    #[test]
    fn dense_cap_enforced() {
        let x = SparseAdjacencyTensor::zeros(3, 1);
        match x.dense_slice(0, 2) {
            Err(RescalError::ResourceLimit { n: 3, cap: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(x.dense_slice(1, 10), Err(RescalError::Index(_))));
    }

    #[test]
    fn mask_examples() {
        let x = SparseAdjacencyTensor::from_slices(2, vec![vec![(0, 1)]]).unwrap();
        assert_eq!(x.mask_cells(&[]).unwrap(), x);
        assert_eq!(x.mask_cells(&[Cell::new(0, 1, 0)]).unwrap().nnz(), 0);

        let y = SparseAdjacencyTensor::from_slices(2, vec![vec![(0, 1), (1, 0)]]).unwrap();
        let masked = y.mask_cells(&[Cell::new(0, 1, 0), Cell::new(1, 1, 0)]).unwrap();
        assert_eq!(masked.slice(0), &[(1, 0)]);
        // input untouched
        assert_eq!(y.nnz(), 2);
    }

    #[test]
    fn mask_out_of_range() {
        let x = SparseAdjacencyTensor::zeros(2, 1);
        assert!(matches!(x.mask_cells(&[Cell::new(2, 0, 0)]), Err(RescalError::Index(_))));
        assert!(matches!(x.mask_cells(&[Cell::new(0, 0, 1)]), Err(RescalError::Index(_))));
    }

    #[test]
    fn from_slices_rejects_out_of_range() {
        assert!(SparseAdjacencyTensor::from_slices(2, vec![vec![(0, 2)]]).is_err());
    }

    #[test]
    fn checksum_depends_on_content() {
        let a = SparseAdjacencyTensor::from_slices(2, vec![vec![(0, 1)]]).unwrap();
        let b = SparseAdjacencyTensor::from_slices(2, vec![vec![(1, 0)]]).unwrap();
        assert_ne!(a.checksum(), b.checksum());
        assert_eq!(a.checksum(), a.clone().checksum());
        assert_eq!(a.checksum().len(), 64);
    }
}
