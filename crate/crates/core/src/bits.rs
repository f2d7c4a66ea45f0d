//! Fixed-width bit sets and row-major binary matrices.
//!
//! Every relation in the access model (UD, UDhat, GD, DT, UG, DAD) is a
//! binary matrix, and the solver's inner loop works on sets of users and sets
//! of groups, so both are packed into `u64` words.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const WORD: usize = 64;

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(WORD)
}

/// A set of indices in `0..len`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitSet {
    len: usize,
    words: Vec<u64>,
}

impl BitSet {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn full(len: usize) -> Self {
        let mut s = Self::new(len);
        for i in 0..len {
            s.insert(i);
        }
        s
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::new(len);
        for i in indices {
            s.insert(i);
        }
        s
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, i: usize) -> bool {
        debug_assert!(i < self.len);
        let w = &mut self.words[i / WORD];
        let mask = 1u64 << (i % WORD);
        let fresh = *w & mask == 0;
        *w |= mask;
        fresh
    }

    #[inline]
    pub fn remove(&mut self, i: usize) -> bool {
        debug_assert!(i < self.len);
        let w = &mut self.words[i / WORD];
        let mask = 1u64 << (i % WORD);
        let present = *w & mask != 0;
        *w &= !mask;
        present
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        if value {
            self.insert(i);
        } else {
            self.remove(i);
        }
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    pub fn intersects(&self, other: &BitSet) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    #[inline]
    pub fn intersection_count(&self, other: &BitSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    #[inline]
    pub fn is_subset(&self, other: &BitSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    #[inline]
    pub fn union_with(&mut self, other: &BitSet) {
        self.words
            .iter_mut()
            .zip(&other.words)
            .for_each(|(a, b)| *a |= b);
    }

    #[inline]
    pub fn intersect_with(&mut self, other: &BitSet) {
        self.words
            .iter_mut()
            .zip(&other.words)
            .for_each(|(a, b)| *a &= b);
    }

    #[inline]
    pub fn difference_with(&mut self, other: &BitSet) {
        self.words
            .iter_mut()
            .zip(&other.words)
            .for_each(|(a, b)| *a &= !b);
    }

    pub fn union(&self, other: &BitSet) -> BitSet {
        let mut out = self.clone();
        out.union_with(other);
        out
    }

    pub fn intersection(&self, other: &BitSet) -> BitSet {
        let mut out = self.clone();
        out.intersect_with(other);
        out
    }

    pub fn difference(&self, other: &BitSet) -> BitSet {
        let mut out = self.clone();
        out.difference_with(other);
        out
    }

    /// Ascending iterator over members.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut word = w;
            std::iter::from_fn(move || {
                if word == 0 {
                    None
                } else {
                    let tz = word.trailing_zeros() as usize;
                    word &= word - 1;
                    Some(wi * WORD + tz)
                }
            })
        })
    }

    pub fn first(&self) -> Option<usize> {
        self.iter().next()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

impl std::fmt::Debug for BitSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Row-major binary matrix.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    cols: usize,
    rows: Vec<BitSet>,
}

impl BitMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            rows: (0..rows).map(|_| BitSet::new(cols)).collect(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if f(r, c) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    /// Builds a matrix from nested boolean rows. Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::from_fn(rows.len(), cols, |r, c| rows[r][c])
    }

    /// Convenience for tests and fixtures: rows given as 0/1 integers.
    pub fn from_01(rows: &[&[u8]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::from_fn(rows.len(), cols, |r, c| rows[r][c] != 0)
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r].contains(c)
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.rows[r].set(c, value);
    }

    #[inline]
    pub fn row(&self, r: usize) -> &BitSet {
        &self.rows[r]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut BitSet {
        &mut self.rows[r]
    }

    pub fn rows(&self) -> impl Iterator<Item = &BitSet> {
        self.rows.iter()
    }

    pub fn count_ones(&self) -> usize {
        self.rows.iter().map(BitSet::count).sum()
    }

    pub fn row_counts(&self) -> Vec<usize> {
        self.rows.iter().map(BitSet::count).collect()
    }

    /// Column `c` as a set of row indices.
    pub fn column(&self, c: usize) -> BitSet {
        BitSet::from_indices(
            self.n_rows(),
            (0..self.n_rows()).filter(|&r| self.get(r, c)),
        )
    }

    pub fn transpose(&self) -> BitMatrix {
        BitMatrix::from_fn(self.cols, self.n_rows(), |r, c| self.get(c, r))
    }

    /// All set cells in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |c| (r, c)))
    }

    pub fn same_shape(&self, other: &BitMatrix) -> bool {
        self.n_rows() == other.n_rows() && self.cols == other.cols
    }

    /// Elementwise `self <= other`.
    pub fn is_subset(&self, other: &BitMatrix) -> bool {
        self.same_shape(other) && self.rows.iter().zip(&other.rows).all(|(a, b)| a.is_subset(b))
    }

    pub fn and(&self, other: &BitMatrix) -> BitMatrix {
        let mut out = self.clone();
        out.rows
            .iter_mut()
            .zip(&other.rows)
            .for_each(|(a, b)| a.intersect_with(b));
        out
    }

    pub fn or(&self, other: &BitMatrix) -> BitMatrix {
        let mut out = self.clone();
        out.rows
            .iter_mut()
            .zip(&other.rows)
            .for_each(|(a, b)| a.union_with(b));
        out
    }

    /// Boolean matrix product: `(self x other)(r, c) = OR_k self(r, k) AND other(k, c)`.
    pub fn bool_product(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.cols, other.n_rows(), "inner dimensions differ");
        let mut out = BitMatrix::new(self.n_rows(), other.cols);
        for (r, row) in self.rows.iter().enumerate() {
            for k in row.iter() {
                out.rows[r].union_with(&other.rows[k]);
            }
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<bool>> {
        self.rows
            .iter()
            .map(|row| (0..self.cols).map(|c| row.contains(c)).collect())
            .collect()
    }
}

impl std::fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BitMatrix {}x{}", self.n_rows(), self.cols)?;
        for row in &self.rows {
            let line: String = (0..self.cols)
                .map(|c| if row.contains(c) { '1' } else { '.' })
                .collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

/// Sparse wire form: shape plus the list of set cells.
#[derive(Serialize, Deserialize)]
struct SparseMatrix {
    rows: usize,
    cols: usize,
    ones: Vec<(usize, usize)>,
}

impl Serialize for BitMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SparseMatrix {
            rows: self.n_rows(),
            cols: self.cols,
            ones: self.ones().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BitMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let sparse = SparseMatrix::deserialize(deserializer)?;
        let mut m = BitMatrix::new(sparse.rows, sparse.cols);
        for (r, c) in sparse.ones {
            if r >= sparse.rows || c >= sparse.cols {
                return Err(serde::de::Error::custom(format!(
                    "cell ({r}, {c}) outside {}x{} matrix",
                    sparse.rows, sparse.cols
                )));
            }
            m.set(r, c, true);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_ops_across_word_boundary() {
        let mut a = BitSet::new(130);
        a.insert(0);
        a.insert(63);
        a.insert(64);
        a.insert(129);
        assert_eq!(a.count(), 4);
        assert_eq!(a.iter().collect::<Vec<_>>(), vec![0, 63, 64, 129]);
        let b = BitSet::from_indices(130, [64, 100]);
        assert!(a.intersects(&b));
        assert_eq!(a.intersection_count(&b), 1);
        assert_eq!(a.difference(&b).iter().collect::<Vec<_>>(), vec![0, 63, 129]);
        assert!(BitSet::from_indices(130, [63]).is_subset(&a));
        assert!(a.remove(63));
        assert!(!a.remove(63));
    }

    #[test]
    fn bool_product_matches_definition() {
        let a = BitMatrix::from_01(&[&[1, 0, 1], &[0, 0, 0]]);
        let b = BitMatrix::from_01(&[&[1, 0], &[1, 1], &[0, 1]]);
        let p = a.bool_product(&b);
        assert_eq!(p, BitMatrix::from_01(&[&[1, 1], &[0, 0]]));
    }

    #[test]
    fn sparse_serde_roundtrip() {
        let m = BitMatrix::from_01(&[&[1, 0, 1], &[0, 1, 0]]);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"rows":2,"cols":3,"ones":[[0,0],[0,2],[1,1]]}"#);
        let back: BitMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<BitMatrix>(r#"{"rows":1,"cols":1,"ones":[[0,3]]}"#).is_err());
    }
}
