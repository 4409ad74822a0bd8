//! Typed index sets over users and resources.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::marker::PhantomData;

use fixedbitset::FixedBitSet;

/// Marker for sets of resource indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResourceKind {}

/// Marker for sets of user indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UserKind {}

pub type ResourceSet = IndexSet<ResourceKind>;
pub type UserSet = IndexSet<UserKind>;

/// A set of dense indices `0..universe`, tagged with what the indices mean.
///
/// Sets order by cardinality first, then lexicographically on their sorted
/// members, which is the reporting order used throughout the crate.
pub struct IndexSet<K> {
    bits: FixedBitSet,
    _kind: PhantomData<K>,
}

impl<K> IndexSet<K> {
    pub fn empty(universe: usize) -> Self {
        IndexSet {
            bits: FixedBitSet::with_capacity(universe),
            _kind: PhantomData,
        }
    }

    pub fn full(universe: usize) -> Self {
        let mut s = Self::empty(universe);
        s.bits.insert_range(..);
        s
    }

    pub fn from_indices(universe: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(universe);
        for i in indices {
            s.insert(i);
        }
        s
    }

    pub fn universe(&self) -> usize {
        self.bits.len()
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.bits.len(), "index {i} outside universe {}", self.bits.len());
        self.bits.insert(i);
    }

    pub fn remove(&mut self, i: usize) {
        self.bits.set(i, false);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits.contains(i)
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.ones()
    }

    pub fn first(&self) -> Option<usize> {
        self.bits.minimum()
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.bits.is_subset(&other.bits)
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.bits.is_disjoint(&other.bits)
    }

    pub fn intersects(&self, other: &Self) -> bool {
        !self.is_disjoint(other)
    }

    pub fn union_with(&mut self, other: &Self) {
        self.bits.union_with(&other.bits);
    }

    pub fn intersect_with(&mut self, other: &Self) {
        self.bits.intersect_with(&other.bits);
    }

    pub fn difference_with(&mut self, other: &Self) {
        self.bits.difference_with(&other.bits);
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut s = self.clone();
        s.union_with(other);
        s
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let mut s = self.clone();
        s.intersect_with(other);
        s
    }

    pub fn difference(&self, other: &Self) -> Self {
        let mut s = self.clone();
        s.difference_with(other);
        s
    }

    pub fn complement(&self) -> Self {
        let mut s = self.clone();
        s.bits.toggle_range(..);
        s
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl<K> Clone for IndexSet<K> {
    fn clone(&self) -> Self {
        IndexSet {
            bits: self.bits.clone(),
            _kind: PhantomData,
        }
    }
}

impl<K> PartialEq for IndexSet<K> {
    fn eq(&self, other: &Self) -> bool {
        self.bits == other.bits
    }
}

impl<K> Eq for IndexSet<K> {}

impl<K> Hash for IndexSet<K> {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.bits.hash(state);
    }
}

impl<K> Ord for IndexSet<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.iter().cmp(other.iter()))
    }
}

impl<K> PartialOrd for IndexSet<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> fmt::Debug for IndexSet<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}
