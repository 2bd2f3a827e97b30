//! Open-addressing table keyed by lattice sites.
//!
//! Walks update a linear site hash in O(1) per step (`h(y + s e_i) = h(y) +
//! s * w_i`); the table uses it to pick a slot and confirms hits by comparing
//! coordinates, so lookups are exact. Clearing is O(1) via generation stamps.

use crate::rng::splitmix64;

/// Per-axis weights of the linear site hash.
#[derive(Debug, Clone)]
pub struct SiteHasher {
    weights: Vec<u64>,
}

impl SiteHasher {
    pub fn new(dim: usize) -> Self {
        let weights = (0..dim)
            .map(|i| splitmix64(0x5173_a9d1_0e3b_77c1 ^ i as u64) | 1)
            .collect();
        Self { weights }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn hash(&self, coords: &[i32]) -> u64 {
        coords
            .iter()
            .zip(&self.weights)
            .fold(0u64, |h, (&c, &w)| h.wrapping_add((c as i64 as u64).wrapping_mul(w)))
    }

    /// Hash after moving by `sign` along `axis`.
    #[inline]
    pub fn shift(&self, h: u64, axis: usize, sign: i8) -> u64 {
        if sign > 0 {
            h.wrapping_add(self.weights[axis])
        } else {
            h.wrapping_sub(self.weights[axis])
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Slot {
    hash: u64,
    generation: u32,
    entry: u32,
}

#[derive(Clone)]
pub struct SiteTable<V> {
    dim: usize,
    slots: Vec<Slot>,
    mask: usize,
    generation: u32,
    coords: Vec<i32>,
    values: Vec<V>,
}

impl<V: Copy + Default> SiteTable<V> {
    pub fn new(dim: usize) -> Self {
        Self::with_capacity(dim, 64)
    }

    pub fn with_capacity(dim: usize, capacity: usize) -> Self {
        let n = (2 * capacity.max(8)).next_power_of_two();
        Self {
            dim,
            slots: vec![Slot::default(); n],
            mask: n - 1,
            generation: 1,
            coords: Vec::with_capacity(capacity * dim),
            values: Vec::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn clear(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.slots.iter_mut().for_each(|s| *s = Slot::default());
            self.generation = 1;
        }
        self.coords.clear();
        self.values.clear();
    }

    #[inline]
    fn slot_of(&self, hash: u64) -> usize {
        (splitmix64(hash) as usize) & self.mask
    }

    #[inline]
    fn entry_coords(&self, entry: u32) -> &[i32] {
        let i = entry as usize * self.dim;
        &self.coords[i..i + self.dim]
    }

    fn find(&self, hash: u64, coords: &[i32]) -> Result<u32, usize> {
        let mut i = self.slot_of(hash);
        loop {
            let s = self.slots[i];
            if s.generation != self.generation {
                return Err(i);
            }
            if s.hash == hash && self.entry_coords(s.entry) == coords {
                return Ok(s.entry);
            }
            i = (i + 1) & self.mask;
        }
    }

    pub fn get(&self, hash: u64, coords: &[i32]) -> Option<V> {
        debug_assert_eq!(coords.len(), self.dim);
        self.find(hash, coords).ok().map(|e| self.values[e as usize])
    }

    /// Returns a mutable reference to the value at a site, inserting the
    /// default first if absent. The flag is true for a fresh insertion.
    pub fn entry(&mut self, hash: u64, coords: &[i32]) -> (&mut V, bool) {
        debug_assert_eq!(coords.len(), self.dim);
        match self.find(hash, coords) {
            Ok(e) => (&mut self.values[e as usize], false),
            Err(slot) => {
                let e = self.values.len() as u32;
                self.slots[slot] = Slot {
                    hash,
                    generation: self.generation,
                    entry: e,
                };
                self.coords.extend_from_slice(coords);
                self.values.push(V::default());
                if 2 * self.values.len() > self.slots.len() {
                    self.grow();
                }
                (self.values.last_mut().unwrap(), true)
            }
        }
    }

    fn grow(&mut self) {
        let n = self.slots.len() * 2;
        let mut slots = vec![Slot::default(); n];
        let mask = n - 1;
        for s in &self.slots {
            if s.generation != self.generation {
                continue;
            }
            let mut i = (splitmix64(s.hash) as usize) & mask;
            while slots[i].generation == self.generation {
                i = (i + 1) & mask;
            }
            slots[i] = *s;
        }
        self.slots = slots;
        self.mask = mask;
    }

    /// Iterates over stored sites and values in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&[i32], &V)> {
        self.coords
            .chunks(self.dim.max(1))
            .zip(self.values.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::HashMap;

    #[test]
    fn incremental_hash_matches_direct() {
        let h = SiteHasher::new(3);
        let mut p = [0i32; 3];
        let mut hv = h.hash(&p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let axis = rng.random_range(0..3);
            let sign = if rng.random::<bool>() { 1 } else { -1 };
            p[axis] += i32::from(sign);
            hv = h.shift(hv, axis, sign);
            assert_eq!(hv, h.hash(&p));
        }
    }

    #[test]
    fn agrees_with_std_hashmap() {
        let hasher = SiteHasher::new(2);
        let mut table: SiteTable<u32> = SiteTable::new(2);
        let mut reference: HashMap<Vec<i32>, u32> = HashMap::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for round in 0..3 {
            table.clear();
            reference.clear();
            for _ in 0..5000 {
                let p = [rng.random_range(-30..30), rng.random_range(-30..30)];
                let (v, fresh) = table.entry(hasher.hash(&p), &p);
                *v += 1;
                let r = reference.entry(p.to_vec()).or_insert(0);
                assert_eq!(fresh, *r == 0, "round {round}");
                *r += 1;
            }
            assert_eq!(table.len(), reference.len());
            for (k, v) in &reference {
                assert_eq!(table.get(hasher.hash(k), k), Some(*v));
            }
        }
    }

    #[test]
    fn colliding_hashes_are_kept_apart() {
        let mut table: SiteTable<u8> = SiteTable::new(2);
        *table.entry(42, &[1, 2]).0 = 1;
        *table.entry(42, &[2, 1]).0 = 2;
        assert_eq!(table.get(42, &[1, 2]), Some(1));
        assert_eq!(table.get(42, &[2, 1]), Some(2));
        assert_eq!(table.get(42, &[0, 0]), None);
    }
}
