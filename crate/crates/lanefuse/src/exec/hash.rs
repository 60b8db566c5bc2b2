//! Open-addressing aggregation hash table used by the hash-table reduce
//! lowering: linear probing, 64-bit multiply-xor hashing with a fixed seed,
//! power-of-two capacity, growth at 0.7 load factor.
//!
//! Values are fixed-arity groups of 32-bit accumulator cells (f32 or i32 per
//! cell, decided at construction). Aggregation is add/increment only, so
//! merging tables is associative and the block-ordered merge stays
//! deterministic.

const SEED: u64 = 0x9E37_79B9_7F4A_7C15;
const EMPTY: u64 = u64::MAX;

#[inline]
pub fn hash64(key: u64) -> u64 {
    let mut x = key.wrapping_add(SEED);
    x ^= x >> 33;
    x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x ^= x >> 33;
    x = x.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    x ^= x >> 33;
    x
}

#[derive(Debug, Clone)]
pub struct HashAggTable {
    /// Slot keys; `EMPTY` marks a free slot (keys must not use u64::MAX).
    keys: Vec<u64>,
    /// Accumulator cells, `arity` per slot, stored as raw 32-bit words.
    vals: Vec<u32>,
    val_is_f32: Vec<bool>,
    arity: usize,
    len: usize,
    mask: usize,
}

impl HashAggTable {
    pub fn new(val_is_f32: Vec<bool>) -> Self {
        let cap = 16usize;
        HashAggTable {
            keys: vec![EMPTY; cap],
            vals: vec![0; cap * val_is_f32.len().max(1)],
            arity: val_is_f32.len().max(1),
            val_is_f32,
            len: 0,
            mask: cap - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn grow(&mut self) {
        let new_cap = self.keys.len() * 2;
        let mut next = HashAggTable {
            keys: vec![EMPTY; new_cap],
            vals: vec![0; new_cap * self.arity],
            val_is_f32: self.val_is_f32.clone(),
            arity: self.arity,
            len: 0,
            mask: new_cap - 1,
        };
        for i in 0..self.keys.len() {
            if self.keys[i] != EMPTY {
                let slot = next.slot_for(self.keys[i]);
                next.keys[slot] = self.keys[i];
                next.len += 1;
                let (a, b) = (slot * self.arity, i * self.arity);
                next.vals[a..a + self.arity].copy_from_slice(&self.vals[b..b + self.arity]);
            }
        }
        *self = next;
    }

    /// Find the slot holding `key`, or the free slot where it belongs.
    #[inline]
    fn slot_for(&self, key: u64) -> usize {
        let mut i = (hash64(key) as usize) & self.mask;
        loop {
            if self.keys[i] == EMPTY || self.keys[i] == key {
                return i;
            }
            i = (i + 1) & self.mask;
        }
    }

    #[inline]
    fn entry(&mut self, key: u64) -> usize {
        if (self.len + 1) * 10 > self.keys.len() * 7 {
            self.grow();
        }
        let slot = self.slot_for(key);
        if self.keys[slot] == EMPTY {
            self.keys[slot] = key;
            self.len += 1;
        }
        slot
    }

    #[inline]
    pub fn add_f32(&mut self, key: u64, cell: usize, delta: f32) {
        let slot = self.entry(key);
        let at = slot * self.arity + cell;
        let cur = f32::from_bits(self.vals[at]);
        self.vals[at] = (cur + delta).to_bits();
    }

    #[inline]
    pub fn add_i32(&mut self, key: u64, cell: usize, delta: i32) {
        let slot = self.entry(key);
        let at = slot * self.arity + cell;
        let cur = self.vals[at] as i32;
        self.vals[at] = cur.wrapping_add(delta) as u32;
    }

    #[inline]
    pub fn increment(&mut self, key: u64, cell: usize) {
        if self.val_is_f32[cell] {
            self.add_f32(key, cell, 1.0);
        } else {
            self.add_i32(key, cell, 1);
        }
    }

    /// Fold another table into this one (block-order merge). Keys carry
    /// over even when every cell is zero: a group that appeared in the
    /// input exists in the output regardless of what it accumulated.
    pub fn merge(&mut self, other: &HashAggTable) {
        debug_assert_eq!(self.arity, other.arity);
        for i in 0..other.keys.len() {
            let key = other.keys[i];
            if key == EMPTY {
                continue;
            }
            let slot = self.entry(key);
            for cell in 0..self.arity {
                let raw = other.vals[i * self.arity + cell];
                let at = slot * self.arity + cell;
                if self.val_is_f32[cell] {
                    let v = f32::from_bits(raw);
                    if v != 0.0 {
                        let cur = f32::from_bits(self.vals[at]);
                        self.vals[at] = (cur + v).to_bits();
                    }
                } else if raw != 0 {
                    let cur = self.vals[at] as i32;
                    self.vals[at] = cur.wrapping_add(raw as i32) as u32;
                }
            }
        }
    }

    /// Drain into (key, cells) pairs in ascending key order.
    pub fn sorted_entries(&self) -> Vec<(u64, Vec<u32>)> {
        let mut out: Vec<(u64, Vec<u32>)> = self
            .keys
            .iter()
            .enumerate()
            .filter(|(_, k)| **k != EMPTY)
            .map(|(i, k)| {
                (
                    *k,
                    self.vals[i * self.arity..(i + 1) * self.arity].to_vec(),
                )
            })
            .collect();
        out.sort_unstable_by_key(|(k, _)| *k);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_survive_growth() {
        let mut t = HashAggTable::new(vec![false]);
        for round in 0..3 {
            for k in 0..1000u64 {
                t.increment(k, 0);
            }
            let entries = t.sorted_entries();
            assert_eq!(entries.len(), 1000);
            assert!(entries
                .iter()
                .all(|(_, v)| v[0] as i32 == round + 1));
        }
    }

    #[test]
    fn merge_equals_single_table() {
        let mut a = HashAggTable::new(vec![false, true]);
        let mut b = HashAggTable::new(vec![false, true]);
        let mut whole = HashAggTable::new(vec![false, true]);
        for k in 0..100u64 {
            let (t, v) = if k % 2 == 0 { (&mut a, 2.0) } else { (&mut b, 3.0) };
            t.add_i32(k, 0, k as i32);
            t.add_f32(k, 1, v);
            whole.add_i32(k, 0, k as i32);
            whole.add_f32(k, 1, if k % 2 == 0 { 2.0 } else { 3.0 });
        }
        a.merge(&b);
        assert_eq!(a.sorted_entries(), whole.sorted_entries());
    }
}
