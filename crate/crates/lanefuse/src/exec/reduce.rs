//! Per-block aggregation state for reduce stages.
//!
//! Each executor folds its block into a private [`ReducePartial`]; the
//! scheduler merges partials in ascending block order so float results are
//! identical for every worker count. The partial's internal shape follows
//! the lowering the synthesizer chose:
//!
//! - reduction variable: accumulator slots live in a flat register array
//! - direct index: Context writes land in dense per-key arrays
//! - hash table: keyed groups (and, when forced for benchmarking, Context
//!   writes too) aggregate in an open-addressing table
//!
//! Everything here is add/increment only, so merging is associative and
//! the final Context deltas commute.

use super::compile::CompiledUdf;
use super::hash::HashAggTable;
use crate::context::{DeltaOp, UpdateSet};
use crate::scalar::Scalar;
use crate::synthesizer::ReduceLowering;

/// Shift signed 32-bit group keys into the table's u64 key space (u64::MAX
/// is the table's empty marker, so raw sign extension is off the table).
#[inline]
pub fn encode_key(k: i32) -> u64 {
    (k as i64 + (1i64 << 31)) as u64
}

#[inline]
pub fn decode_key(k: u64) -> i32 {
    (k as i64 - (1i64 << 31)) as i32
}

#[derive(Debug)]
pub struct ReducePartial {
    lowering: ReduceLowering,
    /// Raw accumulator cells for the reduction-variable shape.
    accs: Vec<u32>,
    acc_is_f32: Vec<bool>,
    /// Per-group accumulator cells for the hash shape.
    keyed: Option<HashAggTable>,
    cur_key: u64,
    /// Dense per-write-key delta arrays, parallel to `CompiledUdf::writes`.
    dense: Vec<Vec<u32>>,
    dense_is_f32: Vec<bool>,
    /// Hash-lowered Context deltas, one table per write key, keyed by
    /// flattened element index (benchmark-forced hash mode only).
    ctx_hash: Vec<Option<HashAggTable>>,
}

impl ReducePartial {
    pub fn new(c: &CompiledUdf, lowering: ReduceLowering, keyed: bool) -> Self {
        let hash_ctx = lowering == ReduceLowering::HashTable && !keyed;
        ReducePartial {
            lowering,
            accs: vec![0; c.acc_is_f32.len()],
            acc_is_f32: c.acc_is_f32.clone(),
            keyed: if keyed {
                Some(HashAggTable::new(c.acc_is_f32.clone()))
            } else if lowering == ReduceLowering::HashTable && !c.acc_is_f32.is_empty() {
                // forced hash over an unkeyed reduce: one synthetic group
                Some(HashAggTable::new(c.acc_is_f32.clone()))
            } else {
                None
            },
            cur_key: encode_key(0),
            dense: c
                .writes
                .iter()
                .map(|(_, _, len)| if hash_ctx { Vec::new() } else { vec![0u32; *len] })
                .collect(),
            dense_is_f32: c.writes.iter().map(|(_, f, _)| *f).collect(),
            ctx_hash: c
                .writes
                .iter()
                .map(|(_, f, _)| hash_ctx.then(|| HashAggTable::new(vec![*f])))
                .collect(),
        }
    }

    /// Set the group for subsequent accumulator deltas (keyed reduces).
    #[inline]
    pub fn set_key(&mut self, k: i32) {
        self.cur_key = encode_key(k);
    }

    #[inline]
    pub fn acc_add_f32(&mut self, slot: usize, v: f32) {
        match &mut self.keyed {
            Some(t) => t.add_f32(self.cur_key, slot, v),
            None => {
                let cur = f32::from_bits(self.accs[slot]);
                self.accs[slot] = (cur + v).to_bits();
            }
        }
    }

    #[inline]
    pub fn acc_add_i32(&mut self, slot: usize, v: i32) {
        match &mut self.keyed {
            Some(t) => t.add_i32(self.cur_key, slot, v),
            None => {
                let cur = self.accs[slot] as i32;
                self.accs[slot] = cur.wrapping_add(v) as u32;
            }
        }
    }

    #[inline]
    pub fn acc_inc(&mut self, slot: usize) {
        if self.acc_is_f32[slot] {
            self.acc_add_f32(slot, 1.0);
        } else {
            self.acc_add_i32(slot, 1);
        }
    }

    #[inline]
    pub fn ctx_add(&mut self, wkey: usize, flat: usize, bits: u32, is_f32: bool) {
        match &mut self.ctx_hash[wkey] {
            Some(t) => {
                if is_f32 {
                    t.add_f32(flat as u64, 0, f32::from_bits(bits));
                } else {
                    t.add_i32(flat as u64, 0, bits as i32);
                }
            }
            None => {
                let cell = &mut self.dense[wkey][flat];
                if is_f32 {
                    *cell = (f32::from_bits(*cell) + f32::from_bits(bits)).to_bits();
                } else {
                    *cell = (*cell as i32).wrapping_add(bits as i32) as u32;
                }
            }
        }
    }

    #[inline]
    pub fn ctx_inc(&mut self, wkey: usize, flat: usize, is_f32: bool) {
        let one = if is_f32 { 1.0f32.to_bits() } else { 1i32 as u32 };
        self.ctx_add(wkey, flat, one, is_f32);
    }

    /// Raw unkeyed accumulator cells (reduction-variable shape), or `None`
    /// when a hash table holds them. Lets the columnar evaluator fold
    /// whole chunks without per-row dispatch.
    #[inline]
    pub fn acc_cells(&mut self) -> Option<&mut [u32]> {
        if self.keyed.is_some() {
            None
        } else {
            Some(&mut self.accs)
        }
    }

    /// Raw dense delta cells for one write key (direct-index shape), or
    /// `None` under forced hashing.
    #[inline]
    pub fn dense_cells(&mut self, wkey: usize) -> Option<&mut [u32]> {
        if self.ctx_hash[wkey].is_some() {
            None
        } else {
            Some(&mut self.dense[wkey])
        }
    }

    /// Fold `other` into `self`. The scheduler calls this in ascending
    /// block order, which pins float rounding across worker counts.
    pub fn merge(&mut self, other: &ReducePartial) {
        debug_assert_eq!(self.lowering, other.lowering);
        for (slot, f) in self.acc_is_f32.clone().iter().enumerate() {
            let raw = other.accs[slot];
            if *f {
                let v = f32::from_bits(raw);
                if v != 0.0 {
                    self.acc_add_f32(slot, v);
                }
            } else if raw != 0 {
                self.acc_add_i32(slot, raw as i32);
            }
        }
        match (&mut self.keyed, &other.keyed) {
            (Some(a), Some(b)) => a.merge(b),
            (None, None) => {}
            _ => unreachable!("partials of one reduce share a shape"),
        }
        for (wkey, theirs) in other.dense.iter().enumerate() {
            let is_f32 = self.dense_is_f32[wkey];
            for (flat, raw) in theirs.iter().enumerate() {
                if *raw != 0 {
                    self.ctx_add(wkey, flat, *raw, is_f32);
                }
            }
        }
        for (a, b) in self.ctx_hash.iter_mut().zip(&other.ctx_hash) {
            if let (Some(a), Some(b)) = (a, b) {
                a.merge(b);
            }
        }
    }

    /// Single-group accumulator row (reduction-variable shape), or `None`
    /// when the reduce has no accumulator slots.
    pub fn acc_row(&self) -> Option<Vec<Scalar>> {
        if self.acc_is_f32.is_empty() {
            return None;
        }
        if let Some(t) = &self.keyed {
            // forced hash over an unkeyed reduce: all deltas sit under one key
            let cells = t
                .sorted_entries()
                .into_iter()
                .next()
                .map(|(_, v)| v)
                .unwrap_or_else(|| vec![0; self.acc_is_f32.len()]);
            return Some(self.decode_cells(&cells));
        }
        Some(self.decode_cells(&self.accs))
    }

    /// Sorted `(key, accumulator row)` pairs for keyed reduces.
    pub fn group_rows(&self) -> Vec<(i32, Vec<Scalar>)> {
        let t = self.keyed.as_ref().expect("keyed reduce");
        t.sorted_entries()
            .into_iter()
            .map(|(k, cells)| (decode_key(k), self.decode_cells(&cells)))
            .collect()
    }

    fn decode_cells(&self, cells: &[u32]) -> Vec<Scalar> {
        cells
            .iter()
            .zip(&self.acc_is_f32)
            .map(|(raw, f)| {
                if *f {
                    Scalar::F32(f32::from_bits(*raw))
                } else {
                    Scalar::I32(*raw as i32)
                }
            })
            .collect()
    }

    /// Drain Context deltas into an UpdateSet (applied once per reduce,
    /// after all partials merged).
    pub fn context_deltas(&self, c: &CompiledUdf) -> UpdateSet {
        let mut out = UpdateSet::new();
        for (wkey, (name, is_f32, _)) in c.writes.iter().enumerate() {
            if let Some(t) = &self.ctx_hash[wkey] {
                for (flat, cells) in t.sorted_entries() {
                    out.push(name, flat as usize, decode_delta(cells[0], *is_f32));
                }
            } else {
                for (flat, raw) in self.dense[wkey].iter().enumerate() {
                    if *raw != 0 {
                        out.push(name, flat, decode_delta(*raw, *is_f32));
                    }
                }
            }
        }
        out
    }
}

#[inline]
fn decode_delta(raw: u32, is_f32: bool) -> DeltaOp {
    if is_f32 {
        DeltaOp::Add(Scalar::F32(f32::from_bits(raw)))
    } else {
        DeltaOp::Add(Scalar::I32(raw as i32))
    }
}
