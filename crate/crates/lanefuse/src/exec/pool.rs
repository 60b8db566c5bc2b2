//! A freelist buffer pool for block-sized column buffers.
//!
//! Buffers are 32-bit word vectors (columns are f32 or i32, both 4 bytes)
//! bucketed by power-of-two capacity class. Releasing returns a buffer to
//! its class; allocating prefers a pooled buffer and falls back to the
//! global allocator — over the configured cap the fallback is permanent
//! (the buffer will not be pooled on release) and counted as a spill.

use std::collections::HashMap;
use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, Default, Clone, serde::Serialize)]
pub struct PoolStats {
    pub hits: usize,
    pub misses: usize,
    pub spills: usize,
    pub released: usize,
}

#[derive(Debug)]
pub struct BufferPool {
    classes: Mutex<HashMap<usize, Vec<Vec<u32>>>>,
    pooled_bytes: AtomicUsize,
    cap_bytes: usize,
    hits: AtomicUsize,
    misses: AtomicUsize,
    spills: AtomicUsize,
    released: AtomicUsize,
}

fn class_of(len: usize) -> usize {
    len.next_power_of_two().max(64)
}

impl BufferPool {
    pub fn new(cap_bytes: usize) -> Self {
        BufferPool {
            classes: Mutex::new(HashMap::new()),
            pooled_bytes: AtomicUsize::new(0),
            cap_bytes,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            spills: AtomicUsize::new(0),
            released: AtomicUsize::new(0),
        }
    }

    /// Get a cleared buffer with capacity for at least `len` words.
    pub fn alloc(&self, len: usize) -> Vec<u32> {
        let class = class_of(len);
        let reused = self.classes.lock().unwrap().get_mut(&class).and_then(Vec::pop);
        match reused {
            Some(mut buf) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                self.pooled_bytes.fetch_sub(class * 4, Ordering::Relaxed);
                buf.clear();
                buf
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                Vec::with_capacity(class)
            }
        }
    }

    /// Return a buffer for reuse. Buffers past the pool cap are dropped and
    /// counted as spills (the allocation already happened unpooled; this is
    /// never an abort).
    pub fn release(&self, buf: Vec<u32>) {
        let class = class_of(buf.capacity().max(1));
        self.released.fetch_add(1, Ordering::Relaxed);
        if self.pooled_bytes.load(Ordering::Relaxed) + class * 4 > self.cap_bytes {
            self.spills.fetch_add(1, Ordering::Relaxed);
            log::warn!("buffer pool cap exceeded; dropping a {class}-word buffer");
            return;
        }
        self.pooled_bytes.fetch_add(class * 4, Ordering::Relaxed);
        self.classes.lock().unwrap().entry(class).or_default().push(buf);
    }

    pub fn stats(&self) -> PoolStats {
        PoolStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            spills: self.spills.load(Ordering::Relaxed),
            released: self.released.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_realloc_is_a_hit() {
        let pool = BufferPool::new(1 << 20);
        let b = pool.alloc(1000);
        assert_eq!(pool.stats().misses, 1);
        pool.release(b);
        let _b2 = pool.alloc(1000);
        let s = pool.stats();
        assert_eq!(s.hits, 1);
        assert_eq!(s.misses, 1);
    }

    #[test]
    fn over_cap_release_spills_without_error() {
        let pool = BufferPool::new(256); // tiny cap
        let b = pool.alloc(1000);
        pool.release(b);
        assert_eq!(pool.stats().spills, 1);
        // next alloc is a miss, not a failure
        let _ = pool.alloc(1000);
        assert_eq!(pool.stats().misses, 2);
    }
}
