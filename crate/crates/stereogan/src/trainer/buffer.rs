//! Capacity-limited reservoir of previously generated images. Feeding
//! discriminators from it (rather than only the newest generator outputs)
//! stabilizes adversarial training.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    capacity: usize,
    store: Vec<Image>,
    rng: ChaCha8Rng,
}

impl HistoryBuffer {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("buffer capacity must be >= 1".into()));
        }
        Ok(HistoryBuffer {
            capacity,
            store: Vec::with_capacity(capacity),
            rng,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    /// While filling, stores the image and returns it. Once full: with
    /// probability 1/2 swaps the image against a uniformly random stored one
    /// and returns the old occupant, otherwise returns the image unstored.
    ///
    /// Draw order (relied on by the replay oracle): the accept/pass
    /// probability first, then the slot index only on a swap.
    pub fn push_query(&mut self, img: Image) -> Image {
        if self.store.len() < self.capacity {
            self.store.push(img.clone());
            return img;
        }
        let p: f64 = self.rng.random_range(0.0..1.0);
        if p < 0.5 {
            let idx = self.rng.random_range(0..self.capacity);
            std::mem::replace(&mut self.store[idx], img)
        } else {
            img
        }
    }

    pub(crate) fn contents(&self) -> &[Image] {
        &self.store
    }

    pub(crate) fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub(crate) fn restore(&mut self, store: Vec<Image>, rng: ChaCha8Rng) -> Result<()> {
        if store.len() > self.capacity {
            return Err(Error::Checkpoint(format!(
                "buffer snapshot ({}) exceeds capacity ({})",
                store.len(),
                self.capacity
            )));
        }
        self.store = store;
        self.rng = rng;
        Ok(())
    }
}

/// Free-function form of [`HistoryBuffer::push_query`].
pub fn buffer_push_query(buf: &mut HistoryBuffer, img: Image) -> Image {
    buf.push_query(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tagged(v: f32) -> Image {
        Image::constant(1, 4, 4, v).unwrap()
    }

    #[test]
    fn fill_phase_returns_input_and_stores() {
        let mut buf = HistoryBuffer::new(3, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let a = tagged(0.1);
        let out = buf.push_query(a.clone());
        assert_eq!(out, a);
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn capacity_never_exceeded_and_trace_matches_simulation() {
        // Independent straight-line simulation sharing the rng stream.
        let capacity = 50;
        let mut buf = HistoryBuffer::new(capacity, ChaCha8Rng::seed_from_u64(77)).unwrap();
        let mut sim_rng = ChaCha8Rng::seed_from_u64(77);
        let mut sim_store: Vec<f32> = Vec::new();
        for i in 0..10_000u32 {
            let v = (i % 1000) as f32 / 1000.0;
            let returned = buf.push_query(tagged(v));
            let expected = if sim_store.len() < capacity {
                sim_store.push(v);
                v
            } else {
                let p: f64 = sim_rng.random_range(0.0..1.0);
                if p < 0.5 {
                    let idx = sim_rng.random_range(0..capacity);
                    std::mem::replace(&mut sim_store[idx], v)
                } else {
                    v
                }
            };
            assert!(buf.len() <= capacity);
            assert_eq!(returned.data()[[0, 0, 0]], expected, "divergence at op {i}");
        }
        assert_eq!(buf.len(), capacity);
        // Final stores agree element for element.
        for (img, v) in buf.contents().iter().zip(sim_store.iter()) {
            assert_eq!(img.data()[[0, 0, 0]], *v);
        }
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(HistoryBuffer::new(0, ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
