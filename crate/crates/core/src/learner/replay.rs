//! Fixed-capacity FIFO experience store.

use rand::seq::index;
use rand::Rng;
use std::collections::VecDeque;

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    /// Uniform sample of distinct entries; returns fewer when the buffer is smaller than `batch`.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<&T> {
        let n = batch.min(self.items.len());
        index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0), Some(&2));
        assert_eq!(b.get(2), Some(&4));
    }

    #[test]
    fn batch_has_no_repeats() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..50 {
            b.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s: Vec<i32> = b.sample(40, &mut rng).into_iter().copied().collect();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 40);
        assert_eq!(b.sample(80, &mut rng).len(), 50);
    }

    #[test]
    fn sampling_is_uniform() {
        let k = 20;
        let mut b = ReplayBuffer::new(k);
        for i in 0..k {
            b.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = vec![0usize; k];
        let draws = 5000;
        for _ in 0..draws {
            for &i in b.sample(5, &mut rng) {
                counts[i] += 1;
            }
        }
        let expected = (draws * 5) as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 19 degrees of freedom, 0.999 quantile is about 43.8
        assert!(chi2 < 43.8, "chi2 = {chi2}");
    }
}
