//! Binary indexed tree over `f64` weights with prefix-sum search.

#[derive(Debug, Clone, PartialEq)]
pub struct FenwickTree {
    // 1-based; tree[0] is unused.
    tree: Vec<f64>,
}

#[inline]
fn lsb(i: usize) -> usize {
    i & i.wrapping_neg()
}

impl FenwickTree {
    pub fn new(values: &[f64]) -> Self {
        let n = values.len();
        let mut tree = Vec::with_capacity(n + 1);
        tree.push(0.0);
        tree.extend_from_slice(values);
        for i in 1..=n {
            let j = i + lsb(i);
            if j <= n {
                tree[j] += tree[i];
            }
        }
        Self { tree }
    }

    pub fn len(&self) -> usize {
        self.tree.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds `delta` to entry `idx` (0-based).
    pub fn add(&mut self, idx: usize, delta: f64) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += lsb(i);
        }
    }

    /// Sum of entries `0..=idx`.
    pub fn prefix_sum(&self, idx: usize) -> f64 {
        let mut i = idx + 1;
        let mut sum = 0.0;
        while i > 0 {
            sum += self.tree[i];
            i -= lsb(i);
        }
        sum
    }

    pub fn total(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.prefix_sum(self.len() - 1)
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`, clamped to
    /// the last entry.
    pub fn search(&self, target: f64) -> usize {
        let n = self.len();
        let mut pos = 0;
        let mut rem = target;
        let mut step = n.checked_next_power_of_two().unwrap_or(0).max(1);
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n.saturating_sub(1))
    }
}
