//! Binary indexed sum tree for categorical sampling with point updates.
//!
//! Internal nodes are recomputed from their two children on every update,
//! so the stored totals never accumulate add/subtract drift.

#[derive(Debug, Clone)]
pub(crate) struct SumTree {
    // node i has children 2i, 2i+1; leaves occupy [cap, 2cap)
    nodes: Vec<f64>,
    cap: usize,
}

impl SumTree {
    pub fn new(n: usize) -> Self {
        let cap = n.max(1).next_power_of_two();
        SumTree { nodes: vec![0.0; 2 * cap], cap }
    }

    /// Grow to hold at least `n` leaves, keeping existing weights.
    pub fn reserve(&mut self, n: usize) {
        if n <= self.cap {
            return;
        }
        let mut bigger = SumTree::new(n);
        bigger.nodes[bigger.cap..bigger.cap + self.cap].copy_from_slice(&self.nodes[self.cap..]);
        for i in (1..bigger.cap).rev() {
            bigger.nodes[i] = bigger.nodes[2 * i] + bigger.nodes[2 * i + 1];
        }
        *self = bigger;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.cap + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, w: f64) {
        let mut j = self.cap + i;
        if self.nodes[j] == w {
            return;
        }
        self.nodes[j] = w;
        j /= 2;
        while j >= 1 {
            self.nodes[j] = self.nodes[2 * j] + self.nodes[2 * j + 1];
            j /= 2;
        }
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Leaf index whose cumulative interval contains `u * total`, for
    /// `u` in `[0, 1)`. Never returns a zero-weight leaf while the total is
    /// positive.
    pub fn sample(&self, u: f64) -> usize {
        let mut x = u * self.total();
        let mut j = 1;
        while j < self.cap {
            let left = self.nodes[2 * j];
            let right = self.nodes[2 * j + 1];
            if (x < left && left > 0.0) || right <= 0.0 {
                j *= 2;
            } else {
                x -= left;
                j = 2 * j + 1;
            }
        }
        j - self.cap
    }
}
