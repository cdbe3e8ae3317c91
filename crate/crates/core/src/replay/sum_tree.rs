/// Binary sum tree over a fixed number of leaves. Internal nodes are always
/// recomputed as `left + right`, so the tree is a pure function of its leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self { leaves, nodes: vec![0.0; 2 * leaves] }
    }

    pub fn capacity(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, priority: f64) {
        debug_assert!(priority >= 0.0 && priority.is_finite());
        let mut n = self.leaves + i;
        self.nodes[n] = priority;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
    }

    /// Leaf whose cumulative-priority interval contains `u ∈ [0, total)`.
    /// Never returns a zero-priority leaf while the total is positive.
    pub fn find(&self, mut u: f64) -> usize {
        let mut n = 1;
        while n < self.leaves {
            let (l, r) = (self.nodes[2 * n], self.nodes[2 * n + 1]);
            if (u < l && l > 0.0) || r <= 0.0 {
                n = 2 * n;
            } else {
                u -= l;
                n = 2 * n + 1;
            }
        }
        n - self.leaves
    }

    /// Largest relative mismatch between an internal node and its children.
    pub fn max_internal_error(&self) -> f64 {
        (1..self.leaves)
            .map(|n| {
                let s = self.nodes[2 * n] + self.nodes[2 * n + 1];
                (self.nodes[n] - s).abs() / s.abs().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }
}
