use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Axis-aligned coordinate box used for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "region bounds differ in dimension");
        Self { lower, upper }
    }

    /// Cube of half-width `r` around `centre`.
    pub fn around(centre: &[f64], r: f64) -> Self {
        Self {
            lower: centre.iter().map(|c| c - r).collect(),
            upper: centre.iter().map(|c| c + r).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
            || self
                .lower
                .iter()
                .zip(&self.upper)
                .any(|(l, u)| !(l.is_finite() && u.is_finite()) || l > u)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| v >= l && v <= u)
    }

    pub fn centre(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn padded(&self, pad: f64) -> Self {
        Self {
            lower: self.lower.iter().map(|v| v - pad).collect(),
            upper: self.upper.iter().map(|v| v + pad).collect(),
        }
    }

    /// Centre followed by `n - 1` uniform points from a seeded stream.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        if n == 0 {
            return out;
        }
        out.push(self.centre());
        for _ in 1..n {
            out.push(
                self.lower
                    .iter()
                    .zip(&self.upper)
                    .map(|(&l, &u)| if u > l { rng.random_range(l..=u) } else { l })
                    .collect(),
            );
        }
        out
    }

    /// Tensor grid with `per_axis` points per axis, endpoints included.
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let k = per_axis.max(1);
        let total = k.pow(n as u32);
        let mut out = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut p = Vec::with_capacity(n);
            for a in 0..n {
                let i = idx % k;
                idx /= k;
                let s = if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 };
                p.push(self.lower[a] + s * (self.upper[a] - self.lower[a]));
            }
            out.push(p);
        }
        out
    }
}
