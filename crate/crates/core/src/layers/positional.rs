use crate::tensor::Tensor;

/// Fixed sinusoidal position table:
/// `pe[t][2i] = sin(t / 10000^(2i/d))`, `pe[t][2i+1] = cos(t / 10000^(2i/d))`.
///
/// Rows are generated on demand, so there is no upper bound on sequence length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositionalEncoding {
    dim: usize,
}

impl PositionalEncoding {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, t: usize, j: usize) -> f64 {
        let pair = (j - j % 2) as f64;
        let angle = t as f64 / 10000f64.powf(pair / self.dim as f64);
        if j.is_multiple_of(2) {
            angle.sin()
        } else {
            angle.cos()
        }
    }

    /// First `n` rows, `[n×d]`.
    pub fn table(&self, n: usize) -> Tensor {
        let data = (0..n)
            .flat_map(|t| (0..self.dim).map(move |j| (t, j)))
            .map(|(t, j)| self.value(t, j))
            .collect();
        Tensor::from_parts(vec![n, self.dim], data)
    }
}
