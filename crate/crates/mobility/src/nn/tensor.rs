//! Dense row-major f64 matrix used throughout the training engine.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Tensor { rows, cols, data }
    }

    /// Uniform init in [-scale, scale].
    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        Tensor { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// C = A · B, with optional transposes. Only the operand layouts the models
/// need are implemented.
pub fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let (m, k1) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k1, k2, "matmul inner dims {k1} vs {k2}");
    let k = k1;
    let mut out = Tensor::zeros(m, n);

    match (ta, tb) {
        (false, false) => {
            // ikj order keeps the inner loop contiguous over B and C rows.
            for i in 0..m {
                let c_row = &mut out.data[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a.data[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let b_row = &b.data[p * n..(p + 1) * n];
                    for j in 0..n {
                        c_row[j] += av * b_row[j];
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let a_row = &a.data[i * k..(i + 1) * k];
                let c_row = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    let b_row = &b.data[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a_row[p] * b_row[p];
                    }
                    c_row[j] = acc;
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let b_row = &b.data[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = a.data[p * m + i];
                    if av == 0.0 {
                        continue;
                    }
                    let c_row = &mut out.data[i * n..(i + 1) * n];
                    for j in 0..n {
                        c_row[j] += av * b_row[j];
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a.data[p * m + i] * b.data[j * k + p];
                    }
                    out.data[i * n + j] = acc;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b, false, false);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_transpose_variants_agree() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::uniform(4, 3, 1.0, &mut rng);
        let b = Tensor::uniform(3, 5, 1.0, &mut rng);
        let base = matmul(&a, &b, false, false);

        // a^T stored transposed
        let mut at = Tensor::zeros(3, 4);
        for i in 0..4 {
            for j in 0..3 {
                *at.at_mut(j, i) = a.at(i, j);
            }
        }
        let mut bt = Tensor::zeros(5, 3);
        for i in 0..3 {
            for j in 0..5 {
                *bt.at_mut(j, i) = b.at(i, j);
            }
        }
        let c1 = matmul(&at, &b, true, false);
        let c2 = matmul(&a, &bt, false, true);
        let c3 = matmul(&at, &bt, true, true);
        for c in [c1, c2, c3] {
            for (x, y) in c.data.iter().zip(&base.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
