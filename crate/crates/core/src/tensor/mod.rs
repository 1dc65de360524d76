//! Dense `f64` tensors and a dynamic reverse-mode differentiation tape.
//!
//! A [`Tensor`] is plain row-major data. Trainable tensors live in a
//! [`ParamStore`]; a [`Graph`] is rebuilt for every forward pass, records the
//! primitive operations applied to [`Var`] handles, and hands back a
//! [`Gradients`] value from [`Graph::backward`].

mod params;
mod tape;

pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{packed_index, packed_len, Graph, Var};

use thiserror::Error;

/// Additive surrogate for `-inf` used by masked softmax.
pub const MASK_NEG: f64 = -1e30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("every position of the softmax input is masked")]
    InvalidMask,
    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    Rank(Vec<usize>),
    #[error("tape was already back-propagated")]
    TapeConsumed,
    #[error("empty input to {0}")]
    Empty(&'static str),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count of a matrix (`shape[0]`).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Column count of a matrix (last dimension).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// First element; meaningful for scalars.
    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

/// Numerically stable log-sum-exp over a slice.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Masked softmax on plain slices. Masked entries come out exactly zero.
pub fn softmax(xs: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(TensorError::Empty("softmax"));
    }
    if let Some(m) = mask {
        if m.len() != xs.len() {
            return Err(TensorError::Shape {
                op: "softmax",
                left: vec![xs.len()],
                right: vec![m.len()],
            });
        }
        if !m.iter().any(|&v| v) {
            return Err(TensorError::InvalidMask);
        }
    }
    let shifted: Vec<f64> = match mask {
        Some(m) => xs
            .iter()
            .zip(m)
            .map(|(&x, &valid)| if valid { x } else { x + MASK_NEG })
            .collect(),
        None => xs.to_vec(),
    };
    let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = shifted.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Log-softmax on a plain slice.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(TensorError::DataLength { .. })
        ));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&[0.0, 0.0, 0.0], None).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_matches_high_precision_values() {
        let p = softmax(&[1.0, 2.0, 3.0], None).unwrap();
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_9,
        ];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-5);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = [0.3, -1.2, 2.5, 0.0];
        let a = softmax(&x, None).unwrap();
        for c in [-50.0, 1e-3, 700.0] {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = softmax(&shifted, None).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions() {
        let p = softmax(&[5.0, 1.0, 9.0], Some(&[true, true, false])).unwrap();
        assert_eq!(p[2], 0.0);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert_eq!(
            softmax(&[1.0, 2.0], Some(&[false, false])),
            Err(TensorError::InvalidMask)
        );
    }

    #[test]
    fn log_sum_exp_survives_large_inputs() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
