//! Two-layer embedding encoder with exact analytic gradients.
//!
//! `z = W2 * tanh(W1 * x + b1) + b2`. The output is deliberately left
//! unnormalized so feature norms carry information about input quality.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// hidden x input
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// embed x hidden
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl EncoderParams {
    pub fn init(input_dim: usize, hidden_dim: usize, embed_dim: usize, rng: &mut impl Rng) -> Self {
        let mut gauss_scaled = |rows: usize, cols: usize, scale: f64| {
            let mut m = Matrix::zeros(rows, cols);
            for v in m.data_mut() {
                *v = rng.sample::<f64, _>(StandardNormal) * scale;
            }
            m
        };
        let w1 = gauss_scaled(hidden_dim, input_dim, 1.0 / (input_dim as f64).sqrt());
        let w2 = gauss_scaled(embed_dim, hidden_dim, 1.0 / (hidden_dim as f64).sqrt());
        EncoderParams {
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; embed_dim],
        }
    }

    /// Square pass-through weights; the encoder then computes `tanh(x)`.
    pub fn identity_like(dim: usize) -> Self {
        let eye = Matrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { 0.0 });
        EncoderParams {
            w1: eye.clone(),
            b1: vec![0.0; dim],
            w2: eye,
            b2: vec![0.0; dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.rows()
    }

    fn check_shapes(&self) -> Result<()> {
        if self.w1.rows() != self.b1.len()
            || self.w2.rows() != self.b2.len()
            || self.w2.cols() != self.w1.rows()
        {
            return Err(Error::ShapeMismatch {
                context: "encoder params",
                expected: "w1 (H x Din), b1 (H), w2 (D x H), b2 (D)".into(),
                actual: format!(
                    "w1 {}x{}, b1 {}, w2 {}x{}, b2 {}",
                    self.w1.rows(),
                    self.w1.cols(),
                    self.b1.len(),
                    self.w2.rows(),
                    self.w2.cols(),
                    self.b2.len()
                ),
            });
        }
        Ok(())
    }
}

/// Activations cached by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    inputs: Matrix,
    hidden: Matrix,
}

/// Batch forward: rows of `inputs` are samples. Returns raw embeddings.
pub fn encoder_forward(params: &EncoderParams, inputs: &Matrix) -> Result<(Matrix, EncoderCache)> {
    params.check_shapes()?;
    if inputs.cols() != params.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "encoder input",
            expected: format!("{} columns", params.input_dim()),
            actual: format!("{}", inputs.cols()),
        });
    }
    let mut hidden = inputs.matmul_nt(&params.w1);
    for i in 0..hidden.rows() {
        for (v, b) in hidden.row_mut(i).iter_mut().zip(&params.b1) {
            *v = (*v + b).tanh();
        }
    }
    let mut z = hidden.matmul_nt(&params.w2);
    for i in 0..z.rows() {
        for (v, b) in z.row_mut(i).iter_mut().zip(&params.b2) {
            *v += b;
        }
    }
    Ok((
        z,
        EncoderCache {
            inputs: inputs.clone(),
            hidden,
        },
    ))
}

/// Exact parameter gradients given `d loss / d z`.
pub fn encoder_backward(
    params: &EncoderParams,
    cache: &EncoderCache,
    grad_z: &Matrix,
) -> Result<EncoderParams> {
    if grad_z.rows() != cache.hidden.rows() || grad_z.cols() != params.embed_dim() {
        return Err(Error::ShapeMismatch {
            context: "encoder backward",
            expected: format!("{}x{}", cache.hidden.rows(), params.embed_dim()),
            actual: format!("{}x{}", grad_z.rows(), grad_z.cols()),
        });
    }
    let dw2 = grad_z.matmul_tn(&cache.hidden);
    let db2 = grad_z.col_sums();

    // d/d pre-activation: (grad_z W2) * (1 - hidden^2)
    let mut dpre = grad_z.matmul_nn(&params.w2);
    for i in 0..dpre.rows() {
        for (g, &h) in dpre.row_mut(i).iter_mut().zip(cache.hidden.row(i)) {
            *g *= 1.0 - h * h;
        }
    }
    let dw1 = dpre.matmul_tn(&cache.inputs);
    let db1 = dpre.col_sums();

    Ok(EncoderParams {
        w1: dw1,
        b1: db1,
        w2: dw2,
        b2: db2,
    })
}
