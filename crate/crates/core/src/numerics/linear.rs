use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix, Real};

/// Fully connected layer `y = x·Wᵀ + b` with gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T = f32> {
    /// `[out × in]`
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub grad_weight: Matrix<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Real> LinearLayer<T> {
    pub fn from_parts(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::DimensionMismatch {
                context: "linear bias length",
                expected: weight.rows(),
                actual: bias.len(),
            });
        }
        let (o, i) = weight.shape();
        Ok(Self {
            grad_weight: Matrix::zeros(o, i),
            grad_bias: vec![T::zero(); o],
            weight,
            bias,
        })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self::from_parts(Matrix::zeros(output, input), vec![T::zero(); output])
            .expect("shapes agree")
    }

    /// Weights and biases uniform in `±sqrt(1/fan_in)`.
    pub fn init_uniform<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (1.0 / input.max(1) as f64).sqrt();
        let weight = Matrix::from_fn(output, input, |_, _| T::cast(rng.random_range(-bound..=bound)));
        let bias = (0..output)
            .map(|_| T::cast(rng.random_range(-bound..=bound)))
            .collect();
        Self::from_parts(weight, bias).expect("shapes agree")
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "linear forward input",
                expected: self.input_dim(),
                actual: x.cols(),
            });
        }
        let mut out = x.matmul_nt(&self.weight)?;
        for r in 0..out.rows() {
            for (y, &b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *y = *y + b;
            }
        }
        Ok(out)
    }

    /// Accumulates `grad_weight += grad_outᵀ·x` and `grad_bias += Σ_rows grad_out`,
    /// and returns `grad_out·W`.
    pub fn backward(&mut self, x: &Matrix<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.input_dim() || grad_out.cols() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "linear backward",
                expected: self.input_dim() + self.output_dim(),
                actual: x.cols() + grad_out.cols(),
            });
        }
        if x.rows() != grad_out.rows() {
            return Err(Error::DimensionMismatch {
                context: "linear backward batch",
                expected: x.rows(),
                actual: grad_out.rows(),
            });
        }
        gemm(true, false, T::one(), grad_out, x, T::one(), &mut self.grad_weight)?;
        for (g, s) in self.grad_bias.iter_mut().zip(grad_out.column_sums()) {
            *g = *g + T::cast(s);
        }
        grad_out.matmul(&self.weight)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
    }
}

pub fn relu_forward<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Matrix<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::DimensionMismatch {
            context: "relu backward",
            expected: x.rows() * x.cols(),
            actual: grad_out.rows() * grad_out.cols(),
        });
    }
    let data = x
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&xi, &g)| if xi > T::zero() { g } else { T::zero() })
        .collect();
    Matrix::new(x.rows(), x.cols(), data)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::finite_diff_check;

    fn layer(w: &[&[f64]], b: &[f64]) -> LinearLayer<f64> {
        LinearLayer::from_parts(Matrix::from_rows(w).unwrap(), b.to_vec()).unwrap()
    }

    #[test]
    fn forward_examples() {
        let id = layer(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]);
        let x = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(id.forward(&x).unwrap().as_slice(), &[3.0, 4.0]);

        let swap = layer(&[&[0.0, 1.0], &[1.0, 0.0]], &[1.0, 1.0]);
        let x = Matrix::from_rows(&[[2.0, 5.0]]).unwrap();
        assert_eq!(swap.forward(&x).unwrap().as_slice(), &[6.0, 3.0]);

        let sum = layer(&[&[1.0, 1.0]], &[0.0]);
        let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]).unwrap();
        let y = sum.forward(&x).unwrap();
        assert_eq!(y.shape(), (2, 1));
        assert_eq!(y.as_slice(), &[2.0, 4.0]);

        assert!(sum.forward(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut id = layer(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]);
        let x = Matrix::from_rows(&[[0.3, -0.7]]).unwrap();
        let g = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_eq!(id.backward(&x, &g).unwrap().as_slice(), &[1.0, 0.0]);

        let mut row = layer(&[&[0.5, -1.0]], &[0.0]);
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let g = Matrix::from_rows(&[[3.0]]).unwrap();
        row.backward(&x, &g).unwrap();
        assert_eq!(row.grad_weight.as_slice(), &[3.0, 6.0]);
        assert_eq!(row.grad_bias, vec![3.0]);

        assert!(row.backward(&x, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn identity_grad_out_recovers_weight_as_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = LinearLayer::<f64>::init_uniform(4, 3, &mut rng);
        let x = Matrix::zeros(3, 4);
        let jac = l.backward(&x, &Matrix::identity(3)).unwrap();
        assert_eq!(jac, l.weight);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut l = LinearLayer::<f64>::init_uniform(5, 3, &mut rng);
        let x = Matrix::from_fn(4, 5, |i, j| ((i * 5 + j) as f64 * 0.37).sin());
        let probe = Matrix::from_fn(4, 3, |i, j| ((i + 2 * j) as f64 * 0.71).cos());
        // scalar objective: <probe, forward(x)>
        let objective = |l: &LinearLayer<f64>, x: &Matrix<f64>| -> f64 {
            let y = l.forward(x).unwrap();
            y.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
        };
        let grad_x = l.backward(&x, &probe).unwrap();

        let err = finite_diff_check(
            |v| objective(&l, &Matrix::new(4, 5, v.to_vec()).unwrap()),
            x.as_slice(),
            grad_x.as_slice(),
            1e-5,
        );
        assert!(err < 1e-4, "input gradient error {err}");

        let base = l.clone();
        let err = finite_diff_check(
            |v| {
                let mut m = base.clone();
                m.weight = Matrix::new(3, 5, v.to_vec()).unwrap();
                objective(&m, &x)
            },
            base.weight.as_slice(),
            base.grad_weight.as_slice(),
            1e-5,
        );
        assert!(err < 1e-4, "weight gradient error {err}");
    }

    #[test]
    fn relu_examples() {
        let x = Matrix::<f64>::from_rows(&[[-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(relu_forward(&x).as_slice(), &[0.0, 0.0, 2.0]);

        let x = Matrix::<f64>::from_rows(&[[-1.0, 2.0]]).unwrap();
        let g = Matrix::from_rows(&[[5.0, 5.0]]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().as_slice(), &[0.0, 5.0]);

        let pos = Matrix::<f64>::from_rows(&[[0.5, 1.5, 3.0]]).unwrap();
        let g = Matrix::from_rows(&[[7.0, -1.0, 2.0]]).unwrap();
        assert_eq!(relu_forward(&pos), pos);
        assert_eq!(relu_backward(&pos, &g).unwrap(), g);
    }
}
