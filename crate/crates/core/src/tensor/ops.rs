use super::{Scalar, Tensor};
use crate::error::{ensure_dim, Result};

fn same_shape<T: Scalar>(ctx: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    let (x, y) = (a.shape(), b.shape());
    ensure_dim(ctx, "batch", x.n, y.n)?;
    ensure_dim(ctx, "channels", x.c, y.c)?;
    ensure_dim(ctx, "height", x.h, y.h)?;
    ensure_dim(ctx, "width", x.w, y.w)
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("relu_backward", x, grad_out)?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Elementwise sum (residual connection).
pub fn add<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", x, y)?;
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| a + b)
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Mean squared error over all elements and its gradient with respect to `pred`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    same_shape("mse_loss", pred, target)?;
    let count = T::of(pred.len() as f64);
    let two = T::of(2.0);
    let mut loss = T::zero();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            two * d / count
        })
        .collect();
    Ok((loss / count, Tensor::from_vec(pred.shape(), grad)?))
}

/// `A·γ + B` for a row-major `n x m` matrix `A`.
pub fn fc_forward<T: Scalar>(gamma: &[T], a: &[T], b: &[T]) -> Result<Vec<T>> {
    let (n, m) = (b.len(), gamma.len());
    ensure_dim("fc_forward", "weight matrix size", n * m, a.len())?;
    Ok(b.iter()
        .enumerate()
        .map(|(i, &bi)| {
            a[i * m..(i + 1) * m]
                .iter()
                .zip(gamma)
                .fold(bi, |acc, (&w, &g)| acc + w * g)
        })
        .collect())
}

/// Returns `(grad_A, grad_B) = (grad_out ⊗ γᵀ, grad_out)`.
pub fn fc_backward<T: Scalar>(gamma: &[T], grad_out: &[T]) -> (Vec<T>, Vec<T>) {
    let mut grad_a = Vec::with_capacity(grad_out.len() * gamma.len());
    for &g in grad_out {
        grad_a.extend(gamma.iter().map(|&v| g * v));
    }
    (grad_a, grad_out.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn relu_clamps_negatives() {
        let x =
            Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 4), vec![-2.0, -0.1, 0.3, 5.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 0.3, 5.0]);
        let g = relu_backward(&x, &Tensor::full(x.shape(), 1.5)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.5, 1.5]);
    }

    #[test]
    fn mse_of_equal_tensors_is_zero() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 3, 2, 2), |_, c, h, w| (c + h + w) as f64);
        let (l, g) = mse_loss(&x, &x).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_of_constant_offset_is_offset_squared() {
        let t = Tensor::<f64>::from_fn(Shape::new(1, 3, 4, 4), |_, c, h, w| {
            (c * h + w) as f64 * 0.1
        });
        let p = t.map(|v| v + 0.25);
        let (l, _) = mse_loss(&p, &t).unwrap();
        assert!((l - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn mse_matches_direct_sum() {
        let p = Tensor::<f64>::from_fn(Shape::new(1, 2, 3, 3), |_, c, h, w| {
            ((c * 7 + h * 3 + w) % 5) as f64 * 0.3
        });
        let t = Tensor::<f64>::from_fn(Shape::new(1, 2, 3, 3), |_, c, h, w| {
            ((c * 2 + h + w * 5) % 4) as f64 * 0.2
        });
        let mut direct = 0.0;
        for (a, b) in p.data().iter().zip(t.data()) {
            direct += (a - b) * (a - b);
        }
        let (l, _) = mse_loss(&p, &t).unwrap();
        assert!((l - direct / 18.0).abs() < 1e-15);
    }

    #[test]
    fn fc_zero_gamma_or_zero_matrix_returns_bias() {
        let b = vec![0.5, -1.0, 2.0];
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(fc_forward(&[0.0, 0.0], &a, &b).unwrap(), b);
        assert_eq!(fc_forward(&[3.0, -7.0], &[0.0; 6], &b).unwrap(), b);
        assert_eq!(
            fc_forward(&[1.0, 1.0], &a, &b).unwrap(),
            vec![3.5, 6.0, 13.0]
        );
        assert!(fc_forward(&[1.0], &a, &b).is_err());
    }
}
