use super::{check_same_shape, Element, Tensor};
use crate::error::Result;

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the upstream gradient where the input was strictly positive.
pub fn relu_backward<T: Element>(grad_out: &Tensor<T>, cached_input: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("relu backward", grad_out.shape(), cached_input.shape())?;
    let data = grad_out
        .data()
        .iter()
        .zip(cached_input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

/// Elementwise sum. No broadcasting.
pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a.shape(), b.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn relu_clamps_negatives_and_zero() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&Tensor::full(x.shape(), 5.0), &x).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn add_identities() {
        let a = Tensor::from_fn(Shape::new(1, 2, 2, 2), |_, c, h, w| (c + h * 2 + w) as f32 - 1.5);
        assert_eq!(add(&a, &Tensor::zeros(a.shape())).unwrap(), a);
        assert_eq!(add(&a, &a).unwrap(), a.map(|v| 2.0 * v));
        assert!(add(&a, &Tensor::zeros(Shape::new(1, 2, 2, 3))).is_err());
    }
}
