use crate::error::Result;
use crate::numerics::tensor::{ensure_same_dims, Tensor3};

pub fn relu(input: &Tensor3) -> Tensor3 {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `grad_out` where `input > 0`; the subgradient at exactly zero is 0.
pub fn relu_grad(input: &Tensor3, grad_out: &Tensor3) -> Result<Tensor3> {
    ensure_same_dims(input, grad_out, "relu_grad")?;
    let data = input
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor3::from_raw(
        input.channels(),
        input.height(),
        input.width(),
        data,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_input_is_zeroed() {
        let x = Tensor3::filled(2, 3, 3, -0.5);
        assert!(relu(&x).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_input_passes_through() {
        let x = Tensor3::from_fn(2, 3, 3, |c, y, xx| 1.0 + (c + y + xx) as f64);
        let g = Tensor3::from_fn(2, 3, 3, |c, y, xx| (c * y) as f64 - xx as f64);
        assert_eq!(relu(&x), x);
        assert_eq!(relu_grad(&x, &g).unwrap(), g);
    }

    #[test]
    fn subgradient_at_zero_is_zero() {
        let x = Tensor3::zeros(1, 1, 2);
        let g = Tensor3::filled(1, 1, 2, 3.0);
        assert_eq!(relu_grad(&x, &g).unwrap().as_slice(), &[0.0, 0.0]);
    }
}
