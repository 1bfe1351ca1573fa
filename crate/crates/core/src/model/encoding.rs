use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Sinusoidal position table `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(...)`.
pub fn positional_encoding(steps: usize, dim: usize) -> Result<Tensor> {
    if !dim.is_multiple_of(2) {
        return Err(Error::Invalid(format!("positional encoding needs an even dimension, got {dim}")));
    }
    let mut data = vec![0.0; steps * dim];
    for pos in 0..steps {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / dim as f64);
            data[pos * dim + 2 * i] = angle.sin();
            data[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(&[steps, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn position_zero_is_sin0_cos0() {
        let pe = positional_encoding(3, 6).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn position_one_dim_two() {
        // sin(1), cos(1) to 15 digits (mpmath).
        let pe = positional_encoding(2, 2).unwrap();
        assert!((pe.get2(1, 0) - 0.841470984807897).abs() < 1e-5);
        assert!((pe.get2(1, 1) - 0.540302305868140).abs() < 1e-5);
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(positional_encoding(4, 7).is_err());
    }

    proptest! {
        #[test]
        fn values_bounded(steps in 1usize..100, half in 1usize..20) {
            let pe = positional_encoding(steps, 2 * half).unwrap();
            prop_assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
