//! Parameter initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Zero-mean normal with variance 2/fan_in. For a k×k kernel over
/// `c_in` channels, fan_in = k²·c_in.
pub fn kaiming_init<E: Element>(
    shape: Shape,
    fan_in: usize,
    rng: &mut impl Rng,
) -> Result<Tensor<E>> {
    if fan_in == 0 {
        return Err(Error::InvalidInput("fan_in must be positive".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let data = (0..shape.count())
        .map(|_| E::from_f64(normal.sample(rng)))
        .collect();
    Tensor::from_vec(shape, data)
}

/// fan_in of a conv kernel shaped (c_out, c_in, kh, kw).
pub fn conv_fan_in(weight_shape: Shape) -> usize {
    weight_shape.c() * weight_shape.h() * weight_shape.w()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empirical_variance_matches_two_over_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let fan_in = 288; // 3x3 kernel, 32 channels
        let t: Tensor<f64> = kaiming_init(Shape([100, 100, 10, 10]), fan_in, &mut rng).unwrap();
        let n = t.shape().count() as f64;
        let mean: f64 = t.data().iter().sum::<f64>() / n;
        let var: f64 = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expect = 2.0 / fan_in as f64;
        assert!(mean.abs() < 0.01 * expect.sqrt());
        assert!((var - expect).abs() / expect < 0.02, "{var} vs {expect}");
    }

    #[test]
    fn seeded_determinism() {
        let a: Tensor<f32> =
            kaiming_init(Shape([4, 3, 3, 3]), 27, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b: Tensor<f32> =
            kaiming_init(Shape([4, 3, 3, 3]), 27, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conv_fan_in_definition() {
        assert_eq!(conv_fan_in(Shape([64, 16, 3, 3])), 144);
        assert_eq!(conv_fan_in(Shape([16, 1, 7, 61])), 427);
    }

    #[test]
    fn zero_fan_in_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(kaiming_init::<f32>(Shape([1, 1, 1, 1]), 0, &mut rng).is_err());
    }
}
