use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    GlorotUniform,
    HeNormal,
    Zeros,
}

/// `(fan_in, fan_out)`; a 1-D shape uses its length for both.
fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    let (fi, fo) = match shape {
        [n] => (*n, *n),
        [i, o] => (*i, *o),
        _ => return Err(Error::shape("init", format!("unsupported shape {shape:?}"))),
    };
    if fi == 0 || fo == 0 {
        return Err(Error::invalid(format!("zero fan in shape {shape:?}")));
    }
    Ok((fi, fo))
}

pub fn init_tensor<R: Rng + ?Sized>(shape: &[usize], scheme: InitScheme, rng: &mut R) -> Result<Tensor> {
    let (fan_in, fan_out) = fans(shape)?;
    let n: usize = shape.iter().product();
    let data: Vec<f64> = match scheme {
        InitScheme::Zeros => vec![0.0; n],
        InitScheme::GlorotUniform => {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            (0..n).map(|_| dist.sample(rng)).collect()
        }
        InitScheme::HeNormal => {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeros_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = init_tensor(&[2, 2], InitScheme::Zeros, &mut rng).unwrap();
        assert_eq!(t, Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn glorot_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = init_tensor(&[100, 100], InitScheme::GlorotUniform, &mut rng).unwrap();
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(t.data().iter().all(|w| w.abs() <= bound));
        // and actually spreads over the support
        assert!(t.data().iter().any(|w| w.abs() > 0.9 * bound));
    }

    #[test]
    fn he_normal_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = init_tensor(&[4, 2500], InitScheme::HeNormal, &mut rng).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = (2.0f64 / 4.0).sqrt();
        assert!((var.sqrt() / target - 1.0).abs() < 0.05);
    }

    #[test]
    fn bias_vectors_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = init_tensor(&[32], InitScheme::HeNormal, &mut rng).unwrap();
        assert_eq!(b.shape(), &[32]);
        assert!(init_tensor(&[0, 3], InitScheme::GlorotUniform, &mut rng).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = init_tensor(&[5, 7], InitScheme::GlorotUniform, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = init_tensor(&[5, 7], InitScheme::GlorotUniform, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
