use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Mixing coefficient and partner assignment for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupDraw {
    pub coefficient: f64,
    pub partner: Vec<usize>,
}

impl MixupDraw {
    /// Coefficient ~ Beta(α, α), partner = uniform random permutation.
    pub fn sample<R: Rng>(rng: &mut R, alpha: f64, batch: usize) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Spec(format!("mixup alpha must be positive, got {alpha}")));
        }
        let beta = Beta::new(alpha, alpha).map_err(|e| Error::Spec(e.to_string()))?;
        let coefficient = beta.sample(rng);
        let mut partner: Vec<usize> = (0..batch).collect();
        partner.shuffle(rng);
        Ok(Self {
            coefficient,
            partner,
        })
    }
}

/// x' = m·x_i + (1−m)·x_π(i), and the same for the labels.
pub fn mixup_batch<F: Scalar>(
    x: &Tensor<F>,
    y: &Tensor<F>,
    draw: &MixupDraw,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let n = x.batch();
    if n < 2 {
        return Err(Error::Data(format!("mixup needs a batch of at least 2, got {n}")));
    }
    if y.batch() != n || draw.partner.len() != n {
        return Err(Error::Shape(format!(
            "batch sizes disagree: x {n}, y {}, permutation {}",
            y.batch(),
            draw.partner.len()
        )));
    }
    let mut seen = vec![false; n];
    for &j in &draw.partner {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(Error::Data("partner assignment is not a permutation".into()));
        }
    }
    if !(0.0..=1.0).contains(&draw.coefficient) {
        return Err(Error::Spec(format!(
            "mix coefficient {} outside [0, 1]",
            draw.coefficient
        )));
    }
    Ok((mix(x, draw), mix(y, draw)))
}

fn mix<F: Scalar>(t: &Tensor<F>, draw: &MixupDraw) -> Tensor<F> {
    let m = F::from_f64_lossy(draw.coefficient);
    let rest = F::one() - m;
    let len = t.sample_len();
    let mut out = Vec::with_capacity(t.len());
    for (i, &j) in draw.partner.iter().enumerate() {
        out.extend(
            t.sample(i)
                .iter()
                .zip(t.sample(j))
                .map(|(a, b)| m * *a + rest * *b),
        );
    }
    debug_assert_eq!(out.len(), len * t.batch());
    Tensor::from_vec(t.dims(), out).expect("same dims")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn one_hot(n: usize, c: usize) -> Tensor<f64> {
        let mut y = Tensor::zeros(&[n, c]);
        for i in 0..n {
            y.data_mut()[i * c + i % c] = 1.0;
        }
        y
    }

    #[test]
    fn coefficient_one_is_identity() {
        let x = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = one_hot(3, 3);
        let draw = MixupDraw {
            coefficient: 1.0,
            partner: vec![2, 0, 1],
        };
        let (mx, my) = mixup_batch(&x, &y, &draw).unwrap();
        assert_eq!(mx, x);
        assert_eq!(my, y);
    }

    #[test]
    fn midpoint_of_two_classes() {
        let x = Tensor::<f64>::zeros(&[2, 1]);
        let y = one_hot(2, 10);
        let draw = MixupDraw {
            coefficient: 0.5,
            partner: vec![1, 0],
        };
        let (_, my) = mixup_batch(&x, &y, &draw).unwrap();
        assert_eq!(&my.data()[..3], &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn random_draws_stay_in_the_pair_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.gen_range(2..8);
            let x = Tensor::from_vec(&[n, 5], (0..n * 5).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .unwrap();
            let y = one_hot(n, 4);
            let draw = MixupDraw::sample(&mut rng, 0.4, n).unwrap();
            let (mx, my) = mixup_batch(&x, &y, &draw).unwrap();
            for i in 0..n {
                let j = draw.partner[i];
                for k in 0..5 {
                    let (a, b) = (x.sample(i)[k], x.sample(j)[k]);
                    let v = mx.sample(i)[k];
                    assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
                }
                let s: f64 = my.sample(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn singleton_batch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3]);
        let y = Tensor::<f32>::zeros(&[1, 2]);
        let draw = MixupDraw {
            coefficient: 0.3,
            partner: vec![0],
        };
        assert!(matches!(mixup_batch(&x, &y, &draw), Err(Error::Data(_))));
    }

    #[test]
    fn non_permutation_is_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let y = Tensor::<f32>::zeros(&[2, 2]);
        let draw = MixupDraw {
            coefficient: 0.3,
            partner: vec![0, 0],
        };
        assert!(mixup_batch(&x, &y, &draw).is_err());
    }
}
