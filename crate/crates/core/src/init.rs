//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::tensor::{Scalar, Tensor};

/// Uniform Glorot initialization for a `fan_in × fan_out` matrix.
pub fn glorot<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let data = (0..fan_in * fan_out).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("positive extents")
}

/// Horizontal stack of `blocks` independent orthogonal `n × n` matrices.
pub fn orthogonal_blocks<T: Scalar>(n: usize, blocks: usize, rng: &mut impl Rng) -> Tensor<T> {
    let mut out = Tensor::zeros(&[n, n * blocks]);
    for b in 0..blocks {
        let q = orthogonal(n, rng);
        for i in 0..n {
            for j in 0..n {
                out.set(i, b * n + j, T::of(q[i * n + j]));
            }
        }
    }
    out
}

/// Random orthogonal matrix via modified Gram-Schmidt on a Gaussian draw.
fn orthogonal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut cols: Vec<Vec<f64>> =
            (0..n).map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect()).collect();
        let mut ok = true;
        for j in 0..n {
            for k in 0..j {
                let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                let (head, tail) = cols.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= dot * y;
                }
            }
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols[j].iter_mut().for_each(|x| *x /= norm);
        }
        if ok {
            let mut m = vec![0.0; n * n];
            for (j, col) in cols.iter().enumerate() {
                for (i, &v) in col.iter().enumerate() {
                    m[i * n + j] = v;
                }
            }
            return m;
        }
    }
}

pub fn normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_blocks_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = orthogonal_blocks::<f64>(5, 2, &mut rng);
        for b in 0..2 {
            for i in 0..5 {
                for j in 0..5 {
                    let dot: f64 = (0..5).map(|r| m.get(r, b * 5 + i) * m.get(r, b * 5 + j)).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-10);
                }
            }
        }
    }
}
