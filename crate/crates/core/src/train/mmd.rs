use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::Tensor;

/// Gaussian kernel width selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled sample.
    Median,
    Fixed(f64),
}

/// Pairwise distances considered by the median heuristic are capped to the
/// first this-many rows of the sample.
const MEDIAN_ROWS: usize = 1000;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance among (up to 1000) rows.
pub fn median_bandwidth(x: &Tensor) -> f64 {
    let n = x.rows().min(MEDIAN_ROWS);
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

/// Unbiased squared maximum mean discrepancy with a Gaussian kernel
/// `exp(−‖x−y‖² / (2σ²))`.
///
/// Equal sample sizes use the paired h-statistic, which is exactly zero for
/// identical samples; unequal sizes fall back to the three-term U-statistic.
pub fn mmd(a: &Tensor, b: &Tensor, bandwidth: Bandwidth) -> Result<f64, TrainError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
        return Err(TrainError::Dimension(format!(
            "mmd samples have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, n) = (a.rows(), b.rows());
    if m < 2 || n < 2 {
        return Err(TrainError::Dimension(
            "mmd needs at least two rows per sample".into(),
        ));
    }
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => median_bandwidth(&Tensor::vstack(&[a, b])?),
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let k = |x: &[f64], y: &[f64]| (-gamma * sq_dist(x, y)).exp();

    if m == n {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += k(a.row(i), a.row(j)) + k(b.row(i), b.row(j))
                        - k(a.row(i), b.row(j))
                        - k(a.row(j), b.row(i));
                }
            }
        }
        return Ok(total / (n * (n - 1)) as f64);
    }
    let within = |x: &Tensor| {
        let r = x.rows();
        let mut s = 0.0;
        for i in 0..r {
            for j in 0..r {
                if i != j {
                    s += k(x.row(i), x.row(j));
                }
            }
        }
        s / (r * (r - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            cross += k(a.row(i), b.row(j));
        }
    }
    Ok(within(a) + within(b) - 2.0 * cross / (m * n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gaussian_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_samples_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = gaussian_tensor(&[300, 3], &mut rng);
        assert!(mmd(&x, &x, Bandwidth::Median).unwrap().abs() <= 1e-6);
    }

    #[test]
    fn null_and_alternative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian_tensor(&[2000, 1], &mut rng);
        let b = gaussian_tensor(&[2000, 1], &mut rng);
        assert!(mmd(&a, &b, Bandwidth::Median).unwrap().abs() <= 0.01);
        let shifted = b.map(|v| v + 3.0);
        assert!(mmd(&a, &shifted, Bandwidth::Median).unwrap() > 0.5);
    }

    #[test]
    fn unequal_sizes_and_dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian_tensor(&[200, 2], &mut rng);
        let b = gaussian_tensor(&[150, 2], &mut rng);
        assert!(mmd(&a, &b, Bandwidth::Fixed(1.0)).unwrap().abs() < 0.02);
        let c = gaussian_tensor(&[10, 3], &mut rng);
        assert!(mmd(&a, &c, Bandwidth::Median).is_err());
    }
}
