use rand::Rng;
use rand_distr::StandardNormal;

use super::{DimensionPlan, ModelError};
use crate::autodiff::Tensor;

/// Standard-normal tensor of the given shape.
pub fn gaussian_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

/// One draw of the three seed blocks plus its domain.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSeed {
    pub r_c1: Vec<f64>,
    pub r_c2: Vec<f64>,
    pub r_s1: Vec<f64>,
    pub domain: usize,
}

impl LatentSeed {
    /// Content seed `(r_c1, r_c2)`.
    pub fn content(&self) -> Vec<f64> {
        [self.r_c1.as_slice(), &self.r_c2].concat()
    }

    /// Style seed `(r_c1, r_s1)`; the first block is shared with content.
    pub fn style(&self) -> Vec<f64> {
        [self.r_c1.as_slice(), &self.r_s1].concat()
    }
}

/// Seeds for one domain, assembled as `[batch, d_c]` and `[batch, d_s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub domain: usize,
    pub r_c: Tensor,
    pub r_s: Tensor,
}

impl LatentBatch {
    pub fn from_seeds(plan: &DimensionPlan, seeds: &[LatentSeed]) -> Result<Self, ModelError> {
        let domain = seeds.first().map_or(0, |s| s.domain);
        plan.check_domain(domain)?;
        let mut rc = Vec::with_capacity(seeds.len() * plan.d_c);
        let mut rs = Vec::with_capacity(seeds.len() * plan.d_s);
        for s in seeds {
            if s.domain != domain {
                return Err(ModelError::Domain {
                    domain: s.domain,
                    domains: plan.domains,
                });
            }
            if s.r_c1.len() != plan.d_c1 || s.r_c2.len() != plan.d_c2 || s.r_s1.len() != plan.d_s1 {
                return Err(ModelError::Dimension {
                    what: "latent seed",
                    expected: plan.d_c1 + plan.d_c2 + plan.d_s1,
                    found: s.r_c1.len() + s.r_c2.len() + s.r_s1.len(),
                });
            }
            rc.extend(s.content());
            rs.extend(s.style());
        }
        Ok(Self {
            domain,
            r_c: Tensor::matrix(seeds.len(), plan.d_c, rc)?,
            r_s: Tensor::matrix(seeds.len(), plan.d_s, rs)?,
        })
    }

    pub fn len(&self) -> usize {
        self.r_c.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `batch` seeds with i.i.d. standard-normal blocks. Domains are
/// uniform unless `domain` fixes them.
pub fn sample_latents<R: Rng + ?Sized>(
    plan: &DimensionPlan,
    batch: usize,
    domain: Option<usize>,
    rng: &mut R,
) -> Result<Vec<LatentSeed>, ModelError> {
    if let Some(n) = domain {
        plan.check_domain(n)?;
    }
    let draw = |k: usize, rng: &mut R| -> Vec<f64> {
        (0..k).map(|_| rng.sample(StandardNormal)).collect()
    };
    Ok((0..batch)
        .map(|_| {
            let r_c1 = draw(plan.d_c1, rng);
            let r_c2 = draw(plan.d_c2, rng);
            let r_s1 = draw(plan.d_s1, rng);
            let domain = domain.unwrap_or_else(|| rng.random_range(0..plan.domains));
            LatentSeed {
                r_c1,
                r_c2,
                r_s1,
                domain,
            }
        })
        .collect())
}

impl LatentBatch {
    /// Convenience: sample and assemble a single-domain batch.
    pub fn sample<R: Rng + ?Sized>(
        plan: &DimensionPlan,
        batch: usize,
        domain: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let seeds = sample_latents(plan, batch, Some(domain), rng)?;
        Self::from_seeds(plan, &seeds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plan() -> DimensionPlan {
        DimensionPlan::from_blocks(8, 2, 3, 1, 2).unwrap()
    }

    #[test]
    fn seed_blocks_share_the_leading_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in sample_latents(&plan(), 20, None, &mut rng).unwrap() {
            let (c, st) = (s.content(), s.style());
            assert_eq!((c.len(), st.len()), (5, 3));
            assert_eq!(c[..2], st[..2]);
            assert!(s.domain < 2);
        }
    }

    #[test]
    fn cross_covariance_matches_shared_block() {
        // E[r_c r_sᵀ] = [I₂ 0; 0 0] for the shared-block construction.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let b = LatentBatch::sample(&plan(), n, 0, &mut rng).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let m: f64 = (0..n)
                    .map(|k| b.r_c.get(k, i) * b.r_s.get(k, j))
                    .sum::<f64>()
                    / n as f64;
                let expect = if i == j && i < 2 { 1.0 } else { 0.0 };
                assert!((m - expect).abs() < 0.02, "({i},{j}) = {m}");
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces_batch() {
        let a = LatentBatch::sample(&plan(), 16, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = LatentBatch::sample(&plan(), 16, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
