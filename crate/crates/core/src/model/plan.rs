use serde::{Deserialize, Serialize};

use super::ModelError;

/// Dimensions of data, content and style, including the shared block that
/// couples content and style latents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionPlan {
    pub d: usize,
    pub d_c: usize,
    pub d_s: usize,
    /// Block shared by content and style seeds.
    pub d_c1: usize,
    /// Content-only block.
    pub d_c2: usize,
    /// Style-only block.
    pub d_s1: usize,
    pub domains: usize,
}

impl DimensionPlan {
    /// Builds a plan from the three seed blocks; `d_c` and `d_s` follow.
    pub fn from_blocks(
        d: usize,
        d_c1: usize,
        d_c2: usize,
        d_s1: usize,
        domains: usize,
    ) -> Result<Self, ModelError> {
        let plan = Self {
            d,
            d_c: d_c1 + d_c2,
            d_s: d_c1 + d_s1,
            d_c1,
            d_c2,
            d_s1,
            domains,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidPlan(m));
        if self.d_c == 0 || self.d_s == 0 || self.domains == 0 {
            return bad(format!(
                "d_c={}, d_s={}, domains={} must all be positive",
                self.d_c, self.d_s, self.domains
            ));
        }
        if self.d_c != self.d_c1 + self.d_c2 {
            return bad(format!(
                "d_c={} != d_c1 + d_c2 = {}",
                self.d_c,
                self.d_c1 + self.d_c2
            ));
        }
        if self.d_s != self.d_c1 + self.d_s1 {
            return bad(format!(
                "d_s={} != d_c1 + d_s1 = {}",
                self.d_s,
                self.d_c1 + self.d_s1
            ));
        }
        if self.d < self.d_c + self.d_s {
            return bad(format!(
                "d={} is smaller than d_c + d_s = {}",
                self.d,
                self.d_c + self.d_s
            ));
        }
        Ok(())
    }

    pub fn check_domain(&self, domain: usize) -> Result<(), ModelError> {
        if domain >= self.domains {
            return Err(ModelError::Domain {
                domain,
                domains: self.domains,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_determine_latent_sizes() {
        let p = DimensionPlan::from_blocks(8, 2, 3, 1, 2).unwrap();
        assert_eq!((p.d_c, p.d_s), (5, 3));
    }

    #[test]
    fn rejects_inconsistent_plans() {
        assert!(DimensionPlan::from_blocks(7, 2, 3, 1, 2).is_err());
        let mut p = DimensionPlan::from_blocks(8, 2, 3, 1, 2).unwrap();
        p.d_s = 4;
        assert!(p.validate().is_err());
        assert!(DimensionPlan::from_blocks(8, 0, 0, 1, 2).is_err());
    }
}
