use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArchConfig, DimensionPlan, ModelBundle, ModelError, ParamGroup};
use crate::autodiff::Tensor;
use crate::train::OptimizerState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Exact position of a ChaCha generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(format!("rng state: {m}"));
        let bytes = hex::decode(&self.seed).map_err(|_| bad("seed is not hex"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad("seed must be 32 bytes"))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| bad("bad word position"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to resume a run bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub plan: DimensionPlan,
    pub arch: ArchConfig,
    pub params: Vec<NamedTensor>,
    pub generator_optimizer: Option<OptimizerState>,
    pub discriminator_optimizer: Option<OptimizerState>,
    pub rng: RngState,
    pub iteration: u64,
}

impl Checkpoint {
    pub fn capture(
        bundle: &ModelBundle,
        optimizers: Option<(&OptimizerState, &OptimizerState)>,
        rng: &ChaCha8Rng,
        iteration: u64,
    ) -> Self {
        let tensors = bundle
            .params(ParamGroup::Generator)
            .into_iter()
            .chain(bundle.params(ParamGroup::Discriminator));
        let params = bundle
            .param_names()
            .into_iter()
            .zip(tensors)
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            plan: bundle.plan,
            arch: bundle.arch,
            params,
            generator_optimizer: optimizers.map(|(g, _)| g.clone()),
            discriminator_optimizer: optimizers.map(|(_, d)| d.clone()),
            rng: RngState::capture(rng),
            iteration,
        }
    }

    /// Rebuilds the bundle, checking every name and shape.
    pub fn bundle(&self) -> Result<ModelBundle, ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        // Layout comes from a throwaway init; every value is overwritten.
        let mut bundle =
            ModelBundle::init(self.plan, self.arch, &mut ChaCha8Rng::seed_from_u64(0))?;
        let names = bundle.param_names();
        if names.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                self.params.len()
            )));
        }
        for (i, stored) in self.params.iter().enumerate() {
            if stored.name != names[i] {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {i} is '{}', expected '{}'",
                    stored.name, names[i]
                )));
            }
        }
        let mut gen_slots = bundle.params_mut(ParamGroup::Generator);
        let n_gen = gen_slots.len();
        for (slot, stored) in gen_slots.iter_mut().zip(&self.params) {
            fill(slot, stored)?;
        }
        for (slot, stored) in bundle
            .params_mut(ParamGroup::Discriminator)
            .into_iter()
            .zip(&self.params[n_gen..])
        {
            fill(slot, stored)?;
        }
        Ok(bundle)
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn fill(slot: &mut Tensor, stored: &NamedTensor) -> Result<(), ModelError> {
    if slot.shape() != stored.shape.as_slice() {
        return Err(ModelError::Checkpoint(format!(
            "'{}' has shape {:?}, expected {:?}",
            stored.name,
            stored.shape,
            slot.shape()
        )));
    }
    *slot = Tensor::new(stored.shape.clone(), stored.values.clone())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn save_load_save_is_byte_identical() {
        let plan = DimensionPlan::from_blocks(6, 1, 1, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let arch = ArchConfig {
            latent_width: 5,
            latent_layers: 2,
            gen_width: 7,
            gen_hidden: 1,
            disc_width: 4,
            disc_hidden: 1,
        };
        let bundle = ModelBundle::init(plan, arch, &mut rng).unwrap();
        let _: u32 = rng.random();
        let mut opt = OptimizerState::default();
        opt.step = 3;
        opt.first_moment = vec![Tensor::vector(vec![0.1, 1.0 / 3.0])];
        opt.second_moment = vec![Tensor::vector(vec![1e-300, 2.5e17])];
        let ck = Checkpoint::capture(&bundle, Some((&opt, &opt)), &rng, 42);

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        ck.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded, ck);
        assert_eq!(loaded.bundle().unwrap(), bundle);

        let mut resumed = loaded.rng.restore().unwrap();
        assert_eq!(resumed.random::<u64>(), rng.random::<u64>());
    }

    #[test]
    fn rejects_renamed_tensor() {
        let plan = DimensionPlan::from_blocks(4, 1, 0, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bundle = ModelBundle::init(plan, ArchConfig::default(), &mut rng).unwrap();
        let mut ck = Checkpoint::capture(&bundle, None, &rng, 0);
        ck.params[0].name = "oops".into();
        assert!(ck.bundle().is_err());
    }
}
