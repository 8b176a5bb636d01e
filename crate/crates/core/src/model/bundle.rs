use rand::Rng;
use serde::{Deserialize, Serialize};

use super::latent::{LatentBatch, LatentSeed};
use super::mlp::{BoundMlp, Head, Mlp};
use super::{DimensionPlan, ModelError};
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

/// Widths and depths of every network in a [`ModelBundle`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Hidden width of content/style encoders and their decoders.
    pub latent_width: usize,
    /// Affine layers per encoder/decoder.
    pub latent_layers: usize,
    pub gen_width: usize,
    pub gen_hidden: usize,
    pub disc_width: usize,
    pub disc_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            latent_width: 64,
            latent_layers: 3,
            gen_width: 128,
            gen_hidden: 3,
            disc_width: 128,
            disc_hidden: 2,
        }
    }
}

impl ArchConfig {
    fn widths(input: usize, width: usize, hidden: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(width, hidden));
        w.push(output);
        w
    }
}

/// Which side of the adversarial game a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Encoders, their decoders and the generator.
    Generator,
    Discriminator,
}

/// Every learnable map of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub plan: DimensionPlan,
    pub arch: ArchConfig,
    pub content_encoder: Mlp,
    pub style_encoders: Vec<Mlp>,
    pub content_decoder: Mlp,
    pub style_decoders: Vec<Mlp>,
    pub generator: Mlp,
    pub discriminators: Vec<Mlp>,
}

impl ModelBundle {
    pub fn init<R: Rng + ?Sized>(
        plan: DimensionPlan,
        arch: ArchConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        plan.validate()?;
        if arch.latent_layers == 0 {
            return Err(ModelError::InvalidPlan(
                "latent_layers must be positive".into(),
            ));
        }
        let latent = |dim: usize, rng: &mut R| {
            Mlp::glorot(
                &ArchConfig::widths(dim, arch.latent_width, arch.latent_layers - 1, dim),
                Head::Linear,
                rng,
            )
        };
        let content_encoder = latent(plan.d_c, rng);
        let style_encoders = (0..plan.domains).map(|_| latent(plan.d_s, rng)).collect();
        let content_decoder = latent(plan.d_c, rng);
        let style_decoders = (0..plan.domains).map(|_| latent(plan.d_s, rng)).collect();
        let generator = Mlp::glorot(
            &ArchConfig::widths(plan.d_c + plan.d_s, arch.gen_width, arch.gen_hidden, plan.d),
            Head::Tanh,
            rng,
        );
        let discriminators = (0..plan.domains)
            .map(|_| {
                Mlp::glorot(
                    &ArchConfig::widths(plan.d, arch.disc_width, arch.disc_hidden, 1),
                    Head::Sigmoid,
                    rng,
                )
            })
            .collect();
        Ok(Self {
            plan,
            arch,
            content_encoder,
            style_encoders,
            content_decoder,
            style_decoders,
            generator,
            discriminators,
        })
    }

    /// Checks that every network agrees with the plan.
    pub fn validate(&self) -> Result<(), ModelError> {
        let p = &self.plan;
        p.validate()?;
        let dims = |what: &'static str, m: &Mlp, i: usize, o: usize| {
            if m.input_dim() != i {
                return Err(ModelError::Dimension {
                    what,
                    expected: i,
                    found: m.input_dim(),
                });
            }
            if m.output_dim() != o {
                return Err(ModelError::Dimension {
                    what,
                    expected: o,
                    found: m.output_dim(),
                });
            }
            Ok(())
        };
        dims("content encoder", &self.content_encoder, p.d_c, p.d_c)?;
        dims("content decoder", &self.content_decoder, p.d_c, p.d_c)?;
        dims("generator", &self.generator, p.d_c + p.d_s, p.d)?;
        for (what, nets, i, o) in [
            ("style encoders", &self.style_encoders, p.d_s, p.d_s),
            ("style decoders", &self.style_decoders, p.d_s, p.d_s),
            ("discriminators", &self.discriminators, p.d, 1),
        ] {
            if nets.len() != p.domains {
                return Err(ModelError::Dimension {
                    what,
                    expected: p.domains,
                    found: nets.len(),
                });
            }
            for m in nets {
                dims(what, m, i, o)?;
            }
        }
        Ok(())
    }

    fn group_nets(&self, group: ParamGroup) -> Vec<&Mlp> {
        match group {
            ParamGroup::Generator => std::iter::once(&self.content_encoder)
                .chain(&self.style_encoders)
                .chain(std::iter::once(&self.content_decoder))
                .chain(&self.style_decoders)
                .chain(std::iter::once(&self.generator))
                .collect(),
            ParamGroup::Discriminator => self.discriminators.iter().collect(),
        }
    }

    /// Parameters of one group in a fixed order matching [`BoundBundle::vars`].
    pub fn params(&self, group: ParamGroup) -> Vec<&Tensor> {
        self.group_nets(group)
            .into_iter()
            .flat_map(|m| m.params())
            .collect()
    }

    pub fn params_mut(&mut self, group: ParamGroup) -> Vec<&mut Tensor> {
        match group {
            ParamGroup::Generator => std::iter::once(&mut self.content_encoder)
                .chain(self.style_encoders.iter_mut())
                .chain(std::iter::once(&mut self.content_decoder))
                .chain(self.style_decoders.iter_mut())
                .chain(std::iter::once(&mut self.generator))
                .flat_map(|m| m.params_mut())
                .collect(),
            ParamGroup::Discriminator => self
                .discriminators
                .iter_mut()
                .flat_map(|m| m.params_mut())
                .collect(),
        }
    }

    /// Stable, human-readable names for every parameter tensor, generator
    /// group first.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut push = |prefix: String, m: &Mlp| {
            for l in 0..m.layers.len() {
                names.push(format!("{prefix}.{l}.weight"));
                names.push(format!("{prefix}.{l}.bias"));
            }
        };
        push("content_encoder".into(), &self.content_encoder);
        for (n, m) in self.style_encoders.iter().enumerate() {
            push(format!("style_encoder{n}"), m);
        }
        push("content_decoder".into(), &self.content_decoder);
        for (n, m) in self.style_decoders.iter().enumerate() {
            push(format!("style_decoder{n}"), m);
        }
        push("generator".into(), &self.generator);
        for (n, m) in self.discriminators.iter().enumerate() {
            push(format!("discriminator{n}"), m);
        }
        names
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundBundle {
        BoundBundle {
            content_encoder: self.content_encoder.bind(tape),
            style_encoders: self.style_encoders.iter().map(|m| m.bind(tape)).collect(),
            content_decoder: self.content_decoder.bind(tape),
            style_decoders: self.style_decoders.iter().map(|m| m.bind(tape)).collect(),
            generator: self.generator.bind(tape),
            discriminators: self.discriminators.iter().map(|m| m.bind(tape)).collect(),
        }
    }

    /// Generated samples for arbitrary seeds, in seed order.
    pub fn generate(&self, seeds: &[LatentSeed]) -> Result<Tensor, ModelError> {
        let mut out = vec![0.0; seeds.len() * self.plan.d];
        for n in 0..self.plan.domains {
            let idx: Vec<usize> = (0..seeds.len()).filter(|&i| seeds[i].domain == n).collect();
            if idx.is_empty() {
                continue;
            }
            let group: Vec<LatentSeed> = idx.iter().map(|&i| seeds[i].clone()).collect();
            let batch = LatentBatch::from_seeds(&self.plan, &group)?;
            let x = self.generate_batch(&batch)?.2;
            for (k, &i) in idx.iter().enumerate() {
                out[i * self.plan.d..(i + 1) * self.plan.d].copy_from_slice(x.row(k));
            }
        }
        if let Some(bad) = seeds.iter().find(|s| s.domain >= self.plan.domains) {
            self.plan.check_domain(bad.domain)?;
        }
        Ok(Tensor::matrix(seeds.len(), self.plan.d, out)?)
    }

    /// `(ĉ, ŝ, x̂)` for a single-domain batch.
    pub fn generate_batch(
        &self,
        batch: &LatentBatch,
    ) -> Result<(Tensor, Tensor, Tensor), ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = bound.generate(&mut tape, batch)?;
        Ok((
            tape.value(out.content).clone(),
            tape.value(out.style).clone(),
            tape.value(out.sample).clone(),
        ))
    }

    /// Discriminator probabilities for domain `n`.
    pub fn discriminate(&self, x: &Tensor, n: usize) -> Result<Tensor, ModelError> {
        self.plan.check_domain(n)?;
        Ok(self.discriminators[n].eval(x)?)
    }
}

/// Tape handles produced by [`BoundBundle::generate`].
#[derive(Clone, Copy, Debug)]
pub struct Generated {
    pub content: Var,
    pub style: Var,
    pub sample: Var,
}

/// A [`ModelBundle`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundBundle {
    pub content_encoder: BoundMlp,
    pub style_encoders: Vec<BoundMlp>,
    pub content_decoder: BoundMlp,
    pub style_decoders: Vec<BoundMlp>,
    pub generator: BoundMlp,
    pub discriminators: Vec<BoundMlp>,
}

impl BoundBundle {
    /// Variables in the order of [`ModelBundle::params`].
    pub fn vars(&self, group: ParamGroup) -> Vec<Var> {
        match group {
            ParamGroup::Generator => std::iter::once(&self.content_encoder)
                .chain(&self.style_encoders)
                .chain(std::iter::once(&self.content_decoder))
                .chain(&self.style_decoders)
                .chain(std::iter::once(&self.generator))
                .flat_map(|m| m.vars())
                .collect(),
            ParamGroup::Discriminator => {
                self.discriminators.iter().flat_map(|m| m.vars()).collect()
            }
        }
    }

    /// Generator applied to already-encoded latents.
    pub fn decode(&self, tape: &mut Tape, c: Var, s: Var) -> Result<Var, AutodiffError> {
        let z = tape.concat(c, s)?;
        self.generator.forward(tape, z)
    }

    pub fn generate(&self, tape: &mut Tape, batch: &LatentBatch) -> Result<Generated, ModelError> {
        let n = batch.domain;
        if n >= self.style_encoders.len() {
            return Err(ModelError::Domain {
                domain: n,
                domains: self.style_encoders.len(),
            });
        }
        let rc = tape.leaf(batch.r_c.clone());
        let rs = tape.leaf(batch.r_s.clone());
        let content = self.content_encoder.forward(tape, rc)?;
        let style = self.style_encoders[n].forward(tape, rs)?;
        let sample = self.decode(tape, content, style)?;
        Ok(Generated {
            content,
            style,
            sample,
        })
    }

    /// Discriminator logits (pre-sigmoid) for domain `n`.
    pub fn disc_logits(&self, tape: &mut Tape, x: Var, n: usize) -> Result<Var, AutodiffError> {
        self.discriminators[n].pre_head(tape, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mlp::Dense;
    use crate::model::sample_latents;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            latent_width: 6,
            latent_layers: 2,
            gen_width: 8,
            gen_hidden: 2,
            disc_width: 8,
            disc_hidden: 1,
        }
    }

    fn linear(w: Tensor) -> Mlp {
        let out = w.shape()[1];
        Mlp {
            layers: vec![Dense {
                weight: w,
                bias: Tensor::zeros(&[out]),
            }],
            head: Head::Linear,
        }
    }

    #[test]
    fn identity_networks_pad_concatenated_latents() {
        let plan = DimensionPlan::from_blocks(6, 1, 1, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ModelBundle::init(plan, small_arch(), &mut rng).unwrap();
        b.content_encoder = linear(Tensor::identity(2));
        b.style_encoders = vec![linear(Tensor::identity(2))];
        let mut pad = Tensor::zeros(&[4, 6]);
        for i in 0..4 {
            pad.data_mut()[i * 6 + i] = 1.0;
        }
        b.generator = linear(pad);
        b.validate().unwrap();
        let seeds = sample_latents(&plan, 5, Some(0), &mut rng).unwrap();
        let x = b.generate(&seeds).unwrap();
        for (i, s) in seeds.iter().enumerate() {
            let z = [s.content(), s.style()].concat();
            assert_eq!(&x.row(i)[..4], z.as_slice());
            assert_eq!(&x.row(i)[4..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn generation_is_pure_and_matches_hand_composition() {
        let plan = DimensionPlan::from_blocks(7, 1, 2, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = ModelBundle::init(plan, small_arch(), &mut rng).unwrap();
        let seeds = sample_latents(&plan, 9, None, &mut rng).unwrap();
        let x1 = b.generate(&seeds).unwrap();
        let x2 = b.generate(&seeds).unwrap();
        assert_eq!(x1, x2);

        let by_hand = |m: &Mlp, v: &[f64]| -> Vec<f64> {
            let mut h = v.to_vec();
            for (i, l) in m.layers.iter().enumerate() {
                let (ni, no) = (l.fan_in(), l.fan_out());
                let mut y = l.bias.data().to_vec();
                for o in 0..no {
                    for k in 0..ni {
                        y[o] += h[k] * l.weight.data()[k * no + o];
                    }
                }
                if i + 1 < m.layers.len() {
                    y.iter_mut()
                        .for_each(|v| *v = if *v > 0.0 { *v } else { 0.2 * *v });
                }
                h = y;
            }
            match m.head {
                Head::Linear => h,
                Head::Tanh => h.into_iter().map(f64::tanh).collect(),
                Head::Sigmoid => h.into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
            }
        };
        for (i, s) in seeds.iter().enumerate() {
            let c = by_hand(&b.content_encoder, &s.content());
            let st = by_hand(&b.style_encoders[s.domain], &s.style());
            let x = by_hand(&b.generator, &[c, st].concat());
            for (a, e) in x1.row(i).iter().zip(&x) {
                assert!((a - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn params_and_bound_vars_align() {
        let plan = DimensionPlan::from_blocks(5, 1, 1, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = ModelBundle::init(plan, small_arch(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = b.bind(&mut tape);
        for g in [ParamGroup::Generator, ParamGroup::Discriminator] {
            let vars = bound.vars(g);
            let params = b.params(g);
            assert_eq!(vars.len(), params.len());
            for (v, p) in vars.iter().zip(params) {
                assert_eq!(tape.value(*v), p);
            }
        }
        let total =
            b.params(ParamGroup::Generator).len() + b.params(ParamGroup::Discriminator).len();
        assert_eq!(b.param_names().len(), total);
    }

    #[test]
    fn discriminator_outputs_are_probabilities() {
        let plan = DimensionPlan::from_blocks(5, 1, 1, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = ModelBundle::init(plan, small_arch(), &mut rng).unwrap();
        let x = crate::model::gaussian_tensor(&[10, 5], &mut rng);
        let p = b.discriminate(&x, 1).unwrap();
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(b.discriminate(&x, 2).is_err());
    }
}
