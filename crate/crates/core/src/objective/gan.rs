use crate::autodiff::{AutodiffError, Tape, Var};

/// Probabilities are clamped into `[PROB_CLAMP, 1 − PROB_CLAMP]` before
/// taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanValue {
    pub value: f64,
    /// Some input had to be clamped away from 0 or 1.
    pub clamped: bool,
}

/// `E[log d(x)] + E[log(1 − d(x̂))]` for one domain, from discriminator
/// probabilities on real and generated samples.
pub fn gan_loss(disc_real: &[f64], disc_fake: &[f64]) -> GanValue {
    let mut clamped = false;
    let mut clamp = |p: f64| {
        let q = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        clamped |= q != p;
        q
    };
    let real: f64 = disc_real.iter().map(|&p| clamp(p).ln()).sum::<f64>() / disc_real.len() as f64;
    let fake: f64 = disc_fake
        .iter()
        .map(|&p| (1.0 - clamp(p)).ln())
        .sum::<f64>()
        / disc_fake.len() as f64;
    GanValue {
        value: real + fake,
        clamped,
    }
}

/// The same value from logits, on a tape: `mean log σ(z_real) + mean log σ(−z_fake)`.
/// Working from logits keeps both logarithms finite.
pub fn disc_value_on_tape(
    tape: &mut Tape,
    real_logits: Var,
    fake_logits: Var,
) -> Result<Var, AutodiffError> {
    let pr = tape.sigmoid(real_logits)?;
    let lr = tape.ln(pr)?;
    let real = tape.mean(lr)?;
    let neg = tape.scale(fake_logits, -1.0)?;
    let pf = tape.sigmoid(neg)?;
    let lf = tape.ln(pf)?;
    let fake = tape.mean(lf)?;
    tape.add(real, fake)
}

/// Non-saturating generator loss `−mean log σ(z_fake)`.
pub fn generator_adv_on_tape(tape: &mut Tape, fake_logits: Var) -> Result<Var, AutodiffError> {
    let p = tape.sigmoid(fake_logits)?;
    let l = tape.ln(p)?;
    let m = tape.mean(l)?;
    tape.scale(m, -1.0)
}
