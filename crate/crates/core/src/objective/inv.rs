use crate::autodiff::{AutodiffError, Tape, Var};
use crate::model::{BoundBundle, Generated, LatentBatch, ModelBundle, ModelError};

/// Batch-mean `‖x − y‖²` over rows.
fn mean_row_sq(tape: &mut Tape, x: Var, y: Var) -> Result<Var, AutodiffError> {
    let rows = tape.value(x).rows() as f64;
    let d = tape.sub(x, y)?;
    let s = tape.squared_norm(d)?;
    tape.scale(s, 1.0 / rows)
}

/// Invertibility penalty over single-domain batches whose encodings are
/// already on the tape. The content term is averaged over batches; style
/// terms are summed over domains.
pub fn inv_loss_on_tape(
    tape: &mut Tape,
    bound: &BoundBundle,
    batches: &[(&LatentBatch, Generated)],
) -> Result<Var, AutodiffError> {
    let mut content_terms = Vec::new();
    let mut total: Option<Var> = None;
    for &(batch, gen) in batches {
        let rc = tape.leaf(batch.r_c.clone());
        let rc_hat = bound.content_decoder.forward(tape, gen.content)?;
        content_terms.push(mean_row_sq(tape, rc_hat, rc)?);

        let rs = tape.leaf(batch.r_s.clone());
        let rs_hat = bound.style_decoders[batch.domain].forward(tape, gen.style)?;
        let style = mean_row_sq(tape, rs_hat, rs)?;
        total = Some(match total {
            Some(t) => tape.add(t, style)?,
            None => style,
        });
    }
    let Some(mut total) = total else {
        return Ok(tape.leaf(crate::autodiff::Tensor::scalar(0.0)));
    };
    let k = content_terms.len() as f64;
    let mut content = content_terms[0];
    for &t in &content_terms[1..] {
        content = tape.add(content, t)?;
    }
    let content = tape.scale(content, 1.0 / k)?;
    total = tape.add(total, content)?;
    Ok(total)
}

/// Plain-value invertibility penalty for the given batches.
pub fn inv_loss(bundle: &ModelBundle, batches: &[LatentBatch]) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape);
    let mut pairs = Vec::with_capacity(batches.len());
    for b in batches {
        pairs.push((b, bound.generate(&mut tape, b)?));
    }
    let v = inv_loss_on_tape(&mut tape, &bound, &pairs)?;
    Ok(tape.value(v).item())
}
