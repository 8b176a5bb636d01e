use super::{AutodiffError, Tape, Tensor, Var};

fn eval_flat<F>(map: &F, point: &Tensor) -> Result<Tensor, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = map(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

/// Full Jacobian `[out_len, in_len]` assembled row by row from basis
/// cotangents, one reverse pass per output coordinate.
pub fn jacobian_by_vjp<F>(map: &F, point: &Tensor) -> Result<Tensor, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = map(&mut tape, x)?;
    let out_shape = tape.value(y).shape().to_vec();
    let m = tape.value(y).len();
    let n = point.len();
    let mut jac = Vec::with_capacity(m * n);
    for k in 0..m {
        let mut cot = Tensor::zeros(&out_shape);
        cot.data_mut()[k] = 1.0;
        let row = tape.vjp(y, &cot, &[x])?.remove(0);
        if !row.is_finite() {
            return Err(AutodiffError::NonFinite { coordinate: k });
        }
        jac.extend_from_slice(row.data());
    }
    Tensor::matrix(m, n, jac)
}

/// Central-difference Jacobian `[out_len, in_len]` with the given step.
pub fn central_difference_jacobian<F>(
    map: &F,
    point: &Tensor,
    step: f64,
) -> Result<Tensor, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let n = point.len();
    let base = eval_flat(map, point)?;
    let m = base.len();
    let mut jac = vec![0.0; m * n];
    for j in 0..n {
        let mut plus = point.clone();
        plus.data_mut()[j] += step;
        let mut minus = point.clone();
        minus.data_mut()[j] -= step;
        let fp = eval_flat(map, &plus)?;
        let fm = eval_flat(map, &minus)?;
        for i in 0..m {
            let d = (fp.data()[i] - fm.data()[i]) / (2.0 * step);
            if !d.is_finite() {
                return Err(AutodiffError::NonFinite { coordinate: j });
            }
            jac[i * n + j] = d;
        }
    }
    Tensor::matrix(m, n, jac)
}

/// Largest relative discrepancy between the reverse-mode gradient of a scalar
/// map and its central-difference estimate:
/// `max_j |auto_j − fd_j| / (|fd_j| + 1e-12)`.
pub fn grad_check<F>(map: &F, point: &Tensor, step: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = map(&mut tape, x)?;
    let auto = tape.grad(y, &[x])?.remove(0);
    if let Some(j) = auto.data().iter().position(|a| !a.is_finite()) {
        return Err(AutodiffError::NonFinite { coordinate: j });
    }
    let fd = central_difference_jacobian(map, point, step)?;
    let mut worst: f64 = 0.0;
    for (&a, &f) in auto.data().iter().zip(fd.data()) {
        worst = worst.max((a - f).abs() / (f.abs() + 1e-12));
    }
    Ok(worst)
}
