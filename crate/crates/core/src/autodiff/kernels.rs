//! Infallible numeric kernels shared by the recording tape and the plain
//! backward pass. Shapes are validated by the caller.

use super::Tensor;

/// Shape of `op(m)` for a 2-D tensor, where `op` optionally transposes.
pub(crate) fn op_dims(t: &Tensor, trans: bool) -> (usize, usize) {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    if trans {
        (c, r)
    } else {
        (r, c)
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let (m, k) = op_dims(a, ta);
    let (k2, n) = op_dims(b, tb);
    debug_assert_eq!(k, k2);
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return Tensor::from_parts(vec![m, n], out);
    }
    let a_cols = a.shape()[1] as isize;
    let b_cols = b.shape()[1] as isize;
    let (rsa, csa) = if ta { (1, a_cols) } else { (a_cols, 1) };
    let (rsb, csb) = if tb { (1, b_cols) } else { (b_cols, 1) };
    // SAFETY: the strides describe exactly the row-major buffers of `a`, `b`
    // and `out`, whose lengths match the (m, k), (k, n) and (m, n) views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Tensor::from_parts(vec![m, n], out)
}

pub(crate) fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

pub(crate) fn add(a: &Tensor, b: &Tensor) -> Tensor {
    zip(a, b, |x, y| x + y)
}

pub(crate) fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    zip(a, b, |x, y| x - y)
}

pub(crate) fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    zip(a, b, |x, y| x * y)
}

pub(crate) fn affine1(a: &Tensor, scale: f64, shift: f64) -> Tensor {
    a.map(|x| scale * x + shift)
}

pub(crate) fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

/// `g` scaled by 1 where `reference > 0` and by `slope` elsewhere.
pub(crate) fn mask_scale(reference: &Tensor, g: &Tensor, slope: f64) -> Tensor {
    zip(reference, g, |r, v| if r > 0.0 { v } else { slope * v })
}

pub(crate) fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub(crate) fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

pub(crate) fn ln(x: &Tensor) -> Tensor {
    x.map(f64::ln)
}

pub(crate) fn recip(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / v)
}

pub(crate) fn add_row(x: &Tensor, bias: &Tensor) -> Tensor {
    let c = x.cols();
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(c) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), data)
}

pub(crate) fn sum_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = vec![0.0; c];
    for row in x.data().chunks(c) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![c], out)
}

pub(crate) fn broadcast_rows(v: &Tensor, rows: usize) -> Tensor {
    let c = v.len();
    let mut data = Vec::with_capacity(rows * c);
    for _ in 0..rows {
        data.extend_from_slice(v.data());
    }
    Tensor::from_parts(vec![rows, c], data)
}

pub(crate) fn slice_cols(x: &Tensor, start: usize, len: usize) -> Tensor {
    let c = x.cols();
    let rows = x.rows();
    let mut data = Vec::with_capacity(rows * len);
    for row in x.data().chunks(c.max(1)) {
        data.extend_from_slice(&row[start..start + len]);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("matrix view") = len;
    Tensor::from_parts(shape, data)
}

pub(crate) fn pad_cols(x: &Tensor, start: usize, total: usize) -> Tensor {
    let c = x.cols();
    let rows = x.rows();
    let mut data = vec![0.0; rows * total];
    if c == 0 {
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("matrix view") = total;
        return Tensor::from_parts(shape, data);
    }
    for (r, row) in x.data().chunks(c).enumerate() {
        data[r * total + start..r * total + start + c].copy_from_slice(row);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("matrix view") = total;
    Tensor::from_parts(shape, data)
}

pub(crate) fn slice_rows(x: &Tensor, start: usize, len: usize) -> Tensor {
    let c = x.cols();
    Tensor::from_parts(
        vec![len, c],
        x.data()[start * c..(start + len) * c].to_vec(),
    )
}

pub(crate) fn pad_rows(x: &Tensor, start: usize, total: usize) -> Tensor {
    let c = x.cols();
    let mut data = vec![0.0; total * c];
    data[start * c..start * c + x.len()].copy_from_slice(x.data());
    Tensor::from_parts(vec![total, c], data)
}

pub(crate) fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let (ca, cb) = (a.cols(), b.cols());
    let rows = a.rows();
    if ca == 0 || cb == 0 {
        let src = if ca == 0 { b } else { a };
        let mut shape = a.shape().to_vec();
        *shape.last_mut().expect("matrix view") = ca + cb;
        return Tensor::from_parts(shape, src.data().to_vec());
    }
    let mut data = Vec::with_capacity(rows * (ca + cb));
    for (ra, rb) in a.data().chunks(ca).zip(b.data().chunks(cb)) {
        data.extend_from_slice(ra);
        data.extend_from_slice(rb);
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().expect("matrix view") = ca + cb;
    Tensor::from_parts(shape, data)
}

pub(crate) fn sum(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

pub(crate) fn fill(s: &Tensor, shape: &[usize]) -> Tensor {
    Tensor::filled(shape, s.item())
}
