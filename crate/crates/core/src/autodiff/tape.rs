use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels;
use super::{AutodiffError, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u64,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    AddRow {
        x: usize,
        bias: usize,
    },
    SumRows {
        x: usize,
    },
    BroadcastRows {
        v: usize,
        rows: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Affine1 {
        x: usize,
        scale: f64,
        shift: f64,
    },
    LeakyRelu {
        x: usize,
        slope: f64,
    },
    MaskScale {
        reference: usize,
        g: usize,
        slope: f64,
    },
    Tanh {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Log {
        x: usize,
    },
    Recip {
        x: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
        len: usize,
    },
    PadCols {
        x: usize,
        start: usize,
        total: usize,
    },
    SliceRows {
        x: usize,
        start: usize,
        len: usize,
    },
    PadRows {
        x: usize,
        start: usize,
        total: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    Sum {
        x: usize,
    },
    Fill {
        s: usize,
        like: usize,
    },
}

impl Op {
    /// Parents that receive gradient from this node.
    fn grad_parents(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul { a, b, .. } | Add { a, b } | Sub { a, b } | Mul { a, b } | Concat { a, b } => {
                [Some(a), Some(b)]
            }
            AddRow { x, bias } => [Some(x), Some(bias)],
            MaskScale { g, .. } => [Some(g), None],
            BroadcastRows { v, .. } => [Some(v), None],
            Fill { s, .. } => [Some(s), None],
            SumRows { x }
            | Affine1 { x, .. }
            | LeakyRelu { x, .. }
            | Tanh { x }
            | Sigmoid { x }
            | Log { x }
            | Recip { x }
            | SliceCols { x, .. }
            | PadCols { x, .. }
            | SliceRows { x, .. }
            | PadRows { x, .. }
            | Sum { x } => [Some(x), None],
        }
    }
}

struct Node {
    op: Op,
    value: Arc<Tensor>,
}

/// Single-owner record of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's parents precede
/// it. Reverse passes come in two flavours: [`Tape::vjp`] returns plain
/// tensors, [`Tape::vjp_graph`] records the reverse pass itself so that the
/// resulting vector-Jacobian products can be differentiated again.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    backward_passes: Cell<usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_passes: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of reverse traversals run on this tape so far.
    pub fn backward_passes(&self) -> usize {
        self.backward_passes.get()
    }

    fn check(&self, v: Var) -> Result<usize, AutodiffError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar {
                index: v.index,
                var_tape: v.tape,
                tape: self.id,
            });
        }
        Ok(v.index)
    }

    fn var(&self, index: usize) -> Var {
        Var {
            index,
            tape: self.id,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&mut self, value: Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        self.var(self.nodes.len() - 1)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn eval(&self, op: &Op) -> Tensor {
        use Op::*;
        match *op {
            Leaf => unreachable!("leaves carry their own value"),
            MatMul { a, b, ta, tb } => kernels::matmul(self.val(a), self.val(b), ta, tb),
            AddRow { x, bias } => kernels::add_row(self.val(x), self.val(bias)),
            SumRows { x } => kernels::sum_rows(self.val(x)),
            BroadcastRows { v, rows } => kernels::broadcast_rows(self.val(v), rows),
            Add { a, b } => kernels::add(self.val(a), self.val(b)),
            Sub { a, b } => kernels::sub(self.val(a), self.val(b)),
            Mul { a, b } => kernels::mul(self.val(a), self.val(b)),
            Affine1 { x, scale, shift } => kernels::affine1(self.val(x), scale, shift),
            LeakyRelu { x, slope } => kernels::leaky_relu(self.val(x), slope),
            MaskScale {
                reference,
                g,
                slope,
            } => kernels::mask_scale(self.val(reference), self.val(g), slope),
            Tanh { x } => kernels::tanh(self.val(x)),
            Sigmoid { x } => kernels::sigmoid(self.val(x)),
            Log { x } => kernels::ln(self.val(x)),
            Recip { x } => kernels::recip(self.val(x)),
            SliceCols { x, start, len } => kernels::slice_cols(self.val(x), start, len),
            PadCols { x, start, total } => kernels::pad_cols(self.val(x), start, total),
            SliceRows { x, start, len } => kernels::slice_rows(self.val(x), start, len),
            PadRows { x, start, total } => kernels::pad_rows(self.val(x), start, total),
            Concat { a, b } => kernels::concat_cols(self.val(a), self.val(b)),
            Sum { x } => kernels::sum(self.val(x)),
            Fill { s, like } => kernels::fill(self.val(s), self.val(like).shape()),
        }
    }

    fn push(&mut self, op: Op) -> usize {
        let value = Arc::new(self.eval(&op));
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn record(&mut self, op: Op) -> Var {
        let i = self.push(op);
        self.var(i)
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn matrix(&self, op: &'static str, a: usize) -> Result<(), AutodiffError> {
        let s = self.val(a).shape();
        if s.len() != 2 {
            return Err(AutodiffError::NotMatrix {
                op,
                shape: s.to_vec(),
            });
        }
        Ok(())
    }

    // ── forward primitives ──────────────────────────────────────────────

    /// `op(a) · op(b)` for 2-D operands, `op` being an optional transpose.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.matrix("matmul", ia)?;
        self.matrix("matmul", ib)?;
        let (_, k) = kernels::op_dims(self.val(ia), ta);
        let (k2, _) = kernels::op_dims(self.val(ib), tb);
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: self.val(ia).shape().to_vec(),
                rhs: self.val(ib).shape().to_vec(),
            });
        }
        Ok(self.record(Op::MatMul {
            a: ia,
            b: ib,
            ta,
            tb,
        }))
    }

    /// `x · w + b` with `w: [in, out]` and `b: [out]`, applied row-wise.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xw = self.matmul(x, w, false, false)?;
        self.add_row(xw, b)
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        self.matrix("add_row", ix)?;
        let bs = self.val(ib).shape();
        if bs.len() != 1 || bs[0] != self.val(ix).cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                lhs: self.val(ix).shape().to_vec(),
                rhs: bs.to_vec(),
            });
        }
        Ok(self.record(Op::AddRow { x: ix, bias: ib }))
    }

    pub fn sum_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        self.matrix("sum_rows", ix)?;
        Ok(self.record(Op::SumRows { x: ix }))
    }

    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var, AutodiffError> {
        let iv = self.check(v)?;
        if self.val(iv).shape().len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_rows",
                lhs: self.val(iv).shape().to_vec(),
                rhs: vec![rows],
            });
        }
        Ok(self.record(Op::BroadcastRows { v: iv, rows }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("add", ia, ib)?;
        Ok(self.record(Op::Add { a: ia, b: ib }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("sub", ia, ib)?;
        Ok(self.record(Op::Sub { a: ia, b: ib }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("mul", ia, ib)?;
        Ok(self.record(Op::Mul { a: ia, b: ib }))
    }

    /// Elementwise `scale · x + shift`.
    pub fn affine1(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        Ok(self.record(Op::Affine1 {
            x: ix,
            scale,
            shift,
        }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var, AutodiffError> {
        self.affine1(x, k, 0.0)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        Ok(self.record(Op::LeakyRelu { x: ix, slope }))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        Ok(self.record(Op::Tanh { x: ix }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        Ok(self.record(Op::Sigmoid { x: ix }))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        Ok(self.record(Op::Log { x: ix }))
    }

    pub fn recip(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        Ok(self.record(Op::Recip { x: ix }))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let c = self.val(ix).cols();
        if start + len > c || self.val(ix).shape().is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: self.val(ix).shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        Ok(self.record(Op::SliceCols { x: ix, start, len }))
    }

    /// Splits the last axis into consecutive blocks of the given widths.
    pub fn split_cols(&mut self, x: Var, widths: &[usize]) -> Result<Vec<Var>, AutodiffError> {
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice_cols(x, start, w)?);
            start += w;
        }
        if start != self.value(x).cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "split_cols",
                lhs: self.value(x).shape().to_vec(),
                rhs: widths.to_vec(),
            });
        }
        Ok(out)
    }

    /// Embeds `x` at column offset `start` of a zero matrix `total` columns wide.
    pub fn pad_cols(&mut self, x: Var, start: usize, total: usize) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        let c = self.val(ix).cols();
        if start + c > total || self.val(ix).shape().is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "pad_cols",
                lhs: self.val(ix).shape().to_vec(),
                rhs: vec![start, total],
            });
        }
        Ok(self.record(Op::PadCols {
            x: ix,
            start,
            total,
        }))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        self.matrix("slice_rows", ix)?;
        if start + len > self.val(ix).rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_rows",
                lhs: self.val(ix).shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        Ok(self.record(Op::SliceRows { x: ix, start, len }))
    }

    /// Embeds a matrix at row offset `start` of a zero matrix `total` rows tall.
    pub fn pad_rows(&mut self, x: Var, start: usize, total: usize) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        self.matrix("pad_rows", ix)?;
        if start + self.val(ix).rows() > total {
            return Err(AutodiffError::ShapeMismatch {
                op: "pad_rows",
                lhs: self.val(ix).shape().to_vec(),
                rhs: vec![start, total],
            });
        }
        Ok(self.record(Op::PadRows {
            x: ix,
            start,
            total,
        }))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.val(ia).shape(), self.val(ib).shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(self.record(Op::Concat { a: ia, b: ib }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.check(x)?;
        Ok(self.record(Op::Sum { x: ix }))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// `Σ x²` over all elements, as a scalar.
    pub fn squared_norm(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let sq = self.mul(x, x)?;
        self.sum(sq)
    }

    /// A tensor shaped like `like` with every entry equal to the scalar `s`.
    pub fn fill_like(&mut self, s: Var, like: Var) -> Result<Var, AutodiffError> {
        let (is, il) = (self.check(s)?, self.check(like)?);
        if self.val(is).len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "fill_like",
                lhs: self.val(is).shape().to_vec(),
                rhs: vec![1],
            });
        }
        Ok(self.record(Op::Fill { s: is, like: il }))
    }

    // ── reverse passes ──────────────────────────────────────────────────

    /// Vector-Jacobian products `Jᵀ·cotangent` of `output` with respect to
    /// each variable in `wrt`, in one reverse traversal.
    pub fn vjp(
        &self,
        output: Var,
        cotangent: &Tensor,
        wrt: &[Var],
    ) -> Result<Vec<Tensor>, AutodiffError> {
        let out = self.check(output)?;
        if cotangent.shape() != self.val(out).shape() {
            return Err(AutodiffError::CotangentShape {
                expected: self.val(out).shape().to_vec(),
                found: cotangent.shape().to_vec(),
            });
        }
        let targets = wrt
            .iter()
            .map(|&w| self.check(w))
            .collect::<Result<Vec<_>, _>>()?;
        let mut builder = Plain { tape: self };
        let grads = reverse(&mut builder, out, Arc::new(cotangent.clone()), &targets);
        self.backward_passes.set(self.backward_passes.get() + 1);
        Ok(grads
            .into_iter()
            .zip(&targets)
            .map(|(g, &t)| match g {
                Some(g) => Arc::try_unwrap(g).unwrap_or_else(|a| (*a).clone()),
                None => Tensor::zeros(self.val(t).shape()),
            })
            .collect())
    }

    /// Gradient of a scalar `output` with respect to `wrt`.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>, AutodiffError> {
        let seed = Tensor::filled(self.value(output).shape(), 1.0);
        if seed.len() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: seed.shape().to_vec(),
            });
        }
        self.vjp(output, &seed, wrt)
    }

    /// Like [`Tape::vjp`], but the reverse pass is recorded onto this tape
    /// and the returned products are differentiable variables.
    pub fn vjp_graph(
        &mut self,
        output: Var,
        cotangent: Var,
        wrt: &[Var],
    ) -> Result<Vec<Var>, AutodiffError> {
        let out = self.check(output)?;
        let cot = self.check(cotangent)?;
        if self.val(cot).shape() != self.val(out).shape() {
            return Err(AutodiffError::CotangentShape {
                expected: self.val(out).shape().to_vec(),
                found: self.val(cot).shape().to_vec(),
            });
        }
        let targets = wrt
            .iter()
            .map(|&w| self.check(w))
            .collect::<Result<Vec<_>, _>>()?;
        let grads = {
            let mut builder = Recording { tape: self };
            reverse(&mut builder, out, cot, &targets)
        };
        self.backward_passes.set(self.backward_passes.get() + 1);
        Ok(grads
            .into_iter()
            .zip(&targets)
            .map(|(g, &t)| match g {
                Some(g) => self.var(g),
                None => {
                    let z = Tensor::zeros(self.val(t).shape());
                    self.leaf(z)
                }
            })
            .collect())
    }
}

/// Operations needed to express every pullback rule, implemented once over
/// plain tensors and once as recorded tape nodes.
trait Builder {
    type T: Clone;
    fn tape(&self) -> &Tape;
    fn node(&self, id: usize) -> Self::T;
    fn matmul(&mut self, a: &Self::T, b: &Self::T, ta: bool, tb: bool) -> Self::T;
    fn sum_rows(&mut self, x: &Self::T) -> Self::T;
    fn broadcast_rows(&mut self, v: &Self::T, rows: usize) -> Self::T;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn affine1(&mut self, x: &Self::T, scale: f64, shift: f64) -> Self::T;
    fn mask_scale(&mut self, reference: &Self::T, g: &Self::T, slope: f64) -> Self::T;
    fn recip(&mut self, x: &Self::T) -> Self::T;
    fn slice_cols(&mut self, x: &Self::T, start: usize, len: usize) -> Self::T;
    fn pad_cols(&mut self, x: &Self::T, start: usize, total: usize) -> Self::T;
    fn slice_rows(&mut self, x: &Self::T, start: usize, len: usize) -> Self::T;
    fn pad_rows(&mut self, x: &Self::T, start: usize, total: usize) -> Self::T;
    fn sum(&mut self, x: &Self::T) -> Self::T;
    fn fill(&mut self, s: &Self::T, like: usize) -> Self::T;
}

struct Plain<'a> {
    tape: &'a Tape,
}

impl Builder for Plain<'_> {
    type T = Arc<Tensor>;

    fn tape(&self) -> &Tape {
        self.tape
    }
    fn node(&self, id: usize) -> Self::T {
        Arc::clone(&self.tape.nodes[id].value)
    }
    fn matmul(&mut self, a: &Self::T, b: &Self::T, ta: bool, tb: bool) -> Self::T {
        Arc::new(kernels::matmul(a, b, ta, tb))
    }
    fn sum_rows(&mut self, x: &Self::T) -> Self::T {
        Arc::new(kernels::sum_rows(x))
    }
    fn broadcast_rows(&mut self, v: &Self::T, rows: usize) -> Self::T {
        Arc::new(kernels::broadcast_rows(v, rows))
    }
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        Arc::new(kernels::add(a, b))
    }
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        Arc::new(kernels::mul(a, b))
    }
    fn affine1(&mut self, x: &Self::T, scale: f64, shift: f64) -> Self::T {
        Arc::new(kernels::affine1(x, scale, shift))
    }
    fn mask_scale(&mut self, reference: &Self::T, g: &Self::T, slope: f64) -> Self::T {
        Arc::new(kernels::mask_scale(reference, g, slope))
    }
    fn recip(&mut self, x: &Self::T) -> Self::T {
        Arc::new(kernels::recip(x))
    }
    fn slice_cols(&mut self, x: &Self::T, start: usize, len: usize) -> Self::T {
        Arc::new(kernels::slice_cols(x, start, len))
    }
    fn pad_cols(&mut self, x: &Self::T, start: usize, total: usize) -> Self::T {
        Arc::new(kernels::pad_cols(x, start, total))
    }
    fn slice_rows(&mut self, x: &Self::T, start: usize, len: usize) -> Self::T {
        Arc::new(kernels::slice_rows(x, start, len))
    }
    fn pad_rows(&mut self, x: &Self::T, start: usize, total: usize) -> Self::T {
        Arc::new(kernels::pad_rows(x, start, total))
    }
    fn sum(&mut self, x: &Self::T) -> Self::T {
        Arc::new(kernels::sum(x))
    }
    fn fill(&mut self, s: &Self::T, like: usize) -> Self::T {
        Arc::new(kernels::fill(s, self.tape.nodes[like].value.shape()))
    }
}

struct Recording<'a> {
    tape: &'a mut Tape,
}

impl Builder for Recording<'_> {
    type T = usize;

    fn tape(&self) -> &Tape {
        self.tape
    }
    fn node(&self, id: usize) -> usize {
        id
    }
    fn matmul(&mut self, a: &usize, b: &usize, ta: bool, tb: bool) -> usize {
        self.tape.push(Op::MatMul {
            a: *a,
            b: *b,
            ta,
            tb,
        })
    }
    fn sum_rows(&mut self, x: &usize) -> usize {
        self.tape.push(Op::SumRows { x: *x })
    }
    fn broadcast_rows(&mut self, v: &usize, rows: usize) -> usize {
        self.tape.push(Op::BroadcastRows { v: *v, rows })
    }
    fn add(&mut self, a: &usize, b: &usize) -> usize {
        self.tape.push(Op::Add { a: *a, b: *b })
    }
    fn mul(&mut self, a: &usize, b: &usize) -> usize {
        self.tape.push(Op::Mul { a: *a, b: *b })
    }
    fn affine1(&mut self, x: &usize, scale: f64, shift: f64) -> usize {
        self.tape.push(Op::Affine1 {
            x: *x,
            scale,
            shift,
        })
    }
    fn mask_scale(&mut self, reference: &usize, g: &usize, slope: f64) -> usize {
        self.tape.push(Op::MaskScale {
            reference: *reference,
            g: *g,
            slope,
        })
    }
    fn recip(&mut self, x: &usize) -> usize {
        self.tape.push(Op::Recip { x: *x })
    }
    fn slice_cols(&mut self, x: &usize, start: usize, len: usize) -> usize {
        self.tape.push(Op::SliceCols { x: *x, start, len })
    }
    fn pad_cols(&mut self, x: &usize, start: usize, total: usize) -> usize {
        self.tape.push(Op::PadCols {
            x: *x,
            start,
            total,
        })
    }
    fn slice_rows(&mut self, x: &usize, start: usize, len: usize) -> usize {
        self.tape.push(Op::SliceRows { x: *x, start, len })
    }
    fn pad_rows(&mut self, x: &usize, start: usize, total: usize) -> usize {
        self.tape.push(Op::PadRows {
            x: *x,
            start,
            total,
        })
    }
    fn sum(&mut self, x: &usize) -> usize {
        self.tape.push(Op::Sum { x: *x })
    }
    fn fill(&mut self, s: &usize, like: usize) -> usize {
        self.tape.push(Op::Fill { s: *s, like })
    }
}

/// Gradient contributions of node `out` (with incoming gradient `g`) to each
/// parent flagged in `needs`.
fn pullback<B: Builder>(
    b: &mut B,
    op: Op,
    out: usize,
    g: &B::T,
    needs: &[bool],
) -> Vec<(usize, B::T)> {
    use Op::*;
    let mut contrib = Vec::with_capacity(2);
    match op {
        Leaf => {}
        MatMul { a, b: bb, ta, tb } => {
            if needs[a] {
                let nb = b.node(bb);
                let da = if ta {
                    b.matmul(&nb, g, tb, true)
                } else {
                    b.matmul(g, &nb, false, !tb)
                };
                contrib.push((a, da));
            }
            if needs[bb] {
                let na = b.node(a);
                let db = if tb {
                    b.matmul(g, &na, true, ta)
                } else {
                    b.matmul(&na, g, !ta, false)
                };
                contrib.push((bb, db));
            }
        }
        AddRow { x, bias } => {
            if needs[x] {
                contrib.push((x, g.clone()));
            }
            if needs[bias] {
                contrib.push((bias, b.sum_rows(g)));
            }
        }
        SumRows { x } => {
            if needs[x] {
                let rows = b.tape().nodes[x].value.rows();
                contrib.push((x, b.broadcast_rows(g, rows)));
            }
        }
        BroadcastRows { v, .. } => {
            if needs[v] {
                contrib.push((v, b.sum_rows(g)));
            }
        }
        Add { a, b: bb } => {
            if needs[a] {
                contrib.push((a, g.clone()));
            }
            if needs[bb] {
                contrib.push((bb, g.clone()));
            }
        }
        Sub { a, b: bb } => {
            if needs[a] {
                contrib.push((a, g.clone()));
            }
            if needs[bb] {
                contrib.push((bb, b.affine1(g, -1.0, 0.0)));
            }
        }
        Mul { a, b: bb } => {
            if needs[a] {
                let nb = b.node(bb);
                contrib.push((a, b.mul(g, &nb)));
            }
            if needs[bb] {
                let na = b.node(a);
                contrib.push((bb, b.mul(g, &na)));
            }
        }
        Affine1 { x, scale, .. } => {
            if needs[x] {
                contrib.push((x, b.affine1(g, scale, 0.0)));
            }
        }
        LeakyRelu { x, slope } => {
            if needs[x] {
                let nx = b.node(x);
                contrib.push((x, b.mask_scale(&nx, g, slope)));
            }
        }
        MaskScale {
            reference,
            g: h,
            slope,
        } => {
            if needs[h] {
                let r = b.node(reference);
                contrib.push((h, b.mask_scale(&r, g, slope)));
            }
        }
        Tanh { x } => {
            if needs[x] {
                let y = b.node(out);
                let y2 = b.mul(&y, &y);
                let dy = b.affine1(&y2, -1.0, 1.0);
                contrib.push((x, b.mul(g, &dy)));
            }
        }
        Sigmoid { x } => {
            if needs[x] {
                let y = b.node(out);
                let one_minus = b.affine1(&y, -1.0, 1.0);
                let dy = b.mul(&y, &one_minus);
                contrib.push((x, b.mul(g, &dy)));
            }
        }
        Log { x } => {
            if needs[x] {
                let nx = b.node(x);
                let r = b.recip(&nx);
                contrib.push((x, b.mul(g, &r)));
            }
        }
        Recip { x } => {
            if needs[x] {
                let y = b.node(out);
                let y2 = b.mul(&y, &y);
                let dy = b.affine1(&y2, -1.0, 0.0);
                contrib.push((x, b.mul(g, &dy)));
            }
        }
        SliceCols { x, start, .. } => {
            if needs[x] {
                let total = b.tape().nodes[x].value.cols();
                contrib.push((x, b.pad_cols(g, start, total)));
            }
        }
        PadCols { x, start, .. } => {
            if needs[x] {
                let len = b.tape().nodes[x].value.cols();
                contrib.push((x, b.slice_cols(g, start, len)));
            }
        }
        SliceRows { x, start, .. } => {
            if needs[x] {
                let total = b.tape().nodes[x].value.rows();
                contrib.push((x, b.pad_rows(g, start, total)));
            }
        }
        PadRows { x, start, .. } => {
            if needs[x] {
                let len = b.tape().nodes[x].value.rows();
                contrib.push((x, b.slice_rows(g, start, len)));
            }
        }
        Concat { a, b: bb } => {
            let ca = b.tape().nodes[a].value.cols();
            if needs[a] {
                contrib.push((a, b.slice_cols(g, 0, ca)));
            }
            if needs[bb] {
                let cb = b.tape().nodes[bb].value.cols();
                contrib.push((bb, b.slice_cols(g, ca, cb)));
            }
        }
        Sum { x } => {
            if needs[x] {
                contrib.push((x, b.fill(g, x)));
            }
        }
        Fill { s, .. } => {
            if needs[s] {
                contrib.push((s, b.sum(g)));
            }
        }
    }
    contrib
}

/// One reverse traversal from `output` seeded with `seed`; returns the
/// accumulated adjoint of each target (None when unreachable).
fn reverse<B: Builder>(
    b: &mut B,
    output: usize,
    seed: B::T,
    targets: &[usize],
) -> Vec<Option<B::T>> {
    let n = output + 1;
    let mut is_target = vec![false; n];
    for &t in targets {
        if t < n {
            is_target[t] = true;
        }
    }
    // A node needs an adjoint when some target lies at or below it.
    let mut needs = is_target.clone();
    for i in 0..n {
        if !needs[i] {
            let parents = b.tape().nodes[i].op.grad_parents();
            needs[i] = parents.iter().flatten().any(|&p| needs[p]);
        }
    }
    let mut grads: Vec<Option<B::T>> = vec![None; n];
    if needs[output] {
        grads[output] = Some(seed);
    }
    for i in (0..n).rev() {
        let Some(g) = grads[i].clone() else { continue };
        if !is_target[i] {
            grads[i] = None;
        }
        let op = b.tape().nodes[i].op;
        for (p, contrib) in pullback(b, op, i, &g, &needs) {
            grads[p] = Some(match grads[p].take() {
                None => contrib,
                Some(prev) => b.add(&prev, &contrib),
            });
        }
    }
    targets
        .iter()
        .map(|&t| if t < n { grads[t].clone() } else { None })
        .collect()
}
