//! Reverse-mode differentiation over a small, closed set of vector primitives.
//!
//! A [`Tape`] records each operation eagerly into an arena of `f64` values.
//! Nodes are vectors (scalars are length-1 vectors). The reverse sweep walks
//! the node list once, back to front, accumulating adjoints and depositing
//! parameter gradients into a flat vector aligned with the parameter layout.
//!
//! The primitive set is exactly what the augmented leapfrog and its loss
//! need: affine maps, elementwise exp/tanh/relu/cos/sin, elementwise product,
//! sums and dot products, reciprocal, clamping, and hooks into an energy
//! model whose value backpropagates through the analytic gradient and whose
//! gradient backpropagates through the analytic Hessian-vector product.

use crate::energy::{EnergyError, EnergyModel};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("gradient root must be a scalar node, got length {0}")]
    RootNotScalar(usize),
    #[error("energy hook recorded on a tape without an energy model")]
    MissingEnergy,
    #[error("energy evaluation failed during tape pass: {0}")]
    Energy(#[from] EnergyError),
}

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot(u32);

#[derive(Debug, Clone, Copy)]
enum Op {
    /// Leaf holding a copy of `params[offset .. offset + len]`.
    Param { offset: u32 },
    /// Leaf with no gradient.
    Const,
    Add(Slot, Slot),
    Sub(Slot, Slot),
    Mul(Slot, Slot),
    /// Multiply by a compile-time constant scalar.
    Scale(Slot, f64),
    /// Scalar node times vector node.
    ScalarMul { s: Slot, v: Slot },
    /// y = W x with W a node of length rows*cols (row-major).
    MatVec { w: Slot, x: Slot, rows: u32, cols: u32 },
    Exp(Slot),
    Tanh(Slot),
    Relu(Slot),
    Cos(Slot),
    Sin(Slot),
    Recip(Slot),
    /// Sum of all entries, scalar output.
    Sum(Slot),
    Dot(Slot, Slot),
    /// min(x, c); zero subgradient where x > c.
    MinConst(Slot, f64),
    /// max(x, c); zero subgradient where x < c.
    MaxConst(Slot, f64),
    /// Scalar U(x)/T; backward routes through the analytic gradient.
    EnergyVal(Slot),
    /// Vector grad U(x)/T; backward routes through the analytic HVP.
    EnergyGrad(Slot),
}

struct Node {
    off: u32,
    len: u32,
    op: Op,
}

pub struct Tape {
    vals: Vec<f64>,
    nodes: Vec<Node>,
    n_params: usize,
    energy: Option<EnergyModel>,
}

impl Tape {
    /// `n_params` is the length of the flat parameter vector gradients are
    /// accumulated into; `energy` is required only if energy hooks are used.
    pub fn new(n_params: usize, energy: Option<EnergyModel>) -> Self {
        Tape { vals: Vec::new(), nodes: Vec::new(), n_params, energy }
    }

    /// Drop all recorded nodes, keeping allocations for reuse.
    pub fn reset(&mut self) {
        self.vals.clear();
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, s: Slot) -> &[f64] {
        let n = &self.nodes[s.0 as usize];
        &self.vals[n.off as usize..(n.off + n.len) as usize]
    }

    /// Smallest distance of any relu or clamp input to its kink. The
    /// recorded function is non-smooth there, so finite-difference probes
    /// are only trustworthy when this is much larger than the probe step.
    pub fn min_kink_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for node in &self.nodes {
            let threshold = match node.op {
                Op::Relu(_) => 0.0,
                Op::MinConst(_, c) | Op::MaxConst(_, c) => c,
                _ => continue,
            };
            let input = match node.op {
                Op::Relu(a) | Op::MinConst(a, _) | Op::MaxConst(a, _) => a,
                _ => unreachable!(),
            };
            let (off, len) = self.range(input);
            for &v in &self.vals[off..off + len] {
                min = min.min((v - threshold).abs());
            }
        }
        min
    }

    pub fn scalar(&self, s: Slot) -> f64 {
        let v = self.value(s);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    fn push(&mut self, len: usize, op: Op) -> Slot {
        let off = self.vals.len() as u32;
        self.vals.resize(self.vals.len() + len, 0.0);
        self.nodes.push(Node { off, len: len as u32, op });
        Slot((self.nodes.len() - 1) as u32)
    }

    /// Output slice of a freshly pushed node plus read access to earlier values.
    fn out_and_prev(&mut self, s: Slot) -> (&mut [f64], &[f64]) {
        let n = &self.nodes[s.0 as usize];
        let (off, len) = (n.off as usize, n.len as usize);
        let (prev, rest) = self.vals.split_at_mut(off);
        (&mut rest[..len], prev)
    }

    fn range(&self, s: Slot) -> (usize, usize) {
        let n = &self.nodes[s.0 as usize];
        (n.off as usize, n.len as usize)
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    /// Record a parameter segment as a differentiable leaf.
    pub fn param(&mut self, theta: &[f64], offset: usize, len: usize) -> Slot {
        let s = self.push(len, Op::Param { offset: offset as u32 });
        let (out, _) = self.out_and_prev(s);
        out.copy_from_slice(&theta[offset..offset + len]);
        s
    }

    /// Record a constant leaf (no gradient flows into it).
    pub fn constant(&mut self, values: &[f64]) -> Slot {
        let s = self.push(values.len(), Op::Const);
        let (out, _) = self.out_and_prev(s);
        out.copy_from_slice(values);
        s
    }

    pub fn constant_scalar(&mut self, value: f64) -> Slot {
        self.constant(&[value])
    }

    // ── Arithmetic ──────────────────────────────────────────────────────

    pub fn add(&mut self, a: Slot, b: Slot) -> Slot {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Slot, b: Slot) -> Slot {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Slot, b: Slot) -> Slot {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn binary(&mut self, a: Slot, b: Slot, op: Op, f: impl Fn(f64, f64) -> f64) -> Slot {
        let (ao, alen) = self.range(a);
        let (bo, blen) = self.range(b);
        assert_eq!(alen, blen, "binary op on mismatched lengths");
        let s = self.push(alen, op);
        let (out, prev) = self.out_and_prev(s);
        for i in 0..alen {
            out[i] = f(prev[ao + i], prev[bo + i]);
        }
        s
    }

    pub fn scale(&mut self, a: Slot, c: f64) -> Slot {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn scalar_mul(&mut self, scalar: Slot, vector: Slot) -> Slot {
        let (so, slen) = self.range(scalar);
        assert_eq!(slen, 1, "scalar_mul needs a scalar first argument");
        let (vo, vlen) = self.range(vector);
        let s = self.push(vlen, Op::ScalarMul { s: scalar, v: vector });
        let (out, prev) = self.out_and_prev(s);
        let c = prev[so];
        for i in 0..vlen {
            out[i] = c * prev[vo + i];
        }
        s
    }

    pub fn matvec(&mut self, w: Slot, x: Slot, rows: usize, cols: usize) -> Slot {
        let (wo, wlen) = self.range(w);
        let (xo, xlen) = self.range(x);
        assert_eq!(wlen, rows * cols, "weight node length != rows*cols");
        assert_eq!(xlen, cols, "matvec input length != cols");
        let s = self.push(rows, Op::MatVec { w, x, rows: rows as u32, cols: cols as u32 });
        let (out, prev) = self.out_and_prev(s);
        for r in 0..rows {
            let row = &prev[wo + r * cols..wo + (r + 1) * cols];
            let xv = &prev[xo..xo + cols];
            out[r] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        s
    }

    fn unary(&mut self, a: Slot, op: Op, f: impl Fn(f64) -> f64) -> Slot {
        let (ao, alen) = self.range(a);
        let s = self.push(alen, op);
        let (out, prev) = self.out_and_prev(s);
        for i in 0..alen {
            out[i] = f(prev[ao + i]);
        }
        s
    }

    pub fn exp(&mut self, a: Slot) -> Slot {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn tanh(&mut self, a: Slot) -> Slot {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Slot) -> Slot {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn cos(&mut self, a: Slot) -> Slot {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn sin(&mut self, a: Slot) -> Slot {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn recip(&mut self, a: Slot) -> Slot {
        self.unary(a, Op::Recip(a), f64::recip)
    }

    pub fn sum(&mut self, a: Slot) -> Slot {
        let (ao, alen) = self.range(a);
        let s = self.push(1, Op::Sum(a));
        let (out, prev) = self.out_and_prev(s);
        out[0] = prev[ao..ao + alen].iter().sum();
        s
    }

    pub fn dot(&mut self, a: Slot, b: Slot) -> Slot {
        let (ao, alen) = self.range(a);
        let (bo, blen) = self.range(b);
        assert_eq!(alen, blen, "dot on mismatched lengths");
        let s = self.push(1, Op::Dot(a, b));
        let (out, prev) = self.out_and_prev(s);
        out[0] = (0..alen).map(|i| prev[ao + i] * prev[bo + i]).sum();
        s
    }

    /// min(x, c); note f64::min drops NaN in favor of c.
    pub fn min_const(&mut self, a: Slot, c: f64) -> Slot {
        self.unary(a, Op::MinConst(a, c), |x| x.min(c))
    }

    /// max(x, c); note f64::max drops NaN in favor of c.
    pub fn max_const(&mut self, a: Slot, c: f64) -> Slot {
        self.unary(a, Op::MaxConst(a, c), |x| x.max(c))
    }

    // ── Energy hooks ────────────────────────────────────────────────────

    pub fn energy_val(&mut self, x: Slot) -> Result<Slot, TapeError> {
        let energy = self.energy.clone().ok_or(TapeError::MissingEnergy)?;
        let (xo, xlen) = self.range(x);
        let u = energy.energy(&self.vals[xo..xo + xlen])?;
        let s = self.push(1, Op::EnergyVal(x));
        let (out, _) = self.out_and_prev(s);
        out[0] = u;
        Ok(s)
    }

    pub fn energy_grad(&mut self, x: Slot) -> Result<Slot, TapeError> {
        let energy = self.energy.clone().ok_or(TapeError::MissingEnergy)?;
        let (xo, xlen) = self.range(x);
        let g = energy.grad(&self.vals[xo..xo + xlen])?;
        let s = self.push(xlen, Op::EnergyGrad(x));
        let (out, _) = self.out_and_prev(s);
        out.copy_from_slice(&g);
        Ok(s)
    }

    // ── Reverse sweep ───────────────────────────────────────────────────

    /// Gradient of the scalar at `root` with respect to the flat parameters.
    ///
    /// Nodes recorded after `root` cannot influence it and receive zero
    /// adjoints; every node is visited exactly once in reverse order.
    pub fn gradient(&self, root: Slot) -> Result<Vec<f64>, TapeError> {
        let root_node = &self.nodes[root.0 as usize];
        if root_node.len != 1 {
            return Err(TapeError::RootNotScalar(root_node.len as usize));
        }
        let mut adj = vec![0.0; self.vals.len()];
        adj[root_node.off as usize] = 1.0;
        let mut grads = vec![0.0; self.n_params];

        for idx in (0..=root.0 as usize).rev() {
            let node = &self.nodes[idx];
            let (off, len) = (node.off as usize, node.len as usize);
            if adj[off..off + len].iter().all(|&a| a == 0.0) {
                continue;
            }
            match node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    let o = offset as usize;
                    for i in 0..len {
                        grads[o + i] += adj[off + i];
                    }
                }
                Op::Add(a, b) => {
                    let (ao, _) = self.range(a);
                    let (bo, _) = self.range(b);
                    for i in 0..len {
                        let d = adj[off + i];
                        adj[ao + i] += d;
                        adj[bo + i] += d;
                    }
                }
                Op::Sub(a, b) => {
                    let (ao, _) = self.range(a);
                    let (bo, _) = self.range(b);
                    for i in 0..len {
                        let d = adj[off + i];
                        adj[ao + i] += d;
                        adj[bo + i] -= d;
                    }
                }
                Op::Mul(a, b) => {
                    let (ao, _) = self.range(a);
                    let (bo, _) = self.range(b);
                    for i in 0..len {
                        let d = adj[off + i];
                        adj[ao + i] += d * self.vals[bo + i];
                        adj[bo + i] += d * self.vals[ao + i];
                    }
                }
                Op::Scale(a, c) => {
                    let (ao, _) = self.range(a);
                    for i in 0..len {
                        adj[ao + i] += c * adj[off + i];
                    }
                }
                Op::ScalarMul { s, v } => {
                    let (so, _) = self.range(s);
                    let (vo, _) = self.range(v);
                    let c = self.vals[so];
                    for i in 0..len {
                        let d = adj[off + i];
                        adj[so] += d * self.vals[vo + i];
                        adj[vo + i] += c * d;
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (rows, cols) = (rows as usize, cols as usize);
                    let (wo, _) = self.range(w);
                    let (xo, _) = self.range(x);
                    for r in 0..rows {
                        let d = adj[off + r];
                        if d == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            adj[wo + r * cols + c] += d * self.vals[xo + c];
                            adj[xo + c] += d * self.vals[wo + r * cols + c];
                        }
                    }
                }
                Op::Exp(a) => {
                    let (ao, _) = self.range(a);
                    for i in 0..len {
                        adj[ao + i] += adj[off + i] * self.vals[off + i];
                    }
                }
                Op::Tanh(a) => {
                    let (ao, _) = self.range(a);
                    for i in 0..len {
                        let y = self.vals[off + i];
                        adj[ao + i] += adj[off + i] * (1.0 - y * y);
                    }
                }
                Op::Relu(a) => {
                    let (ao, _) = self.range(a);
                    for i in 0..len {
                        if self.vals[ao + i] > 0.0 {
                            adj[ao + i] += adj[off + i];
                        }
                    }
                }
                Op::Cos(a) => {
                    let (ao, _) = self.range(a);
                    for i in 0..len {
                        adj[ao + i] -= adj[off + i] * self.vals[ao + i].sin();
                    }
                }
                Op::Sin(a) => {
                    let (ao, _) = self.range(a);
                    for i in 0..len {
                        adj[ao + i] += adj[off + i] * self.vals[ao + i].cos();
                    }
                }
                Op::Recip(a) => {
                    let (ao, _) = self.range(a);
                    for i in 0..len {
                        let y = self.vals[off + i];
                        adj[ao + i] -= adj[off + i] * y * y;
                    }
                }
                Op::Sum(a) => {
                    let (ao, alen) = self.range(a);
                    let d = adj[off];
                    for i in 0..alen {
                        adj[ao + i] += d;
                    }
                }
                Op::Dot(a, b) => {
                    let (ao, alen) = self.range(a);
                    let (bo, _) = self.range(b);
                    let d = adj[off];
                    for i in 0..alen {
                        adj[ao + i] += d * self.vals[bo + i];
                        adj[bo + i] += d * self.vals[ao + i];
                    }
                }
                Op::MinConst(a, c) => {
                    let (ao, _) = self.range(a);
                    for i in 0..len {
                        if self.vals[ao + i] <= c {
                            adj[ao + i] += adj[off + i];
                        }
                    }
                }
                Op::MaxConst(a, c) => {
                    let (ao, _) = self.range(a);
                    for i in 0..len {
                        if self.vals[ao + i] >= c {
                            adj[ao + i] += adj[off + i];
                        }
                    }
                }
                Op::EnergyVal(x) => {
                    let energy = self.energy.as_ref().ok_or(TapeError::MissingEnergy)?;
                    let (xo, xlen) = self.range(x);
                    let g = energy.grad(&self.vals[xo..xo + xlen])?;
                    let d = adj[off];
                    for i in 0..xlen {
                        adj[xo + i] += d * g[i];
                    }
                }
                Op::EnergyGrad(x) => {
                    let energy = self.energy.as_ref().ok_or(TapeError::MissingEnergy)?;
                    let (xo, xlen) = self.range(x);
                    let ybar = &adj[off..off + xlen];
                    let h = energy.hvp(&self.vals[xo..xo + xlen], ybar)?;
                    for i in 0..xlen {
                        adj[xo + i] += h[i];
                    }
                }
            }
        }
        Ok(grads)
    }
}
