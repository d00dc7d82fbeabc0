//! Reverse-mode differentiation over a define-by-run scalar tape.
//!
//! Every node is a scalar. A node stores its value, the indices of its parents
//! and the local partial derivative with respect to each parent, so the
//! backward sweep is a single reverse pass of multiply-accumulates. Parents
//! always precede their children, which makes the node order a topological
//! order by construction.
//!
//! Besides the elementary operations, the tape supports n-ary scalar nodes
//! (linear combinations, dot products, log-sum-exp) and *blocks*: a contiguous
//! run of output nodes produced by an opaque kernel that supplies its own
//! vector-Jacobian product. Blocks are how dense network layers are evaluated
//! for a whole batch at once.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// The node `offset` positions after this one.
    pub fn offset(self, offset: usize) -> Var {
        Var(self.0 + offset as u32)
    }
}

/// Operation recorded for a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Tanh,
    Elu,
    Square,
    Max0,
    /// Symmetric clamp to `[-bound, bound]`.
    Clamp,
    /// `Σ c_i x_i + offset`; the coefficients are the stored partials.
    LinComb,
    /// `Σ a_i b_i` over interleaved parent pairs.
    Dot,
    LogSumExp,
    /// Output of an opaque block.
    Block,
}

/// Elementary operations addressable through [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Tanh,
    Elu,
    Square,
    Max0,
}

impl ScalarOp {
    pub fn arity(self) -> usize {
        match self {
            ScalarOp::Add | ScalarOp::Sub | ScalarOp::Mul | ScalarOp::Div => 2,
            _ => 1,
        }
    }
}

/// Vector-Jacobian product of an opaque block.
///
/// `out_adjoint` holds the adjoints of the block's outputs; `adjoint` is the
/// adjoint buffer for every node created before the block, into which the
/// block accumulates.
pub trait BlockVjp {
    fn backward(&self, out_adjoint: &[f64], adjoint: &mut [f64]);
}

struct BlockRecord {
    first: usize,
    len: usize,
    vjp: Box<dyn BlockVjp>,
}

/// A contiguous run of parameter leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamRange {
    pub start: Var,
    pub len: usize,
}

impl ParamRange {
    pub fn get(&self, i: usize) -> Var {
        debug_assert!(i < self.len);
        self.start.offset(i)
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else if x < -0.25 {
        x.exp() - 1.0
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Exponential linear unit, `x` for `x ≥ 0` and `e^x − 1` otherwise.
pub fn elu_value(x: f64) -> f64 {
    elu(x)
}

/// Derivative of [`elu_value`], taking the value 1 at 0.
pub fn elu_derivative(x: f64) -> f64 {
    elu_grad(x)
}

/// Scalar computation tape.
#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<f64>,
    aux: Vec<f64>,
    edge_end: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    params: Vec<u32>,
    blocks: Vec<BlockRecord>,
    adjoint: Vec<f64>,
    scratch: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drop all nodes, keeping allocations for the next iteration.
    pub fn clear(&mut self) {
        self.ops.clear();
        self.values.clear();
        self.aux.clear();
        self.edge_end.clear();
        self.parents.clear();
        self.partials.clear();
        self.params.clear();
        self.blocks.clear();
        self.adjoint.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    pub fn op(&self, v: Var) -> Op {
        self.ops[v.index()]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Parents of `v` with their local partials.
    pub fn edges(&self, v: Var) -> impl Iterator<Item = (Var, f64)> + '_ {
        let (lo, hi) = self.edge_range(v.index());
        self.parents[lo..hi]
            .iter()
            .zip(&self.partials[lo..hi])
            .map(|(&p, &d)| (Var(p), d))
    }

    #[inline]
    fn edge_range(&self, i: usize) -> (usize, usize) {
        let lo = if i == 0 { 0 } else { self.edge_end[i - 1] as usize };
        (lo, self.edge_end[i] as usize)
    }

    #[inline]
    fn push(&mut self, op: Op, value: f64, aux: f64) -> Var {
        let id = self.values.len();
        self.ops.push(op);
        self.values.push(value);
        self.aux.push(aux);
        self.edge_end.push(self.parents.len() as u32);
        Var(id as u32)
    }

    #[inline]
    fn edge(&mut self, parent: Var, partial: f64) {
        self.parents.push(parent.0);
        self.partials.push(partial);
    }

    #[inline]
    fn seal(&mut self) {
        *self.edge_end.last_mut().expect("node") = self.parents.len() as u32;
    }

    #[inline]
    fn unary(&mut self, op: Op, a: Var, value: f64, partial: f64, aux: f64) -> Var {
        let v = self.push(op, value, aux);
        self.edge(a, partial);
        self.seal();
        v
    }

    #[inline]
    fn binary(&mut self, op: Op, a: Var, da: f64, b: Var, db: f64, value: f64) -> Var {
        let v = self.push(op, value, 0.0);
        self.edge(a, da);
        self.edge(b, db);
        self.seal();
        v
    }

    /// A constant leaf. Its adjoint is still available after [`Tape::backward`].
    pub fn lift(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, value, 0.0)
    }

    /// A leaf registered as a parameter; [`Tape::backward`] reports its gradient.
    pub fn param(&mut self, value: f64) -> Var {
        let v = self.lift(value);
        self.params.push(v.0);
        v
    }

    /// Register a contiguous run of parameter leaves.
    pub fn params(&mut self, values: &[f64]) -> ParamRange {
        let start = Var(self.values.len() as u32);
        for &x in values {
            self.param(x);
        }
        ParamRange { start, len: values.len() }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.binary(Op::Add, a, 1.0, b, 1.0, v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.binary(Op::Sub, a, 1.0, b, -1.0, v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.binary(Op::Mul, a, y, b, x, x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if y == 0.0 || !y.is_finite() {
            return Err(Error::NonFiniteValue { node: self.len() });
        }
        Ok(self.binary(Op::Div, a, 1.0 / y, b, -x / (y * y), x / y))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(Op::Neg, a, -x, -1.0, 0.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let e = self.value(a).exp();
        self.unary(Op::Exp, a, e, e, 0.0)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::NonFiniteValue { node: self.len() });
        }
        Ok(self.unary(Op::Ln, a, x.ln(), 1.0 / x, 0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).tanh();
        self.unary(Op::Tanh, a, t, 1.0 - t * t, 0.0)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(Op::Elu, a, elu(x), elu_grad(x), 0.0)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(Op::Square, a, x * x, 2.0 * x, 0.0)
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn max0(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x > 0.0 {
            self.unary(Op::Max0, a, x, 1.0, 0.0)
        } else {
            self.unary(Op::Max0, a, 0.0, 0.0, 0.0)
        }
    }

    /// Clamp to `[-bound, bound]`; zero gradient outside.
    pub fn clamp(&mut self, a: Var, bound: f64) -> Var {
        let x = self.value(a);
        if x > bound {
            self.unary(Op::Clamp, a, bound, 0.0, bound)
        } else if x < -bound {
            self.unary(Op::Clamp, a, -bound, 0.0, bound)
        } else {
            self.unary(Op::Clamp, a, x, 1.0, bound)
        }
    }

    /// `c · a`.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.lincomb(&[(a, c)], 0.0)
    }

    /// `a + c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.lincomb(&[(a, 1.0)], c)
    }

    /// `Σ c_i x_i + offset`.
    pub fn lincomb(&mut self, terms: &[(Var, f64)], offset: f64) -> Var {
        let mut acc = 0.0;
        for &(x, c) in terms {
            acc += c * self.value(x);
        }
        let v = self.push(Op::LinComb, acc + offset, offset);
        for &(x, c) in terms {
            self.edge(x, c);
        }
        self.seal();
        v
    }

    /// `Σ x_i`.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let mut acc = 0.0;
        for &x in xs {
            acc += self.value(x);
        }
        let v = self.push(Op::LinComb, acc, 0.0);
        for &x in xs {
            self.edge(x, 1.0);
        }
        self.seal();
        v
    }

    /// `(1/n) Σ x_i`.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let w = 1.0 / xs.len() as f64;
        let mut acc = 0.0;
        for &x in xs {
            acc += w * self.value(x);
        }
        let v = self.push(Op::LinComb, acc, 0.0);
        for &x in xs {
            self.edge(x, w);
        }
        self.seal();
        Ok(v)
    }

    /// `Σ a_i b_i`.
    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let mut acc = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            acc += self.value(x) * self.value(y);
        }
        let v = self.push(Op::Dot, acc, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (vx, vy) = (self.value(x), self.value(y));
            self.edge(x, vy);
            self.edge(y, vx);
        }
        self.seal();
        v
    }

    /// `log Σ exp(x_i)` evaluated with a max shift.
    pub fn logsumexp(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "logsumexp of nothing");
        let max = xs
            .iter()
            .map(|&x| self.value(x))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.clear();
        scratch.extend(xs.iter().map(|&x| (self.value(x) - max).exp()));
        let s: f64 = scratch.iter().sum();
        let lse = max + s.ln();
        let v = self.push(Op::LogSumExp, lse, 0.0);
        for (&x, e) in xs.iter().zip(&scratch) {
            self.edge(x, e / s);
        }
        self.scratch = scratch;
        self.seal();
        v
    }

    /// Apply an elementary operation by kind. Any non-finite result is an error.
    pub fn apply(&mut self, op: ScalarOp, operands: &[Var]) -> Result<Var> {
        if operands.len() != op.arity() {
            return Err(Error::InvalidInput(format!(
                "{op:?} takes {} operands, got {}",
                op.arity(),
                operands.len()
            )));
        }
        let a = operands[0];
        let v = match op {
            ScalarOp::Add => self.add(a, operands[1]),
            ScalarOp::Sub => self.sub(a, operands[1]),
            ScalarOp::Mul => self.mul(a, operands[1]),
            ScalarOp::Div => self.div(a, operands[1])?,
            ScalarOp::Neg => self.neg(a),
            ScalarOp::Exp => self.exp(a),
            ScalarOp::Ln => self.ln(a)?,
            ScalarOp::Tanh => self.tanh(a),
            ScalarOp::Elu => self.elu(a),
            ScalarOp::Square => self.square(a),
            ScalarOp::Max0 => self.max0(a),
        };
        if !self.value(v).is_finite() {
            return Err(Error::NonFiniteValue { node: v.index() });
        }
        Ok(v)
    }

    /// Append the outputs of an opaque block; returns the first output node.
    /// The outputs occupy `outputs.len()` consecutive nodes.
    pub fn block(&mut self, outputs: &[f64], vjp: Box<dyn BlockVjp>) -> Var {
        let first = self.values.len();
        for &y in outputs {
            self.push(Op::Block, y, 0.0);
        }
        self.blocks.push(BlockRecord { first, len: outputs.len(), vjp });
        Var(first as u32)
    }

    /// Reverse sweep from `output`. Returns the gradient with respect to every
    /// registered parameter, in registration order. Adjoints of all other
    /// nodes remain readable through [`Tape::adjoint`].
    pub fn backward(&mut self, output: Var) -> Vec<f64> {
        let n = output.index() + 1;
        self.adjoint.clear();
        self.adjoint.resize(self.values.len(), 0.0);
        self.adjoint[output.index()] = 1.0;

        let mut next_block = self
            .blocks
            .iter()
            .rposition(|b| b.first < n)
            .map(|i| i as isize)
            .unwrap_or(-1);

        for i in (0..n).rev() {
            match self.ops[i] {
                Op::Leaf => {}
                Op::Block => {
                    let rec = &self.blocks[next_block as usize];
                    if i == rec.first {
                        let (below, rest) = self.adjoint.split_at_mut(rec.first);
                        rec.vjp.backward(&rest[..rec.len], below);
                        next_block -= 1;
                    }
                }
                _ => {
                    let g = self.adjoint[i];
                    if g == 0.0 {
                        continue;
                    }
                    let (lo, hi) = self.edge_range(i);
                    for k in lo..hi {
                        self.adjoint[self.parents[k] as usize] += g * self.partials[k];
                    }
                }
            }
        }
        self.params.iter().map(|&p| self.adjoint[p as usize]).collect()
    }

    /// Adjoint of `v` from the most recent [`Tape::backward`].
    pub fn adjoint(&self, v: Var) -> f64 {
        self.adjoint.get(v.index()).copied().unwrap_or(0.0)
    }

    /// Re-evaluate every scalar node from its parents' stored values and
    /// return the first node whose stored value differs bitwise.
    pub fn replay_mismatch(&self) -> Option<usize> {
        for i in 0..self.len() {
            let (lo, hi) = self.edge_range(i);
            let p: Vec<f64> = self.parents[lo..hi]
                .iter()
                .map(|&j| self.values[j as usize])
                .collect();
            let c = &self.partials[lo..hi];
            let recomputed = match self.ops[i] {
                Op::Leaf | Op::Block => continue,
                Op::Add => p[0] + p[1],
                Op::Sub => p[0] - p[1],
                Op::Mul => p[0] * p[1],
                Op::Div => p[0] / p[1],
                Op::Neg => -p[0],
                Op::Exp => p[0].exp(),
                Op::Ln => p[0].ln(),
                Op::Tanh => p[0].tanh(),
                Op::Elu => elu(p[0]),
                Op::Square => p[0] * p[0],
                Op::Max0 => {
                    if p[0] > 0.0 {
                        p[0]
                    } else {
                        0.0
                    }
                }
                Op::Clamp => p[0].clamp(-self.aux[i], self.aux[i]),
                Op::LinComb => {
                    let mut acc = 0.0;
                    for (x, w) in p.iter().zip(c) {
                        acc += w * x;
                    }
                    acc + self.aux[i]
                }
                Op::Dot => {
                    let mut acc = 0.0;
                    for pair in p.chunks(2) {
                        acc += pair[0] * pair[1];
                    }
                    acc
                }
                Op::LogSumExp => {
                    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = p.iter().map(|x| (x - max).exp()).sum();
                    max + s.ln()
                }
            };
            if recomputed.to_bits() != self.values[i].to_bits() {
                return Some(i);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_reads_back() {
        let mut t = Tape::new();
        let x = t.lift(3.0);
        assert_eq!(t.value(x), 3.0);
    }

    #[test]
    fn identity_derivative() {
        let mut t = Tape::new();
        let x = t.param(0.0);
        assert_eq!(t.backward(x), vec![1.0]);
    }

    #[test]
    fn elu_negative_closed_form() {
        let mut t = Tape::new();
        let x = t.param(-1.0);
        let y = t.elu(x);
        assert!((t.value(y) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        assert!((t.backward(y)[0] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn elu_subgradient_at_zero_is_one() {
        let mut t = Tape::new();
        let x = t.param(0.0);
        let y = t.elu(x);
        assert_eq!(t.backward(y), vec![1.0]);
    }

    #[test]
    fn max0_negative_and_zero() {
        let mut t = Tape::new();
        let x = t.param(-0.5);
        let y = t.max0(x);
        assert_eq!(t.value(y), 0.0);
        assert_eq!(t.backward(y), vec![0.0]);

        let mut t = Tape::new();
        let x = t.param(0.0);
        let y = t.max0(x);
        assert_eq!(t.backward(y), vec![0.0]);
    }

    #[test]
    fn power_rule() {
        let mut t = Tape::new();
        let x = t.param(3.0);
        let y = t.mul(x, x);
        assert_eq!(t.backward(y), vec![6.0]);
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let a = t.param(2.0);
        let b = t.param(5.0);
        let y = t.mul(a, b);
        assert_eq!(t.backward(y), vec![5.0, 2.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.param(0.0);
        let e1 = t.exp(x);
        let e2 = t.exp(x);
        let y = t.add(e1, e2);
        assert_eq!(t.backward(y), vec![2.0]);
    }

    #[test]
    fn non_parameter_leaf_has_adjoint() {
        let mut t = Tape::new();
        let c = t.lift(4.0);
        let p = t.param(2.0);
        let y = t.mul(c, p);
        t.backward(y);
        assert_eq!(t.adjoint(c), 2.0);
    }

    #[test]
    fn domain_errors_carry_node_index() {
        let mut t = Tape::new();
        let a = t.lift(-1.0);
        let z = t.lift(0.0);
        match t.ln(a) {
            Err(Error::NonFiniteValue { node }) => assert_eq!(node, 2),
            other => panic!("expected NonFiniteValue, got {other:?}"),
        }
        assert!(matches!(t.div(a, z), Err(Error::NonFiniteValue { .. })));
        assert!(matches!(
            t.apply(ScalarOp::Ln, &[z]),
            Err(Error::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn apply_dispatches_by_kind() {
        let mut t = Tape::new();
        let a = t.param(0.5);
        let b = t.param(2.0);
        let y = t.apply(ScalarOp::Div, &[a, b]).unwrap();
        assert_eq!(t.value(y), 0.25);
        let g = t.backward(y);
        assert_eq!(g, vec![0.5, -0.125]);
        assert!(t.apply(ScalarOp::Exp, &[a, b]).is_err());
    }

    #[test]
    fn clamp_saturates() {
        let mut t = Tape::new();
        let x = t.param(12.0);
        let y = t.clamp(x, 10.0);
        assert_eq!(t.value(y), 10.0);
        assert_eq!(t.backward(y), vec![0.0]);
    }

    #[test]
    fn logsumexp_is_stable_and_has_softmax_gradient() {
        let mut t = Tape::new();
        let a = t.param(1000.0);
        let b = t.param(1000.0);
        let y = t.logsumexp(&[a, b]);
        assert!((t.value(y) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let g = t.backward(y);
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dot_and_lincomb() {
        let mut t = Tape::new();
        let a = t.param(2.0);
        let b = t.param(3.0);
        let c = t.param(-1.0);
        let d = t.dot(&[a, b], &[b, c]);
        assert_eq!(t.value(d), 3.0);
        let y = t.lincomb(&[(d, 2.0), (a, 1.0)], 0.5);
        assert_eq!(t.value(y), 8.5);
        assert_eq!(t.backward(y), vec![2.0 * 3.0 + 1.0, 2.0 * (2.0 - 1.0), 2.0 * 3.0]);
    }

    struct Doubler {
        input: usize,
    }

    impl BlockVjp for Doubler {
        fn backward(&self, out_adjoint: &[f64], adjoint: &mut [f64]) {
            adjoint[self.input] += 2.0 * out_adjoint[0] + 3.0 * out_adjoint[1];
        }
    }

    #[test]
    fn block_vjp_runs_once_outputs_are_complete() {
        let mut t = Tape::new();
        let x = t.param(1.5);
        let first = t.block(&[3.0, 4.5], Box::new(Doubler { input: x.index() }));
        let second = first.offset(1);
        let s = t.add(first, second);
        let y = t.mul(s, first);
        // y = (2x + 3x) * 2x = 10x², dy/dx = 20x
        assert_eq!(t.value(y), 22.5);
        assert_eq!(t.backward(y), vec![30.0]);
    }

    #[test]
    fn replay_reproduces_values() {
        let mut t = Tape::new();
        let a = t.param(0.3);
        let b = t.param(-1.7);
        let c = t.mul(a, b);
        let d = t.elu(c);
        let e = t.tanh(d);
        let f = t.logsumexp(&[a, b, e]);
        let g = t.clamp(f, 0.5);
        let h = t.dot(&[a, g], &[b, f]);
        let _ = t.lincomb(&[(h, 0.25), (a, -3.0)], 1.0);
        assert_eq!(t.replay_mismatch(), None);
    }

    #[test]
    fn clear_reuses_tape() {
        let mut t = Tape::new();
        let x = t.param(1.0);
        let y = t.square(x);
        t.backward(y);
        t.clear();
        assert!(t.is_empty());
        let x = t.param(2.0);
        let y = t.square(x);
        assert_eq!(t.backward(y), vec![4.0]);
    }
}
