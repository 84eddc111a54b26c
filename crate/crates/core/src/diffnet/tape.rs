//! Reverse-mode differentiation on a Wengert list.
//!
//! The tape records scalar operations with their local partials; a backward
//! sweep from any recorded variable yields exact adjoints for every node.
//! Instantiated with [`Dual`](super::real::Dual) scalars and parameter
//! tangents seeded along a direction `v`, the tangent part of the swept
//! gradient is the exact Hessian-vector product `H v` — the Hessian itself
//! is never materialized.
//!
//! Typical batch usage marks the parameter nodes once, then repeatedly
//! truncates back to them with [`Tape::rewind`] while looping over samples.

use super::real::Real;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node<S> {
    parent0: u32,
    parent1: u32,
    partial0: S,
    partial1: S,
}

/// Handle to a recorded scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    /// Position in the tape; leaves recorded first occupy the first slots.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Recording arena for one scalar computation.
pub struct Tape<S: Real> {
    nodes: Vec<Node<S>>,
    values: Vec<S>,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `keep`; the handles of the
    /// surviving nodes stay valid.
    pub fn rewind(&mut self, keep: usize) {
        self.nodes.truncate(keep);
        self.values.truncate(keep);
    }

    pub fn value(&self, var: Var) -> S {
        self.values[var.0 as usize]
    }

    fn push(&mut self, value: S, node: Node<S>) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(node);
        self.values.push(value);
        Var(id)
    }

    /// Records a leaf (parameter or per-sample constant).
    pub fn leaf(&mut self, value: S) -> Var {
        self.push(value, Node { parent0: NONE, parent1: NONE, partial0: S::zero(), partial1: S::zero() })
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(S::from_f64(value))
    }

    fn unary(&mut self, parent: Var, value: S, partial: S) -> Var {
        self.push(value, Node { parent0: parent.0, parent1: NONE, partial0: partial, partial1: S::zero() })
    }

    fn binary(&mut self, a: Var, b: Var, value: S, pa: S, pb: S) -> Var {
        self.push(value, Node { parent0: a.0, parent1: b.0, partial0: pa, partial1: pb })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, S::one(), S::one())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.binary(a, b, v, S::one(), -S::one())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.binary(a, b, va * vb, vb, va)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let v = va / vb;
        self.binary(a, b, v, S::one() / vb, -va / (vb * vb))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a);
        self.unary(a, -v, -S::one())
    }

    /// `a + c` for a plain constant.
    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + S::from_f64(c);
        self.unary(a, v, S::one())
    }

    /// `c * a` for a plain constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = S::from_f64(c);
        let v = self.value(a) * k;
        self.unary(a, v, k)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let va = self.value(a);
        self.unary(a, va * va, S::from_f64(2.0) * va)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.unary(a, v, v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let va = self.value(a);
        self.unary(a, va.ln(), S::one() / va)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let th = self.value(a).tanh();
        self.unary(a, th, S::one() - th * th)
    }

    /// Clamp with zero partial outside the interval (subgradient choice).
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let va = self.value(a);
        let p = va.primal();
        if p < lo {
            self.unary(a, S::from_f64(lo), S::zero())
        } else if p > hi {
            self.unary(a, S::from_f64(hi), S::zero())
        } else {
            self.unary(a, va, S::one())
        }
    }

    /// Sums a slice of variables.
    pub fn sum(&mut self, vars: &[Var]) -> Var {
        let mut total = match vars.first() {
            Some(&v) => v,
            None => return self.constant(0.0),
        };
        for &v in &vars[1..] {
            total = self.add(total, v);
        }
        total
    }

    /// Reverse sweep from `output`; `adjoints` is resized to the tape length.
    /// The caller reads off the entries of its leaves of interest.
    pub fn backward_into(&self, output: Var, adjoints: &mut Vec<S>) {
        adjoints.clear();
        adjoints.resize(self.nodes.len(), S::zero());
        adjoints[output.0 as usize] = S::one();
        for i in (0..=output.0 as usize).rev() {
            let a = adjoints[i];
            if a.is_zero() {
                continue;
            }
            let node = &self.nodes[i];
            if node.parent0 != NONE {
                let p0 = node.parent0 as usize;
                adjoints[p0] = adjoints[p0] + node.partial0 * a;
                if node.parent1 != NONE {
                    let p1 = node.parent1 as usize;
                    adjoints[p1] = adjoints[p1] + node.partial1 * a;
                }
            }
        }
    }
}

/// Evaluates `f` and its exact gradient at `at`.
///
/// `f` receives the tape plus one variable per parameter and returns the
/// objective variable.
pub fn value_and_grad<F>(at: &[f64], f: F) -> (f64, Vec<f64>)
where
    F: FnOnce(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = at.iter().map(|&p| tape.leaf(p)).collect();
    let out = f(&mut tape, &vars);
    let mut adj = Vec::new();
    tape.backward_into(out, &mut adj);
    let grad = vars.iter().map(|v| adj[v.0 as usize]).collect();
    (tape.value(out), grad)
}
