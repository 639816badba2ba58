//! Scalar reverse-mode tape with order-2 Taylor jets in the inputs.
//!
//! Every jet component is an ordinary tape node, so a single reverse sweep
//! over the tape yields parameter gradients of anything built from input
//! derivatives (PDE residuals included). The tape is append-only; start a
//! new one (or call [`Tape::clear`]) per batch.
//!
//! ```
//! use meltpinn_core::difftape::{Input, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.seed_input(Input::X, 2.0).unwrap();
//! let sq = tape.jet_mul(&x, &x).unwrap();
//! assert_eq!(tape.value(sq.v), 4.0);
//! assert_eq!(tape.value(sq.d_x), 4.0);
//! assert_eq!(tape.value(sq.d_xx), 2.0);
//! ```

use std::sync::atomic::{AtomicU32, Ordering};

use crate::activation;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Which spatiotemporal input a seed represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    T,
    X,
    Y,
}

/// Order-2 jet in (t, x, y) restricted to the pure second partials in x and y.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2<S> {
    pub v: S,
    pub d_t: S,
    pub d_x: S,
    pub d_y: S,
    pub d_xx: S,
    pub d_yy: S,
}

impl<S: Copy> Jet2<S> {
    pub fn components(&self) -> [S; 6] {
        [self.v, self.d_t, self.d_x, self.d_y, self.d_xx, self.d_yy]
    }

    pub fn from_components(c: [S; 6]) -> Self {
        Jet2 { v: c[0], d_t: c[1], d_x: c[2], d_y: c[3], d_xx: c[4], d_yy: c[5] }
    }

    pub fn map<R>(&self, mut f: impl FnMut(S) -> R) -> Jet2<R> {
        Jet2 {
            v: f(self.v),
            d_t: f(self.d_t),
            d_x: f(self.d_x),
            d_y: f(self.d_y),
            d_xx: f(self.d_xx),
            d_yy: f(self.d_yy),
        }
    }
}

impl Jet2<f64> {
    pub fn constant(c: f64) -> Self {
        Jet2 { v: c, ..Default::default() }
    }

    pub fn seed(which: Input, value: f64) -> Self {
        let mut j = Jet2::constant(value);
        match which {
            Input::T => j.d_t = 1.0,
            Input::X => j.d_x = 1.0,
            Input::Y => j.d_y = 1.0,
        }
        j
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|c| c.is_finite())
    }

    pub fn add(&self, o: &Self) -> Self {
        Jet2 {
            v: self.v + o.v,
            d_t: self.d_t + o.d_t,
            d_x: self.d_x + o.d_x,
            d_y: self.d_y + o.d_y,
            d_xx: self.d_xx + o.d_xx,
            d_yy: self.d_yy + o.d_yy,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    /// Product rule, including (ab)'' = a'' b + 2 a' b' + a b''.
    pub fn mul(&self, o: &Self) -> Self {
        Jet2 {
            v: self.v * o.v,
            d_t: self.d_t * o.v + self.v * o.d_t,
            d_x: self.d_x * o.v + self.v * o.d_x,
            d_y: self.d_y * o.v + self.v * o.d_y,
            d_xx: self.d_xx * o.v + 2.0 * self.d_x * o.d_x + self.v * o.d_xx,
            d_yy: self.d_yy * o.v + 2.0 * self.d_y * o.d_y + self.v * o.d_yy,
        }
    }

    pub fn swish(&self) -> Self {
        let [s, s1, s2, _] = activation::swish_all(self.v);
        Jet2 {
            v: s,
            d_t: s1 * self.d_t,
            d_x: s1 * self.d_x,
            d_y: s1 * self.d_y,
            d_xx: s2 * self.d_x * self.d_x + s1 * self.d_xx,
            d_yy: s2 * self.d_y * self.d_y + s1 * self.d_yy,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Parameter or input; its value is set from outside and can be replayed.
    Leaf,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Scale(u32, f64),
    /// `bias + Σ a_i * b_i`
    Dot { pairs: Vec<(u32, u32)>, bias: Option<u32> },
    Swish(u32),
    /// s'(a), the first sigmoid-auxiliary node.
    SwishD1(u32),
    /// s''(a)
    SwishD2(u32),
    Exp(u32),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: f64,
}

/// Append-only record of scalar operations.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    /// Drops every node. Handles issued before the reset become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[v.index as usize].value
    }

    pub fn jet_value(&self, j: &Jet2<Var>) -> Jet2<f64> {
        j.map(|v| self.value(v))
    }

    fn push(&mut self, op: Op, value: f64) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        self.nodes.push(Node { op, value });
        Var { tape: self.id, index }
    }

    fn check(&self, v: Var) -> Result<u32> {
        if v.tape != self.id || v.index as usize >= self.nodes.len() {
            return Err(Error::Structural(format!(
                "node {} belongs to tape {} but was used on tape {}",
                v.index, v.tape, self.id
            )));
        }
        Ok(v.index)
    }

    /// A leaf whose value may later be changed in [`Tape::replay`].
    pub fn leaf(&mut self, value: f64) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::RejectedInput(format!("non-finite leaf value {value}")));
        }
        Ok(self.push(Op::Leaf, value))
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Const, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (i, j) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[i as usize].value + self.nodes[j as usize].value;
        Ok(self.push(Op::Add(i, j), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (i, j) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[i as usize].value - self.nodes[j as usize].value;
        Ok(self.push(Op::Sub(i, j), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (i, j) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[i as usize].value * self.nodes[j as usize].value;
        Ok(self.push(Op::Mul(i, j), value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let i = self.check(a)?;
        let value = c * self.nodes[i as usize].value;
        Ok(self.push(Op::Scale(i, c), value))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let i = self.check(a)?;
        let value = self.nodes[i as usize].value.exp();
        Ok(self.push(Op::Exp(i), value))
    }

    /// `bias + Σ a_k b_k`, the affine-combine primitive of a dense layer.
    pub fn dot(&mut self, pairs: &[(Var, Var)], bias: Option<Var>) -> Result<Var> {
        let mut idx = Vec::with_capacity(pairs.len());
        let mut acc = 0.0;
        for &(a, b) in pairs {
            let (i, j) = (self.check(a)?, self.check(b)?);
            acc += self.nodes[i as usize].value * self.nodes[j as usize].value;
            idx.push((i, j));
        }
        let bias = bias.map(|b| self.check(b)).transpose()?;
        if let Some(b) = bias {
            acc += self.nodes[b as usize].value;
        }
        Ok(self.push(Op::Dot { pairs: idx, bias }, acc))
    }

    fn unary(&mut self, a: Var, make: fn(u32) -> Op, f: fn(f64) -> f64) -> Result<Var> {
        let i = self.check(a)?;
        let value = f(self.nodes[i as usize].value);
        Ok(self.push(make(i), value))
    }

    pub fn swish(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Swish, activation::swish)
    }

    /// Seeds an input coordinate as a jet: value `value`, unit first partial
    /// in `which`, all other components zero.
    pub fn seed_input(&mut self, which: Input, value: f64) -> Result<Jet2<Var>> {
        if !value.is_finite() {
            return Err(Error::RejectedInput(format!("non-finite input {value}")));
        }
        let v = self.push(Op::Leaf, value);
        let zero = self.constant(0.0);
        let one = self.constant(1.0);
        let mut jet = Jet2 { v, d_t: zero, d_x: zero, d_y: zero, d_xx: zero, d_yy: zero };
        match which {
            Input::T => jet.d_t = one,
            Input::X => jet.d_x = one,
            Input::Y => jet.d_y = one,
        }
        Ok(jet)
    }

    pub fn constant_jet(&mut self, value: f64) -> Jet2<Var> {
        let v = self.constant(value);
        let zero = self.constant(0.0);
        Jet2 { v, d_t: zero, d_x: zero, d_y: zero, d_xx: zero, d_yy: zero }
    }

    pub fn jet_add(&mut self, a: &Jet2<Var>, b: &Jet2<Var>) -> Result<Jet2<Var>> {
        let ac = a.components();
        let bc = b.components();
        let mut out = [ac[0]; 6];
        for k in 0..6 {
            out[k] = self.add(ac[k], bc[k])?;
        }
        Ok(Jet2::from_components(out))
    }

    pub fn jet_mul(&mut self, a: &Jet2<Var>, b: &Jet2<Var>) -> Result<Jet2<Var>> {
        let v = self.mul(a.v, b.v)?;
        let first = |t: &mut Self, da: Var, db: Var| -> Result<Var> {
            let l = t.mul(da, b.v)?;
            let r = t.mul(a.v, db)?;
            t.add(l, r)
        };
        let d_t = first(self, a.d_t, b.d_t)?;
        let d_x = first(self, a.d_x, b.d_x)?;
        let d_y = first(self, a.d_y, b.d_y)?;
        let second = |t: &mut Self, da: Var, db: Var, daa: Var, dbb: Var| -> Result<Var> {
            let l = t.mul(daa, b.v)?;
            let cross = t.mul(da, db)?;
            let cross = t.scale(cross, 2.0)?;
            let r = t.mul(a.v, dbb)?;
            let s = t.add(l, cross)?;
            t.add(s, r)
        };
        let d_xx = second(self, a.d_x, b.d_x, a.d_xx, b.d_xx)?;
        let d_yy = second(self, a.d_y, b.d_y, a.d_yy, b.d_yy)?;
        Ok(Jet2 { v, d_t, d_x, d_y, d_xx, d_yy })
    }

    /// Order-2 chain rule through swish: g(u)' = g' u', g(u)'' = g'' u'^2 + g' u''.
    pub fn jet_swish(&mut self, a: &Jet2<Var>) -> Result<Jet2<Var>> {
        let v = self.swish(a.v)?;
        let s1 = self.unary(a.v, Op::SwishD1, activation::swish_d1)?;
        let s2 = self.unary(a.v, Op::SwishD2, activation::swish_d2)?;
        let d_t = self.mul(s1, a.d_t)?;
        let d_x = self.mul(s1, a.d_x)?;
        let d_y = self.mul(s1, a.d_y)?;
        let second = |t: &mut Self, d: Var, dd: Var| -> Result<Var> {
            let sq = t.mul(d, d)?;
            let l = t.mul(s2, sq)?;
            let r = t.mul(s1, dd)?;
            t.add(l, r)
        };
        let d_xx = second(self, a.d_x, a.d_xx)?;
        let d_yy = second(self, a.d_y, a.d_yy)?;
        Ok(Jet2 { v, d_t, d_x, d_y, d_xx, d_yy })
    }

    /// Gradient of `output` with respect to each leaf in `wrt`.
    ///
    /// The tape is left untouched, so this may be called repeatedly.
    pub fn backward(&self, output: Var, wrt: &[Var]) -> Result<Vec<f64>> {
        let out = self.check(output)? as usize;
        for &w in wrt {
            let i = self.check(w)? as usize;
            if !matches!(self.nodes[i].op, Op::Leaf) {
                return Err(Error::Structural(format!("node {i} is not a leaf")));
            }
        }
        let mut adj = vec![0.0; out + 1];
        adj[out] = 1.0;
        for i in (0..=out).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let val = |k: u32| self.nodes[k as usize].value;
            match &self.nodes[i].op {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    adj[*a as usize] += g;
                    adj[*b as usize] += g;
                }
                Op::Sub(a, b) => {
                    adj[*a as usize] += g;
                    adj[*b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    adj[*a as usize] += g * vb;
                    adj[*b as usize] += g * va;
                }
                Op::Scale(a, c) => adj[*a as usize] += g * c,
                Op::Dot { pairs, bias } => {
                    for &(a, b) in pairs {
                        let (va, vb) = (val(a), val(b));
                        adj[a as usize] += g * vb;
                        adj[b as usize] += g * va;
                    }
                    if let Some(b) = bias {
                        adj[*b as usize] += g;
                    }
                }
                Op::Swish(a) => adj[*a as usize] += g * activation::swish_d1(val(*a)),
                Op::SwishD1(a) => adj[*a as usize] += g * activation::swish_d2(val(*a)),
                Op::SwishD2(a) => adj[*a as usize] += g * activation::swish_d3(val(*a)),
                Op::Exp(a) => adj[*a as usize] += g * self.nodes[i].value,
            }
        }
        Ok(wrt.iter().map(|w| adj.get(w.index as usize).copied().unwrap_or(0.0)).collect())
    }

    /// Recomputes every node from the current leaf values (or from
    /// `overrides`, a list of leaf/value pairs) and returns the node values.
    pub fn replay(&self, overrides: &[(Var, f64)]) -> Result<Vec<f64>> {
        let mut vals: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = |k: &u32| vals[*k as usize];
            let value = match &node.op {
                Op::Leaf | Op::Const => node.value,
                Op::Add(a, b) => v(a) + v(b),
                Op::Sub(a, b) => v(a) - v(b),
                Op::Mul(a, b) => v(a) * v(b),
                Op::Scale(a, c) => c * v(a),
                Op::Dot { pairs, bias } => {
                    let mut acc = 0.0;
                    for (a, b) in pairs {
                        acc += v(a) * v(b);
                    }
                    if let Some(b) = bias {
                        acc += v(b);
                    }
                    acc
                }
                Op::Swish(a) => activation::swish(v(a)),
                Op::SwishD1(a) => activation::swish_d1(v(a)),
                Op::SwishD2(a) => activation::swish_d2(v(a)),
                Op::Exp(a) => v(a).exp(),
            };
            vals.push(value);
            if matches!(node.op, Op::Leaf) {
                let idx = vals.len() - 1;
                for &(var, val) in overrides {
                    if var.tape == self.id && var.index as usize == idx {
                        vals[idx] = val;
                    }
                }
            }
        }
        for &(var, _) in overrides {
            self.check(var)?;
        }
        Ok(vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comps(t: &Tape, j: &Jet2<Var>) -> [f64; 6] {
        t.jet_value(j).components()
    }

    #[test]
    fn seed_definition() {
        let mut t = Tape::new();
        let x = t.seed_input(Input::X, 0.3).unwrap();
        assert_eq!(comps(&t, &x), [0.3, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let tt = t.seed_input(Input::T, 0.0).unwrap();
        assert_eq!(comps(&t, &tt), [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(t.seed_input(Input::Y, f64::NAN), Err(Error::RejectedInput(_))));
    }

    #[test]
    fn product_rule_examples() {
        let mut t = Tape::new();
        let x = t.seed_input(Input::X, 2.0).unwrap();
        let y = t.seed_input(Input::Y, 3.0).unwrap();
        let xy = t.jet_mul(&x, &y).unwrap();
        assert_eq!(comps(&t, &xy), [6.0, 0.0, 3.0, 2.0, 0.0, 0.0]);
        let xx = t.jet_mul(&x, &x).unwrap();
        let c = comps(&t, &xx);
        assert_eq!((c[0], c[2], c[4]), (4.0, 4.0, 2.0));

        let mut t = Tape::new();
        let five = t.constant_jet(5.0);
        let x = t.seed_input(Input::X, 1.0).unwrap();
        let p = t.jet_mul(&five, &x).unwrap();
        assert_eq!(comps(&t, &p), [5.0, 0.0, 5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn swish_jet_examples() {
        let mut t = Tape::new();
        let x = t.seed_input(Input::X, 0.0).unwrap();
        let s = t.jet_swish(&x).unwrap();
        assert_eq!(comps(&t, &s), [0.0, 0.0, 0.5, 0.0, 0.5, 0.0]);

        let c = t.constant_jet(0.0);
        let s = t.jet_swish(&c).unwrap();
        assert_eq!(&comps(&t, &s)[1..], &[0.0; 5]);

        let x = t.seed_input(Input::X, 1.0).unwrap();
        let s = t.jet_swish(&x).unwrap();
        let h = 1e-5;
        let fd = (activation::swish(1.0 + h) - activation::swish(1.0 - h)) / (2.0 * h);
        assert!((t.value(s.d_x) - fd).abs() < 1e-7);
    }

    #[test]
    fn cross_tape_operands_are_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.seed_input(Input::X, 1.0).unwrap();
        let y = b.seed_input(Input::Y, 1.0).unwrap();
        assert!(matches!(a.jet_mul(&x, &y), Err(Error::Structural(_))));
        assert!(matches!(b.backward(y.v, &[x.v]), Err(Error::Structural(_))));
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::new();
        let p1 = t.leaf(2.0).unwrap();
        let p2 = t.leaf(3.0).unwrap();
        let prod = t.mul(p1, p2).unwrap();
        assert_eq!(t.backward(prod, &[p1, p2]).unwrap(), vec![3.0, 2.0]);
        // repeatable
        assert_eq!(t.backward(prod, &[p1, p2]).unwrap(), vec![3.0, 2.0]);

        let sum = t.add(p1, p1).unwrap();
        assert_eq!(t.backward(sum, &[p1]).unwrap(), vec![2.0]);

        assert!(matches!(t.backward(sum, &[prod]), Err(Error::Structural(_))));
    }

    #[test]
    fn dot_and_exp_gradients() {
        let mut t = Tape::new();
        let w = [t.leaf(0.5).unwrap(), t.leaf(-1.5).unwrap()];
        let z = [t.leaf(2.0).unwrap(), t.leaf(4.0).unwrap()];
        let b = t.leaf(0.25).unwrap();
        let d = t.dot(&[(w[0], z[0]), (w[1], z[1])], Some(b)).unwrap();
        assert_eq!(t.value(d), 0.5 * 2.0 - 1.5 * 4.0 + 0.25);
        let e = t.exp(d).unwrap();
        let g = t.backward(e, &[w[0], w[1], z[0], z[1], b]).unwrap();
        let ev = t.value(e);
        assert_eq!(g, vec![2.0 * ev, 4.0 * ev, 0.5 * ev, -1.5 * ev, ev]);
    }

    #[test]
    fn replay_is_bitwise() {
        let mut t = Tape::new();
        let x = t.seed_input(Input::X, 0.37).unwrap();
        let y = t.seed_input(Input::Y, -0.21).unwrap();
        let a = t.jet_mul(&x, &y).unwrap();
        let b = t.jet_swish(&a).unwrap();
        let c = t.jet_mul(&b, &x).unwrap();
        let r1 = t.replay(&[]).unwrap();
        let r2 = t.replay(&[]).unwrap();
        assert_eq!(r1.len(), t.len());
        for (i, (p, q)) in r1.iter().zip(&r2).enumerate() {
            assert_eq!(p.to_bits(), q.to_bits());
            assert_eq!(p.to_bits(), t.nodes[i].value.to_bits());
        }
        let moved = t.replay(&[(x.v, 0.5)]).unwrap();
        assert_ne!(moved[c.v.index()], r1[c.v.index()]);
    }

    #[test]
    fn f64_jets_agree_with_tape_jets() {
        let mut t = Tape::new();
        let x = t.seed_input(Input::X, 0.8).unwrap();
        let y = t.seed_input(Input::Y, -0.4).unwrap();
        let xy = t.jet_mul(&x, &y).unwrap();
        let s = t.jet_swish(&xy).unwrap();
        let fx = Jet2::seed(Input::X, 0.8);
        let fy = Jet2::seed(Input::Y, -0.4);
        let fs = fx.mul(&fy).swish();
        let tv = comps(&t, &s);
        for (a, b) in tv.iter().zip(fs.components()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }
}
