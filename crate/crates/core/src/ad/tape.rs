//! Recorded evaluation procedures.
//!
//! A [`Tape`] is a straight-line program over the elemental library
//! `{+, -, *, neg, recip, sin, cos, tan, exp, log, sqrt, abs}`. Every operand
//! index precedes the node that uses it, so the node order is a topological
//! order of the data-dependence graph. The arguments of the `abs` nodes are
//! the switching variables; they are enumerated in node order.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, check_finite, Error, Result};

/// Smooth elementals. Each one knows its own derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Recip,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 8] = [
        UnaryOp::Neg,
        UnaryOp::Recip,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tan,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Sqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Recip => "recip",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    /// Value of the elemental, or `None` outside its domain.
    pub fn apply(self, x: f64) -> Option<f64> {
        let y = match self {
            UnaryOp::Neg => -x,
            UnaryOp::Recip if x == 0.0 => return None,
            UnaryOp::Recip => 1.0 / x,
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Tan => x.tan(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log if x <= 0.0 => return None,
            UnaryOp::Log => x.ln(),
            UnaryOp::Sqrt if x < 0.0 => return None,
            UnaryOp::Sqrt => x.sqrt(),
        };
        y.is_finite().then_some(y)
    }

    /// Derivative at `x`, given the already computed value `y = self.apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Neg => -1.0,
            UnaryOp::Recip => -y * y,
            UnaryOp::Sin => x.cos(),
            UnaryOp::Cos => -x.sin(),
            UnaryOp::Tan => 1.0 + y * y,
            UnaryOp::Exp => y,
            UnaryOp::Log => 1.0 / x,
            UnaryOp::Sqrt => 0.5 / y,
        }
    }
}

impl fmt::Display for UnaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UnaryOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UnaryOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::InvalidTape(format!("unknown unary kind `{s}`")))
    }
}

/// One instruction of the evaluation procedure. Operands are node indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Input(usize),
    Const(f64),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Unary(UnaryOp, usize),
    Abs(usize),
}

impl Node {
    fn operands(&self) -> (Option<usize>, Option<usize>) {
        match *self {
            Node::Input(_) | Node::Const(_) => (None, None),
            Node::Add(j, k) | Node::Sub(j, k) | Node::Mul(j, k) => (Some(j), Some(k)),
            Node::Unary(_, j) | Node::Abs(j) => (Some(j), None),
        }
    }

    pub fn op_name(&self) -> &'static str {
        match self {
            Node::Input(_) => "input",
            Node::Const(_) => "const",
            Node::Add(..) => "add",
            Node::Sub(..) => "sub",
            Node::Mul(..) => "mul",
            Node::Unary(op, _) => op.name(),
            Node::Abs(_) => "abs",
        }
    }
}

/// An immutable evaluation procedure `F: R^n -> R^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tape {
    n_inputs: usize,
    nodes: Vec<Node>,
    outputs: Vec<usize>,
    abs_nodes: Vec<usize>,
}

impl Tape {
    /// Builds a tape from raw instructions, checking that data dependence is acyclic.
    pub fn from_nodes(n_inputs: usize, nodes: Vec<Node>, outputs: Vec<usize>) -> Result<Tape> {
        let mut abs_nodes = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            let (a, b) = node.operands();
            for j in a.into_iter().chain(b) {
                if j >= i {
                    return Err(Error::InvalidTape(format!(
                        "node {i} uses operand {j} which does not precede it"
                    )));
                }
            }
            match *node {
                Node::Input(k) if k >= n_inputs => {
                    return Err(Error::InvalidTape(format!(
                        "node {i} reads input {k} of {n_inputs}"
                    )))
                }
                Node::Abs(_) => abs_nodes.push(i),
                _ => {}
            }
        }
        if let Some(&o) = outputs.iter().find(|&&o| o >= nodes.len()) {
            return Err(Error::InvalidTape(format!(
                "output refers to missing node {o}"
            )));
        }
        Ok(Tape {
            n_inputs,
            nodes,
            outputs,
            abs_nodes,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Number of switching variables.
    pub fn n_abs(&self) -> usize {
        self.abs_nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    /// Node index of each `abs` instruction, in switch order.
    pub fn abs_nodes(&self) -> &[usize] {
        &self.abs_nodes
    }

    /// True if the tape contains no `abs`, i.e. it is smooth wherever defined.
    pub fn is_smooth(&self) -> bool {
        self.abs_nodes.is_empty()
    }

    /// Evaluates the procedure at `x`, returning all intermediate values.
    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let mut values = Vec::with_capacity(self.nodes.len());
        self.evaluate_into(x, &mut values)?;
        Ok(Evaluation {
            values,
            outputs: self.outputs.clone(),
        })
    }

    /// Evaluates into a caller-owned buffer of intermediate values.
    pub fn evaluate_into(&self, x: &[f64], values: &mut Vec<f64>) -> Result<()> {
        check_dim(self.n_inputs, x.len())?;
        check_finite(x, "tape input")?;
        values.clear();
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match *node {
                Node::Input(k) => x[k],
                Node::Const(c) => c,
                Node::Add(j, k) => values[j] + values[k],
                Node::Sub(j, k) => values[j] - values[k],
                Node::Mul(j, k) => values[j] * values[k],
                Node::Unary(op, j) => op.apply(values[j]).ok_or(Error::Domain {
                    node: i,
                    op: op.name(),
                    value: values[j],
                })?,
                Node::Abs(j) => values[j].abs(),
            };
            values.push(v);
        }
        check_finite(values, "tape evaluation")
    }

    /// Convenience: `F(x)` only.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(x)?.outputs())
    }

    pub(crate) fn gather_outputs(&self, values: &[f64]) -> Vec<f64> {
        self.outputs.iter().map(|&o| values[o]).collect()
    }
}

/// Intermediate values of one tape evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub values: Vec<f64>,
    outputs: Vec<usize>,
}

impl Evaluation {
    pub fn outputs(&self) -> Vec<f64> {
        self.outputs.iter().map(|&o| self.values[o]).collect()
    }
}

/// Handle to a node under construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Records a tape. Inputs occupy the first `n_inputs` nodes.
///
/// Operations whose operands are all constants are folded, so that e.g.
/// `x / 2` records a multiplication by the constant `0.5`.
#[derive(Debug)]
pub struct TapeBuilder {
    n_inputs: usize,
    nodes: Vec<Node>,
}

impl TapeBuilder {
    pub fn new(n_inputs: usize) -> Self {
        TapeBuilder {
            n_inputs,
            nodes: (0..n_inputs).map(Node::Input).collect(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn input(&self, k: usize) -> Var {
        assert!(k < self.n_inputs, "input {k} out of range");
        Var(k)
    }

    pub fn inputs(&self) -> Vec<Var> {
        (0..self.n_inputs).map(Var).collect()
    }

    fn push(&mut self, node: Node) -> Var {
        let (a, b) = node.operands();
        let len = self.nodes.len();
        assert!(
            a.into_iter().chain(b).all(|j| j < len),
            "operand does not precede node"
        );
        self.nodes.push(node);
        Var(len)
    }

    fn const_value(&self, v: Var) -> Option<f64> {
        match self.nodes[v.0] {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn constant(&mut self, c: f64) -> Var {
        self.push(Node::Const(c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => self.constant(x + y),
            _ => self.push(Node::Add(a.0, b.0)),
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => self.constant(x - y),
            _ => self.push(Node::Sub(a.0, b.0)),
        }
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => self.constant(x * y),
            _ => self.push(Node::Mul(a.0, b.0)),
        }
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = self.constant(c);
        self.mul(a, c)
    }

    /// Division is recorded as `a * recip(b)`.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let r = self.recip(b);
        self.mul(a, r)
    }

    /// Records a smooth elemental. Constant operands are folded; folding a
    /// constant outside the elemental's domain is reported as an error.
    pub fn try_unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        match self.const_value(a) {
            Some(x) => {
                let y = op.apply(x).ok_or(Error::Domain {
                    node: self.nodes.len(),
                    op: op.name(),
                    value: x,
                })?;
                Ok(self.constant(y))
            }
            None => Ok(self.push(Node::Unary(op, a.0))),
        }
    }

    /// Like [`try_unary`](Self::try_unary) but panics on a constant domain violation.
    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        self.try_unary(op, a)
            .unwrap_or_else(|e| panic!("constant folding failed: {e}"))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Recip, a)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sin, a)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Cos, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        match self.const_value(a) {
            Some(x) => self.constant(x.abs()),
            None => self.push(Node::Abs(a.0)),
        }
    }

    /// `max(u, v) = (u + v + |u - v|) / 2`
    pub fn max(&mut self, u: Var, v: Var) -> Var {
        let s = self.add(u, v);
        let d = self.sub(u, v);
        let a = self.abs(d);
        let t = self.add(s, a);
        self.scale(t, 0.5)
    }

    /// `min(u, v) = (u + v - |u - v|) / 2`
    pub fn min(&mut self, u: Var, v: Var) -> Var {
        let s = self.add(u, v);
        let d = self.sub(u, v);
        let a = self.abs(d);
        let t = self.sub(s, a);
        self.scale(t, 0.5)
    }

    pub fn finish(self, outputs: &[Var]) -> Tape {
        Tape::from_nodes(
            self.n_inputs,
            self.nodes,
            outputs.iter().map(|v| v.0).collect(),
        )
        .expect("builder produces well-formed tapes")
    }
}
