//! Random continuous-optimization problems.
//!
//! An objective is an expression tree drawn from an [`OperatorTable`]. The tree is
//! flattened to Reverse Polish Notation by post-order traversal; the RPN program is
//! what gets evaluated, serialized and encoded into a fixed-length feature vector.
//!
//! Generation rule, with the root at depth 1:
//! - the root is always an operator, drawn by operator weight;
//! - below the root and above `max_depth`, one categorical draw over every
//!   operator plus the two leaf kinds decides the node;
//! - at `max_depth` the node is forced to be a leaf (variable vs constant by leaf weight).
//!
//! Variables are uniform over `x1..xd`; constants are uniform on `[-1, 1]`.
//! The log-probability of every discrete choice is accumulated in pre-order, and
//! [`tree_logprob`] replays the exact same arithmetic, so both agree bit-for-bit.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Default number of RPN token slots in the feature encoding.
pub const DEFAULT_L_MAX: usize = 32;

const PROTECT: f64 = 1e-9;
const EXP_CLIP: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Log,
    Exp,
    Abs,
    Neg,
}

impl Op {
    pub const ALL: [Op; 10] = [
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Div,
        Op::Sin,
        Op::Cos,
        Op::Log,
        Op::Exp,
        Op::Abs,
        Op::Neg,
    ];

    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
            _ => 1,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Log => "log",
            Op::Exp => "exp",
            Op::Abs => "abs",
            Op::Neg => "neg",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Op> {
        Op::ALL.into_iter().find(|op| op.symbol() == s)
    }

    /// Protected unary semantics: log and exp never leave the finite range.
    #[inline]
    pub fn apply1(self, a: f64) -> f64 {
        match self {
            Op::Sin => a.sin(),
            Op::Cos => a.cos(),
            Op::Log => (a.abs() + PROTECT).ln(),
            Op::Exp => a.min(EXP_CLIP).exp(),
            Op::Abs => a.abs(),
            Op::Neg => -a,
            _ => unreachable!("binary operator applied to one argument"),
        }
    }

    /// Protected binary semantics: division by `|b| + 1e-9`.
    #[inline]
    pub fn apply2(self, a: f64, b: f64) -> f64 {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Div => a / (b.abs() + PROTECT),
            _ => unreachable!("unary operator applied to two arguments"),
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl Serialize for Op {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for Op {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Op::from_symbol(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown operator `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorEntry {
    pub op: Op,
    pub weight: f64,
}

/// Operator vocabulary with selection weights, plus the two leaf weights.
///
/// The entry order doubles as the feature vocabulary order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorTable {
    pub entries: Vec<OperatorEntry>,
    pub leaf_var_weight: f64,
    pub leaf_const_weight: f64,
}

impl Default for OperatorTable {
    fn default() -> Self {
        OperatorTable {
            entries: Op::ALL
                .into_iter()
                .map(|op| OperatorEntry { op, weight: 1.0 })
                .collect(),
            leaf_var_weight: 3.0,
            leaf_const_weight: 2.0,
        }
    }
}

impl OperatorTable {
    pub fn new(entries: Vec<(Op, f64)>, leaf_var_weight: f64, leaf_const_weight: f64) -> Self {
        OperatorTable {
            entries: entries
                .into_iter()
                .map(|(op, weight)| OperatorEntry { op, weight })
                .collect(),
            leaf_var_weight,
            leaf_const_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidDistribution(m.to_string()));
        if !self.entries.iter().any(|e| e.op.arity() == 2) {
            return bad("table needs at least one binary operator");
        }
        if !self.entries.iter().any(|e| e.op.arity() == 1) {
            return bad("table needs at least one unary operator");
        }
        let leaves = [self.leaf_var_weight, self.leaf_const_weight];
        for w in self.entries.iter().map(|e| e.weight).chain(leaves) {
            if !w.is_finite() || w < 0.0 {
                return bad("weights must be finite and non-negative");
            }
        }
        for (i, e) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|o| o.op == e.op) {
                return Err(Error::InvalidDistribution(format!("duplicate operator `{}`", e.op)));
            }
        }
        if self.operator_weight() <= 0.0 {
            return bad("total operator weight is zero");
        }
        if self.leaf_var_weight + self.leaf_const_weight <= 0.0 {
            return bad("total leaf weight is zero");
        }
        Ok(())
    }

    pub fn operator_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    pub fn weight_of(&self, op: Op) -> Option<f64> {
        self.entries.iter().find(|e| e.op == op).map(|e| e.weight)
    }

    /// Vocabulary size: operators + the `var` and `const` symbols.
    pub fn vocab_size(&self) -> usize {
        self.entries.len() + 2
    }

    /// Vocabulary column of a token; `None` for an operator outside the table.
    pub fn vocab_index(&self, token: &Token) -> Option<usize> {
        match token {
            Token::Var(_) => Some(0),
            Token::Const(_) => Some(1),
            Token::Op(op) => self.entries.iter().position(|e| e.op == *op).map(|p| p + 2),
        }
    }

    pub fn feature_len(&self, l_max: usize) -> usize {
        let v = self.vocab_size();
        l_max * v + v
    }
}

/// Natural-log probabilities of every generation decision for one table.
struct ChoiceLogProbs {
    root_op: Vec<f64>,
    inner_op: Vec<f64>,
    inner_var: f64,
    inner_const: f64,
    forced_var: f64,
    forced_const: f64,
    var_index: f64,
}

impl ChoiceLogProbs {
    fn new(table: &OperatorTable, dim: usize) -> Self {
        let ops = table.operator_weight();
        let leaves = table.leaf_var_weight + table.leaf_const_weight;
        let total = ops + leaves;
        ChoiceLogProbs {
            root_op: table.entries.iter().map(|e| (e.weight / ops).ln()).collect(),
            inner_op: table.entries.iter().map(|e| (e.weight / total).ln()).collect(),
            inner_var: (table.leaf_var_weight / total).ln(),
            inner_const: (table.leaf_const_weight / total).ln(),
            forced_var: (table.leaf_var_weight / leaves).ln(),
            forced_const: (table.leaf_const_weight / leaves).ln(),
            var_index: (1.0 / dim as f64).ln(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprNode {
    Var(usize),
    Const(f64),
    Unary(Op, Box<ExprNode>),
    Binary(Op, Box<ExprNode>, Box<ExprNode>),
}

impl ExprNode {
    pub fn var(i: usize) -> Self {
        ExprNode::Var(i)
    }

    pub fn unary(op: Op, a: ExprNode) -> Self {
        ExprNode::Unary(op, Box::new(a))
    }

    pub fn binary(op: Op, a: ExprNode, b: ExprNode) -> Self {
        ExprNode::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn depth(&self) -> usize {
        match self {
            ExprNode::Var(_) | ExprNode::Const(_) => 1,
            ExprNode::Unary(_, a) => 1 + a.depth(),
            ExprNode::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            ExprNode::Var(_) | ExprNode::Const(_) => 1,
            ExprNode::Unary(_, a) => 1 + a.node_count(),
            ExprNode::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Direct recursive evaluation (the reference for the RPN stack machine).
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ExprNode::Var(i) => x[*i],
            ExprNode::Const(c) => *c,
            ExprNode::Unary(op, a) => op.apply1(a.eval(x)),
            ExprNode::Binary(op, a, b) => op.apply2(a.eval(x), b.eval(x)),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            ExprNode::Var(i) => Some(*i),
            ExprNode::Const(_) => None,
            ExprNode::Unary(_, a) => a.max_var(),
            ExprNode::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }
}

/// RPN token. Variables are 0-based internally and print as `x1..xd`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Token {
    Var(usize),
    Const(f64),
    Op(Op),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Var(i) => write!(f, "x{}", i + 1),
            Token::Const(c) => write!(f, "{c}"),
            Token::Op(op) => f.write_str(op.symbol()),
        }
    }
}

impl FromStr for Token {
    type Err = Error;

    fn from_str(s: &str) -> Result<Token> {
        if let Some(op) = Op::from_symbol(s) {
            return Ok(Token::Op(op));
        }
        if let Some(idx) = s.strip_prefix('x') {
            let i: usize = idx
                .parse()
                .map_err(|_| Error::Parse(format!("bad variable token `{s}`")))?;
            if i == 0 {
                return Err(Error::Parse(format!("variables are 1-based: `{s}`")));
            }
            return Ok(Token::Var(i - 1));
        }
        s.parse::<f64>()
            .ok()
            .filter(|c| c.is_finite())
            .map(Token::Const)
            .ok_or_else(|| Error::Parse(format!("unknown token `{s}`")))
    }
}

/// Post-order traversal.
pub fn to_rpn(tree: &ExprNode) -> Vec<Token> {
    fn walk(node: &ExprNode, out: &mut Vec<Token>) {
        match node {
            ExprNode::Var(i) => out.push(Token::Var(*i)),
            ExprNode::Const(c) => out.push(Token::Const(*c)),
            ExprNode::Unary(op, a) => {
                walk(a, out);
                out.push(Token::Op(*op));
            }
            ExprNode::Binary(op, a, b) => {
                walk(a, out);
                walk(b, out);
                out.push(Token::Op(*op));
            }
        }
    }
    let mut out = Vec::with_capacity(tree.node_count());
    walk(tree, &mut out);
    out
}

/// Rebuild the tree from a postfix program.
pub fn from_rpn(rpn: &[Token]) -> Result<ExprNode> {
    let mut stack: Vec<ExprNode> = Vec::new();
    for tok in rpn {
        let node = match *tok {
            Token::Var(i) => ExprNode::Var(i),
            Token::Const(c) => ExprNode::Const(c),
            Token::Op(op) if op.arity() == 1 => {
                let a = stack.pop().ok_or_else(|| Error::Parse("stack underflow".into()))?;
                ExprNode::unary(op, a)
            }
            Token::Op(op) => {
                let b = stack.pop().ok_or_else(|| Error::Parse("stack underflow".into()))?;
                let a = stack.pop().ok_or_else(|| Error::Parse("stack underflow".into()))?;
                ExprNode::binary(op, a, b)
            }
        };
        stack.push(node);
    }
    match (stack.pop(), stack.is_empty()) {
        (Some(root), true) => Ok(root),
        _ => Err(Error::Parse("RPN program does not reduce to one expression".into())),
    }
}

/// Stack-machine evaluation of a postfix program. `stack` is scratch space.
///
/// Non-finite results (possible only for trees far deeper than the defaults)
/// map to `f64::MAX` so minimization stays total.
#[inline]
pub fn eval_rpn(rpn: &[Token], x: &[f64], stack: &mut Vec<f64>) -> f64 {
    stack.clear();
    for tok in rpn {
        match *tok {
            Token::Var(i) => stack.push(x[i]),
            Token::Const(c) => stack.push(c),
            Token::Op(op) => {
                if op.arity() == 1 {
                    let a = stack.last_mut().expect("well-formed rpn");
                    *a = op.apply1(*a);
                } else {
                    let b = stack.pop().expect("well-formed rpn");
                    let a = stack.last_mut().expect("well-formed rpn");
                    *a = op.apply2(*a, b);
                }
            }
        }
    }
    let v = stack.pop().unwrap_or(f64::MAX);
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

/// One generated objective function.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub id: u64,
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub tree: ExprNode,
    pub rpn: Vec<Token>,
    pub features: Vec<f64>,
    pub gen_logprob: f64,
}

impl ProblemInstance {
    /// Build an instance from a tree, encoding features with `vocab`.
    pub fn from_tree(
        id: u64,
        tree: ExprNode,
        dim: usize,
        bounds: (f64, f64),
        vocab: &OperatorTable,
        l_max: usize,
        gen_logprob: f64,
    ) -> Self {
        let rpn = to_rpn(&tree);
        let features = encode_rpn(&rpn, vocab, l_max);
        ProblemInstance {
            id,
            dim,
            lo: vec![bounds.0; dim],
            hi: vec![bounds.1; dim],
            tree,
            rpn,
            features,
            gen_logprob,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(eval_rpn(&self.rpn, x, &mut Vec::with_capacity(self.rpn.len())))
    }

    pub fn feature_sq_norm(&self) -> f64 {
        self.features.iter().map(|v| v * v).sum()
    }
}

/// Everything needed to draw problems from one distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(default)]
    pub table: OperatorTable,
    pub dim: usize,
    pub max_depth: usize,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default = "default_l_max")]
    pub l_max: usize,
}

fn default_lo() -> f64 {
    -5.0
}
fn default_hi() -> f64 {
    5.0
}
fn default_l_max() -> usize {
    DEFAULT_L_MAX
}

impl ProblemSpec {
    pub fn new(table: OperatorTable, dim: usize, max_depth: usize) -> Self {
        ProblemSpec {
            table,
            dim,
            max_depth,
            lo: default_lo(),
            hi: default_hi(),
            l_max: DEFAULT_L_MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.table.validate()?;
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dim must be >= 1".into()));
        }
        if self.max_depth < 2 {
            return Err(Error::InvalidArgument("max_depth must be >= 2".into()));
        }
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidArgument("box bounds must satisfy lo < hi".into()));
        }
        if self.l_max == 0 {
            return Err(Error::InvalidArgument("l_max must be >= 1".into()));
        }
        Ok(())
    }
}

fn categorical(weights: impl Iterator<Item = f64> + Clone, rng: &mut seed::Rng) -> usize {
    let total: f64 = weights.clone().sum();
    let u = rng.gen::<f64>() * total;
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        cum += w;
        if u < cum {
            return i;
        }
    }
    last_positive
}

struct Grower<'a> {
    table: &'a OperatorTable,
    lp: ChoiceLogProbs,
    dim: usize,
    max_depth: usize,
    logprob: f64,
}

impl Grower<'_> {
    fn leaf(&mut self, var_lp: f64, const_lp: f64, rng: &mut seed::Rng) -> ExprNode {
        let t = self.table;
        let kind = categorical([t.leaf_var_weight, t.leaf_const_weight].into_iter(), rng);
        if kind == 0 {
            self.logprob += var_lp;
            self.logprob += self.lp.var_index;
            ExprNode::Var(rng.gen_range(0..self.dim))
        } else {
            self.logprob += const_lp;
            ExprNode::Const(rng.gen_range(-1.0..=1.0))
        }
    }

    fn op_node(&mut self, idx: usize, depth: usize, rng: &mut seed::Rng) -> ExprNode {
        let op = self.table.entries[idx].op;
        if op.arity() == 1 {
            ExprNode::unary(op, self.grow(depth + 1, rng))
        } else {
            let a = self.grow(depth + 1, rng);
            let b = self.grow(depth + 1, rng);
            ExprNode::binary(op, a, b)
        }
    }

    fn grow(&mut self, depth: usize, rng: &mut seed::Rng) -> ExprNode {
        let t = self.table;
        if depth == 1 {
            let idx = categorical(t.entries.iter().map(|e| e.weight), rng);
            self.logprob += self.lp.root_op[idx];
            return self.op_node(idx, depth, rng);
        }
        if depth >= self.max_depth {
            return self.leaf(self.lp.forced_var, self.lp.forced_const, rng);
        }
        let n = t.entries.len();
        let weights = t
            .entries
            .iter()
            .map(|e| e.weight)
            .chain([t.leaf_var_weight, t.leaf_const_weight]);
        let idx = categorical(weights, rng);
        if idx < n {
            self.logprob += self.lp.inner_op[idx];
            self.op_node(idx, depth, rng)
        } else if idx == n {
            self.logprob += self.lp.inner_var;
            self.logprob += self.lp.var_index;
            ExprNode::Var(rng.gen_range(0..self.dim))
        } else {
            self.logprob += self.lp.inner_const;
            ExprNode::Const(rng.gen_range(-1.0..=1.0))
        }
    }
}

/// Draw one tree and its generation log-probability.
pub fn generate_tree(
    table: &OperatorTable,
    dim: usize,
    max_depth: usize,
    seed: u64,
) -> Result<(ExprNode, f64)> {
    table.validate()?;
    if dim == 0 || max_depth < 2 {
        return Err(Error::InvalidArgument(
            "generation needs dim >= 1 and max_depth >= 2".into(),
        ));
    }
    let mut rng = seed::rng(seed);
    let mut g = Grower {
        table,
        lp: ChoiceLogProbs::new(table, dim),
        dim,
        max_depth,
        logprob: 0.0,
    };
    let tree = g.grow(1, &mut rng);
    Ok((tree, g.logprob))
}

/// Draw one problem with the default box `[-5, 5]^d` and `L_max = 32` encoding.
pub fn generate_problem(
    table: &OperatorTable,
    dim: usize,
    max_depth: usize,
    seed: u64,
) -> Result<ProblemInstance> {
    let spec = ProblemSpec::new(table.clone(), dim, max_depth);
    generate_from_spec(&spec, 0, seed)
}

pub fn generate_from_spec(spec: &ProblemSpec, id: u64, seed: u64) -> Result<ProblemInstance> {
    spec.validate()?;
    let (tree, logprob) = generate_tree(&spec.table, spec.dim, spec.max_depth, seed)?;
    Ok(ProblemInstance::from_tree(
        id,
        tree,
        spec.dim,
        (spec.lo, spec.hi),
        &spec.table,
        spec.l_max,
        logprob,
    ))
}

/// Draw `count` problems with ids `first_id..first_id+count`; each instance is
/// seeded from `(master_seed, id)` so output is independent of `jobs`.
pub fn generate_problems(
    spec: &ProblemSpec,
    count: usize,
    first_id: u64,
    master_seed: u64,
    jobs: usize,
) -> Result<Vec<ProblemInstance>> {
    spec.validate()?;
    seed::with_jobs(jobs, || {
        (0..count as u64)
            .into_par_iter()
            .map(|k| {
                let id = first_id + k;
                generate_from_spec(spec, id, seed::derive_seed(master_seed, &[id]))
            })
            .collect()
    })
}

/// Log-probability of a tree under a generator, or a support violation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeLogProb {
    pub logprob: f64,
    pub in_support: bool,
}

impl TreeLogProb {
    fn violation() -> Self {
        TreeLogProb {
            logprob: f64::NEG_INFINITY,
            in_support: false,
        }
    }
}

/// Replay the generation decisions of `tree` under `table`.
pub fn tree_logprob(tree: &ExprNode, table: &OperatorTable, dim: usize, max_depth: usize) -> TreeLogProb {
    if table.validate().is_err() || dim == 0 || max_depth < 2 {
        return TreeLogProb::violation();
    }
    if tree.depth() > max_depth || tree.max_var().is_some_and(|v| v >= dim) {
        return TreeLogProb::violation();
    }
    let lp = ChoiceLogProbs::new(table, dim);
    let mut acc = 0.0;
    fn walk(
        node: &ExprNode,
        depth: usize,
        table: &OperatorTable,
        lp: &ChoiceLogProbs,
        max_depth: usize,
        acc: &mut f64,
    ) -> bool {
        let (var_lp, const_lp) = if depth >= max_depth {
            (lp.forced_var, lp.forced_const)
        } else {
            (lp.inner_var, lp.inner_const)
        };
        let term = match node {
            ExprNode::Var(_) if depth > 1 => var_lp,
            ExprNode::Const(c) if depth > 1 && (-1.0..=1.0).contains(c) => const_lp,
            ExprNode::Var(_) | ExprNode::Const(_) => return false,
            ExprNode::Unary(op, _) | ExprNode::Binary(op, _, _) => {
                if depth >= max_depth {
                    return false;
                }
                let Some(pos) = table.entries.iter().position(|e| e.op == *op) else {
                    return false;
                };
                if depth == 1 {
                    lp.root_op[pos]
                } else {
                    lp.inner_op[pos]
                }
            }
        };
        if !term.is_finite() {
            return false;
        }
        *acc += term;
        match node {
            ExprNode::Var(_) => {
                *acc += lp.var_index;
                true
            }
            ExprNode::Const(_) => true,
            ExprNode::Unary(_, a) => walk(a, depth + 1, table, lp, max_depth, acc),
            ExprNode::Binary(_, a, b) => {
                walk(a, depth + 1, table, lp, max_depth, acc)
                    && walk(b, depth + 1, table, lp, max_depth, acc)
            }
        }
    }
    if walk(tree, 1, table, &lp, max_depth, &mut acc) {
        TreeLogProb {
            logprob: acc,
            in_support: true,
        }
    } else {
        TreeLogProb::violation()
    }
}

/// One-hot token sequence (truncated or zero-padded to `l_max` slots)
/// followed by the normalized token histogram over the full program.
pub fn encode_rpn(rpn: &[Token], vocab: &OperatorTable, l_max: usize) -> Vec<f64> {
    let v = vocab.vocab_size();
    let mut out = vec![0.0; l_max * v + v];
    let (seq, hist) = out.split_at_mut(l_max * v);
    for (slot, tok) in rpn.iter().take(l_max).enumerate() {
        if let Some(c) = vocab.vocab_index(tok) {
            seq[slot * v + c] = 1.0;
        }
    }
    if !rpn.is_empty() {
        let inv = 1.0 / rpn.len() as f64;
        for tok in rpn {
            if let Some(c) = vocab.vocab_index(tok) {
                hist[c] += inv;
            }
        }
    }
    out
}

pub fn encode_features(instance: &ProblemInstance, vocab: &OperatorTable, l_max: usize) -> Vec<f64> {
    encode_rpn(&instance.rpn, vocab, l_max)
}

/// Line format of `problems.jsonl`. Features are re-derived on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: u64,
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rpn: Vec<String>,
    pub gen_logprob: f64,
}

impl ProblemRecord {
    pub fn from_instance(p: &ProblemInstance) -> Self {
        ProblemRecord {
            id: p.id,
            dim: p.dim,
            lo: p.lo.clone(),
            hi: p.hi.clone(),
            rpn: p.rpn.iter().map(|t| t.to_string()).collect(),
            gen_logprob: p.gen_logprob,
        }
    }

    pub fn into_instance(self, vocab: &OperatorTable, l_max: usize) -> Result<ProblemInstance> {
        if self.lo.len() != self.dim || self.hi.len() != self.dim {
            return Err(Error::Parse(format!("problem {}: bounds length != dim", self.id)));
        }
        let rpn = self
            .rpn
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Token>>>()?;
        let tree = from_rpn(&rpn)?;
        if tree.max_var().is_some_and(|v| v >= self.dim) {
            return Err(Error::Parse(format!("problem {}: variable index exceeds dim", self.id)));
        }
        let features = encode_rpn(&rpn, vocab, l_max);
        Ok(ProblemInstance {
            id: self.id,
            dim: self.dim,
            lo: self.lo,
            hi: self.hi,
            tree,
            rpn,
            features,
            gen_logprob: self.gen_logprob,
        })
    }
}

pub fn write_problems_jsonl(problems: &[ProblemInstance], out: &mut impl std::io::Write) -> Result<()> {
    for p in problems {
        serde_json::to_writer(&mut *out, &ProblemRecord::from_instance(p))?;
        out.write_all(b"\n").map_err(|e| Error::io("<problems.jsonl>", e))?;
    }
    Ok(())
}

pub fn read_problems_jsonl(
    text: &str,
    vocab: &OperatorTable,
    l_max: usize,
) -> Result<Vec<ProblemInstance>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<ProblemRecord>(l)?.into_instance(vocab, l_max))
        .collect()
}
