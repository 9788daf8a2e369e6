//! Expression-tree genotype.
//!
//! Trees are stored as a flat pre-order sequence of [`Primitive`]s. A node's
//! children follow it immediately, so the subtree rooted at any position is a
//! contiguous slice and "node index" always means pre-order position.
//!
//! Variables are stored by position in the owning [`PrimitiveSet`]; the set
//! supplies names for text serialization and parsing.

use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Magnitude below which protected primitives treat their input as zero.
pub const PROTECTION_EPSILON: f64 = 1e-9;

/// Function primitives. All operate on reals and are total over finite input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Add,
    Sub,
    Mul,
    /// Protected division: 1.0 when the denominator is near zero.
    Div,
    /// `sqrt(|x|)`.
    Sqrt,
    Sin,
    Cos,
    Tan,
    Exp,
    /// Protected log: `ln|x|`, or 0.0 when `x` is near zero.
    Log,
}

impl Func {
    pub const ALL: [Func; 10] = [
        Func::Add,
        Func::Sub,
        Func::Mul,
        Func::Div,
        Func::Sqrt,
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
    ];

    pub fn arity(self) -> usize {
        match self {
            Func::Add | Func::Sub | Func::Mul | Func::Div => 2,
            Func::Sqrt | Func::Sin | Func::Cos | Func::Tan | Func::Exp | Func::Log => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Add => "add",
            Func::Sub => "sub",
            Func::Mul => "mul",
            Func::Div => "div",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn apply1(self, a: f64) -> f64 {
        match self {
            Func::Sqrt => a.abs().sqrt(),
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Tan => a.tan(),
            Func::Exp => a.exp(),
            Func::Log => {
                if a.abs() < PROTECTION_EPSILON {
                    0.0
                } else {
                    a.abs().ln()
                }
            }
            _ => unreachable!("{} is not unary", self.name()),
        }
    }

    pub fn apply2(self, a: f64, b: f64) -> f64 {
        match self {
            Func::Add => a + b,
            Func::Sub => a - b,
            Func::Mul => a * b,
            Func::Div => {
                if b.abs() < PROTECTION_EPSILON {
                    1.0
                } else {
                    a / b
                }
            }
            _ => unreachable!("{} is not binary", self.name()),
        }
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One tree node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Function(Func),
    /// Index into the owning set's variable list.
    Variable(usize),
    /// Ephemeral constant, frozen at creation. Always finite.
    Constant(f64),
}

impl Primitive {
    pub fn arity(&self) -> usize {
        match self {
            Primitive::Function(f) => f.arity(),
            Primitive::Variable(_) | Primitive::Constant(_) => 0,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.arity() == 0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("node index {index} out of range for tree of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("malformed prefix sequence: {0}")]
    Malformed(&'static str),
    #[error("variable index {0} has no name in the primitive set")]
    UnknownVariable(usize),
    #[error("constant {0} is not finite")]
    NonFiniteConstant(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrimitiveSetError {
    #[error("primitive set has no terminals (needs a variable or an ephemeral constant range)")]
    NoTerminals,
    #[error("duplicate primitive name `{0}`")]
    DuplicateName(String),
    #[error("invalid variable name `{0}`")]
    InvalidVariableName(String),
    #[error("invalid ephemeral constant range [{0}, {1}]")]
    InvalidRange(f64, f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrowError {
    #[error("invalid size bounds: min {min} > max {max}")]
    InvertedBounds { min: usize, max: usize },
    #[error("no tree with size in [{min}, {max}] can be built from the primitive set")]
    Unconstructible { min: usize, max: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

/// Function and terminal vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveSet {
    functions: Vec<Func>,
    variables: Vec<String>,
    ephemeral_range: Option<(f64, f64)>,
}

impl PrimitiveSet {
    pub fn new<S: Into<String>>(
        functions: impl IntoIterator<Item = Func>,
        variables: impl IntoIterator<Item = S>,
        ephemeral_range: Option<(f64, f64)>,
    ) -> Result<Self, PrimitiveSetError> {
        let functions: Vec<Func> = functions.into_iter().collect();
        let variables: Vec<String> = variables.into_iter().map(Into::into).collect();

        for (i, f) in functions.iter().enumerate() {
            if functions[..i].contains(f) {
                return Err(PrimitiveSetError::DuplicateName(f.name().to_string()));
            }
        }
        for (i, v) in variables.iter().enumerate() {
            let bad_char = v.chars().any(|c| c.is_whitespace() || c == '(' || c == ')');
            if v.is_empty() || bad_char || v.parse::<f64>().is_ok() {
                return Err(PrimitiveSetError::InvalidVariableName(v.clone()));
            }
            if variables[..i].contains(v) || Func::from_name(v).is_some() {
                return Err(PrimitiveSetError::DuplicateName(v.clone()));
            }
        }
        if let Some((lo, hi)) = ephemeral_range {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(PrimitiveSetError::InvalidRange(lo, hi));
            }
        }
        if variables.is_empty() && ephemeral_range.is_none() {
            return Err(PrimitiveSetError::NoTerminals);
        }
        Ok(Self {
            functions,
            variables,
            ephemeral_range,
        })
    }

    pub fn functions(&self) -> &[Func] {
        &self.functions
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn ephemeral_range(&self) -> Option<(f64, f64)> {
        self.ephemeral_range
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    fn terminal_count(&self) -> usize {
        self.variables.len() + usize::from(self.ephemeral_range.is_some())
    }

    fn random_terminal<R: Rng + ?Sized>(&self, rng: &mut R) -> Primitive {
        let pick = rng.random_range(0..self.terminal_count());
        if pick < self.variables.len() {
            Primitive::Variable(pick)
        } else {
            let (lo, hi) = self.ephemeral_range.expect("terminal count includes the constant");
            Primitive::Constant(if lo == hi { lo } else { rng.random_range(lo..=hi) })
        }
    }

    /// Sizes in `[min_size, max_size]` for which some tree exists.
    pub fn feasible_sizes(&self, min_size: usize, max_size: usize) -> Vec<usize> {
        let plan = SizePlan::new(self, max_size);
        (min_size.max(1)..=max_size).filter(|&n| plan.feasible[n]).collect()
    }

    /// Grows a random tree whose node count lies in `[min_size, max_size]`.
    ///
    /// A target size is drawn uniformly from the constructible sizes in the
    /// range and the tree is built top-down to hit it exactly: each function
    /// node is chosen among those whose arity admits a split of the remaining
    /// budget into constructible child sizes.
    pub fn grow<R: Rng + ?Sized>(
        &self,
        min_size: usize,
        max_size: usize,
        rng: &mut R,
    ) -> Result<ExprTree, GrowError> {
        if min_size > max_size {
            return Err(GrowError::InvertedBounds {
                min: min_size,
                max: max_size,
            });
        }
        let plan = SizePlan::new(self, max_size);
        let sizes: Vec<usize> = (min_size.max(1)..=max_size)
            .filter(|&n| plan.feasible[n])
            .collect();
        if sizes.is_empty() {
            return Err(GrowError::Unconstructible {
                min: min_size,
                max: max_size,
            });
        }
        let target = sizes[rng.random_range(0..sizes.len())];
        let mut nodes = Vec::with_capacity(target);
        self.build(&plan, target, &mut nodes, rng);
        debug_assert_eq!(nodes.len(), target);
        Ok(ExprTree { nodes })
    }

    fn build<R: Rng + ?Sized>(
        &self,
        plan: &SizePlan,
        size: usize,
        out: &mut Vec<Primitive>,
        rng: &mut R,
    ) {
        if size == 1 {
            out.push(self.random_terminal(rng));
            return;
        }
        let candidates: Vec<Func> = self
            .functions
            .iter()
            .copied()
            .filter(|f| plan.splittable(f.arity(), size - 1))
            .collect();
        let func = candidates[rng.random_range(0..candidates.len())];
        out.push(Primitive::Function(func));

        let mut remaining = size - 1;
        for child in 0..func.arity() {
            let left_after = func.arity() - child - 1;
            let child_size = if left_after == 0 {
                remaining
            } else {
                let options: Vec<usize> = (1..remaining)
                    .filter(|&s| plan.feasible[s] && plan.splittable(left_after, remaining - s))
                    .collect();
                options[rng.random_range(0..options.len())]
            };
            self.build(plan, child_size, out, rng);
            remaining -= child_size;
        }
    }
}

/// Which node counts are constructible from a primitive set.
struct SizePlan {
    feasible: Vec<bool>,
    /// `parts[k][m]`: `m` nodes can be split among `k` constructible subtrees.
    parts: Vec<Vec<bool>>,
}

impl SizePlan {
    fn new(pset: &PrimitiveSet, max_size: usize) -> Self {
        let max_arity = pset.functions.iter().map(|f| f.arity()).max().unwrap_or(0);
        let mut feasible = vec![false; max_size + 1];
        let mut parts = vec![vec![false; max_size + 1]; max_arity + 1];
        for m in 1..=max_size {
            feasible[m] = if m == 1 {
                pset.terminal_count() > 0
            } else {
                pset.functions.iter().any(|f| parts[f.arity()][m - 1])
            };
            if max_arity >= 1 {
                parts[1][m] = feasible[m];
            }
            for k in 2..=max_arity {
                parts[k][m] = (1..m).any(|s| feasible[s] && parts[k - 1][m - s]);
            }
        }
        Self { feasible, parts }
    }

    fn splittable(&self, k: usize, m: usize) -> bool {
        k < self.parts.len() && m < self.parts[k].len() && self.parts[k][m]
    }
}

/// Variable values for evaluation, positional in the primitive set's order.
#[derive(Clone, Debug, PartialEq)]
pub struct Bindings {
    values: Vec<f64>,
}

impl Bindings {
    /// Binds by name. Every variable of `pset` must be given exactly once.
    pub fn new(pset: &PrimitiveSet, pairs: &[(&str, f64)]) -> Result<Self, String> {
        let mut values = vec![None; pset.variables.len()];
        for &(name, value) in pairs {
            let idx = pset
                .variable_index(name)
                .ok_or_else(|| format!("unknown variable `{name}`"))?;
            if values[idx].replace(value).is_some() {
                return Err(format!("variable `{name}` bound twice"));
            }
        }
        let values = values
            .into_iter()
            .zip(&pset.variables)
            .map(|(v, name)| v.ok_or_else(|| format!("variable `{name}` not bound")))
            .collect::<Result<_, _>>()?;
        Ok(Self { values })
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn covers(&self, tree: &ExprTree) -> bool {
        tree.nodes.iter().all(|n| match n {
            Primitive::Variable(i) => *i < self.values.len(),
            _ => true,
        })
    }
}

/// An expression tree in pre-order.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprTree {
    nodes: Vec<Primitive>,
}

impl ExprTree {
    /// Builds a tree from a pre-order node sequence, checking that every
    /// function has exactly its arity of children and constants are finite.
    pub fn from_prefix(nodes: Vec<Primitive>) -> Result<Self, TreeError> {
        let mut open = 1usize;
        for (i, node) in nodes.iter().enumerate() {
            if let Primitive::Constant(c) = node {
                if !c.is_finite() {
                    return Err(TreeError::NonFiniteConstant(*c));
                }
            }
            open = open - 1 + node.arity();
            if open == 0 && i + 1 != nodes.len() {
                return Err(TreeError::Malformed("trailing nodes after a complete tree"));
            }
        }
        if nodes.is_empty() || open != 0 {
            return Err(TreeError::Malformed("incomplete tree"));
        }
        Ok(Self { nodes })
    }

    pub fn leaf(primitive: Primitive) -> Result<Self, TreeError> {
        Self::from_prefix(vec![primitive])
    }

    pub fn nodes(&self) -> &[Primitive] {
        &self.nodes
    }

    /// Node count.
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// One past the last pre-order index of the subtree rooted at `index`.
    fn subtree_end(&self, index: usize) -> usize {
        let mut open = 1usize;
        let mut end = index;
        while open > 0 {
            open = open - 1 + self.nodes[end].arity();
            end += 1;
        }
        end
    }

    pub fn subtree_size(&self, index: usize) -> Result<usize, TreeError> {
        self.check_index(index)?;
        Ok(self.subtree_end(index) - index)
    }

    pub fn subtree(&self, index: usize) -> Result<ExprTree, TreeError> {
        self.check_index(index)?;
        Ok(ExprTree {
            nodes: self.nodes[index..self.subtree_end(index)].to_vec(),
        })
    }

    /// Returns a copy with the subtree at pre-order `index` replaced.
    pub fn replace_subtree(&self, index: usize, replacement: &ExprTree) -> Result<ExprTree, TreeError> {
        self.check_index(index)?;
        let end = self.subtree_end(index);
        let mut nodes = Vec::with_capacity(self.nodes.len() - (end - index) + replacement.size());
        nodes.extend_from_slice(&self.nodes[..index]);
        nodes.extend_from_slice(&replacement.nodes);
        nodes.extend_from_slice(&self.nodes[end..]);
        Ok(ExprTree { nodes })
    }

    fn check_index(&self, index: usize) -> Result<(), TreeError> {
        if index < self.nodes.len() {
            Ok(())
        } else {
            Err(TreeError::IndexOutOfRange {
                index,
                size: self.nodes.len(),
            })
        }
    }

    /// Evaluates the tree. Panics if `bindings` does not cover the tree's variables.
    pub fn evaluate(&self, bindings: &Bindings) -> f64 {
        let mut stack = Vec::with_capacity(self.nodes.len());
        self.evaluate_with(&bindings.values, &mut stack)
    }

    /// Evaluates against a positional row, reusing `stack` as scratch space.
    pub fn evaluate_with(&self, row: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        for node in self.nodes.iter().rev() {
            let value = match *node {
                Primitive::Variable(i) => row[i],
                Primitive::Constant(c) => c,
                Primitive::Function(f) => {
                    // Reverse traversal leaves the first argument on top.
                    let a = stack.pop().expect("well-formed tree");
                    if f.arity() == 1 {
                        f.apply1(a)
                    } else {
                        let b = stack.pop().expect("well-formed tree");
                        f.apply2(a, b)
                    }
                }
            };
            stack.push(value);
        }
        stack.pop().expect("non-empty tree")
    }

    /// Parenthesized prefix rendering, e.g. `(add x (sin x))`.
    pub fn to_text(&self, pset: &PrimitiveSet) -> Result<String, TreeError> {
        let mut out = String::new();
        self.write_text(0, pset, &mut out)?;
        Ok(out)
    }

    fn write_text(&self, index: usize, pset: &PrimitiveSet, out: &mut String) -> Result<usize, TreeError> {
        match self.nodes[index] {
            Primitive::Variable(v) => {
                let name = pset.variables.get(v).ok_or(TreeError::UnknownVariable(v))?;
                out.push_str(name);
                Ok(index + 1)
            }
            Primitive::Constant(c) => {
                // Display for f64 is the shortest string that round-trips.
                out.push_str(&c.to_string());
                Ok(index + 1)
            }
            Primitive::Function(f) => {
                out.push('(');
                out.push_str(f.name());
                let mut next = index + 1;
                for _ in 0..f.arity() {
                    out.push(' ');
                    next = self.write_text(next, pset, out)?;
                }
                out.push(')');
                Ok(next)
            }
        }
    }

    /// Parses the text form produced by [`ExprTree::to_text`].
    pub fn parse(text: &str, pset: &PrimitiveSet) -> Result<ExprTree, ParseError> {
        let tokens = tokenize(text);
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            pset,
            nodes: Vec::new(),
            end: text.len(),
        };
        parser.expr()?;
        if let Some(tok) = parser.tokens.get(parser.pos) {
            return Err(ParseError {
                position: tok.start,
                message: format!("unexpected trailing token `{}`", tok.text),
            });
        }
        Ok(ExprTree { nodes: parser.nodes })
    }
}

#[derive(Debug)]
struct Token<'a> {
    start: usize,
    text: &'a str,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut atom_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = atom_start.take() {
                tokens.push(Token { start: s, text: &text[s..i] });
            }
            if !c.is_whitespace() {
                tokens.push(Token { start: i, text: &text[i..i + 1] });
            }
        } else if atom_start.is_none() {
            atom_start = Some(i);
        }
    }
    if let Some(s) = atom_start {
        tokens.push(Token { start: s, text: &text[s..] });
    }
    tokens
}

struct Parser<'t, 'a> {
    tokens: &'t [Token<'a>],
    pos: usize,
    pset: &'t PrimitiveSet,
    nodes: Vec<Primitive>,
    end: usize,
}

impl<'a> Parser<'_, 'a> {
    fn error(&self, position: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            position,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str), ParseError> {
        let tok = self
            .tokens
            .get(self.pos)
            .ok_or_else(|| self.error(self.end, "unexpected end of input"))?;
        self.pos += 1;
        Ok((tok.start, tok.text))
    }

    fn expr(&mut self) -> Result<(), ParseError> {
        let (start, text) = self.next()?;
        match text {
            "(" => {
                let (fstart, fname) = self.next()?;
                let func = Func::from_name(fname)
                    .ok_or_else(|| self.error(fstart, format!("unknown function `{fname}`")))?;
                self.nodes.push(Primitive::Function(func));
                for _ in 0..func.arity() {
                    if self.tokens.get(self.pos).is_some_and(|t| t.text == ")") {
                        return Err(self.error(
                            self.tokens[self.pos].start,
                            format!("`{fname}` expects {} arguments", func.arity()),
                        ));
                    }
                    self.expr()?;
                }
                let (cstart, close) = self.next()?;
                if close != ")" {
                    return Err(self.error(
                        cstart,
                        format!("`{fname}` expects {} arguments", func.arity()),
                    ));
                }
                Ok(())
            }
            ")" => Err(self.error(start, "unexpected `)`")),
            atom => {
                if let Some(v) = self.pset.variable_index(atom) {
                    self.nodes.push(Primitive::Variable(v));
                    Ok(())
                } else if let Ok(c) = atom.parse::<f64>() {
                    if !c.is_finite() {
                        return Err(self.error(start, format!("non-finite constant `{atom}`")));
                    }
                    self.nodes.push(Primitive::Constant(c));
                    Ok(())
                } else if Func::from_name(atom).is_some() {
                    Err(self.error(start, format!("function `{atom}` must be parenthesized")))
                } else {
                    Err(self.error(start, format!("unknown symbol `{atom}`")))
                }
            }
        }
    }
}
