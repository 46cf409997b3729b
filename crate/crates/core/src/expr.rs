//! Scalar field expressions over R^d.
//!
//! Grammar (standard precedence, left associative):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | 'pi' | 'x' index | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | cosh | sinh | sqrt | log
//! ```
//!
//! Variables are one-based (`x1 .. xd`). Evaluation is available as a plain
//! value or as a second-order [`Jet`], which gives the gradient and Hessian.

use std::fmt;

use crate::error::{Error, Result};
use crate::jet::{Jet, MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Cosh,
    Sinh,
    Sqrt,
    Log,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "cosh" => Func::Cosh,
            "sinh" => Func::Sinh,
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Cosh => "cosh",
            Func::Sinh => "sinh",
            Func::Sqrt => "sqrt",
            Func::Log => "log",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// Zero-based variable index.
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed scalar field on R^d. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    root: Node,
    dim: usize,
}

/// Value, gradient and Hessian of a field at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
}

impl ScalarField {
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidInput(format!(
                "dimension {dim} not in 1..={MAX_DIM}"
            )));
        }
        let tokens = lex(text)?;
        let mut p = Parser {
            tokens: &tokens,
            at: 0,
            dim,
            end: text.len(),
        };
        let root = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(Error::Syntax {
                pos: t.pos,
                msg: format!("unexpected {:?}", t.kind),
            });
        }
        Ok(ScalarField { root, dim })
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        ScalarField {
            root: Node::Const(c),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// True when the expression mentions no variable at all.
    pub fn is_constant(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Const(_) => true,
                Node::Var(_) => false,
                Node::Neg(a) | Node::Call(_, a) => walk(a),
                Node::Bin(_, a, b) => walk(a) && walk(b),
            }
        }
        walk(&self.root)
    }

    /// Free variables, zero-based and sorted.
    pub fn variables(&self) -> Vec<usize> {
        fn walk(n: &Node, out: &mut Vec<usize>) {
            match n {
                Node::Const(_) => {}
                Node::Var(i) => out.push(*i),
                Node::Neg(a) | Node::Call(_, a) => walk(a, out),
                Node::Bin(_, a, b) => {
                    walk(a, out);
                    walk(b, out)
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        debug_assert!(x.len() >= self.dim);
        eval_value(&self.root, x)
    }

    pub fn eval_jet(&self, x: &[f64]) -> Result<Jet> {
        debug_assert!(x.len() >= self.dim);
        eval_jet(&self.root, x)
    }

    /// Value, gradient and Hessian at `x`.
    pub fn eval2(&self, x: &[f64]) -> Result<FieldEval> {
        let j = self.eval_jet(x)?;
        let d = self.dim;
        Ok(FieldEval {
            value: j.v,
            gradient: j.g[..d].to_vec(),
            hessian: (0..d).map(|i| j.h[i][..d].to_vec()).collect(),
        })
    }
}

fn domain(msg: &str, v: f64) -> Error {
    Error::Domain(format!("{msg} (argument {v})"))
}

fn eval_value(n: &Node, x: &[f64]) -> Result<f64> {
    Ok(match n {
        Node::Const(c) => *c,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -eval_value(a, x)?,
        Node::Bin(op, a, b) => {
            let a = eval_value(a, x)?;
            let b = eval_value(b, x)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(domain("division by zero", b));
                    }
                    a / b
                }
            }
        }
        Node::Call(f, a) => {
            let a = eval_value(a, x)?;
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Cosh => a.cosh(),
                Func::Sinh => a.sinh(),
                Func::Sqrt => {
                    if a < 0.0 {
                        return Err(domain("sqrt of negative number", a));
                    }
                    a.sqrt()
                }
                Func::Log => {
                    if a <= 0.0 {
                        return Err(domain("log of non-positive number", a));
                    }
                    a.ln()
                }
            }
        }
    })
}

fn eval_jet(n: &Node, x: &[f64]) -> Result<Jet> {
    Ok(match n {
        Node::Const(c) => Jet::constant(*c),
        Node::Var(i) => Jet::variable(x[*i], *i),
        Node::Neg(a) => -eval_jet(a, x)?,
        Node::Bin(op, a, b) => {
            let a = eval_jet(a, x)?;
            let b = eval_jet(b, x)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b.v == 0.0 {
                        return Err(domain("division by zero", b.v));
                    }
                    a / b
                }
            }
        }
        Node::Call(f, a) => {
            let a = eval_jet(a, x)?;
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Cosh => a.cosh(),
                Func::Sinh => a.sinh(),
                Func::Sqrt => {
                    // derivatives blow up at zero
                    if a.v <= 0.0 {
                        return Err(domain("sqrt needs a positive argument", a.v));
                    }
                    a.sqrt()
                }
                Func::Log => {
                    if a.v <= 0.0 {
                        return Err(domain("log of non-positive number", a.v));
                    }
                    a.ln()
                }
            }
        }
    })
}

// ---------------------------------------------------------------------------
// printing

impl fmt::Display for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

fn write_node(n: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match n {
        // `{:?}` prints the shortest representation that reads back exactly
        Node::Const(c) if *c < 0.0 => write!(f, "(-{:?})", -c),
        Node::Const(c) => write!(f, "{c:?}"),
        Node::Var(i) => write!(f, "x{}", i + 1),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, f)?;
            write!(f, ")")
        }
        Node::Bin(op, a, b) => {
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
            };
            write!(f, "(")?;
            write_node(a, f)?;
            write!(f, " {sym} ")?;
            write_node(b, f)?;
            write!(f, ")")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, f)?;
            write!(f, ")")
        }
    }
}

// ---------------------------------------------------------------------------
// lexing and parsing

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Tok {
    kind: TokKind,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Tok>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let pos = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokKind::Plus,
            b'-' => TokKind::Minus,
            b'*' => TokKind::Star,
            b'/' => TokKind::Slash,
            b'(' => TokKind::LParen,
            b')' => TokKind::RParen,
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let s = &text[i..j];
                let v: f64 = s.parse().map_err(|_| Error::Syntax {
                    pos,
                    msg: format!("malformed number `{s}`"),
                })?;
                i = j;
                out.push(Tok {
                    kind: TokKind::Num(v),
                    pos,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                let s = text[i..j].to_string();
                i = j;
                out.push(Tok {
                    kind: TokKind::Ident(s),
                    pos,
                });
                continue;
            }
            _ => {
                return Err(Error::Syntax {
                    pos,
                    msg: format!("unexpected character `{}`", text[i..].chars().next().unwrap()),
                })
            }
        };
        out.push(Tok { kind, pos });
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Tok],
    at: usize,
    dim: usize,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.at)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn expect(&mut self, kind: TokKind, what: &str) -> Result<()> {
        match self.next() {
            Some(t) if t.kind == kind => Ok(()),
            Some(t) => Err(Error::Syntax {
                pos: t.pos,
                msg: format!("expected {what}, found {:?}", t.kind),
            }),
            None => Err(Error::Syntax {
                pos: self.end,
                msg: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokKind::Plus) => BinOp::Add,
                Some(TokKind::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.at += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokKind::Star) => BinOp::Mul,
                Some(TokKind::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.at += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if matches!(self.peek().map(|t| &t.kind), Some(TokKind::Minus)) {
            self.at += 1;
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Node> {
        let pos = self.here();
        let Some(tok) = self.next() else {
            return Err(Error::Syntax {
                pos,
                msg: "unexpected end of input".into(),
            });
        };
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Const(v)),
            TokKind::LParen => {
                let e = self.expr()?;
                self.expect(TokKind::RParen, "`)`")?;
                Ok(e)
            }
            TokKind::Ident(name) => {
                if name == "pi" {
                    return Ok(Node::Const(std::f64::consts::PI));
                }
                if let Some(func) = Func::from_name(&name) {
                    self.expect(TokKind::LParen, "`(` after function name")?;
                    let arg = self.expr()?;
                    self.expect(TokKind::RParen, "`)`")?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if let Some(digits) = name.strip_prefix('x') {
                    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                        let index: usize = digits.parse().map_err(|_| Error::Syntax {
                            pos: tok.pos,
                            msg: format!("bad variable `{name}`"),
                        })?;
                        if index == 0 || index > self.dim {
                            return Err(Error::VariableOutOfRange {
                                index,
                                dim: self.dim,
                            });
                        }
                        return Ok(Node::Var(index - 1));
                    }
                }
                Err(Error::UnknownIdentifier { pos: tok.pos, name })
            }
            other => Err(Error::Syntax {
                pos: tok.pos,
                msg: format!("unexpected {other:?}"),
            }),
        }
    }
}
