//! Small arithmetic language for order fields.
//!
//! ```text
//! 1 - 0.9*tanh(|x|)
//! 0.4*chi(x1 > 0 && x2 > 0) + 1.2*chi(!(x1 > 0 && x2 > 0))
//! 0.8 + 1.2*max(abs(x1), abs(x2))
//! ```
//!
//! `x1..x3` are coordinates, `|x|` is the Euclidean norm (in 1D plain `x` is
//! also accepted), `|e|` is the absolute value of any other expression.
//! Comparisons and `&&`, `||`, `!` yield 1 or 0; `chi(c)` is 1 where `c` is nonzero.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::OrderField;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Coord(usize),
    Norm,
    Neg(Box<Node>),
    Not(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Abs,
    Tanh,
    Exp,
    Sqrt,
    Sin,
    Cos,
    Ln,
    Max,
    Min,
    Chi,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(&'static str),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    const SYMS: [&str; 19] = [
        "&&", "||", "<=", ">=", "==", "!=", "<", ">", "!", "+", "-", "*", "/", "^", "(", ")", ",", "|", "**",
    ];
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number '{text}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            // "||" is ambiguous with two bars; it is an operator only when a value precedes it
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let after_value = matches!(out.last(), Some(Tok::Num(_) | Tok::Ident(_) | Tok::Sym(")")));
            let sym = if two == "**" {
                Some("^")
            } else if two.len() == 2 && SYMS.contains(&two.as_str()) && (two != "||" || after_value) {
                SYMS.iter().copied().find(|s| *s == two)
            } else {
                SYMS.iter().copied().find(|s| s.len() == 1 && s.starts_with(c))
            };
            match sym {
                Some(s) => {
                    i += if two == "**" { 2 } else { s.len() };
                    out.push(Tok::Sym(s));
                }
                None => return Err(Error::Expression(format!("unexpected character '{c}'"))),
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    dim: usize,
    bars: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(t)) if *t == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<()> {
        if self.eat(s) {
            Ok(())
        } else {
            Err(Error::Expression(format!("expected '{s}' at token {}", self.pos)))
        }
    }

    fn binary(&mut self, ops: &[(&str, Op)], next: fn(&mut Self) -> Result<Node>) -> Result<Node> {
        let mut lhs = next(self)?;
        'outer: loop {
            for &(s, op) in ops {
                // inside |...| a bare "|" closes the bars, so "||" cannot be an operator there
                if s == "||" && self.bars > 0 {
                    continue;
                }
                if self.eat(s) {
                    let rhs = next(self)?;
                    lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn or(&mut self) -> Result<Node> {
        self.binary(&[("||", Op::Or)], Self::and)
    }

    fn and(&mut self) -> Result<Node> {
        self.binary(&[("&&", Op::And)], Self::cmp)
    }

    fn cmp(&mut self) -> Result<Node> {
        self.binary(
            &[("<=", Op::Le), (">=", Op::Ge), ("==", Op::Eq), ("!=", Op::Ne), ("<", Op::Lt), (">", Op::Gt)],
            Self::add,
        )
    }

    fn add(&mut self) -> Result<Node> {
        self.binary(&[("+", Op::Add), ("-", Op::Sub)], Self::mul)
    }

    fn mul(&mut self) -> Result<Node> {
        self.binary(&[("*", Op::Mul), ("/", Op::Div)], Self::unary)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat("-") {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat("+") {
            return self.unary();
        }
        if self.eat("!") {
            return Ok(Node::Not(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat("^") {
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let saved = std::mem::replace(&mut self.bars, 0);
                let e = self.or()?;
                self.bars = saved;
                self.expect(")")?;
                Ok(e)
            }
            Some(Tok::Sym("|")) => {
                self.pos += 1;
                if matches!(self.peek(), Some(Tok::Ident(s)) if s == "x")
                    && matches!(self.toks.get(self.pos + 1), Some(Tok::Sym("|")))
                {
                    self.pos += 2;
                    return Ok(Node::Norm);
                }
                self.bars += 1;
                let e = self.or()?;
                self.bars -= 1;
                self.expect("|")?;
                Ok(Node::Call(Func::Abs, vec![e]))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.eat("(") {
                    let func = match name.as_str() {
                        "abs" => Func::Abs,
                        "tanh" => Func::Tanh,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "ln" | "log" => Func::Ln,
                        "max" => Func::Max,
                        "min" => Func::Min,
                        "chi" => Func::Chi,
                        other => return Err(Error::Expression(format!("unknown function '{other}'"))),
                    };
                    let saved = std::mem::replace(&mut self.bars, 0);
                    let mut args = vec![self.or()?];
                    while self.eat(",") {
                        args.push(self.or()?);
                    }
                    self.bars = saved;
                    self.expect(")")?;
                    let ok = match func {
                        Func::Max | Func::Min => !args.is_empty(),
                        _ => args.len() == 1,
                    };
                    if !ok {
                        return Err(Error::Expression(format!("wrong argument count for '{name}'")));
                    }
                    return Ok(Node::Call(func, args));
                }
                match name.as_str() {
                    "x" if self.dim == 1 => Ok(Node::Coord(0)),
                    "x" => Err(Error::Expression("bare 'x' is ambiguous beyond 1D; use x1.. or |x|".into())),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    s if s.starts_with('x') => {
                        let k: usize = s[1..]
                            .parse()
                            .map_err(|_| Error::Expression(format!("unknown variable '{s}'")))?;
                        if k == 0 || k > self.dim {
                            return Err(Error::Expression(format!("coordinate '{s}' outside dimension {}", self.dim)));
                        }
                        Ok(Node::Coord(k - 1))
                    }
                    other => Err(Error::Expression(format!("unknown variable '{other}'"))),
                }
            }
            other => Err(Error::Expression(format!("unexpected token {other:?}"))),
        }
    }
}

fn truth(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Coord(k) => x[*k],
            Node::Norm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Node::Neg(a) => -a.eval(x),
            Node::Not(a) => truth(a.eval(x) == 0.0),
            Node::Bin(op, a, b) => {
                let (l, r) = (a.eval(x), b.eval(x));
                match op {
                    Op::Add => l + r,
                    Op::Sub => l - r,
                    Op::Mul => l * r,
                    Op::Div => l / r,
                    Op::Pow => l.powf(r),
                    Op::Lt => truth(l < r),
                    Op::Le => truth(l <= r),
                    Op::Gt => truth(l > r),
                    Op::Ge => truth(l >= r),
                    Op::Eq => truth(l == r),
                    Op::Ne => truth(l != r),
                    Op::And => truth(l != 0.0 && r != 0.0),
                    Op::Or => truth(l != 0.0 || r != 0.0),
                }
            }
            Node::Call(f, args) => {
                let v = args[0].eval(x);
                match f {
                    Func::Abs => v.abs(),
                    Func::Tanh => v.tanh(),
                    Func::Exp => v.exp(),
                    Func::Sqrt => v.sqrt(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Ln => v.ln(),
                    Func::Chi => truth(v != 0.0),
                    Func::Max => args[1..].iter().fold(v, |m, a| m.max(a.eval(x))),
                    Func::Min => args[1..].iter().fold(v, |m, a| m.min(a.eval(x))),
                }
            }
        }
    }
}

/// Parsed expression over points of a fixed dimension.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Arc<Node>,
    dim: usize,
    source: String,
}

impl Expr {
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        let toks = tokenize(src)?;
        if toks.is_empty() {
            return Err(Error::Expression("empty expression".into()));
        }
        let mut p = Parser { toks, pos: 0, dim, bars: 0 };
        let root = p.or()?;
        if p.pos != p.toks.len() {
            return Err(Error::Expression(format!("trailing input at token {} of '{src}'", p.pos)));
        }
        Ok(Self { root: Arc::new(root), dim, source: src.to_string() })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.root.eval(x)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Order field with provisional bounds `(0, 2]`; sampling tightens them.
    pub fn into_order_field(self) -> OrderField {
        OrderField::from_fn(move |x| self.eval(x), f64::MIN_POSITIVE, 2.0)
    }
}

/// Named order fields from the experiments: `(name, expression)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("alpha1", "1 - 0.9*tanh(|x|)"),
    ("alpha2", "1 + 0.9*tanh(|x|)"),
    ("alpha3_1d", "0.4*chi(x1 > 0) + 1.2*chi(x1 <= 0)"),
    ("alpha3_2d", "0.4*chi(x1 > 0 && x2 > 0) + 1.2*chi(!(x1 > 0 && x2 > 0))"),
    ("alpha1_1d", "1 - 0.9*tanh(|x|)"),
    ("alpha2_1d", "1 + 0.9*tanh(|x|)"),
    ("alpha3_piecewise_1d", "0.4*chi(x1 > 0) + 1.2*chi(x1 <= 0)"),
    ("alpha3_3d", "0.4*chi(x1 > 0 && x2 > 0 && x3 > 0) + 1.2*chi(!(x1 > 0 && x2 > 0 && x3 > 0))"),
    ("case1_linear", "1 + |x|/4"),
    ("tanh_half", "1 - 0.5*tanh(|x|)"),
    ("case1_piecewise", "0.4*chi(x1 <= 0) + 1.2*chi(x1 > 0)"),
    ("case2_linear", "1 + |x|/2"),
    ("case2_box", "1.6*chi(abs(x1) <= 0.8 && abs(x2) <= 0.8) + 2*chi(!(abs(x1) <= 0.8 && abs(x2) <= 0.8))"),
    ("boundary2_a", "0.8 + 1.2*max(abs(x1), abs(x2))"),
    ("boundary2_b", "1.2 + 0.8*max(abs(x1), abs(x2))"),
    ("boundary2_c", "1.6 + 0.4*max(abs(x1), abs(x2))"),
    ("const2", "2"),
    ("parabolic_linear", "1 + |x|/10"),
    ("ac_left", "1.5 - 0.2*tanh(|x|)"),
    ("ac_middle", "1.8 + |x|/8"),
    ("ac_right", "0.2*tanh(10*(x1 - 0.5)) + 0.2*tanh(10*(x2 - 0.5)) + 1.5"),
    ("coexist_a", "1.5 + |x|/4"),
    ("coexist_b", "0.6 + |x|/2"),
    ("coexist_c", "0.3*tanh(10*x1) + 1.7"),
    ("bench_linear", "1 + |x|/4"),
    ("bench_shifted", "1.5 + |x|/4"),
    ("const16", "1.6"),
];

/// Resolves a preset name, or parses `spec` as an expression.
pub fn order_field(spec: &str, dim: usize) -> Result<OrderField> {
    let src = PRESETS
        .iter()
        .find(|(name, _)| *name == spec)
        .map_or(spec, |(_, e)| e);
    Ok(Expr::parse(src, dim)?.into_order_field())
}

pub fn is_preset(name: &str) -> bool {
    PRESETS.iter().any(|(n, _)| *n == name)
}
