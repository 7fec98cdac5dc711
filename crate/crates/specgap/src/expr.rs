//! Arithmetic expressions in one variable `x`.
//!
//! Coefficients a(x), b(x) and densities arrive from config files as text.
//! A hand-written lexer feeds a recursive-descent parser; the AST evaluates
//! in double precision and pretty-prints back to parseable text.
//!
//! Precedence, loosest to tightest: `+ -`, leading unary `-`, `* /`,
//! operand unary `-`, `^` (right-associative). So `-2*x` is `-(2*x)`,
//! `-a^b` is `-(a^b)`, and `2*-x` is `2*(-x)`; all agree numerically with
//! the flat reading.

use std::fmt;
use thiserror::Error;

/// Named constants available in expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedConst {
    Pi,
    E,
}

impl NamedConst {
    fn value(self) -> f64 {
        match self {
            NamedConst::Pi => std::f64::consts::PI,
            NamedConst::E => std::f64::consts::E,
        }
    }

    fn name(self) -> &'static str {
        match self {
            NamedConst::Pi => "pi",
            NamedConst::E => "e",
        }
    }
}

/// Binary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Built-in functions with fixed arity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Abs,
    Pow,
    Min,
    Max,
}

impl Func {
    pub fn arity(self) -> usize {
        match self {
            Func::Pow | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "pow" => Func::Pow,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }
}

/// One node of an expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(f64),
    Var,
    Const(NamedConst),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// A parsed expression in the variable `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprAst {
    pub root: Expr,
}

/// Errors from parsing or evaluating expressions.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: expected {expected}, found {found}")]
    Syntax { offset: usize, expected: String, found: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdent { offset: usize, name: String },
    #[error("domain error in `{node}` at x = {x}: {reason}")]
    Domain { node: String, x: f64, reason: String },
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Caret => write!(f, "`^`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::End => write!(f, "end of input"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => { toks.push((Tok::Plus, i)); i += 1; }
            b'-' => { toks.push((Tok::Minus, i)); i += 1; }
            b'*' => { toks.push((Tok::Star, i)); i += 1; }
            b'/' => { toks.push((Tok::Slash, i)); i += 1; }
            b'^' => { toks.push((Tok::Caret, i)); i += 1; }
            b'(' => { toks.push((Tok::LParen, i)); i += 1; }
            b')' => { toks.push((Tok::RParen, i)); i += 1; }
            b',' => { toks.push((Tok::Comma, i)); i += 1; }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() { i += 1; }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() { i += 1; }
                }
                // Exponent part only when followed by digits; a bare `e`
                // after a number stays an identifier (so `2e` lexes as 2, e).
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') { j += 1; }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() { i += 1; }
                    }
                }
                let slice = &text[start..i];
                let v: f64 = slice.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    expected: "a numeric literal".into(),
                    found: format!("`{slice}`"),
                })?;
                toks.push((Tok::Num(v), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(ExprError::Syntax {
                    offset: i,
                    expected: "an operator, operand, or parenthesis".into(),
                    found: format!("`{}`", &text[i..i + 1]),
                });
            }
        }
    }
    toks.push((Tok::End, bytes.len()));
    Ok(toks)
}

// --------------------------------------------------------------- parser

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, expected: &str) -> Result<(), ExprError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.err(expected))
        }
    }

    fn err(&self, expected: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.offset(),
            expected: expected.into(),
            found: self.peek().to_string(),
        }
    }

    // additive := term (('+'|'-') term)*
    fn additive(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // term := '-' term | product   (leading minus spans the whole product)
    fn term(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            Ok(Expr::Neg(Box::new(self.term()?)))
        } else {
            self.product()
        }
    }

    // product := factor (('*'|'/') factor)*
    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // factor := '-' factor | power   (minus after an operator binds to one operand)
    fn factor(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            Ok(Expr::Neg(Box::new(self.factor()?)))
        } else {
            self.power()
        }
    }

    // power := atom ('^' factor)?   (right-associative via recursion)
    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exp = self.factor()?;
            Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Lit(v)),
            Tok::LParen => {
                let inner = self.additive()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(ExprError::UnknownIdent { offset, name: name.clone() })?;
                    self.bump();
                    let mut args = vec![self.additive()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.additive()?);
                    }
                    self.expect(Tok::RParen, "`)` or `,`")?;
                    if args.len() != func.arity() {
                        return Err(ExprError::Syntax {
                            offset,
                            expected: format!(
                                "{} argument(s) to {}",
                                func.arity(),
                                func.name()
                            ),
                            found: format!("{} argument(s)", args.len()),
                        });
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    match name.as_str() {
                        "x" => Ok(Expr::Var),
                        "pi" => Ok(Expr::Const(NamedConst::Pi)),
                        "e" => Ok(Expr::Const(NamedConst::E)),
                        _ => Err(ExprError::UnknownIdent { offset, name }),
                    }
                }
            }
            other => Err(ExprError::Syntax {
                offset,
                expected: "an operand".into(),
                found: other.to_string(),
            }),
        }
    }
}

/// Parse expression text into an AST.
pub fn parse_expr(text: &str) -> Result<ExprAst, ExprError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let root = p.additive()?;
    if *p.peek() != Tok::End {
        return Err(p.err("an operator or end of input"));
    }
    Ok(ExprAst { root })
}

// ------------------------------------------------------------ evaluation

fn eval_node(node: &Expr, x: f64) -> Result<f64, ExprError> {
    let domain_err = |node: &Expr, reason: String| ExprError::Domain {
        node: print_node(node, 0),
        x,
        reason,
    };
    match node {
        Expr::Lit(v) => Ok(*v),
        Expr::Var => Ok(x),
        Expr::Const(c) => Ok(c.value()),
        Expr::Neg(e) => Ok(-eval_node(e, x)?),
        Expr::Bin(op, l, r) => {
            let a = eval_node(l, x)?;
            let b = eval_node(r, x)?;
            match op {
                BinOp::Add => Ok(a + b),
                BinOp::Sub => Ok(a - b),
                BinOp::Mul => {
                    let v = a * b;
                    if v.is_nan() && !a.is_nan() && !b.is_nan() {
                        Err(domain_err(node, format!("indeterminate product {a} * {b}")))
                    } else {
                        Ok(v)
                    }
                }
                BinOp::Div => {
                    if b == 0.0 {
                        Err(domain_err(node, "division by zero".into()))
                    } else {
                        Ok(a / b)
                    }
                }
                BinOp::Pow => pow_checked(node, a, b, &domain_err),
            }
        }
        Expr::Call(func, args) => {
            let a = eval_node(&args[0], x)?;
            match func {
                Func::Exp => Ok(a.exp()),
                Func::Log => {
                    if a <= 0.0 {
                        Err(domain_err(node, format!("log of non-positive value {a}")))
                    } else {
                        Ok(a.ln())
                    }
                }
                Func::Sqrt => {
                    if a < 0.0 {
                        Err(domain_err(node, format!("sqrt of negative value {a}")))
                    } else {
                        Ok(a.sqrt())
                    }
                }
                Func::Sin => Ok(a.sin()),
                Func::Cos => Ok(a.cos()),
                Func::Abs => Ok(a.abs()),
                Func::Pow => {
                    let b = eval_node(&args[1], x)?;
                    pow_checked(node, a, b, &domain_err)
                }
                Func::Min => {
                    let b = eval_node(&args[1], x)?;
                    Ok(a.min(b))
                }
                Func::Max => {
                    let b = eval_node(&args[1], x)?;
                    Ok(a.max(b))
                }
            }
        }
    }
}

fn pow_checked(
    node: &Expr,
    a: f64,
    b: f64,
    domain_err: &dyn Fn(&Expr, String) -> ExprError,
) -> Result<f64, ExprError> {
    if a == 0.0 && b < 0.0 {
        return Err(domain_err(node, format!("zero raised to negative power {b}")));
    }
    let v = a.powf(b);
    if v.is_nan() && !a.is_nan() && !b.is_nan() {
        Err(domain_err(node, format!("{a} raised to power {b} is undefined")))
    } else {
        Ok(v)
    }
}

/// Evaluate an AST at the point `x`.
pub fn eval_expr(ast: &ExprAst, x: f64) -> Result<f64, ExprError> {
    eval_node(&ast.root, x)
}

impl ExprAst {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        parse_expr(text)
    }

    pub fn eval(&self, x: f64) -> Result<f64, ExprError> {
        eval_expr(self, x)
    }
}

// -------------------------------------------------------------- printer

// Context levels mirror the grammar: 0 additive, 1 term, 2 product,
// 3 factor, 4 power-base. A node prints parenthesized when its own level
// is below the context's minimum.
fn node_level(node: &Expr) -> u8 {
    match node {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 0,
        Expr::Neg(..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Bin(BinOp::Pow, ..) => 3,
        _ => 4,
    }
}

fn print_node(node: &Expr, min_level: u8) -> String {
    let s = match node {
        Expr::Lit(v) => format!("{v}"),
        Expr::Var => "x".to_string(),
        Expr::Const(c) => c.name().to_string(),
        Expr::Neg(e) => format!("-{}", print_node(e, 1)),
        Expr::Bin(op, l, r) => {
            let (sym, ll, rl) = match op {
                BinOp::Add => ("+", 0, 1),
                BinOp::Sub => ("-", 0, 1),
                BinOp::Mul => ("*", 2, 3),
                BinOp::Div => ("/", 2, 3),
                BinOp::Pow => ("^", 4, 3),
            };
            format!("{}{}{}", print_node(l, ll), sym, print_node(r, rl))
        }
        Expr::Call(func, args) => {
            let inner: Vec<String> = args.iter().map(|a| print_node(a, 0)).collect();
            format!("{}({})", func.name(), inner.join(","))
        }
    };
    if node_level(node) < min_level {
        format!("({s})")
    } else {
        s
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", print_node(&self.root, 0))
    }
}
