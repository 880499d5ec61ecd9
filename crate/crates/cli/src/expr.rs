//! Right-hand sides written as infix expressions.
//!
//! A program lists one derivative expression per state variable, either one
//! per line or separated by `;`. `#` starts a comment. Two optional
//! directives may precede the expressions:
//!
//! ```text
//! vars: q, p        # state names, default x1..xn (or x for one state)
//! x0: 1.0, 0.0      # initial state, default zeros
//! p
//! -q - abs(q-1)/2 + abs(q+1)/2
//! ```
//!
//! Precedence from tightest: unary minus, then `*` `/`, then `+` `-`. The
//! callable functions are `abs, min, max, sin, cos, tan, exp, log, sqrt`;
//! `min` and `max` are recorded through `abs`.

use std::fmt;

use pltrap::ad::{Node, Tape, TapeBuilder, UnaryOp, Var};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ParseError {
    #[error("{pos}: syntax error: {message}")]
    Syntax { pos: Position, message: String },

    #[error("{pos}: unknown identifier `{name}`")]
    UnknownIdentifier { pos: Position, name: String },

    #[error("{pos}: `{name}` takes {expected} argument(s), got {got}")]
    Arity {
        pos: Position,
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("{pos}: {message}")]
    Directive { pos: Position, message: String },

    #[error("expected {expected} expression(s) for the declared variables, found {found}")]
    Count { expected: usize, found: usize },

    #[error("program has no expressions")]
    Empty,

    #[error("{pos}: {source}")]
    Evaluation {
        pos: Position,
        source: pltrap::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>, Position),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Abs,
    Min,
    Max,
    Unary(UnaryOp),
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "sin" => Func::Unary(UnaryOp::Sin),
            "cos" => Func::Unary(UnaryOp::Cos),
            "tan" => Func::Unary(UnaryOp::Tan),
            "exp" => Func::Unary(UnaryOp::Exp),
            "log" => Func::Unary(UnaryOp::Log),
            "sqrt" => Func::Unary(UnaryOp::Sqrt),
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// A parsed right-hand side.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionProgram {
    pub names: Vec<String>,
    pub x0: Vec<f64>,
    pub exprs: Vec<Expr>,
    positions: Vec<Position>,
}

impl ExpressionProgram {
    /// Records the program. Nodes are emitted left to right, depth first,
    /// so equal sources give equal tapes.
    pub fn to_tape(&self) -> Result<Tape, ParseError> {
        let mut b = TapeBuilder::new(self.names.len());
        let mut outputs = Vec::with_capacity(self.exprs.len());
        for (e, pos) in self.exprs.iter().zip(&self.positions) {
            outputs.push(record(&mut b, e, *pos)?);
        }
        Ok(b.finish(&outputs))
    }
}

fn record(b: &mut TapeBuilder, e: &Expr, pos: Position) -> Result<Var, ParseError> {
    Ok(match e {
        Expr::Num(c) => b.constant(*c),
        Expr::Var(k) => b.input(*k),
        Expr::Neg(a) => {
            let a = record(b, a, pos)?;
            b.neg(a)
        }
        Expr::Binary(op, l, r) => {
            let l = record(b, l, pos)?;
            let r = record(b, r, pos)?;
            match op {
                BinOp::Add => b.add(l, r),
                BinOp::Sub => b.sub(l, r),
                BinOp::Mul => b.mul(l, r),
                BinOp::Div => b
                    .try_unary(UnaryOp::Recip, r)
                    .map(|r| b.mul(l, r))
                    .map_err(|source| ParseError::Evaluation { pos, source })?,
            }
        }
        Expr::Call(f, args, at) => {
            let mut vars = Vec::with_capacity(args.len());
            for a in args {
                vars.push(record(b, a, *at)?);
            }
            match f {
                Func::Abs => b.abs(vars[0]),
                Func::Min => b.min(vars[0], vars[1]),
                Func::Max => b.max(vars[0], vars[1]),
                Func::Unary(op) => b
                    .try_unary(*op, vars[0])
                    .map_err(|source| ParseError::Evaluation { pos: *at, source })?,
            }
        }
    })
}

/// Parses a program with the default variable names and returns its tape.
pub fn parse_expression(source: &str) -> Result<Tape, ParseError> {
    parse_program(source)?.to_tape()
}

pub fn parse_program(source: &str) -> Result<ExpressionProgram, ParseError> {
    let mut names: Option<Vec<String>> = None;
    let mut x0: Option<(Vec<f64>, Position)> = None;
    // Pieces of expression text with the position of their first character.
    let mut pieces: Vec<(&str, Position)> = Vec::new();

    for (li, raw) in source.lines().enumerate() {
        let line = li + 1;
        let text = raw.split('#').next().unwrap_or("");
        let trimmed = text.trim_start();
        let indent = text.len() - trimmed.len();
        if let Some(rest) = directive(trimmed, "vars") {
            let pos = Position {
                line,
                column: indent + 1,
            };
            if names.is_some() || !pieces.is_empty() {
                return Err(ParseError::Directive {
                    pos,
                    message: "`vars:` must come once, before the expressions".into(),
                });
            }
            names = Some(parse_names(rest, pos)?);
            continue;
        }
        if let Some(rest) = directive(trimmed, "x0") {
            let pos = Position {
                line,
                column: indent + 1,
            };
            x0 = Some((parse_numbers(rest, pos)?, pos));
            continue;
        }
        let mut offset = 0;
        for part in text.split(';') {
            if !part.trim().is_empty() {
                pieces.push((
                    part,
                    Position {
                        line,
                        column: offset + 1,
                    },
                ));
            }
            offset += part.len() + 1;
        }
    }

    if pieces.is_empty() {
        return Err(ParseError::Empty);
    }
    let declared = names.is_some();
    let names = match names {
        Some(n) => {
            if n.len() != pieces.len() {
                return Err(ParseError::Count {
                    expected: n.len(),
                    found: pieces.len(),
                });
            }
            n
        }
        None => (1..=pieces.len()).map(|i| format!("x{i}")).collect(),
    };
    let x0 = match x0 {
        Some((v, pos)) => {
            if v.len() != names.len() {
                return Err(ParseError::Directive {
                    pos,
                    message: format!(
                        "`x0:` has {} value(s) for {} variable(s)",
                        v.len(),
                        names.len()
                    ),
                });
            }
            v
        }
        None => vec![0.0; names.len()],
    };

    let mut exprs = Vec::with_capacity(pieces.len());
    let mut positions = Vec::with_capacity(pieces.len());
    for (text, start) in pieces {
        let mut p = Parser::new(text, start, &names);
        // A scalar program may call its default variable plain `x`.
        p.scalar_alias = !declared && names.len() == 1;
        let e = p.expression()?;
        p.skip_ws();
        if let Some((pos, c)) = p.peek_char() {
            return Err(ParseError::Syntax {
                pos,
                message: format!("unexpected `{c}`"),
            });
        }
        exprs.push(e);
        positions.push(start);
    }
    Ok(ExpressionProgram {
        names,
        x0,
        exprs,
        positions,
    })
}

fn directive<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.strip_prefix(key)?.trim_start();
    rest.strip_prefix(':')
}

fn parse_names(list: &str, pos: Position) -> Result<Vec<String>, ParseError> {
    let names: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
    for (i, n) in names.iter().enumerate() {
        let valid = n
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid || Func::lookup(n).is_some() {
            return Err(ParseError::Directive {
                pos,
                message: format!("invalid variable name `{n}`"),
            });
        }
        if names[..i].contains(n) {
            return Err(ParseError::Directive {
                pos,
                message: format!("variable `{n}` declared twice"),
            });
        }
    }
    Ok(names)
}

fn parse_numbers(list: &str, pos: Position) -> Result<Vec<f64>, ParseError> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ParseError::Directive {
                    pos,
                    message: format!("invalid number `{}`", s.trim()),
                })
        })
        .collect()
}

struct Parser<'a> {
    src: &'a [u8],
    at: usize,
    start: Position,
    names: &'a [String],
    scalar_alias: bool,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, start: Position, names: &'a [String]) -> Self {
        Parser {
            src: src.as_bytes(),
            at: 0,
            start,
            names,
            scalar_alias: false,
        }
    }

    fn pos_of(&self, at: usize) -> Position {
        Position {
            line: self.start.line,
            column: self.start.column + at,
        }
    }

    fn skip_ws(&mut self) {
        while self.at < self.src.len() && self.src[self.at].is_ascii_whitespace() {
            self.at += 1;
        }
    }

    fn peek_char(&self) -> Option<(Position, char)> {
        let rest = std::str::from_utf8(&self.src[self.at..]).ok()?;
        rest.chars().next().map(|c| (self.pos_of(self.at), c))
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.src.get(self.at) == Some(&c) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn error_here(&mut self, expected: &str) -> ParseError {
        self.skip_ws();
        let found = match self.peek_char() {
            Some((_, c)) => format!("`{c}`"),
            None => "end of expression".into(),
        };
        ParseError::Syntax {
            pos: self.pos_of(self.at),
            message: format!("expected {expected}, found {found}"),
        }
    }

    fn expression(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(b'+') {
                BinOp::Add
            } else if self.eat(b'-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(b'*') {
                BinOp::Mul
            } else if self.eat(b'/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let begin = self.at;
        match self.src.get(self.at) {
            Some(b'(') => {
                self.at += 1;
                let e = self.expression()?;
                if !self.eat(b')') {
                    return Err(self.error_here("`)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || *c == b'.' => self.number(begin),
            Some(c) if c.is_ascii_alphabetic() || *c == b'_' => self.identifier(begin),
            _ => Err(self.error_here("a number, variable or `(`")),
        }
    }

    fn number(&mut self, begin: usize) -> Result<Expr, ParseError> {
        let s = self.src;
        let mut i = begin;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[begin..i]).expect("ascii");
        self.at = i;
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Expr::Num)
            .ok_or_else(|| ParseError::Syntax {
                pos: self.pos_of(begin),
                message: format!("invalid number `{text}`"),
            })
    }

    fn identifier(&mut self, begin: usize) -> Result<Expr, ParseError> {
        let s = self.src;
        let mut i = begin;
        while i < s.len() && (s[i].is_ascii_alphanumeric() || s[i] == b'_') {
            i += 1;
        }
        let name = std::str::from_utf8(&s[begin..i])
            .expect("ascii")
            .to_string();
        self.at = i;
        let pos = self.pos_of(begin);
        if self.eat(b'(') {
            let func = Func::lookup(&name).ok_or(ParseError::UnknownIdentifier {
                pos,
                name: name.clone(),
            })?;
            let mut args = Vec::new();
            if !self.eat(b')') {
                loop {
                    args.push(self.expression()?);
                    if self.eat(b')') {
                        break;
                    }
                    if !self.eat(b',') {
                        return Err(self.error_here("`,` or `)`"));
                    }
                }
            }
            if args.len() != func.arity() {
                return Err(ParseError::Arity {
                    pos,
                    name,
                    expected: func.arity(),
                    got: args.len(),
                });
            }
            return Ok(Expr::Call(func, args, pos));
        }
        match self.names.iter().position(|n| *n == name) {
            Some(k) => Ok(Expr::Var(k)),
            None if self.scalar_alias && name == "x" => Ok(Expr::Var(0)),
            None if Func::lookup(&name).is_some() => Err(ParseError::Syntax {
                pos,
                message: format!("function `{name}` needs an argument list"),
            }),
            None => Err(ParseError::UnknownIdentifier { pos, name }),
        }
    }
}

/// Writes a tape as a program that parses back to a tape with the same
/// outputs. Shared nodes are expanded, so the text can be much longer than
/// the tape.
pub fn print_tape(tape: &Tape, names: &[String]) -> String {
    let mut text: Vec<String> = Vec::with_capacity(tape.nodes().len());
    for node in tape.nodes() {
        let s = match *node {
            Node::Input(k) => names[k].clone(),
            Node::Const(c) => format_literal(c),
            Node::Add(j, k) => format!("({} + {})", text[j], text[k]),
            Node::Sub(j, k) => format!("({} - {})", text[j], text[k]),
            Node::Mul(j, k) => format!("({} * {})", text[j], text[k]),
            Node::Abs(j) => format!("abs({})", text[j]),
            Node::Unary(UnaryOp::Neg, j) => format!("(-{})", text[j]),
            Node::Unary(UnaryOp::Recip, j) => format!("(1 / {})", text[j]),
            Node::Unary(op, j) => format!("{}({})", op.name(), text[j]),
        };
        text.push(s);
    }
    let mut out = format!("vars: {}\n", names.join(", "));
    for &o in tape.outputs() {
        out.push_str(&text[o]);
        out.push('\n');
    }
    out
}

/// Shortest round-trip literal; negative values are parenthesized.
fn format_literal(c: f64) -> String {
    let s = crate::output::format_real(c);
    if c.is_sign_negative() {
        format!("({s})")
    } else {
        s
    }
}
