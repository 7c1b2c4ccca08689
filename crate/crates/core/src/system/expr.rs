//! Expression DSL for system definitions.
//!
//! Infix grammar with standard precedence, parentheses and function calls.
//! Variables: `t` (time), `s` (kernel integration variable), `r` (radius, in
//! envelope expressions only), `x[j]` (state argument: ξ₀ in pointwise maps,
//! η in kernels), `nu[j]` (distributed functional output), `xi[i][j]`
//! (component `j` of the state delayed by `τᵢ`, `i = 0..=ℓ`). Component
//! indices are 1-based; the delay slot is 0-based with `xi[0][j] = x[j]`.
//!
//! The language has no conditionals or loops, so every expression is
//! Carathéodory and locally Lipschitz away from the guarded operations
//! (division, `pow`, `sqrt`), which raise evaluation faults instead of
//! returning non-finite values.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' factor)?
//! atom   := number | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! var    := 't' | 's' | 'r' | 'x[' int ']' | 'nu[' int ']'
//!         | 'xi[' int '][' int ']'
//! func   := exp | sin | cos | tanh | abs | sqrt | min | max | pow
//! ```

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier '{name}' at byte {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("function '{name}' expects {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("component index {0} is out of range (indices are 1-based)")]
    BadIndex(usize),
}

/// Evaluation fault: a guarded operation left the finite reals.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum EvalFault {
    #[error("division by zero")]
    DivisionByZero,
    #[error("pow produced a non-finite or complex result")]
    InvalidPow,
    #[error("sqrt of a negative number")]
    SqrtNegative,
    #[error("non-finite result")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    S,
    Radius,
    /// 0-based component of the state argument.
    X(usize),
    /// 0-based component of the distributed term.
    Nu(usize),
    /// (delay slot, 0-based component).
    Xi(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Sin,
    Cos,
    Tanh,
    Abs,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Constant-folds fully literal expressions.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Expr::Lit(v) => Some(*v),
            Expr::Var(_) => None,
            Expr::Unary(op, a) => {
                let a = a.constant_value()?;
                Some(match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Tanh => a.tanh(),
                    UnaryOp::Abs => a.abs(),
                    UnaryOp::Sqrt => a.sqrt(),
                })
            }
            Expr::Binary(op, a, b) => {
                let a = a.constant_value()?;
                let b = b.constant_value()?;
                Some(match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => a / b,
                    BinaryOp::Pow => a.powf(b),
                    BinaryOp::Min => a.min(b),
                    BinaryOp::Max => a.max(b),
                })
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant_value() == Some(0.0)
    }

    /// Walks all variables in the expression.
    pub fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Lit(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Unary(_, a) => a.visit_vars(f),
            Expr::Binary(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => 2,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Binary(BinaryOp::Pow, _, _) => 4,
            _ => 5,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn paren(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
            if e.precedence() < min_prec {
                write!(f, "(")?;
                write!(f, "{e}")?;
                write!(f, ")")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Lit(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    // keep literals nonnegative in printed form
                    write!(f, "(0 - {})", crate::history::fmt_f64(-v))
                } else if *v == v.trunc() && v.abs() < 1e15 {
                    write!(f, "{}", *v as i64)
                } else {
                    write!(f, "{}", crate::history::fmt_f64(*v))
                }
            }
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::S) => write!(f, "s"),
            Expr::Var(Var::Radius) => write!(f, "r"),
            Expr::Var(Var::X(j)) => write!(f, "x[{}]", j + 1),
            Expr::Var(Var::Nu(j)) => write!(f, "nu[{}]", j + 1),
            Expr::Var(Var::Xi(i, j)) => write!(f, "xi[{}][{}]", i, j + 1),
            Expr::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                paren(f, a, 3)
            }
            Expr::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Exp => "exp",
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Tanh => "tanh",
                    UnaryOp::Abs => "abs",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({a})")
            }
            Expr::Binary(BinaryOp::Min, a, b) => write!(f, "min({a}, {b})"),
            Expr::Binary(BinaryOp::Max, a, b) => write!(f, "max({a}, {b})"),
            Expr::Binary(op, a, b) => {
                let (sym, prec, right_assoc) = match op {
                    BinaryOp::Add => ("+", 1, false),
                    BinaryOp::Sub => ("-", 1, false),
                    BinaryOp::Mul => ("*", 2, false),
                    BinaryOp::Div => ("/", 2, false),
                    BinaryOp::Pow => ("^", 4, true),
                    _ => unreachable!(),
                };
                if right_assoc {
                    paren(f, a, prec + 1)?;
                    write!(f, " {sym} ")?;
                    paren(f, b, prec)
                } else {
                    paren(f, a, prec)?;
                    write!(f, " {sym} ")?;
                    paren(f, b, prec + 1)
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// lexer + parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '(' => {
                out.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((i, Tok::RParen));
                i += 1;
            }
            '[' => {
                out.push((i, Tok::LBracket));
                i += 1;
            }
            ']' => {
                out.push((i, Tok::RBracket));
                i += 1;
            }
            ',' => {
                out.push((i, Tok::Comma));
                i += 1;
            }
            '+' => {
                out.push((i, Tok::Plus));
                i += 1;
            }
            '-' => {
                out.push((i, Tok::Minus));
                i += 1;
            }
            '*' => {
                out.push((i, Tok::Star));
                i += 1;
            }
            '/' => {
                out.push((i, Tok::Slash));
                i += 1;
            }
            '^' => {
                out.push((i, Tok::Caret));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_digit() || d == '.' {
                        i += 1;
                    } else if (d == 'e' || d == 'E')
                        && i + 1 < bytes.len()
                        && ((bytes[i + 1] as char).is_ascii_digit()
                            || bytes[i + 1] == b'+'
                            || bytes[i + 1] == b'-')
                    {
                        i += 2;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                        break;
                    } else {
                        break;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    pos: start,
                    message: format!("bad number literal '{text}'"),
                })?;
                out.push((start, Tok::Num(v)));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
            }
            other => {
                return Err(ExprError::Syntax { pos: i, message: format!("unexpected character '{other}'") })
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.len)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        let pos = self.here();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(ExprError::Syntax { pos, message: format!("expected {what}") }),
        }
    }

    fn index(&mut self) -> Result<usize, ExprError> {
        self.expect(Tok::LBracket, "'['")?;
        let pos = self.here();
        let v = match self.bump() {
            Some(Tok::Num(v)) if v >= 0.0 && v == v.trunc() => v as usize,
            _ => return Err(ExprError::Syntax { pos, message: "expected a nonnegative integer index".into() }),
        };
        self.expect(Tok::RBracket, "']'")?;
        Ok(v)
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Binary(BinaryOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Binary(BinaryOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = Expr::Binary(BinaryOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = Expr::Binary(BinaryOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            let inner = self.factor()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            let exponent = self.factor()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Lit(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => self.ident(pos, name),
            _ => Err(ExprError::Syntax { pos, message: "expected a number, variable, function or '('".into() }),
        }
    }

    fn ident(&mut self, pos: usize, name: String) -> Result<Expr, ExprError> {
        let unary = |op: UnaryOp| -> Option<UnaryOp> { Some(op) };
        let maybe_unary = match name.as_str() {
            "exp" => unary(UnaryOp::Exp),
            "sin" => unary(UnaryOp::Sin),
            "cos" => unary(UnaryOp::Cos),
            "tanh" => unary(UnaryOp::Tanh),
            "abs" => unary(UnaryOp::Abs),
            "sqrt" => unary(UnaryOp::Sqrt),
            _ => None,
        };
        if let Some(op) = maybe_unary {
            let args = self.call_args(&name)?;
            if args.len() != 1 {
                return Err(ExprError::Arity { name, expected: 1, got: args.len() });
            }
            return Ok(Expr::Unary(op, Box::new(args.into_iter().next().unwrap())));
        }
        let maybe_binary = match name.as_str() {
            "min" => Some(BinaryOp::Min),
            "max" => Some(BinaryOp::Max),
            "pow" => Some(BinaryOp::Pow),
            _ => None,
        };
        if let Some(op) = maybe_binary {
            let args = self.call_args(&name)?;
            if args.len() != 2 {
                return Err(ExprError::Arity { name, expected: 2, got: args.len() });
            }
            let mut it = args.into_iter();
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            return Ok(Expr::Binary(op, Box::new(a), Box::new(b)));
        }
        match name.as_str() {
            "t" => Ok(Expr::Var(Var::T)),
            "s" => Ok(Expr::Var(Var::S)),
            "r" => Ok(Expr::Var(Var::Radius)),
            "x" => {
                let j = self.index()?;
                if j == 0 {
                    return Err(ExprError::BadIndex(j));
                }
                Ok(Expr::Var(Var::X(j - 1)))
            }
            "nu" => {
                let j = self.index()?;
                if j == 0 {
                    return Err(ExprError::BadIndex(j));
                }
                Ok(Expr::Var(Var::Nu(j - 1)))
            }
            "xi" => {
                let i = self.index()?;
                let j = self.index()?;
                if j == 0 {
                    return Err(ExprError::BadIndex(j));
                }
                Ok(Expr::Var(Var::Xi(i, j - 1)))
            }
            _ => Err(ExprError::UnknownIdentifier { name, pos }),
        }
    }

    fn call_args(&mut self, name: &str) -> Result<Vec<Expr>, ExprError> {
        self.expect(Tok::LParen, &format!("'(' after function '{name}'"))?;
        let mut args = vec![self.expr()?];
        while matches!(self.peek(), Some(Tok::Comma)) {
            self.bump();
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen, "')'")?;
        Ok(args)
    }
}

/// Parses an expression in the documented grammar.
pub fn parse_expr(src: &str) -> Result<Expr, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, len: src.len() };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(ExprError::Syntax { pos: p.here(), message: "trailing input".into() });
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// compiled form
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum Instr {
    Push(f64),
    T,
    S,
    Radius,
    X(u32),
    Nu(u32),
    /// Flattened `(delay slot)·n + component` into the joint state vector.
    Xi(u32),
    Neg,
    Exp,
    Sin,
    Cos,
    Tanh,
    Abs,
    Sqrt,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

/// Evaluation context. `x` is the state argument (ξ₀ for pointwise maps, η
/// for kernels), `xi` the flattened `(ℓ+1)·n` joint delayed state.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalCtx<'a> {
    pub t: f64,
    pub s: f64,
    pub radius: f64,
    pub x: &'a [f64],
    pub nu: &'a [f64],
    pub xi: &'a [f64],
}

/// Reusable operand stack.
#[derive(Debug, Default)]
pub struct Scratch {
    stack: Vec<f64>,
}

/// Flat postfix program compiled from an [`Expr`] for a system with `n`
/// state components.
#[derive(Debug, Clone)]
pub struct Program {
    ast: Expr,
    instrs: Vec<Instr>,
}

impl Program {
    pub fn compile(ast: Expr, n: usize) -> Self {
        let mut instrs = Vec::new();
        fn emit(e: &Expr, n: usize, out: &mut Vec<Instr>) {
            match e {
                Expr::Lit(v) => out.push(Instr::Push(*v)),
                Expr::Var(Var::T) => out.push(Instr::T),
                Expr::Var(Var::S) => out.push(Instr::S),
                Expr::Var(Var::Radius) => out.push(Instr::Radius),
                Expr::Var(Var::X(j)) => out.push(Instr::X(*j as u32)),
                Expr::Var(Var::Nu(j)) => out.push(Instr::Nu(*j as u32)),
                Expr::Var(Var::Xi(i, j)) => out.push(Instr::Xi((i * n + j) as u32)),
                Expr::Unary(op, a) => {
                    emit(a, n, out);
                    out.push(match op {
                        UnaryOp::Neg => Instr::Neg,
                        UnaryOp::Exp => Instr::Exp,
                        UnaryOp::Sin => Instr::Sin,
                        UnaryOp::Cos => Instr::Cos,
                        UnaryOp::Tanh => Instr::Tanh,
                        UnaryOp::Abs => Instr::Abs,
                        UnaryOp::Sqrt => Instr::Sqrt,
                    });
                }
                Expr::Binary(op, a, b) => {
                    emit(a, n, out);
                    emit(b, n, out);
                    out.push(match op {
                        BinaryOp::Add => Instr::Add,
                        BinaryOp::Sub => Instr::Sub,
                        BinaryOp::Mul => Instr::Mul,
                        BinaryOp::Div => Instr::Div,
                        BinaryOp::Pow => Instr::Pow,
                        BinaryOp::Min => Instr::Min,
                        BinaryOp::Max => Instr::Max,
                    });
                }
            }
        }
        emit(&ast, n, &mut instrs);
        Self { ast, instrs }
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn is_zero(&self) -> bool {
        self.ast.is_zero()
    }

    pub fn eval(&self, ctx: &EvalCtx<'_>, scratch: &mut Scratch) -> Result<f64, EvalFault> {
        let stack = &mut scratch.stack;
        stack.clear();
        for instr in &self.instrs {
            match instr {
                Instr::Push(v) => stack.push(*v),
                Instr::T => stack.push(ctx.t),
                Instr::S => stack.push(ctx.s),
                Instr::Radius => stack.push(ctx.radius),
                Instr::X(j) => stack.push(ctx.x[*j as usize]),
                Instr::Nu(j) => stack.push(ctx.nu[*j as usize]),
                Instr::Xi(j) => stack.push(ctx.xi[*j as usize]),
                Instr::Neg => {
                    let a = stack.last_mut().unwrap();
                    *a = -*a;
                }
                Instr::Exp => {
                    let a = stack.last_mut().unwrap();
                    *a = a.exp();
                }
                Instr::Sin => {
                    let a = stack.last_mut().unwrap();
                    *a = a.sin();
                }
                Instr::Cos => {
                    let a = stack.last_mut().unwrap();
                    *a = a.cos();
                }
                Instr::Tanh => {
                    let a = stack.last_mut().unwrap();
                    *a = a.tanh();
                }
                Instr::Abs => {
                    let a = stack.last_mut().unwrap();
                    *a = a.abs();
                }
                Instr::Sqrt => {
                    let a = stack.last_mut().unwrap();
                    if *a < 0.0 {
                        return Err(EvalFault::SqrtNegative);
                    }
                    *a = a.sqrt();
                }
                Instr::Add => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    *a += b;
                }
                Instr::Sub => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    *a -= b;
                }
                Instr::Mul => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    *a *= b;
                }
                Instr::Div => {
                    let b = stack.pop().unwrap();
                    if b == 0.0 {
                        return Err(EvalFault::DivisionByZero);
                    }
                    let a = stack.last_mut().unwrap();
                    *a /= b;
                }
                Instr::Pow => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    let v = a.powf(b);
                    if !v.is_finite() {
                        return Err(EvalFault::InvalidPow);
                    }
                    *a = v;
                }
                Instr::Min => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    *a = a.min(b);
                }
                Instr::Max => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    *a = a.max(b);
                }
            }
        }
        let v = stack.pop().unwrap();
        if !v.is_finite() {
            return Err(EvalFault::NonFinite);
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_str(src: &str, ctx: &EvalCtx<'_>) -> f64 {
        let ast = parse_expr(src).unwrap();
        Program::compile(ast, 4).eval(ctx, &mut Scratch::default()).unwrap()
    }

    #[test]
    fn literal_zero() {
        assert_eq!(parse_expr("0").unwrap(), Expr::Lit(0.0));
    }

    #[test]
    fn cubic_damping_with_distributed_term() {
        let ast = parse_expr("-x[1]*x[1]*x[1] + nu[1]").unwrap();
        let prog = Program::compile(ast, 1);
        let x = [2.0];
        let nu = [0.25];
        let ctx = EvalCtx { x: &x, nu: &nu, ..Default::default() };
        let got = prog.eval(&ctx, &mut Scratch::default()).unwrap();
        assert!((got - (-7.75)).abs() < 1e-15);
    }

    #[test]
    fn kernel_expression_closed_form() {
        // exp(s)*x[1] at s = -1, x[1] = 1 → e^{-1}
        let x = [1.0];
        let ctx = EvalCtx { s: -1.0, x: &x, ..Default::default() };
        let got = eval_str("exp(s)*x[1]", &ctx);
        assert!((got - 0.36787944117144233).abs() < 1e-15);
    }

    #[test]
    fn precedence_and_power() {
        let ctx = EvalCtx { t: 2.0, ..Default::default() };
        assert_eq!(eval_str("1 + 2 * 3", &ctx), 7.0);
        assert_eq!(eval_str("2 ^ 3 ^ 2", &ctx), 512.0); // right associative
        assert_eq!(eval_str("-t^2", &ctx), -4.0);
        assert_eq!(eval_str("(1 + 2) * 3", &ctx), 9.0);
        assert_eq!(eval_str("min(3, max(1, 2))", &ctx), 2.0);
        assert_eq!(eval_str("pow(2, 10)", &ctx), 1024.0);
        assert_eq!(eval_str("6 / 3 / 2", &ctx), 1.0); // left associative
    }

    #[test]
    fn xi_indexing() {
        let xi = [10.0, 11.0, 20.0, 21.0]; // n = 2, slots 0 and 1
        let ctx = EvalCtx { x: &xi[0..2], xi: &xi, ..Default::default() };
        let ast = parse_expr("xi[1][2] - xi[0][1]").unwrap();
        let got = Program::compile(ast, 2).eval(&ctx, &mut Scratch::default()).unwrap();
        assert_eq!(got, 11.0); // 21 - 10
    }

    #[test]
    fn error_cases() {
        assert!(matches!(parse_expr("2 +"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("foo(1)"), Err(ExprError::UnknownIdentifier { .. })));
        assert!(matches!(parse_expr("min(1)"), Err(ExprError::Arity { .. })));
        assert!(matches!(parse_expr("x[0]"), Err(ExprError::BadIndex(0))));
        assert!(matches!(parse_expr("1 2"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("x[1.5]"), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn guarded_evaluation() {
        let ctx = EvalCtx::default();
        let run = |src: &str| {
            Program::compile(parse_expr(src).unwrap(), 1).eval(&ctx, &mut Scratch::default())
        };
        assert_eq!(run("1 / (t - t)"), Err(EvalFault::DivisionByZero));
        assert_eq!(run("sqrt(0 - 1)"), Err(EvalFault::SqrtNegative));
        assert_eq!(run("(0-1) ^ 0.5"), Err(EvalFault::InvalidPow));
        assert!(run("sqrt(4)").unwrap() == 2.0);
    }

    #[test]
    fn pretty_print_reparses_to_equal_ast() {
        let samples = [
            "0",
            "-x[1]*x[1]*x[1] + nu[1]",
            "exp(s)*x[1]",
            "(1 + tanh(nu[1])) * xi[1][1]",
            "-x[1]^3 + 2^-t",
            "min(t, max(s, 0.5)) / (1 + abs(x[2]))",
            "pow(x[1], 3) - sqrt(abs(s))",
            "2 ^ 3 ^ 2",
            "6 / 3 / 2",
            "1 - 2 - 3",
            "-(t + s)",
        ];
        for src in samples {
            let a = parse_expr(src).unwrap();
            let printed = a.to_string();
            let b = parse_expr(&printed).unwrap_or_else(|e| panic!("reparse of '{printed}': {e}"));
            assert_eq!(a, b, "{src} → {printed}");
            // printing is a fixed point after one round
            assert_eq!(printed, b.to_string());
        }
    }
}
