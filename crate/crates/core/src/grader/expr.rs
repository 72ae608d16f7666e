//! Expression grammar used for symbolic answers.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary | <implicit> unary)*
//! unary   := ('-' | '+') unary | power
//! power   := postfix (('^' | '**') unary)?
//! postfix := primary '!'*
//! primary := number | constant | variable | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! Constants are `pi` and `e` (`E` accepted); functions are `sqrt exp log
//! sin cos tan abs factorial`. Any other identifier is a variable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::stats::gamma;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("unexpected character {ch:?} at byte {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unexpected {found} at byte {pos}, expected {expected}")]
    Unexpected { found: String, expected: &'static str, pos: usize },
    #[error("empty expression")]
    Empty,
    #[error("bad number {0:?}")]
    BadNumber(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
    Tan,
    Abs,
    Factorial,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "abs" | "Abs" => Func::Abs,
            "factorial" => Func::Factorial,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Abs => "abs",
            Func::Factorial => "factorial",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sqrt => x.sqrt(),
            Func::Exp => x.exp(),
            Func::Log => {
                if x > 0.0 {
                    x.ln()
                } else {
                    f64::NAN
                }
            }
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Abs => x.abs(),
            Func::Factorial => gamma(x + 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    E,
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let tokens = tokenize(src)?;
        if tokens.is_empty() {
            return Err(ParseError::Empty);
        }
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        if let Some((tok, at)) = parser.tokens.get(parser.pos) {
            return Err(ParseError::Unexpected { found: tok.to_string(), expected: "end of input", pos: *at });
        }
        Ok(expr)
    }

    /// Free variable names, sorted.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Num(_) | Expr::Pi | Expr::E => {}
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Evaluates in `f64`. Unbound variables and domain errors give NaN.
    pub fn eval(&self, env: &BTreeMap<String, f64>) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::E => std::f64::consts::E,
            Expr::Var(name) => env.get(name).copied().unwrap_or(f64::NAN),
            Expr::Neg(a) => -a.eval(env),
            Expr::Add(a, b) => a.eval(env) + b.eval(env),
            Expr::Sub(a, b) => a.eval(env) - b.eval(env),
            Expr::Mul(a, b) => a.eval(env) * b.eval(env),
            Expr::Div(a, b) => {
                let d = b.eval(env);
                if d == 0.0 {
                    f64::NAN
                } else {
                    a.eval(env) / d
                }
            }
            Expr::Pow(a, b) => a.eval(env).powf(b.eval(env)),
            Expr::Call(f, a) => f.apply(a.eval(env)),
        }
    }

    /// Value of a closed expression.
    pub fn eval_const(&self) -> Option<f64> {
        if !self.variables().is_empty() {
            return None;
        }
        let v = self.eval(&BTreeMap::new());
        v.is_finite().then_some(v)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Pi => f.write_str("pi"),
            Expr::E => f.write_str("e"),
            Expr::Var(v) => f.write_str(v),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a}*{b})"),
            Expr::Div(a, b) => write!(f, "({a}/{b})"),
            Expr::Pow(a, b) => write!(f, "({a}^{b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Bang,
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "number {v}"),
            Token::Ident(s) => write!(f, "identifier {s:?}"),
            Token::Plus => f.write_str("'+'"),
            Token::Minus => f.write_str("'-'"),
            Token::Star => f.write_str("'*'"),
            Token::Slash => f.write_str("'/'"),
            Token::Caret => f.write_str("'^'"),
            Token::Bang => f.write_str("'!'"),
            Token::LParen => f.write_str("'('"),
            Token::RParen => f.write_str("')'"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, ch) = chars[i];
        let tok = match ch {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '+' => Token::Plus,
            '-' | '\u{2212}' => Token::Minus,
            '*' | '\u{00d7}' | '\u{22c5}' => {
                if chars.get(i + 1).map(|c| c.1) == Some('*') {
                    i += 1;
                    Token::Caret
                } else {
                    Token::Star
                }
            }
            '/' | '\u{00f7}' => Token::Slash,
            '^' => Token::Caret,
            '!' => Token::Bang,
            '(' | '[' | '{' => Token::LParen,
            ')' | ']' | '}' => Token::RParen,
            '\u{03c0}' => Token::Ident("pi".into()),
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                    i += 1;
                }
                // exponent only when a digit follows, so `2e` stays 2*e
                if i < chars.len() && matches!(chars[i].1, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && matches!(chars[j].1, '+' | '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].1.is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].1.is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let end = chars.get(i).map(|c| c.0).unwrap_or(src.len());
                let text = &src[chars[start].0..end];
                let value: f64 = text.parse().map_err(|_| ParseError::BadNumber(text.to_string()))?;
                out.push((Token::Num(value), pos));
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                    i += 1;
                }
                let end = chars.get(i).map(|c| c.0).unwrap_or(src.len());
                out.push((Token::Ident(src[chars[start].0..end].to_string()), pos));
                continue;
            }
            other => return Err(ParseError::UnexpectedChar { ch: other, pos }),
        };
        out.push((tok, pos));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.0)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn fail(&self, expected: &'static str) -> ParseError {
        match self.tokens.get(self.pos) {
            Some((tok, at)) => ParseError::Unexpected { found: tok.to_string(), expected, pos: *at },
            None => ParseError::Unexpected {
                found: "end of input".into(),
                expected,
                pos: self.tokens.last().map(|t| t.1 + 1).unwrap_or(0),
            },
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(Token::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.fail("')'")),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                // implicit product: `2x`, `2(1 - x)`, `(a)(b)`
                Some(Token::Num(_)) | Some(Token::Ident(_)) | Some(Token::LParen) => {
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.power()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Token::Minus) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.postfix()?;
        if let Some(Token::Caret) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        while let Some(Token::Bang) = self.peek() {
            self.pos += 1;
            e = Expr::Call(Func::Factorial, Box::new(e));
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.bump() {
            Some(Token::Num(v)) => Ok(Expr::Num(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if let Some(func) = Func::from_name(&name) {
                    if let Some(Token::LParen) = self.peek() {
                        self.pos += 1;
                        let arg = self.expr()?;
                        self.expect_rparen()?;
                        return Ok(Expr::Call(func, Box::new(arg)));
                    }
                    self.pos -= 1;
                    return Err(self.fail("'(' after function name"));
                }
                Ok(match name.as_str() {
                    "pi" | "Pi" => Expr::Pi,
                    "e" | "E" => Expr::E,
                    _ => Expr::Var(name),
                })
            }
            Some(_) => {
                self.pos -= 1;
                Err(self.fail("a number, name or '('"))
            }
            None => Err(self.fail("a number, name or '('")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(src: &str, x: f64) -> f64 {
        let mut env = BTreeMap::new();
        env.insert("x".to_string(), x);
        Expr::parse(src).unwrap().eval(&env)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(Expr::parse("1 + 2*3").unwrap().eval_const(), Some(7.0));
        assert_eq!(Expr::parse("2^3^2").unwrap().eval_const(), Some(512.0));
        assert_eq!(Expr::parse("-2^2").unwrap().eval_const(), Some(-4.0));
        assert_eq!(Expr::parse("2**-1").unwrap().eval_const(), Some(0.5));
        assert_eq!(Expr::parse("10 - 4 - 3").unwrap().eval_const(), Some(3.0));
        assert_eq!(Expr::parse("12/6/2").unwrap().eval_const(), Some(1.0));
        assert_eq!(Expr::parse("3!").unwrap().eval_const().map(f64::round), Some(6.0));
        assert_eq!(Expr::parse("factorial(5)").unwrap().eval_const().map(f64::round), Some(120.0));
    }

    #[test]
    fn functions_and_constants() {
        assert!((at("2*(1 - exp(-x))", 1.0) - 2.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((at("2(1 - e^(-x))", 1.0) - 2.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((Expr::parse("sin(pi/2)").unwrap().eval_const().unwrap() - 1.0).abs() < 1e-15);
        assert!((Expr::parse("π").unwrap().eval_const().unwrap() - std::f64::consts::PI).abs() < 1e-15);
        assert!(at("log(x)", -1.0).is_nan());
        assert!(at("1/x", 0.0).is_nan());
    }

    #[test]
    fn implicit_multiplication() {
        assert_eq!(at("2x", 3.0), 6.0);
        assert_eq!(at("(x+1)(x-1)", 3.0), 8.0);
        assert_eq!(at("3 x^2", 2.0), 12.0);
    }

    #[test]
    fn scientific_literals() {
        assert_eq!(Expr::parse("1e-3").unwrap().eval_const(), Some(0.001));
        assert_eq!(Expr::parse("2.5E2").unwrap().eval_const(), Some(250.0));
        // `2e` is two times e
        assert!((Expr::parse("2e").unwrap().eval_const().unwrap() - 2.0 * std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn variables_are_collected() {
        let vars = Expr::parse("x*y + sin(z) + pi").unwrap().variables();
        assert_eq!(vars.into_iter().collect::<Vec<_>>(), vec!["x", "y", "z"]);
    }

    #[test]
    fn errors() {
        assert_eq!(Expr::parse("  "), Err(ParseError::Empty));
        assert!(matches!(Expr::parse("1 +"), Err(ParseError::Unexpected { .. })));
        assert!(matches!(Expr::parse("(1"), Err(ParseError::Unexpected { .. })));
        assert!(matches!(Expr::parse("sqrt 2"), Err(ParseError::Unexpected { .. })));
        assert!(matches!(Expr::parse("1 # 2"), Err(ParseError::UnexpectedChar { ch: '#', .. })));
        assert!(matches!(Expr::parse("1.2.3"), Err(ParseError::BadNumber(_))));
    }

    #[test]
    fn display_reparses_to_same_value() {
        for src in ["2*(1 - exp(-x))", "-x^2 + 3!/x", "sqrt(abs(x))*tan(x)"] {
            let e = Expr::parse(src).unwrap();
            let again = Expr::parse(&e.to_string()).unwrap();
            assert_eq!(e.eval(&[("x".to_string(), 1.3)].into()), again.eval(&[("x".to_string(), 1.3)].into()));
        }
    }
}
