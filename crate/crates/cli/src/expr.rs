//! Arithmetic expressions over the coordinates `p1..p3`, `q1..q3`.
//!
//! Grammar:
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '·' | '/') unary)*
//! unary := '-' unary | atom
//! atom  := number | 'pi' | var | func '(' expr ')' | '(' expr ')'
//! var   := 'p1' | 'p2' | 'p3' | 'q1' | 'q2' | 'q3'
//! func  := 'cos' | 'sin'
//! ```

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Cos,
    Sin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Index into `[p1, p2, p3, q1, q2, q3]`.
    Var(usize),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

/// Parse failure at a character offset of the source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at character {})", self.message, self.offset + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<(usize, char)> = src.chars().enumerate().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            // Exponent part.
            if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].1.is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].1.is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().map(|c| c.1).collect();
            let v: f64 = text.parse().map_err(|_| ParseError {
                offset: pos,
                message: format!("malformed number '{text}'"),
            })?;
            out.push((pos, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            out.push((pos, Tok::Ident(chars[start..i].iter().map(|c| c.1).collect())));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' => Tok::Op(c),
                '·' => Tok::Op('*'),
                '−' => Tok::Op('-'),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    return Err(ParseError {
                        offset: pos,
                        message: format!("unexpected character '{c}'"),
                    })
                }
            };
            out.push((pos, tok));
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.1)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.0)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.at += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.at += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.at += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return self.fail("unexpected end of expression");
        };
        self.at += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.close()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let var = ["p1", "p2", "p3", "q1", "q2", "q3"].iter().position(|v| *v == name);
                if let Some(i) = var {
                    return Ok(Expr::Var(i));
                }
                let func = match name.as_str() {
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    "cos" => Func::Cos,
                    "sin" => Func::Sin,
                    _ => {
                        self.at -= 1;
                        return self.fail(format!("unknown name '{name}'"));
                    }
                };
                if self.peek() != Some(&Tok::LParen) {
                    return self.fail(format!("expected '(' after {name}"));
                }
                self.at += 1;
                let arg = self.expr()?;
                self.close()?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            Tok::RParen => {
                self.at -= 1;
                self.fail("unexpected ')'")
            }
            Tok::Op(c) => {
                self.at -= 1;
                self.fail(format!("unexpected operator '{c}'"))
            }
        }
    }

    fn close(&mut self) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::RParen) {
            self.at += 1;
            Ok(())
        } else {
            self.fail("expected ')'")
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let toks = lex(src)?;
        let mut p = Parser {
            toks,
            at: 0,
            end: src.chars().count(),
        };
        let e = p.expr()?;
        if p.at != p.toks.len() {
            return p.fail("unexpected trailing input");
        }
        Ok(e)
    }

    /// Evaluates at `[p1, p2, p3, q1, q2, q3]`.
    pub fn eval(&self, x: &[f64; 6]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Call(Func::Cos, a) => a.eval(x).cos(),
            Expr::Call(Func::Sin, a) => a.eval(x).sin(),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
        }
    }

    /// Whether any `q` coordinate appears.
    pub fn uses_q(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(i) => *i >= 3,
            Expr::Neg(a) | Expr::Call(_, a) => a.uses_q(),
            Expr::Bin(_, a, b) => a.uses_q() || b.uses_q(),
        }
    }

    /// Largest violation of `f(-x) = sign f(x)` on a fixed sample set,
    /// relative to `1 + |f|`, with the offending point.
    pub fn parity_defect(&self, sign: f64) -> (f64, [f64; 6]) {
        let mut worst = (0.0, [0.0; 6]);
        for k in 0..64 {
            let x: [f64; 6] = std::array::from_fn(|i| {
                let t = ((k * 7 + i * 13) % 64) as f64 + 0.37 + 0.11 * i as f64;
                -std::f64::consts::PI + 2.0 * std::f64::consts::PI * t / 64.0
            });
            let neg = x.map(|v| -v);
            let a = self.eval(&x);
            let d = (self.eval(&neg) - sign * a).abs() / (1.0 + a.abs());
            if d > worst.0 || d.is_nan() {
                worst = (if d.is_nan() { f64::INFINITY } else { d }, x);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_functions() {
        let e = Expr::parse("3 - cos(p1) - 2*sin(q2)/4 + -1").unwrap();
        let x = [0.3, 0.0, 0.0, 0.0, 0.7, 0.0];
        let want = 3.0 - 0.3f64.cos() - 2.0 * 0.7f64.sin() / 4.0 - 1.0;
        assert!((e.eval(&x) - want).abs() < 1e-15);
        assert!(e.uses_q());
        assert_eq!(Expr::parse("2·pi").unwrap().eval(&[0.0; 6]), 2.0 * std::f64::consts::PI);
        assert_eq!(Expr::parse("1.5e-1").unwrap(), Expr::Num(0.15));
    }

    #[test]
    fn errors_carry_offsets() {
        let err = Expr::parse("cos(p1 + )").unwrap_err();
        assert_eq!(err.offset, 9);
        let err = Expr::parse("tan(p1)").unwrap_err();
        assert_eq!(err.offset, 0);
        assert!(err.message.contains("tan"));
        assert!(Expr::parse("p4").is_err());
        assert!(Expr::parse("(p1").is_err());
        assert!(Expr::parse("p1 p2").is_err());
        assert!(Expr::parse("").is_err());
    }

    #[test]
    fn parity() {
        let odd = Expr::parse("sin(p1)").unwrap();
        assert!(odd.parity_defect(1.0).0 > 0.1);
        assert!(odd.parity_defect(-1.0).0 < 1e-14);
        let even = Expr::parse("1 - cos(p1 - q1)").unwrap();
        assert!(even.parity_defect(1.0).0 < 1e-14);
    }
}
