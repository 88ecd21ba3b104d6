//! Recursive-descent parser for the infix expression grammar.
//!
//! ```text
//! expr     := term { ("+" | "-") term }
//! term     := unary { ("*" | "/") unary }
//! unary    := "-" unary | power
//! power    := atom [ "^" exponent ]
//! atom     := number | ident | ident "(" expr ")" | "(" expr ")"
//! exponent := [ "-" ] number | "(" [ "-" ] integer [ "/" integer ] ")"
//! ```
//!
//! Identifiers are the coordinate names of the target space (`x1..xn`,
//! `xi1..xin` on cotangent models), `norm_xi` on fibered spaces, and the
//! functions `exp`, `sin`, `cos`, `sqrt`.  Exponents are rational constants.

use super::{e_add, e_const, e_cos, e_div, e_exp, e_mul, e_neg, e_pow, e_sin, e_sqrt, e_sub, Expr, ScalarField, Space};
use num_rational::Rational64;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("`{name}` takes exactly one argument, found {found} (position {pos})")]
    ArityMismatch { name: String, found: usize, pos: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src: src.as_bytes(), pos: 0 };
        let mut out = Vec::new();
        while let Some(t) = lx.next_token()? {
            out.push(t);
        }
        Ok(out)
    }

    fn next_token(&mut self) -> Result<Option<(Tok, usize)>, ParseError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'^' => {
                self.pos += 1;
                Tok::Caret
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'0'..=b'9' | b'.' => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
                {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    pos: start,
                    msg: format!("malformed number `{text}`"),
                })?;
                Tok::Num(value, text.to_string())
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Tok::Ident(std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string())
            }
            other => {
                return Err(ParseError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok(Some((tok, start)))
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    space: &'a Space,
    end: usize,
}

pub(super) fn parse(text: &str, space: &Space) -> Result<ScalarField, ParseError> {
    let toks = Lexer::tokens(text)?;
    let mut p = Parser {
        toks,
        idx: 0,
        space,
        end: text.len(),
    };
    let expr = p.expr()?;
    if let Some((tok, pos)) = p.peek() {
        return Err(ParseError::Syntax {
            pos,
            msg: format!("unexpected trailing token {tok:?}"),
        });
    }
    Ok(ScalarField::from_expr(expr, space.clone()))
}

impl Parser<'_> {
    fn peek(&self) -> Option<(Tok, usize)> {
        self.toks.get(self.idx).cloned()
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.peek();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.toks.get(self.idx).map(|t| t.1).unwrap_or(self.end)
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<usize, ParseError> {
        match self.bump() {
            Some((tok, pos)) if tok == want => Ok(pos),
            Some((tok, pos)) => Err(ParseError::Syntax {
                pos,
                msg: format!("expected {what}, found {tok:?}"),
            }),
            None => Err(ParseError::Syntax {
                pos: self.end,
                msg: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Arc<Expr>, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some((Tok::Plus, _)) => {
                    self.bump();
                    acc = e_add(acc, self.term()?);
                }
                Some((Tok::Minus, _)) => {
                    self.bump();
                    acc = e_sub(acc, self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Arc<Expr>, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some((Tok::Star, _)) => {
                    self.bump();
                    acc = e_mul(acc, self.unary()?);
                }
                Some((Tok::Slash, _)) => {
                    self.bump();
                    acc = e_div(acc, self.unary()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Arc<Expr>, ParseError> {
        if let Some((Tok::Minus, _)) = self.peek() {
            self.bump();
            return Ok(e_neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Arc<Expr>, ParseError> {
        let base = self.atom()?;
        if let Some((Tok::Caret, _)) = self.peek() {
            self.bump();
            let r = self.exponent()?;
            return Ok(e_pow(base, r));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<Rational64, ParseError> {
        match self.bump() {
            Some((Tok::LParen, _)) => {
                let r = self.signed_rational()?;
                self.expect(Tok::RParen, "`)` closing the exponent")?;
                Ok(r)
            }
            Some((Tok::Minus, _)) => Ok(-self.number_as_rational()?),
            Some((Tok::Num(v, text), pos)) => rational_from_literal(v, &text, pos),
            Some((tok, pos)) => Err(ParseError::Syntax {
                pos,
                msg: format!("expected a rational exponent, found {tok:?}"),
            }),
            None => Err(ParseError::Syntax {
                pos: self.end,
                msg: "expected a rational exponent, found end of input".into(),
            }),
        }
    }

    fn signed_rational(&mut self) -> Result<Rational64, ParseError> {
        let negative = matches!(self.peek(), Some((Tok::Minus, _)));
        if negative {
            self.bump();
        }
        let mut r = self.number_as_rational()?;
        if let Some((Tok::Slash, _)) = self.peek() {
            self.bump();
            let d = self.number_as_rational()?;
            if !d.is_integer() || *d.numer() == 0 {
                return Err(ParseError::Syntax {
                    pos: self.here(),
                    msg: "exponent denominator must be a nonzero integer".into(),
                });
            }
            r /= d;
        }
        Ok(if negative { -r } else { r })
    }

    fn number_as_rational(&mut self) -> Result<Rational64, ParseError> {
        match self.bump() {
            Some((Tok::Num(v, text), pos)) => rational_from_literal(v, &text, pos),
            Some((tok, pos)) => Err(ParseError::Syntax {
                pos,
                msg: format!("expected a number, found {tok:?}"),
            }),
            None => Err(ParseError::Syntax {
                pos: self.end,
                msg: "expected a number, found end of input".into(),
            }),
        }
    }

    fn atom(&mut self) -> Result<Arc<Expr>, ParseError> {
        match self.bump() {
            Some((Tok::Num(v, _), _)) => Ok(e_const(v)),
            Some((Tok::LParen, _)) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some((Tok::Ident(name), pos)) => self.ident(name, pos),
            Some((tok, pos)) => Err(ParseError::Syntax {
                pos,
                msg: format!("expected a value, found {tok:?}"),
            }),
            None => Err(ParseError::Syntax {
                pos: self.end,
                msg: "expected a value, found end of input".into(),
            }),
        }
    }

    fn ident(&mut self, name: String, pos: usize) -> Result<Arc<Expr>, ParseError> {
        let func = matches!(name.as_str(), "exp" | "sin" | "cos" | "sqrt");
        if let Some((Tok::LParen, _)) = self.peek() {
            if !func {
                return Err(ParseError::Syntax {
                    pos,
                    msg: format!("`{name}` is not a function"),
                });
            }
            self.bump();
            let mut args = vec![self.expr()?];
            while let Some((Tok::Comma, _)) = self.peek() {
                self.bump();
                args.push(self.expr()?);
            }
            self.expect(Tok::RParen, "`)` closing the call")?;
            if args.len() != 1 {
                return Err(ParseError::ArityMismatch {
                    name,
                    found: args.len(),
                    pos,
                });
            }
            let arg = args.pop().unwrap();
            return Ok(match name.as_str() {
                "exp" => e_exp(arg),
                "sin" => e_sin(arg),
                "cos" => e_cos(arg),
                "sqrt" => e_sqrt(arg),
                _ => unreachable!(),
            });
        }
        if func {
            return Err(ParseError::Syntax {
                pos,
                msg: format!("function `{name}` needs an argument list"),
            });
        }
        if name == "norm_xi" {
            if self.space.xi_range().is_none() {
                return Err(ParseError::UnknownIdentifier { name, pos });
            }
            return Ok(Arc::new(Expr::NormXi));
        }
        match self.space.var_index(&name) {
            Some(i) => Ok(Arc::new(Expr::Var(i))),
            None => Err(ParseError::UnknownIdentifier { name, pos }),
        }
    }
}

/// Exact rational value of a decimal literal (`1.25` -> `5/4`).
fn rational_from_literal(value: f64, text: &str, pos: usize) -> Result<Rational64, ParseError> {
    let err = || ParseError::Syntax {
        pos,
        msg: format!("exponent `{text}` is not expressible as a rational"),
    };
    match text.split_once('.') {
        None => {
            let n: i64 = text.parse().map_err(|_| err())?;
            Ok(Rational64::from_integer(n))
        }
        Some((whole, frac)) => {
            if frac.len() > 15 {
                return Err(err());
            }
            let scale = 10_i64.checked_pow(frac.len() as u32).ok_or_else(err)?;
            let whole: i64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| err())? };
            let frac: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| err())? };
            let r = Rational64::new(whole * scale + frac, scale);
            debug_assert!((*r.numer() as f64 / *r.denom() as f64 - value).abs() < 1e-12);
            Ok(r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unparse_round_trip_is_semantically_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let space = Space::cotangent(2);
        for text in [
            "exp(-x1^2)*xi1/norm_xi",
            "1 + 0.5*exp(-x1^2 - x2^2)*xi1/norm_xi",
            "x1*xi1^2/norm_xi - sin(x2)*cos(x1)",
            "sqrt(1 + x1^2)*norm_xi^(-1)",
            "xi1^(3/2)/norm_xi^(1/2)",
            "-x1 - -x2*xi2",
        ] {
            let f = ScalarField::parse_in(text, &space).unwrap();
            let printed = f.to_string();
            let g = ScalarField::parse_in(&printed, &space).unwrap();
            for _ in 0..100 {
                let p = space.sample_point(&mut rng);
                match (f.eval(&p), g.eval(&p)) {
                    (Ok(a), Ok(b)) => {
                        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{text} -> {printed}")
                    }
                    (Err(_), Err(_)) => {}
                    other => panic!("domain mismatch for {text}: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = ScalarField::parse("x1 + ", 1).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { pos: 5, .. }), "{err}");
    }

    #[test]
    fn unknown_identifier_is_reported() {
        let err = ScalarField::parse("x1 + q7", 1).unwrap_err();
        assert!(
            matches!(err, ParseError::UnknownIdentifier { ref name, pos: 5 } if name == "q7"),
            "{err}"
        );
        // xi3 does not exist in dimension 2.
        let err = ScalarField::parse("xi3", 2).unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdentifier { .. }));
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let err = ScalarField::parse("exp(x1, xi1)", 1).unwrap_err();
        assert!(
            matches!(err, ParseError::ArityMismatch { ref name, found: 2, .. } if name == "exp"),
            "{err}"
        );
    }

    #[test]
    fn norm_xi_rejected_without_fiber() {
        let space = Space::contact(1);
        let err = ScalarField::parse_in("norm_xi", &space).unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdentifier { .. }));
    }

    #[test]
    fn contact_space_coordinates_parse() {
        let space = Space::contact(2);
        let f = ScalarField::parse_in("z - y1*x1 - y2*x2", &space).unwrap();
        assert_eq!(f.eval(&[1.0, 2.0, 3.0, 4.0, 10.0]).unwrap(), 10.0 - 3.0 - 8.0);
    }

    #[test]
    fn rational_exponents() {
        let f = ScalarField::parse("x1^(3/2)", 1).unwrap();
        assert!((f.eval(&[4.0, 1.0]).unwrap() - 8.0).abs() < 1e-14);
        let g = ScalarField::parse("x1^-2", 1).unwrap();
        assert!((g.eval(&[2.0, 1.0]).unwrap() - 0.25).abs() < 1e-15);
        let h = ScalarField::parse("x1^0.5", 1).unwrap();
        assert!((h.eval(&[9.0, 1.0]).unwrap() - 3.0).abs() < 1e-14);
    }
}
