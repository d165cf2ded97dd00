use super::ast::{BinOp, Expr, Func};
use super::ParseError;

/// Maximum tree height accepted by the parser; keeps evaluation and drop
/// recursion bounded on adversarial inputs.
pub const MAX_DEPTH: usize = 256;

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
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src, bytes: src.as_bytes(), pos: 0 }
    }

    fn syntax(&self, offset: usize, expected: &str, found: String) -> ParseError {
        ParseError::Syntax { offset, expected: expected.to_string(), found }
    }

    fn next_token(&mut self) -> Result<(usize, Tok), ParseError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = self.bytes.get(self.pos) else {
            return Ok((start, Tok::End));
        };
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            self.pos += 1;
            return Ok((start, tok));
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start);
        }
        if c.is_ascii_lowercase() {
            return self.ident(start);
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(self.syntax(start, "a token", format!("character {ch:?}")))
    }

    fn digits(&mut self) -> usize {
        let from = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        self.pos - from
    }

    fn number(&mut self, start: usize) -> Result<(usize, Tok), ParseError> {
        let mut count = self.digits();
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            count += self.digits();
        }
        if count == 0 {
            return Err(self.syntax(start, "digits", "`.`".into()));
        }
        if matches!(self.bytes.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                self.pos = save;
                return Err(self.syntax(save + 1, "exponent digits", self.found_at(save + 1)));
            }
        }
        if let Some(&c) = self.bytes.get(self.pos) {
            if c.is_ascii_alphanumeric() || c == b'.' || c == b'_' {
                return Err(self.syntax(self.pos, "operator or `)` after number", self.found_at(self.pos)));
            }
        }
        let text = &self.src[start..self.pos];
        let value: f64 = text
            .parse()
            .map_err(|_| self.syntax(start, "a decimal number", format!("`{text}`")))?;
        if !value.is_finite() {
            return Err(self.syntax(start, "a finite number", format!("`{text}`")));
        }
        Ok((start, Tok::Num(value)))
    }

    fn ident(&mut self, start: usize) -> Result<(usize, Tok), ParseError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_lowercase() {
            self.pos += 1;
        }
        self.digits();
        if let Some(&c) = self.bytes.get(self.pos) {
            if c.is_ascii_alphanumeric() || c == b'_' {
                return Err(self.syntax(
                    self.pos,
                    "identifier of the form [a-z]+[0-9]*",
                    self.found_at(self.pos),
                ));
            }
        }
        Ok((start, Tok::Ident(self.src[start..self.pos].to_string())))
    }

    fn found_at(&self, offset: usize) -> String {
        match self.src.get(offset..).and_then(|s| s.chars().next()) {
            Some(ch) => format!("character {ch:?}"),
            None => "end of input".into(),
        }
    }
}

/// Recursive-descent parser.
///
/// ```text
/// expr    := term (('+' | '-') term)*
/// term    := unary (('*' | '/') unary)*
/// unary   := '-' unary | power
/// power   := primary ('^' unary)?
/// primary := number | ident | func '(' expr ')' | '(' expr ')'
/// ```
pub struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    offset: usize,
    nesting: usize,
}

impl<'a> Parser<'a> {
    pub fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut lexer = Lexer::new(src);
        let (offset, tok) = lexer.next_token()?;
        Ok(Parser { lexer, tok, offset, nesting: 0 })
    }

    pub fn parse_complete(mut self) -> Result<Expr, ParseError> {
        let e = self.expr()?;
        if self.tok != Tok::End {
            return Err(self.unexpected("operator or end of input"));
        }
        Ok(e)
    }

    fn advance(&mut self) -> Result<(), ParseError> {
        let (offset, tok) = self.lexer.next_token()?;
        self.offset = offset;
        self.tok = tok;
        Ok(())
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        ParseError::Syntax { offset: self.offset, expected: expected.to_string(), found: self.tok.describe() }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_DEPTH {
            return Err(ParseError::TooDeep { offset: self.offset, limit: MAX_DEPTH });
        }
        Ok(())
    }

    fn node(&self, e: Expr, depth: usize, at: usize) -> Result<(Expr, usize), ParseError> {
        if depth > MAX_DEPTH {
            return Err(ParseError::TooDeep { offset: at, limit: MAX_DEPTH });
        }
        Ok((e, depth))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.expr_d().map(|(e, _)| e)
    }

    fn expr_d(&mut self) -> Result<(Expr, usize), ParseError> {
        let (mut lhs, mut depth) = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok((lhs, depth)),
            };
            let at = self.offset;
            self.advance()?;
            let (rhs, rd) = self.term()?;
            (lhs, depth) = self.node(Expr::binary(op, lhs, rhs), depth.max(rd) + 1, at)?;
        }
    }

    fn term(&mut self) -> Result<(Expr, usize), ParseError> {
        let (mut lhs, mut depth) = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok((lhs, depth)),
            };
            let at = self.offset;
            self.advance()?;
            let (rhs, rd) = self.unary()?;
            (lhs, depth) = self.node(Expr::binary(op, lhs, rhs), depth.max(rd) + 1, at)?;
        }
    }

    fn unary(&mut self) -> Result<(Expr, usize), ParseError> {
        if self.tok == Tok::Minus {
            let at = self.offset;
            self.enter()?;
            self.advance()?;
            let (inner, d) = self.unary()?;
            self.nesting -= 1;
            return self.node(Expr::neg(inner), d + 1, at);
        }
        self.power()
    }

    fn power(&mut self) -> Result<(Expr, usize), ParseError> {
        let (base, bd) = self.primary()?;
        if self.tok != Tok::Caret {
            return Ok((base, bd));
        }
        let at = self.offset;
        self.enter()?;
        self.advance()?;
        let (exponent, ed) = self.unary()?;
        self.nesting -= 1;
        self.node(Expr::pow(base, exponent), bd.max(ed) + 1, at)
    }

    fn primary(&mut self) -> Result<(Expr, usize), ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok((Expr::Num(v), 1))
            }
            Tok::Ident(name) => {
                let at = self.offset;
                self.advance()?;
                if self.tok == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(ParseError::UnknownFunction { name: name.clone(), offset: at })?;
                    let (arg, d) = self.group()?;
                    return self.node(Expr::call(func, arg), d + 1, at);
                }
                if Func::from_name(&name).is_some() {
                    return Err(self.unexpected(&format!("`(` after function name `{name}`")));
                }
                Ok((Expr::Var(name), 1))
            }
            Tok::LParen => self.group(),
            _ => Err(self.unexpected("number, variable, function call, `(` or `-`")),
        }
    }

    fn group(&mut self) -> Result<(Expr, usize), ParseError> {
        // current token is `(`
        self.enter()?;
        self.advance()?;
        let inner = self.expr_d()?;
        if self.tok != Tok::RParen {
            return Err(self.unexpected("`)`"));
        }
        self.advance()?;
        self.nesting -= 1;
        Ok(inner)
    }
}
