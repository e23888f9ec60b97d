use super::diag::Diagnostic;
use super::token::{keyword, Span, Token, TokenKind};

pub struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    pub fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn span(&self) -> Span {
        Span {
            line: self.line,
            col: self.col,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'#') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    pub fn tokenize(mut self) -> Result<Vec<Token>, Diagnostic> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let span = self.span();
            let Some(c) = self.peek() else {
                out.push(Token {
                    kind: TokenKind::Eof,
                    span,
                });
                return Ok(out);
            };
            let kind = match c {
                b'(' => self.punct(TokenKind::LParen),
                b')' => self.punct(TokenKind::RParen),
                b'{' => self.punct(TokenKind::LBrace),
                b'}' => self.punct(TokenKind::RBrace),
                b'[' => self.punct(TokenKind::LBracket),
                b']' => self.punct(TokenKind::RBracket),
                b';' => self.punct(TokenKind::Semi),
                b',' => self.punct(TokenKind::Comma),
                b'.' => self.punct(TokenKind::Dot),
                b'+' => self.punct(TokenKind::Plus),
                b'*' => self.punct(TokenKind::Star),
                b'/' => self.punct(TokenKind::Slash),
                b'%' => self.punct(TokenKind::Percent),
                b'-' => {
                    self.bump();
                    if self.peek() == Some(b'>') {
                        self.bump();
                        TokenKind::Arrow
                    } else {
                        TokenKind::Minus
                    }
                }
                b':' => {
                    self.bump();
                    match self.peek() {
                        Some(b'=') => {
                            self.bump();
                            TokenKind::Assign
                        }
                        Some(b':') => {
                            self.bump();
                            TokenKind::ColonColon
                        }
                        _ => TokenKind::Colon,
                    }
                }
                b'=' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        TokenKind::Eq
                    } else {
                        return Err(Diagnostic::syntax(span, "expected `==`"));
                    }
                }
                b'!' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        TokenKind::Ne
                    } else {
                        return Err(Diagnostic::syntax(span, "expected `!=`"));
                    }
                }
                b'<' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        TokenKind::Le
                    } else {
                        TokenKind::Lt
                    }
                }
                b'>' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        TokenKind::Ge
                    } else {
                        TokenKind::Gt
                    }
                }
                b'"' => self.string(span)?,
                b'\'' => self.char_lit(span)?,
                c if c.is_ascii_digit() => self.number(span)?,
                c if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
                c => {
                    return Err(Diagnostic::syntax(
                        span,
                        format!("unexpected character `{}`", c as char),
                    ));
                }
            };
            out.push(Token { kind, span });
        }
    }

    fn punct(&mut self, kind: TokenKind) -> TokenKind {
        self.bump();
        kind
    }

    fn ident(&mut self) -> TokenKind {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.bump();
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        keyword(text).unwrap_or_else(|| TokenKind::Ident(text.to_string()))
    }

    fn number(&mut self, span: Span) -> Result<TokenKind, Diagnostic> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                self.bump();
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<i128>()
            .map(TokenKind::Int)
            .map_err(|_| Diagnostic::syntax(span, "integer literal out of range"))
    }

    fn string(&mut self, span: Span) -> Result<TokenKind, Diagnostic> {
        self.bump(); // opening quote
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Err(Diagnostic::syntax(span, "unterminated string literal")),
                Some(b'"') => break,
                Some(b'\\') => match self.bump() {
                    Some(b'n') => s.push('\n'),
                    Some(b't') => s.push('\t'),
                    Some(b'\\') => s.push('\\'),
                    Some(b'"') => s.push('"'),
                    Some(b'0') => s.push('\0'),
                    _ => return Err(Diagnostic::syntax(span, "invalid escape in string")),
                },
                Some(c) => s.push(c as char),
            }
        }
        Ok(TokenKind::Str(s))
    }

    fn char_lit(&mut self, span: Span) -> Result<TokenKind, Diagnostic> {
        self.bump(); // opening quote
        let c = match self.bump() {
            Some(b'\\') => match self.bump() {
                Some(b'n') => b'\n',
                Some(b't') => b'\t',
                Some(b'\\') => b'\\',
                Some(b'\'') => b'\'',
                Some(b'0') => 0,
                _ => return Err(Diagnostic::syntax(span, "invalid escape in char literal")),
            },
            Some(c) if c != b'\'' => c,
            _ => return Err(Diagnostic::syntax(span, "empty char literal")),
        };
        if self.bump() != Some(b'\'') {
            return Err(Diagnostic::syntax(span, "unterminated char literal"));
        }
        Ok(TokenKind::Char(c))
    }
}
