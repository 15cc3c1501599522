use crate::error::{ParseError, Pos};

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    /// Punctuation and operators, e.g. `{`, `==`, `->`.
    Punct(&'static str),
    Eof,
}

const KEYWORDS: &[&str] = &[
    "method", "routes", "let", "if", "else", "while", "return", "throw", "respond", "try",
    "catch", "skip", "null", "true", "false", "store",
];

pub(crate) fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

// Longest first so that `==` wins over `=`.
const PUNCT: &[&str] = &[
    "->", "==", "!=", "<=", ">=", "&&", "||", "{", "}", "(", ")", "[", "]", ",", ";", ":", ".",
    "=", "<", ">", "+", "-", "*", "/", "%", "!", "?",
];

pub(crate) struct Lexer<'a> {
    src: &'a str,
    offset: usize,
    line: usize,
    col: usize,
    peeked: Option<(Tok, Pos)>,
}

impl<'a> Lexer<'a> {
    pub(crate) fn new(src: &'a str) -> Self {
        Lexer {
            src,
            offset: 0,
            line: 1,
            col: 1,
            peeked: None,
        }
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.src[self.offset..].chars().next()?;
        self.offset += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek_char(&self) -> Option<char> {
        self.src[self.offset..].chars().next()
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek_char() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('/') if self.src[self.offset..].starts_with("//") => {
                    while let Some(c) = self.peek_char() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    pub(crate) fn peek(&mut self) -> Result<&(Tok, Pos), ParseError> {
        if self.peeked.is_none() {
            let t = self.scan()?;
            self.peeked = Some(t);
        }
        Ok(self.peeked.as_ref().expect("peeked"))
    }

    pub(crate) fn next(&mut self) -> Result<(Tok, Pos), ParseError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.scan(),
        }
    }

    /// Reads a raw route path (`/a/:id/b`). Must be called with no token peeked.
    pub(crate) fn path(&mut self) -> Result<(String, Pos), ParseError> {
        debug_assert!(self.peeked.is_none());
        self.skip_trivia();
        let pos = self.pos();
        if self.peek_char() != Some('/') {
            return Err(ParseError::syntax(pos, "expected route path starting with '/'"));
        }
        let mut s = String::new();
        while let Some(c) = self.peek_char() {
            if c.is_whitespace() {
                break;
            }
            s.push(c);
            self.bump();
        }
        Ok((s, pos))
    }

    fn scan(&mut self) -> Result<(Tok, Pos), ParseError> {
        self.skip_trivia();
        let pos = self.pos();
        let Some(c) = self.peek_char() else {
            return Ok((Tok::Eof, pos));
        };
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(c) = self.peek_char() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
            return Ok((Tok::Ident(s), pos));
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(c) = self.peek_char() {
                if c.is_ascii_digit() {
                    s.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
            let n = s
                .parse::<i64>()
                .map_err(|_| ParseError::syntax(pos, format!("integer literal {s} out of range")))?;
            return Ok((Tok::Int(n), pos));
        }
        if c == '"' {
            self.bump();
            let mut s = String::new();
            loop {
                match self.bump() {
                    None => return Err(ParseError::syntax(pos, "unterminated string literal")),
                    Some('"') => break,
                    Some('\\') => {
                        let esc = self.bump();
                        s.push(match esc {
                            Some('n') => '\n',
                            Some('t') => '\t',
                            Some('r') => '\r',
                            Some('"') => '"',
                            Some('\\') => '\\',
                            other => {
                                return Err(ParseError::syntax(
                                    self.pos(),
                                    format!("unknown escape {other:?}"),
                                ))
                            }
                        });
                    }
                    Some(c) => s.push(c),
                }
            }
            return Ok((Tok::Str(s), pos));
        }
        let rest = &self.src[self.offset..];
        for p in PUNCT {
            if rest.starts_with(p) {
                for _ in 0..p.len() {
                    self.bump();
                }
                return Ok((Tok::Punct(p), pos));
            }
        }
        Err(ParseError::syntax(pos, format!("unexpected character {c:?}")))
    }
}
