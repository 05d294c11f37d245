//! Maximal-munch tokenizer for the supported C subset.

use serde::{Deserialize, Serialize};

use super::ParseError;

/// Half-open byte range into a source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    Str,
    Char,
    Punct,
    /// `*name*` wildcard; only produced when lexing pattern templates.
    Glob,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: Span,
    /// 1-based line of the first byte.
    pub line: usize,
}

pub const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else",
    "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long", "register",
    "restrict", "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef",
    "union", "unsigned", "void", "volatile", "while", "_Bool",
];

const PUNCTUATORS: &[&str] = &[
    "...", "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=",
    "-=", "*=", "/=", "%=", "&=", "^=", "|=", "{", "}", "[", "]", "(", ")", ";", ",", ".", "<",
    ">", "+", "-", "*", "/", "%", "&", "|", "^", "!", "~", "?", ":", "=",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Tokenizes C source. Comments and whitespace are dropped; a `#` that
/// starts a line is rejected since preprocessor directives are not accepted.
pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    Lexer::new(text, false).run()
}

/// Tokenizes a pattern template, where `*name*` lexes as a single glob.
pub fn tokenize_template(text: &str) -> Result<Vec<Token>, ParseError> {
    Lexer::new(text, true).run()
}

struct Lexer<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
    line: usize,
    line_has_token: bool,
    template: bool,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str, template: bool) -> Self {
        Self {
            src: text.as_bytes(),
            text,
            pos: 0,
            line: 1,
            line_has_token: false,
            template,
        }
    }

    fn peek(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn run(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        while let Some(tok) = self.next_token()? {
            out.push(tok);
        }
        Ok(out)
    }

    fn skip_trivia(&mut self) -> Result<(), ParseError> {
        loop {
            match self.peek(0) {
                Some(b'\n') => {
                    self.pos += 1;
                    self.line += 1;
                    self.line_has_token = false;
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'/') if self.peek(1) == Some(b'/') => {
                    while let Some(b) = self.peek(0) {
                        if b == b'\n' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                Some(b'/') if self.peek(1) == Some(b'*') => {
                    let start = self.pos;
                    self.pos += 2;
                    loop {
                        match self.peek(0) {
                            None => return Err(ParseError::new(start, "end of block comment")),
                            Some(b'*') if self.peek(1) == Some(b'/') => {
                                self.pos += 2;
                                break;
                            }
                            Some(b'\n') => {
                                self.line += 1;
                                self.pos += 1;
                            }
                            Some(_) => self.pos += 1,
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn next_token(&mut self) -> Result<Option<Token>, ParseError> {
        self.skip_trivia()?;
        let start = self.pos;
        let line = self.line;
        let Some(b) = self.peek(0) else {
            return Ok(None);
        };

        if b == b'#' && !self.line_has_token {
            return Err(ParseError::new(start, "no preprocessor directives"));
        }
        self.line_has_token = true;

        let kind = if is_ident_start(b) {
            while self.peek(0).is_some_and(is_ident_char) {
                self.pos += 1;
            }
            if is_keyword(&self.text[start..self.pos]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if b.is_ascii_digit()
            || (b == b'.' && self.peek(1).is_some_and(|c| c.is_ascii_digit()))
        {
            self.lex_number();
            TokenKind::Number
        } else if b == b'"' {
            self.lex_quoted(b'"', start)?;
            TokenKind::Str
        } else if b == b'\'' {
            self.lex_quoted(b'\'', start)?;
            TokenKind::Char
        } else if self.template && b == b'*' && self.glob_len().is_some() {
            self.pos += self.glob_len().unwrap_or(1);
            TokenKind::Glob
        } else {
            let rest = &self.text[start..];
            let Some(p) = PUNCTUATORS.iter().find(|p| rest.starts_with(**p)) else {
                return Err(ParseError::new(start, "a token"));
            };
            self.pos += p.len();
            TokenKind::Punct
        };

        Ok(Some(Token {
            kind,
            text: self.text[start..self.pos].to_string(),
            span: Span::new(start, self.pos),
            line,
        }))
    }

    /// Length of a `*ident*` glob at the cursor, if one is there.
    fn glob_len(&self) -> Option<usize> {
        let mut i = 1;
        if !self.peek(i).is_some_and(is_ident_start) {
            return None;
        }
        while self.peek(i).is_some_and(is_ident_char) {
            i += 1;
        }
        (self.peek(i) == Some(b'*')).then_some(i + 1)
    }

    fn lex_number(&mut self) {
        if self.peek(0) == Some(b'0') && matches!(self.peek(1), Some(b'x' | b'X')) {
            self.pos += 2;
            while self.peek(0).is_some_and(|c| c.is_ascii_hexdigit()) {
                self.pos += 1;
            }
        } else {
            while self
                .peek(0)
                .is_some_and(|c| c.is_ascii_digit() || c == b'.')
            {
                self.pos += 1;
            }
            if matches!(self.peek(0), Some(b'e' | b'E')) {
                let sign = usize::from(matches!(self.peek(1), Some(b'+' | b'-')));
                if self.peek(1 + sign).is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1 + sign;
                    while self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
                        self.pos += 1;
                    }
                }
            }
        }
        while matches!(self.peek(0), Some(b'u' | b'U' | b'l' | b'L' | b'f' | b'F')) {
            self.pos += 1;
        }
    }

    fn lex_quoted(&mut self, quote: u8, start: usize) -> Result<(), ParseError> {
        self.pos += 1;
        loop {
            match self.peek(0) {
                None | Some(b'\n') => {
                    return Err(ParseError::new(start, "closing quote"));
                }
                Some(b'\\') => self.pos += 2,
                Some(c) if c == quote => {
                    self.pos += 1;
                    return Ok(());
                }
                Some(_) => self.pos += 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<String> {
        tokenize(src).unwrap().into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn maximal_munch() {
        assert_eq!(texts("a>>=b->c++"), ["a", ">>=", "b", "->", "c", "++"]);
        assert_eq!(texts("x=y+-1;"), ["x", "=", "y", "+", "-", "1", ";"]);
    }

    #[test]
    fn literals_are_single_tokens() {
        let toks = tokenize(r#"s = "a \" b"; c = '\n'; f = 1.5e-3f; h = 0xFFul;"#).unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.kind).collect();
        assert_eq!(kinds[2], TokenKind::Str);
        assert_eq!(toks[2].text, r#""a \" b""#);
        assert_eq!(toks[6].kind, TokenKind::Char);
        assert_eq!(toks[10].text, "1.5e-3f");
        assert_eq!(toks[14].text, "0xFFul");
    }

    #[test]
    fn comments_and_lines() {
        let toks = tokenize("a // x\n/* y\n z */ b").unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[1].line, 3);
    }

    #[test]
    fn rejects_preprocessor() {
        let err = tokenize("int x;\n  #define N 3\n").unwrap_err();
        assert_eq!(err.offset, 9);
    }

    #[test]
    fn template_globs() {
        let toks = tokenize_template("*free*(h0); a * b").unwrap();
        assert_eq!(toks[0].kind, TokenKind::Glob);
        assert_eq!(toks[0].text, "*free*");
        assert_eq!(toks[6].kind, TokenKind::Punct);
        // Outside template mode the same text is ordinary punctuation.
        assert_eq!(tokenize("*free*(h0);").unwrap()[0].text, "*");
    }

    #[test]
    fn keywords_versus_identifiers() {
        let toks = tokenize("int intx sizeof").unwrap();
        assert_eq!(toks[0].kind, TokenKind::Keyword);
        assert_eq!(toks[1].kind, TokenKind::Identifier);
        assert_eq!(toks[2].kind, TokenKind::Keyword);
    }
}
