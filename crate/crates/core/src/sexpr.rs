//! Minimal S-expression reader shared by the PDDL and sketch parsers.
//!
//! Symbols are lowercased on read; `;` starts a comment that runs to the end of the line.

use std::fmt;

use thiserror::Error;

/// Source position (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at {pos}: {msg}")]
pub struct SyntaxError {
    pub pos: Pos,
    pub msg: String,
}

impl SyntaxError {
    pub fn new(pos: Pos, msg: impl Into<String>) -> Self {
        SyntaxError { pos, msg: msg.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sexpr {
    Atom(String, Pos),
    List(Vec<Sexpr>, Pos),
}

impl Sexpr {
    pub fn pos(&self) -> Pos {
        match self {
            Sexpr::Atom(_, p) | Sexpr::List(_, p) => *p,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Sexpr::Atom(s, _) => Some(s),
            Sexpr::List(..) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexpr]> {
        match self {
            Sexpr::List(items, _) => Some(items),
            Sexpr::Atom(..) => None,
        }
    }

    pub fn expect_atom(&self, what: &str) -> Result<&str, SyntaxError> {
        self.as_atom()
            .ok_or_else(|| SyntaxError::new(self.pos(), format!("expected {what}, found a list")))
    }

    pub fn expect_list(&self, what: &str) -> Result<&[Sexpr], SyntaxError> {
        match self {
            Sexpr::List(items, _) => Ok(items),
            Sexpr::Atom(a, p) => Err(SyntaxError::new(*p, format!("expected {what}, found `{a}`"))),
        }
    }

    /// The head symbol of a list, if it has one.
    pub fn head(&self) -> Option<&str> {
        self.as_list().and_then(|l| l.first()).and_then(Sexpr::as_atom)
    }
}

impl fmt::Display for Sexpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexpr::Atom(a, _) => f.write_str(a),
            Sexpr::List(items, _) => {
                f.write_str("(")?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{it}")?;
                }
                f.write_str(")")
            }
        }
    }
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    pos: Pos,
}

impl<'a> Reader<'a> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.pos.line += 1;
            self.pos.col = 1;
        } else {
            self.pos.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == ';' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn read(&mut self) -> Result<Option<Sexpr>, SyntaxError> {
        self.skip_trivia();
        let start = self.pos;
        match self.chars.peek().copied() {
            None => Ok(None),
            Some(')') => Err(SyntaxError::new(start, "unexpected `)`")),
            Some('(') => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_trivia();
                    match self.chars.peek() {
                        None => return Err(SyntaxError::new(start, "unclosed `(`")),
                        Some(')') => {
                            self.bump();
                            return Ok(Some(Sexpr::List(items, start)));
                        }
                        Some(_) => {
                            // read() only returns None at end of input, handled above
                            if let Some(item) = self.read()? {
                                items.push(item);
                            }
                        }
                    }
                }
            }
            Some(_) => {
                let mut sym = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    sym.extend(c.to_lowercase());
                    self.bump();
                }
                Ok(Some(Sexpr::Atom(sym, start)))
            }
        }
    }
}

/// Reads every top-level expression in `text`.
pub fn parse_all(text: &str) -> Result<Vec<Sexpr>, SyntaxError> {
    let mut reader = Reader { chars: text.chars().peekable(), pos: Pos { line: 1, col: 1 } };
    let mut out = Vec::new();
    while let Some(e) = reader.read()? {
        out.push(e);
    }
    Ok(out)
}

/// Reads exactly one top-level expression.
pub fn parse_one(text: &str) -> Result<Sexpr, SyntaxError> {
    let mut all = parse_all(text)?;
    match all.len() {
        1 => Ok(all.pop().unwrap()),
        0 => Err(SyntaxError::new(Pos { line: 1, col: 1 }, "empty input")),
        _ => Err(SyntaxError::new(all[1].pos(), "trailing input after expression")),
    }
}

/// Positional items and `(keyword, value)` pairs.
pub type KeywordArgs<'a> = (Vec<&'a Sexpr>, Vec<(&'a str, &'a Sexpr)>);

/// Splits `:key value` pairs out of a keyword list. Non-keyword items before the
/// first keyword are returned separately.
pub fn keyword_args(items: &[Sexpr]) -> Result<KeywordArgs<'_>, SyntaxError> {
    let mut positional = Vec::new();
    let mut keywords = Vec::new();
    let mut i = 0;
    while i < items.len() {
        match items[i].as_atom() {
            Some(k) if k.starts_with(':') => {
                let value = items
                    .get(i + 1)
                    .ok_or_else(|| SyntaxError::new(items[i].pos(), format!("missing value for `{k}`")))?;
                keywords.push((k, value));
                i += 2;
            }
            _ => {
                if !keywords.is_empty() {
                    return Err(SyntaxError::new(items[i].pos(), "unexpected item after keyword arguments"));
                }
                positional.push(&items[i]);
                i += 1;
            }
        }
    }
    Ok((positional, keywords))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_nested_lists_with_positions() {
        let e = parse_one("(a (b c)\n  ; comment\n  D)").unwrap();
        let items = e.as_list().unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items[2].as_atom(), Some("d"));
        assert_eq!(items[2].pos(), Pos { line: 3, col: 3 });
        assert_eq!(e.to_string(), "(a (b c) d)");
    }

    #[test]
    fn reports_unbalanced_input() {
        let err = parse_all("(a (b c)").unwrap_err();
        assert_eq!(err.pos, Pos { line: 1, col: 1 });
        assert!(parse_all("a)").is_err());
    }
}
