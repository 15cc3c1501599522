use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: Pos, message: String },
    #[error("duplicate method `{name}` at {pos}")]
    DuplicateMethod { name: String, pos: Pos },
    #[error("call to undeclared method `{name}` at {pos}")]
    UnknownCallTarget { name: String, pos: Pos },
    #[error("route {route} targets undeclared method `{name}` at {pos}")]
    UnknownRouteTarget {
        route: String,
        name: String,
        pos: Pos,
    },
}

impl ParseError {
    pub(crate) fn syntax(pos: Pos, message: impl Into<String>) -> Self {
        ParseError::Syntax {
            pos,
            message: message.into(),
        }
    }

    pub fn pos(&self) -> Pos {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::DuplicateMethod { pos, .. }
            | ParseError::UnknownCallTarget { pos, .. }
            | ParseError::UnknownRouteTarget { pos, .. } => *pos,
        }
    }
}
