use super::ast::Comment;
use super::error::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Fn,
    Let,
    Const,
    If,
    Else,
    While,
    Return,
    IntTy,
    BufTy,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Arrow,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    AndAnd,
    OrOr,
    Bang,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(name) => format!("identifier `{name}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Eof => "end of file".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::Fn => "fn",
            Tok::Let => "let",
            Tok::Const => "const",
            Tok::If => "if",
            Tok::Else => "else",
            Tok::While => "while",
            Tok::Return => "return",
            Tok::IntTy => "int",
            Tok::BufTy => "buf",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Colon => ":",
            Tok::Arrow => "->",
            Tok::Assign => "=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::EqEq => "==",
            Tok::NotEq => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::AndAnd => "&&",
            Tok::OrOr => "||",
            Tok::Bang => "!",
            Tok::Ident(_) | Tok::Int(_) | Tok::Eof => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

pub struct Lexed {
    pub tokens: Vec<Token>,
    pub comments: Vec<Comment>,
}

pub fn lex(source: &str, path: &str) -> Result<Lexed, ParseError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut comments = Vec::new();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    let err = |line: u32, col: u32, message: String| ParseError {
        file: path.to_string(),
        line,
        column: col,
        message,
    };

    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c == b' ' || c == b'\t' || c == b'\r' {
            i += 1;
            col += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            let start = i;
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            comments.push(Comment {
                line,
                text: source[start..i].to_string(),
            });
            col += (i - start) as u32;
            continue;
        }
        let (start_line, start_col, start_idx) = (line, col, i);
        let tok = if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &source[start..i];
            match word {
                "fn" => Tok::Fn,
                "let" => Tok::Let,
                "const" => Tok::Const,
                "if" => Tok::If,
                "else" => Tok::Else,
                "while" => Tok::While,
                "return" => Tok::Return,
                "int" => Tok::IntTy,
                "buf" => Tok::BufTy,
                _ => Tok::Ident(word.to_string()),
            }
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                return Err(err(
                    start_line,
                    start_col,
                    "malformed integer literal".into(),
                ));
            }
            let text = &source[start..i];
            let value = text.parse::<i64>().map_err(|_| {
                err(
                    start_line,
                    start_col,
                    format!("integer literal `{text}` out of range"),
                )
            })?;
            Tok::Int(value)
        } else {
            let next = bytes.get(i + 1).copied();
            let (tok, width) = match (c, next) {
                (b'-', Some(b'>')) => (Tok::Arrow, 2),
                (b'=', Some(b'=')) => (Tok::EqEq, 2),
                (b'!', Some(b'=')) => (Tok::NotEq, 2),
                (b'<', Some(b'=')) => (Tok::Le, 2),
                (b'>', Some(b'=')) => (Tok::Ge, 2),
                (b'&', Some(b'&')) => (Tok::AndAnd, 2),
                (b'|', Some(b'|')) => (Tok::OrOr, 2),
                (b'(', _) => (Tok::LParen, 1),
                (b')', _) => (Tok::RParen, 1),
                (b'{', _) => (Tok::LBrace, 1),
                (b'}', _) => (Tok::RBrace, 1),
                (b'[', _) => (Tok::LBracket, 1),
                (b']', _) => (Tok::RBracket, 1),
                (b',', _) => (Tok::Comma, 1),
                (b';', _) => (Tok::Semi, 1),
                (b':', _) => (Tok::Colon, 1),
                (b'=', _) => (Tok::Assign, 1),
                (b'+', _) => (Tok::Plus, 1),
                (b'-', _) => (Tok::Minus, 1),
                (b'*', _) => (Tok::Star, 1),
                (b'/', _) => (Tok::Slash, 1),
                (b'%', _) => (Tok::Percent, 1),
                (b'<', _) => (Tok::Lt, 1),
                (b'>', _) => (Tok::Gt, 1),
                (b'!', _) => (Tok::Bang, 1),
                _ => {
                    let ch = source[i..].chars().next().unwrap_or('?');
                    return Err(err(line, col, format!("unexpected character `{ch}`")));
                }
            };
            i += width;
            tok
        };
        // Tokens never span lines.
        let end_col = start_col + (i - start_idx) as u32;
        tokens.push(Token {
            tok,
            line: start_line,
            col: start_col,
            end_line: start_line,
            end_col,
        });
        col = end_col;
    }
    tokens.push(Token {
        tok: Tok::Eof,
        line,
        col,
        end_line: line,
        end_col: col,
    });
    Ok(Lexed { tokens, comments })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_and_comments() {
        let lexed = lex("fn f() {\n  // note\n  x <= 10;\n}\n", "a.mc").unwrap();
        let le = lexed.tokens.iter().find(|t| t.tok == Tok::Le).unwrap();
        assert_eq!((le.line, le.col, le.end_col), (3, 5, 7));
        assert_eq!(lexed.comments.len(), 1);
        assert_eq!(lexed.comments[0].line, 2);
    }

    #[test]
    fn rejects_out_of_range_literal() {
        assert!(lex("9223372036854775808", "a.mc").is_err());
        assert!(lex("9223372036854775807", "a.mc").is_ok());
    }
}
