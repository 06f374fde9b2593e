//! Tokenizer for the mini-C dialect.
//!
//! Comments and whitespace are dropped. Every token remembers its byte offset
//! in the source so renaming can splice the original text without disturbing
//! formatting.

use serde::{Deserialize, Serialize};

use super::SyntaxError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    Keyword,
    IntLiteral,
    StringLiteral,
    Operator,
    Punct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: Span,
    /// Byte offset of the first character in the source text.
    pub offset: usize,
}

pub const KEYWORDS: &[&str] = &[
    "auto", "bool", "break", "case", "char", "const", "continue", "default", "do", "else", "enum",
    "extern", "for", "goto", "if", "inline", "int", "long", "register", "return", "short",
    "signed", "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void",
    "volatile", "while", "_Bool",
];

/// Typedef names the parser treats as types without a preceding declaration.
pub const TYPE_NAMES: &[&str] = &[
    "size_t", "ssize_t", "int8_t", "int16_t", "int32_t", "int64_t", "uint8_t", "uint16_t",
    "uint32_t", "uint64_t", "intptr_t", "uintptr_t", "ptrdiff_t", "off_t", "loff_t", "u8", "u16",
    "u32", "u64", "s8", "s16", "s32", "s64", "FILE",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

pub fn is_type_name(word: &str) -> bool {
    TYPE_NAMES.contains(&word)
}

/// True when `word` is lexically an identifier and not a keyword.
pub fn is_legal_identifier(word: &str) -> bool {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_ascii_alphanumeric()) && !is_keyword(word)
}

// Longest first so maximal munch works with a linear scan.
const OPERATORS: &[&str] = &[
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=",
    "-=", "*=", "/=", "%=", "&=", "|=", "^=", "+", "-", "*", "/", "%", "<", ">", "=", "!", "~",
    "&", "|", "^", "?", ":", ".",
];

const PUNCT: &[char] = &['(', ')', '{', '}', '[', ']', ';', ','];

pub fn tokenize(source: &str) -> Result<Vec<Token>, SyntaxError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0usize;
    let mut line = 1usize;
    let mut line_start = 0usize;

    while pos < bytes.len() {
        let c = bytes[pos];
        if c == b'\n' {
            pos += 1;
            line += 1;
            line_start = pos;
            continue;
        }
        if c.is_ascii_whitespace() {
            pos += 1;
            continue;
        }
        let span = Span { line, col: pos - line_start + 1 };
        if source[pos..].starts_with("//") {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        if source[pos..].starts_with("/*") {
            let Some(end) = source[pos + 2..].find("*/") else {
                return Err(SyntaxError::new(span, "unterminated block comment", "*/"));
            };
            for b in &bytes[pos..pos + 2 + end + 2] {
                if *b == b'\n' {
                    line += 1;
                }
            }
            pos += 2 + end + 2;
            if let Some(nl) = source[..pos].rfind('\n') {
                line_start = nl + 1;
            }
            continue;
        }
        let start = pos;
        if c == b'_' || c.is_ascii_alphabetic() {
            while pos < bytes.len() && (bytes[pos] == b'_' || bytes[pos].is_ascii_alphanumeric()) {
                pos += 1;
            }
            let text = &source[start..pos];
            let kind = if is_keyword(text) { TokenKind::Keyword } else { TokenKind::Identifier };
            tokens.push(Token { kind, text: text.to_string(), span, offset: start });
            continue;
        }
        if c.is_ascii_digit() {
            if source[pos..].starts_with("0x") || source[pos..].starts_with("0X") {
                pos += 2;
                while pos < bytes.len() && bytes[pos].is_ascii_hexdigit() {
                    pos += 1;
                }
            } else {
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
            }
            while pos < bytes.len() && matches!(bytes[pos], b'u' | b'U' | b'l' | b'L') {
                pos += 1;
            }
            if pos < bytes.len() && (bytes[pos] == b'.' || bytes[pos].is_ascii_alphanumeric()) {
                return Err(SyntaxError::new(span, "malformed integer literal", "integer"));
            }
            tokens.push(Token {
                kind: TokenKind::IntLiteral,
                text: source[start..pos].to_string(),
                span,
                offset: start,
            });
            continue;
        }
        if c == b'"' || c == b'\'' {
            pos += 1;
            loop {
                match bytes.get(pos) {
                    None | Some(b'\n') => {
                        return Err(SyntaxError::new(span, "unterminated literal", "closing quote"))
                    }
                    Some(b'\\') => pos += 2,
                    Some(b) if *b == c => {
                        pos += 1;
                        break;
                    }
                    Some(_) => pos += 1,
                }
            }
            let kind = if c == b'"' { TokenKind::StringLiteral } else { TokenKind::IntLiteral };
            tokens.push(Token { kind, text: source[start..pos].to_string(), span, offset: start });
            continue;
        }
        if PUNCT.contains(&(c as char)) {
            pos += 1;
            tokens.push(Token {
                kind: TokenKind::Punct,
                text: (c as char).to_string(),
                span,
                offset: start,
            });
            continue;
        }
        if let Some(op) = OPERATORS.iter().find(|op| source[pos..].starts_with(**op)) {
            pos += op.len();
            tokens.push(Token {
                kind: TokenKind::Operator,
                text: op.to_string(),
                span,
                offset: start,
            });
            continue;
        }
        let ch = source[pos..].chars().next().unwrap_or('?');
        return Err(SyntaxError::new(span, format!("unexpected character {ch:?}"), "token"));
    }
    Ok(tokens)
}

/// Value of an integer or character literal token.
pub fn literal_value(text: &str) -> Option<i64> {
    if let Some(inner) = text.strip_prefix('\'').and_then(|t| t.strip_suffix('\'')) {
        let mut chars = inner.chars();
        return match (chars.next()?, chars.next()) {
            ('\\', Some(esc)) => Some(match esc {
                'n' => 10,
                't' => 9,
                'r' => 13,
                '0' => 0,
                '\\' => 92,
                '\'' => 39,
                '"' => 34,
                _ => return None,
            }),
            (c, None) => Some(c as i64),
            _ => None,
        };
    }
    let digits = text.trim_end_matches(['u', 'U', 'l', 'L']);
    if let Some(hex) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok().map(|v| v as i64)
    } else if digits.len() > 1 && digits.starts_with('0') {
        u64::from_str_radix(&digits[1..], 8).ok().map(|v| v as i64)
    } else {
        digits.parse::<u64>().ok().map(|v| v as i64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_comments_and_tracks_lines() {
        let toks = tokenize("int a; // hi\n/* x\n y */ b++;").unwrap();
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["int", "a", ";", "b", "++", ";"]);
        assert_eq!(toks[3].span, Span { line: 3, col: 7 });
    }

    #[test]
    fn maximal_munch_operators() {
        let toks = tokenize("a<<=b->c").unwrap();
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["a", "<<=", "b", "->", "c"]);
    }

    #[test]
    fn literals() {
        assert_eq!(literal_value("0x1F"), Some(31));
        assert_eq!(literal_value("10UL"), Some(10));
        assert_eq!(literal_value("'a'"), Some(97));
        assert_eq!(literal_value("'\\n'"), Some(10));
        assert_eq!(literal_value("017"), Some(15));
        assert!(tokenize("1.5").is_err());
        assert!(tokenize("\"abc").is_err());
    }

    #[test]
    fn identifier_legality() {
        assert!(is_legal_identifier("total_read"));
        assert!(!is_legal_identifier("while"));
        assert!(!is_legal_identifier("9lives"));
        assert!(!is_legal_identifier(""));
    }
}
