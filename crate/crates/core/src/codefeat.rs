//! C-like lexer and hashed n-gram features.
//!
//! The lexer never fails: anything it does not recognise becomes a
//! one-character punct token. Literals are replaced by the sentinels
//! `<num>`, `<str>` and `<chr>`.
//!
//! An n-gram is the lexeme texts joined by a single space (0x20); its
//! feature dimension is `fnv1a64(bytes) & (dims - 1)`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const NUM_SENTINEL: &str = "<num>";
pub const STR_SENTINEL: &str = "<str>";
pub const CHR_SENTINEL: &str = "<chr>";

pub const DEFAULT_DIMS: usize = 1 << 18;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

const KEYWORDS: &[&str] = &[
    "_Alignas", "_Alignof", "_Atomic", "_Bool", "_Complex", "_Generic", "_Imaginary",
    "_Noreturn", "_Static_assert", "_Thread_local", "auto", "break", "case", "char", "const",
    "continue", "default", "do", "double", "else", "enum", "extern", "float", "for", "goto",
    "if", "inline", "int", "long", "register", "restrict", "return", "short", "signed",
    "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void", "volatile",
    "while",
];

// longest first within each table; maximal munch tries 3, then 2, then 1
const OPS3: &[&str] = &["<<=", ">>=", "..."];
const OPS2: &[&str] = &[
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=",
    "%=", "&=", "^=", "|=", "##",
];
const OPS1: &[char] = &[
    '+', '-', '*', '/', '%', '=', '<', '>', '!', '&', '|', '^', '~', '?', ':', '.', '#',
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Keyword,
    Identifier,
    Number,
    String,
    Char,
    Operator,
    Punct,
    Comment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

impl Token {
    fn new(kind: TokenKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
        }
    }
}

/// Lexes `code`, keeping comment tokens (text `"<comment>"`).
pub fn lex(code: &str) -> Vec<Token> {
    let chars: Vec<char> = code.chars().collect();
    let n = chars.len();
    let mut i = 0;
    let mut out = Vec::new();
    let at = |j: usize| chars.get(j).copied();

    while i < n {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        // comments
        if c == '/' && at(i + 1) == Some('/') {
            while i < n && chars[i] != '\n' {
                i += 1;
            }
            out.push(Token::new(TokenKind::Comment, "<comment>"));
            continue;
        }
        if c == '/' && at(i + 1) == Some('*') {
            i += 2;
            while i < n && !(chars[i] == '*' && at(i + 1) == Some('/')) {
                i += 1;
            }
            i = (i + 2).min(n);
            out.push(Token::new(TokenKind::Comment, "<comment>"));
            continue;
        }
        // string / char literals; an unterminated literal ends at newline
        if c == '"' || c == '\'' {
            i += 1;
            while i < n && chars[i] != c && chars[i] != '\n' {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            if i < n && chars[i] == c {
                i += 1;
            }
            i = i.min(n);
            out.push(if c == '"' {
                Token::new(TokenKind::String, STR_SENTINEL)
            } else {
                Token::new(TokenKind::Char, CHR_SENTINEL)
            });
            continue;
        }
        // numbers, including .5 and exponents with signs
        if c.is_ascii_digit() || (c == '.' && at(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            i += 1;
            while i < n {
                let d = chars[i];
                if d.is_ascii_alphanumeric() || d == '.' || d == '_' {
                    i += 1;
                } else if (d == '+' || d == '-')
                    && matches!(chars[i - 1], 'e' | 'E' | 'p' | 'P')
                {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(Token::new(TokenKind::Number, NUM_SENTINEL));
            continue;
        }
        if c == '_' || c.is_alphabetic() {
            let start = i;
            while i < n && (chars[i] == '_' || chars[i].is_alphanumeric()) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            let kind = if KEYWORDS.binary_search(&word.as_str()).is_ok() {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            out.push(Token::new(kind, word));
            continue;
        }
        // operators by maximal munch
        let rest3: String = chars[i..(i + 3).min(n)].iter().collect();
        if let Some(op) = OPS3.iter().find(|op| rest3 == **op) {
            out.push(Token::new(TokenKind::Operator, *op));
            i += 3;
            continue;
        }
        let rest2: String = chars[i..(i + 2).min(n)].iter().collect();
        if let Some(op) = OPS2.iter().find(|op| rest2 == **op) {
            out.push(Token::new(TokenKind::Operator, *op));
            i += 2;
            continue;
        }
        let kind = if OPS1.contains(&c) {
            TokenKind::Operator
        } else {
            TokenKind::Punct
        };
        out.push(Token::new(kind, c.to_string()));
        i += 1;
    }
    out
}

/// Lexes `code` and drops comments.
pub fn tokenize(code: &str) -> Vec<Token> {
    lex(code)
        .into_iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .collect()
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("feature dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("n-gram orders must be non-empty and positive")]
    BadOrders,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub dims: usize,
    pub orders: Vec<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            dims: DEFAULT_DIMS,
            orders: vec![1, 2],
        }
    }
}

impl FeatureConfig {
    pub fn new(dims: usize, orders: Vec<usize>) -> Result<Self, FeatureError> {
        let cfg = Self { dims, orders };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if !self.dims.is_power_of_two() {
            return Err(FeatureError::NotPowerOfTwo(self.dims));
        }
        if self.orders.is_empty() || self.orders.contains(&0) {
            return Err(FeatureError::BadOrders);
        }
        Ok(())
    }
}

/// Sparse non-negative count vector over `dims` hashed dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dims: usize,
    /// Sorted by dimension, counts > 0.
    entries: Vec<(u32, f64)>,
    norm: f64,
}

impl FeatureVector {
    pub fn from_counts(dims: usize, counts: BTreeMap<u32, f64>) -> Self {
        let entries: Vec<(u32, f64)> = counts.into_iter().filter(|(_, v)| *v > 0.0).collect();
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        Self { dims, entries, norm }
    }

    pub fn empty(dims: usize) -> Self {
        Self {
            dims,
            entries: Vec::new(),
            norm: 0.0,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn get(&self, dim: u32) -> f64 {
        self.entries
            .binary_search_by_key(&dim, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Dimension of one n-gram.
pub fn ngram_dim(lexemes: &[&str], dims: usize) -> u32 {
    let joined = lexemes.join(" ");
    (fnv1a64(joined.as_bytes()) & (dims as u64 - 1)) as u32
}

/// Counts hashed n-grams of the token texts for every configured order.
pub fn featurize(tokens: &[Token], cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    cfg.validate()?;
    let texts: Vec<&str> = tokens
        .iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .map(|t| t.text.as_str())
        .collect();
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for &order in &cfg.orders {
        for gram in texts.windows(order) {
            *counts.entry(ngram_dim(gram, cfg.dims)).or_default() += 1.0;
        }
    }
    Ok(FeatureVector::from_counts(cfg.dims, counts))
}

/// `featurize(tokenize(code))`.
pub fn featurize_code(code: &str, cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    featurize(&tokenize(code), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use TokenKind::*;

    fn kinds_texts(code: &str) -> Vec<(TokenKind, std::string::String)> {
        tokenize(code).into_iter().map(|t| (t.kind, t.text)).collect()
    }

    #[test]
    fn keyword_table_is_sorted() {
        assert!(KEYWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn lexes_declaration() {
        assert_eq!(
            kinds_texts("int x = 42;"),
            vec![
                (Keyword, "int".into()),
                (Identifier, "x".into()),
                (Operator, "=".into()),
                (Number, "<num>".into()),
                (Punct, ";".into()),
            ]
        );
    }

    #[test]
    fn drops_comments() {
        assert_eq!(
            kinds_texts("/* c */ a+b"),
            vec![
                (Identifier, "a".into()),
                (Operator, "+".into()),
                (Identifier, "b".into())
            ]
        );
        assert_eq!(lex("// x\ny")[0].kind, Comment);
    }

    #[test]
    fn escaped_quote_stays_in_string() {
        assert_eq!(kinds_texts(r#""s\"t""#), vec![(String, "<str>".into())]);
        assert_eq!(kinds_texts(r"'\''"), vec![(Char, "<chr>".into())]);
    }

    #[test]
    fn maximal_munch() {
        let texts: Vec<std::string::String> =
            tokenize("a<<=b->c...d>>e").into_iter().map(|t| t.text).collect();
        assert_eq!(texts, vec!["a", "<<=", "b", "->", "c", "...", "d", ">>", "e"]);
        assert_eq!(kinds_texts("1.5e-3f")[0], (Number, "<num>".into()));
        assert_eq!(kinds_texts("x @ y")[1], (Punct, "@".into()));
    }

    #[test]
    fn unterminated_input_is_total() {
        assert_eq!(tokenize("\"abc").len(), 1);
        assert_eq!(lex("/* open").len(), 1);
        assert_eq!(tokenize("'").len(), 1);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn featurize_examples() {
        let cfg1 = FeatureConfig::new(1 << 18, vec![1]).unwrap();
        let empty = featurize(&[], &FeatureConfig::default()).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.norm(), 0.0);

        let one = featurize(&tokenize("a"), &cfg1).unwrap();
        assert_eq!(one.entries().len(), 1);
        assert_eq!(one.entries()[0].1, 1.0);
        assert_eq!(one.norm(), 1.0);

        // hand count: a appears twice, b once
        let aba = featurize(&tokenize("a b a"), &cfg1).unwrap();
        let da = ngram_dim(&["a"], 1 << 18);
        let db = ngram_dim(&["b"], 1 << 18);
        assert_ne!(da, db);
        assert_eq!(aba.get(da), 2.0);
        assert_eq!(aba.get(db), 1.0);
        assert!((aba.norm() - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn collisions_add_counts() {
        let cfg = FeatureConfig::new(2, vec![1, 2]).unwrap();
        let toks = tokenize("a b c d e");
        let fv = featurize(&toks, &cfg).unwrap();
        let total: f64 = fv.entries().iter().map(|e| e.1).sum();
        assert_eq!(total, 5.0 + 4.0);
        assert!(fv.entries().iter().all(|e| e.0 < 2));
    }

    #[test]
    fn config_validation() {
        assert_eq!(
            FeatureConfig::new(1000, vec![1]),
            Err(FeatureError::NotPowerOfTwo(1000))
        );
        assert_eq!(FeatureConfig::new(8, vec![]), Err(FeatureError::BadOrders));
    }

    proptest! {
        #[test]
        fn lexer_never_panics(code in "\\PC{0,200}") {
            let _ = lex(&code);
        }

        #[test]
        fn comment_suffix_does_not_change_features(code in "[a-z0-9 +*;(){}=<>]{0,80}", note in "[a-z ]{0,30}") {
            let cfg = FeatureConfig::new(1 << 12, vec![1, 2]).unwrap();
            let base = featurize_code(&code, &cfg).unwrap();
            let with_block = featurize_code(&format!("{code}\n/* {note} */"), &cfg).unwrap();
            let with_line = featurize_code(&format!("{code}\n// {note}"), &cfg).unwrap();
            prop_assert_eq!(&base, &with_block);
            prop_assert_eq!(&base, &with_line);
        }

        #[test]
        fn norm_cache_matches_entries(code in "[a-z0-9 +*;]{0,80}") {
            let fv = featurize_code(&code, &FeatureConfig::new(64, vec![1, 2]).unwrap()).unwrap();
            let norm = fv.entries().iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            prop_assert!((fv.norm() - norm).abs() < 1e-9);
            prop_assert!(fv.entries().iter().all(|e| e.1 > 0.0 && (e.0 as usize) < 64));
        }
    }
}
