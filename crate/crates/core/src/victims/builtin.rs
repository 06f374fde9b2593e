//! Deterministic surrogate victims with published JSON weight tables.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Model, VictimError};
use crate::frontend::lexer::{tokenize, TokenKind};
use crate::transforms::OpKind;

const TOKEN_BAG_JSON: &str = include_str!("../../data/victims/token_bag.json");
const STRUCT_SNIFFER_JSON: &str = include_str!("../../data/victims/struct_sniffer.json");
const PLANTED_JSON: &str = include_str!("../../data/victims/planted.json");

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(name, summary)` for every builtin.
pub fn builtin_catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("constant:<p>", "always returns p"),
        ("token-bag[:path]", "logistic over hashed token counts, braces excluded"),
        ("struct-sniffer[:path]", "logistic over the number of for and switch statements"),
        ("planted[:path|json]", "flips when a secret renaming and/or secret transform is present"),
    ]
}

pub(super) fn build(spec: &str) -> Result<Arc<dyn Model>, VictimError> {
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (spec, None),
    };
    let load = |default: &str| -> Result<String, VictimError> {
        match arg {
            None => Ok(default.to_string()),
            Some(a) if a.trim_start().starts_with('{') => Ok(a.to_string()),
            Some(path) => std::fs::read_to_string(path).map_err(|e| VictimError::Config(format!("{path}: {e}"))),
        }
    };
    let parse_err = |e: serde_json::Error| VictimError::Config(e.to_string());
    Ok(match name {
        "constant" => {
            let p: f64 = arg
                .ok_or_else(|| VictimError::Config("constant needs a probability".into()))?
                .parse()
                .map_err(|_| VictimError::Config(format!("bad probability in `{spec}`")))?;
            Arc::new(Constant::new(p)?)
        }
        "token-bag" => Arc::new(TokenBag::new(serde_json::from_str(&load(TOKEN_BAG_JSON)?).map_err(parse_err)?)?),
        "struct-sniffer" => Arc::new(StructSniffer { config: serde_json::from_str(&load(STRUCT_SNIFFER_JSON)?).map_err(parse_err)? }),
        "planted" => Arc::new(Planted { config: serde_json::from_str(&load(PLANTED_JSON)?).map_err(parse_err)? }),
        _ => return Err(VictimError::UnknownBuiltin(spec.to_string())),
    })
}

/// Token texts of `code`; falls back to whitespace splitting when the text
/// does not lex.
fn token_texts(code: &str) -> Vec<(TokenKind, String)> {
    match tokenize(code) {
        Ok(toks) => toks.into_iter().map(|t| (t.kind, t.text)).collect(),
        Err(_) => code.split_whitespace().map(|w| (TokenKind::Identifier, w.to_string())).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Constant(f64);

impl Constant {
    pub fn new(p: f64) -> Result<Self, VictimError> {
        if (0.0..=1.0).contains(&p) {
            Ok(Self(p))
        } else {
            Err(VictimError::Config(format!("probability {p} outside [0, 1]")))
        }
    }
}

impl Model for Constant {
    fn p_vulnerable(&self, _id: &str, _code: &str) -> Result<f64, VictimError> {
        Ok(self.0)
    }

    fn describe(&self) -> String {
        format!("constant:{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBagConfig {
    pub buckets: usize,
    pub bias: f64,
    #[serde(default)]
    pub hash: String,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TokenBag {
    pub config: TokenBagConfig,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl TokenBag {
    pub fn new(config: TokenBagConfig) -> Result<Self, VictimError> {
        if config.buckets == 0 || config.weights.len() != config.buckets {
            return Err(VictimError::Config("token-bag needs one weight per bucket".into()));
        }
        Ok(Self { config })
    }

    pub fn logit(&self, code: &str) -> f64 {
        let mut z = self.config.bias;
        for (_, text) in token_texts(code) {
            if text == "{" || text == "}" {
                continue;
            }
            let bucket = (fnv1a64(text.as_bytes()) % self.config.buckets as u64) as usize;
            z += self.config.weights[bucket];
        }
        z
    }
}

impl Model for TokenBag {
    fn p_vulnerable(&self, _id: &str, code: &str) -> Result<f64, VictimError> {
        Ok(sigmoid(self.logit(code)))
    }

    fn describe(&self) -> String {
        "token-bag".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructSnifferConfig {
    pub weight: f64,
    pub bias: f64,
    /// Keywords whose occurrences are counted.
    pub features: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct StructSniffer {
    pub config: StructSnifferConfig,
}

impl Model for StructSniffer {
    fn p_vulnerable(&self, _id: &str, code: &str) -> Result<f64, VictimError> {
        let count = token_texts(code)
            .iter()
            .filter(|(k, t)| *k == TokenKind::Keyword && self.config.features.iter().any(|f| f == t))
            .count();
        Ok(sigmoid(self.config.weight * count as f64 + self.config.bias))
    }

    fn describe(&self) -> String {
        "struct-sniffer".into()
    }
}

/// One secret renaming: `from` must be gone and one of `to` present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretSub {
    pub from: String,
    #[serde(with = "one_or_many")]
    pub to: Vec<String>,
}

mod one_or_many {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }

    pub fn serialize<S: Serializer>(v: &[String], s: S) -> Result<S::Ok, S::Error> {
        if v.len() == 1 {
            v[0].serialize(s)
        } else {
            v.serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        Ok(match OneOrMany::deserialize(d)? {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    #[serde(default = "default_base")]
    pub base: f64,
    #[serde(default = "default_flip")]
    pub flip_to: f64,
    #[serde(default)]
    pub secret_sub: Vec<SecretSub>,
    /// Subtracted from `base` per matched secret entry.
    #[serde(default)]
    pub partial_credit: f64,
    /// Matched when no structure of the op's source kind remains.
    #[serde(default)]
    pub secret_transform: Option<OpKind>,
    /// Token whose absence lowers the score by `anchor_drop`.
    #[serde(default)]
    pub anchor_token: Option<String>,
    #[serde(default = "default_anchor_drop")]
    pub anchor_drop: f64,
}

fn default_base() -> f64 {
    0.9
}

fn default_flip() -> f64 {
    0.1
}

fn default_anchor_drop() -> f64 {
    0.4
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub config: PlantedConfig,
}

impl Planted {
    pub fn matched_entries(&self, code: &str) -> usize {
        let toks = token_texts(code);
        let idents: BTreeSet<&str> =
            toks.iter().filter(|(k, _)| *k == TokenKind::Identifier).map(|(_, t)| t.as_str()).collect();
        self.config
            .secret_sub
            .iter()
            .filter(|s| !idents.contains(s.from.as_str()) && s.to.iter().any(|t| idents.contains(t.as_str())))
            .count()
    }

    fn transform_present(op: OpKind, texts: &[&str]) -> bool {
        let has = |kw: &str| texts.contains(&kw);
        let pair = |a: &str, b: &str| texts.windows(2).any(|w| w[0] == a && w[1] == b);
        match op {
            OpKind::For2While => !has("for"),
            OpKind::ChSwitch => !has("switch"),
            OpKind::ChDo => !has("do"),
            // every remaining `while` closes a do-loop
            OpKind::While2For => {
                texts.iter().filter(|t| **t == "while").count() == texts.iter().filter(|t| **t == "do").count()
            }
            OpKind::ChIfElse2Else => !pair("else", "if"),
            OpKind::ChElse2ElseIf => !texts.windows(3).any(|w| w[0] == "else" && w[1] == "{" && w[2] == "if"),
        }
    }
}

impl Model for Planted {
    fn p_vulnerable(&self, _id: &str, code: &str) -> Result<f64, VictimError> {
        let c = &self.config;
        let toks = token_texts(code);
        let texts: Vec<&str> = toks.iter().map(|(_, t)| t.as_str()).collect();
        let matched = self.matched_entries(code);
        let subs_ok = matched == c.secret_sub.len();
        let transform_ok = c.secret_transform.is_none_or(|op| Self::transform_present(op, &texts));
        if subs_ok && transform_ok {
            return Ok(c.flip_to);
        }
        let mut p = c.base - c.partial_credit * matched as f64;
        if let Some(anchor) = &c.anchor_token {
            if !texts.contains(&anchor.as_str()) {
                p -= c.anchor_drop;
            }
        }
        Ok(p.clamp(0.0, 1.0))
    }

    fn describe(&self) -> String {
        "planted".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_bag_empty_is_bias_only() {
        let cfg: TokenBagConfig = serde_json::from_str(TOKEN_BAG_JSON).unwrap();
        let m = build("token-bag").unwrap();
        let expect = 1.0 / (1.0 + (-cfg.bias).exp());
        assert_eq!(m.p_vulnerable("1", "").unwrap(), expect);
    }

    #[test]
    fn token_bag_ignores_braces() {
        let m = build("token-bag").unwrap();
        let a = m.p_vulnerable("1", "if (a) { b = 1; }").unwrap();
        let b = m.p_vulnerable("1", "if (a) b = 1;").unwrap();
        assert_eq!(a, b);
        let c = m.p_vulnerable("1", "if (a) c = 1;").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn struct_sniffer_formula() {
        let m = build("struct-sniffer").unwrap();
        let one = m.p_vulnerable("1", "int f(){int i; for(i=0;i<3;i++){} return 0;}").unwrap();
        let none = m.p_vulnerable("1", "int f(){int i; i=0; while(i<3){i++;} return 0;}").unwrap();
        assert!((one - sigmoid(1.0)).abs() < 1e-15);
        assert!((none - sigmoid(-1.0)).abs() < 1e-15);
        assert!(none < one);
    }

    #[test]
    fn planted_secret_sub() {
        let m = build(r#"planted:{"secret_sub":[{"from":"copied","to":"total_read"}],"flip_to":0.1}"#).unwrap();
        assert_eq!(m.p_vulnerable("1", "size_t copied = 0; return copied;").unwrap(), 0.9);
        assert_eq!(m.p_vulnerable("1", "size_t total_read = 0; return total_read;").unwrap(), 0.1);
    }

    #[test]
    fn planted_secret_transform_and_anchor() {
        let m = build(r#"planted:{"secret_transform":"for2while"}"#).unwrap();
        assert_eq!(m.p_vulnerable("1", "for(;;){}").unwrap(), 0.9);
        assert_eq!(m.p_vulnerable("1", "while(1){}").unwrap(), 0.1);
        let m = build(r#"planted:{"secret_sub":[{"from":"a","to":"b"}],"anchor_token":"memcpy"}"#).unwrap();
        assert_eq!(m.p_vulnerable("1", "memcpy(a);").unwrap(), 0.9);
        assert!((m.p_vulnerable("1", ";").unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn planted_partial_credit() {
        let m = build(
            r#"planted:{"secret_sub":[{"from":"a","to":["x","y"]},{"from":"b","to":"z"}],"partial_credit":0.15}"#,
        )
        .unwrap();
        assert_eq!(m.p_vulnerable("1", "a + b").unwrap(), 0.9);
        assert!((m.p_vulnerable("1", "y + b").unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(m.p_vulnerable("1", "x + z").unwrap(), 0.1);
    }

    #[test]
    fn bundled_planted_instance() {
        let m = build("planted").unwrap();
        let orig = "ssize_t seq_read_iter(struct kiocb *iocb, struct iov_iter *iter) {\n    struct seq_file *m = file->private_data;\n    size_t copied = 0;\n    size_t n;\n    while (1) {\n    }\n    return copied;\n}\n";
        assert_eq!(m.p_vulnerable("1", orig).unwrap(), 0.9);
        let masked = orig.replace("struct seq_file *m = file->private_data;", ";");
        assert!((m.p_vulnerable("1", &masked).unwrap() - 0.5).abs() < 1e-12);
        let one = orig.replace("copied", "total_read");
        assert!((m.p_vulnerable("1", &one).unwrap() - 0.8).abs() < 1e-12);
        let all = one.replace(" n;", " len;").replace("*m", "*cur").replace("*iter", "*buffer");
        assert_eq!(m.p_vulnerable("1", &all).unwrap(), 0.1);
    }
}
