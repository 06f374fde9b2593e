//! Black-box victims behind one accounting gate.
//!
//! A [`VictimSpec`] names a model (builtin surrogate, subprocess or HTTP
//! service); [`VictimSpec::connect`] yields a per-task [`VictimHandle`] that
//! counts every query before issuing it.

mod builtin;
mod remote;
pub mod serve;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use builtin::{
    builtin_catalog, fnv1a64, sigmoid, Constant, Planted, PlantedConfig, SecretSub, StructSniffer, StructSnifferConfig, TokenBag,
    TokenBagConfig,
};
pub use remote::{HttpClient, SubprocessClient};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const MAX_RETRIES: usize = 2;
pub const DEFAULT_WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VictimError {
    #[error("query budget exhausted")]
    BudgetExhausted,
    #[error("victim unavailable: {0}")]
    Unavailable(String),
    #[error("malformed victim response: {0}")]
    MalformedResponse(String),
    #[error("unknown builtin victim `{0}`")]
    UnknownBuiltin(String),
    #[error("bad victim configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VictimVerdict {
    pub p_vulnerable: f64,
    pub label: u8,
}

impl VictimVerdict {
    /// Label 1 at or above 0.5.
    pub fn from_p(p_vulnerable: f64) -> Self {
        Self { p_vulnerable, label: u8::from(p_vulnerable >= 0.5) }
    }

    /// Confidence the victim assigns to class `label`.
    pub fn p_true(&self, label: u8) -> f64 {
        if label == 1 {
            self.p_vulnerable
        } else {
            1.0 - self.p_vulnerable
        }
    }
}

/// A classifier returning p(vulnerable) for a code string.
pub trait Model: Send + Sync {
    fn p_vulnerable(&self, id: &str, code: &str) -> Result<f64, VictimError>;

    /// Scores several programs; transports may keep several requests in
    /// flight. Results come back in input order.
    fn p_vulnerable_many(&self, reqs: &[(String, String)]) -> Vec<Result<f64, VictimError>> {
        reqs.iter().map(|(id, code)| self.p_vulnerable(id, code)).collect()
    }

    fn describe(&self) -> String;
}

/// Parsed victim specification; cheap to clone and share across tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VictimSpec {
    Builtin(String),
    Subprocess(String),
    Http(String),
}

impl fmt::Display for VictimSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VictimSpec::Builtin(s) => f.write_str(s),
            VictimSpec::Subprocess(c) => write!(f, "cmd:{c}"),
            VictimSpec::Http(u) => f.write_str(u),
        }
    }
}

impl VictimSpec {
    /// `constant:<p>`, `token-bag[:path]`, `struct-sniffer[:path]`,
    /// `planted[:path|json]`, `cmd:<shell command>` or an `http(s)://` url.
    pub fn parse(spec: &str) -> Result<Self, VictimError> {
        let spec = spec.trim();
        if let Some(cmd) = spec.strip_prefix("cmd:") {
            return Ok(VictimSpec::Subprocess(cmd.to_string()));
        }
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(VictimSpec::Http(spec.to_string()));
        }
        // validate eagerly so configuration errors surface before a run
        builtin::build(spec)?;
        Ok(VictimSpec::Builtin(spec.to_string()))
    }

    pub fn model(&self) -> Result<Arc<dyn Model>, VictimError> {
        self.model_with_timeout(DEFAULT_TIMEOUT)
    }

    pub fn model_with_timeout(&self, timeout: Duration) -> Result<Arc<dyn Model>, VictimError> {
        Ok(match self {
            VictimSpec::Builtin(s) => builtin::build(s)?,
            VictimSpec::Subprocess(cmd) => Arc::new(SubprocessClient::spawn(cmd, timeout, DEFAULT_WINDOW)?),
            VictimSpec::Http(url) => Arc::new(HttpClient::new(url, timeout)),
        })
    }

    /// A fresh handle with its own connection and a zeroed counter.
    pub fn connect(&self) -> Result<VictimHandle, VictimError> {
        Ok(VictimHandle::new(self.model()?))
    }
}

/// Per-task victim access with exact query accounting.
pub struct VictimHandle {
    model: Arc<dyn Model>,
    counter: u64,
    budget: Option<u64>,
    cache: Option<HashMap<String, f64>>,
}

impl fmt::Debug for VictimHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VictimHandle")
            .field("model", &self.model.describe())
            .field("counter", &self.counter)
            .field("budget", &self.budget)
            .finish()
    }
}

impl VictimHandle {
    pub fn new(model: Arc<dyn Model>) -> Self {
        Self { model, counter: 0, budget: None, cache: None }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    /// Memoizes verdicts by code text. Hits still count as queries.
    pub fn with_memo(mut self) -> Self {
        self.cache = Some(HashMap::new());
        self
    }

    pub fn queries(&self) -> u64 {
        self.counter
    }

    /// Changes the cap mid-task, e.g. to hold back a verification query.
    pub fn set_budget(&mut self, budget: Option<u64>) {
        self.budget = budget;
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget.map_or(u64::MAX, |b| b.saturating_sub(self.counter))
    }

    pub fn describe(&self) -> String {
        self.model.describe()
    }

    fn next_id(&mut self) -> Result<String, VictimError> {
        if self.remaining() == 0 {
            return Err(VictimError::BudgetExhausted);
        }
        self.counter += 1;
        Ok(self.counter.to_string())
    }

    pub fn predict(&mut self, code: &str) -> Result<VictimVerdict, VictimError> {
        let id = self.next_id()?;
        if let Some(p) = self.cache.as_ref().and_then(|c| c.get(code)) {
            return Ok(VictimVerdict::from_p(*p));
        }
        let p = with_retries(|| self.model.p_vulnerable(&id, code))?;
        if let Some(c) = self.cache.as_mut() {
            c.insert(code.to_string(), p);
        }
        Ok(VictimVerdict::from_p(p))
    }

    /// Scores `codes` in order, stopping at the first error. Returns the
    /// verdicts obtained so far and the error, if any.
    pub fn predict_many(&mut self, codes: &[String]) -> (Vec<VictimVerdict>, Option<VictimError>) {
        let mut reqs = Vec::new();
        let mut stop = None;
        for code in codes {
            match self.next_id() {
                Ok(id) => reqs.push((id, code.clone())),
                Err(e) => {
                    stop = Some(e);
                    break;
                }
            }
        }
        let mut out = Vec::with_capacity(reqs.len());
        let results = self.model.p_vulnerable_many(&reqs);
        for ((id, code), r) in reqs.iter().zip(results) {
            let r = match r {
                Err(VictimError::Unavailable(_)) => with_retries(|| self.model.p_vulnerable(id, code)),
                other => other,
            };
            match r {
                Ok(p) => out.push(VictimVerdict::from_p(p)),
                Err(e) => return (out, Some(e)),
            }
        }
        (out, stop)
    }
}

fn with_retries(mut f: impl FnMut() -> Result<f64, VictimError>) -> Result<f64, VictimError> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(VictimError::Unavailable(msg)) if attempt < MAX_RETRIES => {
                log::warn!("victim transport error, retrying: {msg}");
                attempt += 1;
            }
            Ok(p) if !(0.0..=1.0).contains(&p) || p.is_nan() => {
                return Err(VictimError::MalformedResponse(format!("p_vulnerable {p} outside [0, 1]")))
            }
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn threshold_tie_is_vulnerable() {
        let mut h = VictimSpec::parse("constant:0.5").unwrap().connect().unwrap();
        let v = h.predict("int f(){return 0;}").unwrap();
        assert_eq!(v.p_vulnerable, 0.5);
        assert_eq!(v.label, 1);
        assert_eq!(VictimVerdict::from_p(0.4999).label, 0);
    }

    #[test]
    fn counter_and_budget() {
        let mut h = VictimSpec::parse("constant:0.2").unwrap().connect().unwrap().with_budget(2);
        h.predict("a").unwrap();
        h.predict("b").unwrap();
        assert_eq!(h.predict("c"), Err(VictimError::BudgetExhausted));
        assert_eq!(h.queries(), 2);
    }

    #[test]
    fn memo_hits_still_count() {
        let mut h = VictimSpec::parse("token-bag").unwrap().connect().unwrap().with_memo();
        let a = h.predict("int f(){return 0;}").unwrap();
        let b = h.predict("int f(){return 0;}").unwrap();
        assert_eq!(a, b);
        assert_eq!(h.queries(), 2);
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_first: usize,
    }

    impl Model for Flaky {
        fn p_vulnerable(&self, _id: &str, _code: &str) -> Result<f64, VictimError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(VictimError::Unavailable("reset".into()))
            } else {
                Ok(0.25)
            }
        }

        fn describe(&self) -> String {
            "flaky".into()
        }
    }

    #[test]
    fn retries_do_not_double_count() {
        let mut h = VictimHandle::new(Arc::new(Flaky { calls: AtomicUsize::new(0), fail_first: 2 }));
        assert_eq!(h.predict("x").unwrap().p_vulnerable, 0.25);
        assert_eq!(h.queries(), 1);
        let mut h = VictimHandle::new(Arc::new(Flaky { calls: AtomicUsize::new(0), fail_first: 3 }));
        assert!(matches!(h.predict("x"), Err(VictimError::Unavailable(_))));
        assert_eq!(h.queries(), 1);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(VictimSpec::parse("cmd:python3 stub.py").unwrap(), VictimSpec::Subprocess("python3 stub.py".into()));
        assert_eq!(VictimSpec::parse("http://127.0.0.1:9/predict").unwrap(), VictimSpec::Http("http://127.0.0.1:9/predict".into()));
        assert!(matches!(VictimSpec::parse("nope"), Err(VictimError::UnknownBuiltin(_))));
        assert!(matches!(VictimSpec::parse("constant:1.5"), Err(VictimError::Config(_))));
    }
}
