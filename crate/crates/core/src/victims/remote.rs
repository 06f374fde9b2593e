//! Wire-protocol clients: newline-delimited JSON over a child process's
//! stdio, and `POST /predict` over HTTP.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use super::{Model, VictimError};

/// `{"id":...,"code":...}` with the keys in protocol order.
pub fn encode_request(id: &str, code: &str) -> String {
    format!(r#"{{"id":{},"code":{}}}"#, Value::from(id), Value::from(code))
}

/// A response line decoded into `(id, p_vulnerable or error text)`.
type Reply = (Option<String>, Result<f64, String>);

fn decode_reply(line: &str) -> Reply {
    let v: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return (None, Err(format!("invalid JSON: {e}"))),
    };
    let id = match v.get("id") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    };
    if let Some(err) = v.get("error") {
        return (id, Err(err.as_str().map_or_else(|| err.to_string(), str::to_string)));
    }
    match v.get("p_vulnerable").and_then(Value::as_f64) {
        Some(p) => (id, Ok(p)),
        None => (id, Err("missing numeric p_vulnerable".into())),
    }
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<Reply>,
}

impl Session {
    fn start(cmd: &str) -> Result<Self, VictimError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| VictimError::Unavailable(format!("spawn `{cmd}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                if tx.send(decode_reply(&line)).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, replies: rx })
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Talks to an external victim process. Up to `window` requests are kept
/// in flight; replies are matched by id and may arrive in any order.
pub struct SubprocessClient {
    cmd: String,
    timeout: Duration,
    window: usize,
    session: Mutex<Option<Session>>,
}

impl SubprocessClient {
    pub fn spawn(cmd: &str, timeout: Duration, window: usize) -> Result<Self, VictimError> {
        let session = Session::start(cmd)?;
        Ok(Self { cmd: cmd.to_string(), timeout, window: window.max(1), session: Mutex::new(Some(session)) })
    }

    fn run(&self, reqs: &[(String, String)]) -> Vec<Result<f64, VictimError>> {
        let mut guard = self.session.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            match Session::start(&self.cmd) {
                Ok(s) => *guard = Some(s),
                Err(e) => return reqs.iter().map(|_| Err(e.clone())).collect(),
            }
        }
        let session = guard.as_mut().expect("session present");
        let mut results: HashMap<&str, Result<f64, VictimError>> = HashMap::new();
        let mut in_flight: VecDeque<&str> = VecDeque::new();
        let mut next = 0;
        let mut dead: Option<VictimError> = None;
        while results.len() < reqs.len() && dead.is_none() {
            while next < reqs.len() && in_flight.len() < self.window {
                let (id, code) = &reqs[next];
                let line = encode_request(id, code);
                if let Err(e) = writeln!(session.stdin, "{line}").and_then(|_| session.stdin.flush()) {
                    dead = Some(VictimError::Unavailable(format!("write to victim: {e}")));
                    break;
                }
                in_flight.push_back(id);
                next += 1;
            }
            if dead.is_some() {
                break;
            }
            match session.replies.recv_timeout(self.timeout) {
                Ok((Some(id), r)) => match in_flight.iter().position(|p| *p == id) {
                    Some(pos) => {
                        let id = in_flight.remove(pos).expect("present");
                        results.insert(id, r.map_err(VictimError::MalformedResponse));
                    }
                    None => log::warn!("ignoring reply for unknown id {id}"),
                },
                // an error without an id is charged to the oldest request
                Ok((None, r)) => {
                    if let Some(id) = in_flight.pop_front() {
                        let msg = r.err().unwrap_or_else(|| "reply without id".into());
                        results.insert(id, Err(VictimError::MalformedResponse(msg)));
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    dead = Some(VictimError::Unavailable(format!("no reply within {:?}", self.timeout)));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    dead = Some(VictimError::Unavailable("victim process closed its output".into()));
                }
            }
        }
        if dead.is_some() {
            // the stream may be out of sync; restart on next use
            *guard = None;
        }
        reqs.iter()
            .map(|(id, _)| {
                results.remove(id.as_str()).unwrap_or_else(|| Err(dead.clone().unwrap_or_else(|| VictimError::Unavailable("no reply".into()))))
            })
            .collect()
    }
}

impl Model for SubprocessClient {
    fn p_vulnerable(&self, id: &str, code: &str) -> Result<f64, VictimError> {
        self.run(&[(id.to_string(), code.to_string())]).pop().expect("one result")
    }

    fn p_vulnerable_many(&self, reqs: &[(String, String)]) -> Vec<Result<f64, VictimError>> {
        self.run(reqs)
    }

    fn describe(&self) -> String {
        format!("cmd:{}", self.cmd)
    }
}

pub struct HttpClient {
    url: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let url = if url.trim_end_matches('/').ends_with("/predict") {
            url.to_string()
        } else {
            format!("{}/predict", url.trim_end_matches('/'))
        };
        Self { url, agent: ureq::AgentBuilder::new().timeout(timeout).build() }
    }
}

impl Model for HttpClient {
    fn p_vulnerable(&self, id: &str, code: &str) -> Result<f64, VictimError> {
        let body = encode_request(id, code);
        let resp = self
            .agent
            .post(&self.url)
            .set("Content-Type", "application/json")
            .send_string(&body)
            .map_err(|e| VictimError::Unavailable(e.to_string()))?;
        if resp.status() != 200 {
            return Err(VictimError::Unavailable(format!("HTTP {}", resp.status())));
        }
        let text = resp.into_string().map_err(|e| VictimError::Unavailable(e.to_string()))?;
        match decode_reply(&text) {
            (Some(rid), Ok(p)) if rid == id => Ok(p),
            (Some(rid), Ok(_)) => Err(VictimError::MalformedResponse(format!("reply id {rid} for request {id}"))),
            (None, Ok(_)) => Err(VictimError::MalformedResponse("reply without id".into())),
            (_, Err(msg)) => Err(VictimError::MalformedResponse(msg)),
        }
    }

    fn describe(&self) -> String {
        self.url.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_bytes() {
        assert_eq!(encode_request("1", "int f(){return \"a\";}\n"), r#"{"id":"1","code":"int f(){return \"a\";}\n"}"#);
    }

    #[test]
    fn decodes_replies() {
        assert_eq!(decode_reply(r#"{"id":"3","p_vulnerable":0.25,"extra":1}"#), (Some("3".into()), Ok(0.25)));
        assert_eq!(decode_reply(r#"{"id":null,"error":"bad"}"#), (None, Err("bad".into())));
        assert!(decode_reply(r#"{"id":"3"}"#).1.is_err());
        assert!(decode_reply("garbage").1.is_err());
    }

    #[test]
    fn out_of_order_replies_matched_by_id() {
        // answers the second request first, then the first
        let script = r#"read a; read b; echo '{"id":"2","p_vulnerable":0.2}'; echo '{"id":"1","p_vulnerable":0.7}'; sleep 1"#;
        let c = SubprocessClient::spawn(script, Duration::from_secs(5), 8).unwrap();
        let out = c.p_vulnerable_many(&[("1".into(), "x".into()), ("2".into(), "y".into())]);
        assert_eq!(out, vec![Ok(0.7), Ok(0.2)]);
    }

    #[test]
    fn dead_process_is_unavailable() {
        let c = SubprocessClient::spawn("exit 0", Duration::from_secs(5), 8).unwrap();
        assert!(matches!(c.p_vulnerable("1", "x"), Err(VictimError::Unavailable(_))));
    }
}
