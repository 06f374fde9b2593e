//! Serving a [`Model`] over the two wire protocols, so any builtin can
//! stand in for an external victim.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use serde_json::Value;

use super::Model;

const MAX_BODY: usize = 16 << 20;

/// `{"id":...,"p_vulnerable":...}` with the keys in protocol order.
pub fn encode_response(id: &str, p: f64) -> String {
    format!(r#"{{"id":{},"p_vulnerable":{}}}"#, Value::from(id), Value::from(p))
}

pub fn encode_error(id: Option<&str>, msg: &str) -> String {
    format!(r#"{{"id":{},"error":{}}}"#, id.map_or(Value::Null, Value::from), Value::from(msg))
}

/// Validates one request body and scores it. The error side carries the
/// request id when one could be read.
pub fn answer(model: &dyn Model, body: &str) -> Result<String, (Option<String>, String)> {
    let v: Value = serde_json::from_str(body).map_err(|e| (None, format!("invalid JSON: {e}")))?;
    let id = match v.get("id") {
        Some(Value::String(s)) => s.clone(),
        _ => return Err((None, "missing string field `id`".into())),
    };
    let Some(code) = v.get("code").and_then(Value::as_str) else {
        return Err((Some(id), "missing string field `code`".into()));
    };
    let p = model.p_vulnerable(&id, code).map_err(|e| (Some(id.clone()), e.to_string()))?;
    Ok(encode_response(&id, p))
}

/// Answers newline-delimited requests until `input` closes. Malformed
/// lines get an error reply and the loop continues.
pub fn serve_stdio(model: &dyn Model, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = answer(model, &line).unwrap_or_else(|(id, msg)| encode_error(id.as_deref(), &msg));
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve_http(model: Arc<dyn Model>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let model = Arc::clone(&model);
        thread::spawn(move || {
            if let Err(e) = handle_connection(model.as_ref(), stream) {
                log::debug!("connection error: {e}");
            }
        });
    }
    Ok(())
}

fn handle_connection(model: &dyn Model, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut content_length = 0usize;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 || header.trim().is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length.min(MAX_BODY)];
    reader.read_exact(&mut body)?;
    let (status, reply) = route(model, &method, &path, &String::from_utf8_lossy(&body));
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )?;
    stream.flush()
}

fn route(model: &dyn Model, method: &str, path: &str, body: &str) -> (&'static str, String) {
    let path = path.split('?').next().unwrap_or("");
    match (method, path) {
        ("GET", "/healthz") => ("200 OK", r#"{"status":"ok"}"#.to_string()),
        ("POST", "/predict") => match answer(model, body) {
            Ok(reply) => ("200 OK", reply),
            Err((id, msg)) => ("400 Bad Request", encode_error(id.as_deref(), &msg)),
        },
        (_, "/healthz" | "/predict") => ("405 Method Not Allowed", encode_error(None, "method not allowed")),
        _ => ("404 Not Found", encode_error(None, "not found")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victims::{HttpClient, VictimSpec};
    use std::time::Duration;

    #[test]
    fn stdio_replies_and_survives_garbage() {
        let model = VictimSpec::parse("constant:0.25").unwrap().model().unwrap();
        let input = "{\"id\":\"1\",\"code\":\"int f(){return 0;}\"}\nnot json\n{\"id\":\"2\"}\n{\"id\":\"3\",\"code\":\"\"}\n";
        let mut out = Vec::new();
        serve_stdio(model.as_ref(), input.as_bytes(), &mut out).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines[0], r#"{"id":"1","p_vulnerable":0.25}"#);
        assert!(lines[1].starts_with(r#"{"id":null,"error":"#));
        assert!(lines[2].starts_with(r#"{"id":"2","error":"#));
        assert_eq!(lines[3], r#"{"id":"3","p_vulnerable":0.25}"#);
    }

    fn raw(addr: &str, req: &str) -> String {
        let mut s = TcpStream::connect(addr).unwrap();
        s.write_all(req.as_bytes()).unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    }

    #[test]
    fn http_routes() {
        let model = VictimSpec::parse("token-bag").unwrap().model().unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let m2 = Arc::clone(&model);
        thread::spawn(move || serve_http(m2, listener));

        assert!(raw(&addr, "GET /healthz HTTP/1.1\r\nHost: x\r\n\r\n").starts_with("HTTP/1.1 200"));
        assert!(raw(&addr, "GET /predict HTTP/1.1\r\nHost: x\r\n\r\n").starts_with("HTTP/1.1 405"));
        let bad = r#"{"id":"1"}"#;
        let resp = raw(&addr, &format!("POST /predict HTTP/1.1\r\nContent-Length: {}\r\n\r\n{bad}", bad.len()));
        assert!(resp.starts_with("HTTP/1.1 400"), "{resp}");

        let client = HttpClient::new(&format!("http://{addr}"), Duration::from_secs(5));
        let code = "int f(int copied){return copied;}";
        let p = client.p_vulnerable("7", code).unwrap();
        assert_eq!(p, model.p_vulnerable("7", code).unwrap());
    }
}
