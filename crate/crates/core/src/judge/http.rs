//! Minimal HTTP/1.1 plumbing over `std::net`, enough for localhost JSON
//! POST round trips. Plain `http://` only; the mock server and any real
//! backend hosting this protocol are expected to sit behind it.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

const MAX_BODY: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("unsupported url {0:?} (only http:// is supported)")]
    BadUrl(String),
    #[error("connect/transport error: {0}")]
    Transport(String),
    #[error("timed out")]
    Timeout,
    #[error("malformed http message: {0}")]
    Malformed(String),
}

impl From<std::io::Error> for HttpError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => HttpError::Timeout,
            _ => HttpError::Transport(e.to_string()),
        }
    }
}

pub struct ParsedUrl {
    pub host: String,
    pub port: u16,
    pub path_prefix: String,
}

pub fn parse_url(url: &str) -> Result<ParsedUrl, HttpError> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| HttpError::BadUrl(url.to_string()))?;
    let (authority, path) = match rest.find('/') {
        Some(i) => (&rest[..i], rest[i..].trim_end_matches('/')),
        None => (rest, ""),
    };
    let (host, port) = match authority.rsplit_once(':') {
        Some((h, p)) => (
            h.to_string(),
            p.parse::<u16>()
                .map_err(|_| HttpError::BadUrl(url.to_string()))?,
        ),
        None => (authority.to_string(), 80),
    };
    if host.is_empty() {
        return Err(HttpError::BadUrl(url.to_string()));
    }
    Ok(ParsedUrl {
        host,
        port,
        path_prefix: path.to_string(),
    })
}

/// POST a JSON body and return `(status, response body)`.
pub fn post_json(
    url: &ParsedUrl,
    path: &str,
    body: &serde_json::Value,
    timeout: Duration,
    bearer_token: Option<&str>,
) -> Result<(u16, serde_json::Value), HttpError> {
    let addr = format!("{}:{}", url.host, url.port);
    let sock_addr = addr
        .to_socket_addrs()
        .map_err(|e| HttpError::Transport(e.to_string()))?
        .next()
        .ok_or_else(|| HttpError::Transport(format!("no address for {addr}")))?;
    let stream = TcpStream::connect_timeout(&sock_addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;

    let payload = serde_json::to_vec(body).expect("json body serializes");
    let full_path = format!("{}{}", url.path_prefix, path);
    let mut request = format!(
        "POST {full_path} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        url.host,
        payload.len()
    );
    if let Some(token) = bearer_token {
        request.push_str(&format!("Authorization: Bearer {token}\r\n"));
    }
    request.push_str("\r\n");

    let mut stream = stream;
    stream.write_all(request.as_bytes())?;
    stream.write_all(&payload)?;
    stream.flush()?;

    let mut reader = BufReader::new(stream);
    let mut status_line = String::new();
    reader.read_line(&mut status_line)?;
    let status = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse::<u16>().ok())
        .ok_or_else(|| HttpError::Malformed(format!("bad status line {status_line:?}")))?;

    let mut content_length: Option<usize> = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse::<usize>().ok();
            }
        }
    }

    let body_bytes = match content_length {
        Some(len) if len > MAX_BODY => {
            return Err(HttpError::Malformed(format!("body too large: {len}")))
        }
        Some(len) => {
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf)?;
            buf
        }
        None => {
            // Connection: close, so read to EOF.
            let mut buf = Vec::new();
            reader.take(MAX_BODY as u64).read_to_end(&mut buf)?;
            buf
        }
    };
    let value: serde_json::Value = if body_bytes.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(&body_bytes)
            .map_err(|e| HttpError::Malformed(format!("body is not json: {e}")))?
    };
    Ok((status, value))
}

/// A parsed inbound request (server side).
pub struct Request {
    pub method: String,
    pub path: String,
    pub body: Vec<u8>,
}

/// Read one HTTP request from a connection.
pub fn read_request(stream: &mut TcpStream) -> Result<Request, HttpError> {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts
        .next()
        .ok_or_else(|| HttpError::Malformed("empty request line".into()))?
        .to_string();
    let path = parts
        .next()
        .ok_or_else(|| HttpError::Malformed("request line missing path".into()))?
        .to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| HttpError::Malformed("bad content-length".into()))?;
            }
        }
    }
    if content_length > MAX_BODY {
        return Err(HttpError::Malformed(format!(
            "body too large: {content_length}"
        )));
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    Ok(Request { method, path, body })
}

/// Write a JSON response with the given status.
pub fn write_response(
    stream: &mut TcpStream,
    status: u16,
    body: &serde_json::Value,
) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        _ => "Internal Server Error",
    };
    let payload = serde_json::to_vec(body).expect("json body serializes");
    let header = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        payload.len()
    );
    stream.write_all(header.as_bytes())?;
    stream.write_all(&payload)?;
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_url_variants() {
        let u = parse_url("http://127.0.0.1:8080").unwrap();
        assert_eq!(u.host, "127.0.0.1");
        assert_eq!(u.port, 8080);
        assert_eq!(u.path_prefix, "");

        let u = parse_url("http://judge.internal/v1/").unwrap();
        assert_eq!(u.port, 80);
        assert_eq!(u.path_prefix, "/v1");

        assert!(parse_url("https://secure.example").is_err());
        assert!(parse_url("127.0.0.1:8080").is_err());
    }
}
