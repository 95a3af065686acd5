//! Hand-rolled HTTP/1.1 subset: enough to serve GET /metrics and
//! GET /healthz and to scrape them. Connections are one-shot
//! (Connection: close); request bodies are not supported.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::{Health, MetricsSource};

const MAX_REQUEST_BYTES: usize = 8 * 1024;

/// Running status endpoint. Dropping the handle stops the listener.
pub struct StatusServer {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl StatusServer {
    pub fn url(&self) -> String {
        self.addr.to_string()
    }
}

impl Drop for StatusServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock the accept loop
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

/// Binds `listen` (port 0 picks a free port) and serves the node's metrics
/// until the returned handle is dropped.
pub fn serve_status(
    listen: SocketAddr,
    source: Arc<dyn MetricsSource>,
) -> std::io::Result<StatusServer> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let join = std::thread::Builder::new()
        .name(format!("status-{}", addr.port()))
        .spawn(move || {
            for conn in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let source = source.clone();
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &*source);
                });
            }
        })?;
    Ok(StatusServer { addr, stop, join: Some(join) })
}

fn handle_connection(mut stream: TcpStream, source: &dyn MetricsSource) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    stream.set_write_timeout(Some(Duration::from_secs(5)))?;
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    loop {
        if buf.windows(4).any(|w| w == b"\r\n\r\n") || buf.len() > MAX_REQUEST_BYTES {
            break;
        }
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(_) => return Ok(()),
        }
    }
    let request = String::from_utf8_lossy(&buf);
    let mut parts = request.lines().next().unwrap_or("").split_whitespace();
    let method = parts.next().unwrap_or("");
    let path = parts.next().unwrap_or("");

    let (status, body) = if method != "GET" {
        ("405 Method Not Allowed", "{\"error\":\"method not allowed\"}".to_string())
    } else {
        match path {
            "/metrics" => ("200 OK", serde_json::to_string(&source.metrics()).unwrap()),
            "/healthz" => {
                let m = source.metrics();
                let health = Health { role: m.role, uptime_s: m.uptime_s };
                ("200 OK", serde_json::to_string(&health).unwrap())
            }
            _ => ("404 Not Found", "{\"error\":\"not found\"}".to_string()),
        }
    };
    let response = format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(response.as_bytes())
}

/// Fetches `path` from `addr` ("host:port") and returns the body of a 200
/// response. Any other status, timeout, or connect failure is an error.
pub fn http_get(addr: &str, path: &str, timeout: Duration) -> std::io::Result<Vec<u8>> {
    let sock_addr = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::new(ErrorKind::InvalidInput, "no address"))?;
    let mut stream = TcpStream::connect_timeout(&sock_addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    let request = format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    stream.write_all(request.as_bytes())?;
    let mut response = Vec::new();
    stream.read_to_end(&mut response)?;
    let text = String::from_utf8_lossy(&response);
    let header_end = text
        .find("\r\n\r\n")
        .ok_or_else(|| std::io::Error::new(ErrorKind::InvalidData, "no header terminator"))?;
    let status_line = text.lines().next().unwrap_or("");
    if !status_line.contains(" 200 ") {
        return Err(std::io::Error::new(
            ErrorKind::Other,
            format!("http status: {status_line}"),
        ));
    }
    Ok(response[header_end + 4..].to_vec())
}
