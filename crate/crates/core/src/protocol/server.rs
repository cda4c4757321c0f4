//! Network endpoint hosting episodes for remote agents.
//!
//! One TCP port serves three things, told apart by the first bytes:
//! plain line-protocol agents, websocket upgrades (`/agent` runs an episode
//! with state snapshots, `/feedback` appends messages to a JSONL file), and
//! plain HTTP GETs for static UI assets.

use super::channel::{LineChannel, WsChannel};
use crate::engine::{run_episode, Driver, EpisodeOptions};
use crate::scenario::Scenario;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

pub struct ServeConfig {
    pub scenarios: Vec<Scenario>,
    pub options: EpisodeOptions,
    /// Logs and results of served episodes land here.
    pub out: Option<PathBuf>,
    pub feedback_path: PathBuf,
    pub ui_dir: Option<PathBuf>,
}

struct Shared {
    config: ServeConfig,
    next: AtomicUsize,
    feedback: Mutex<()>,
}

/// Accepts connections until `max_connections` have been handled (forever
/// when `None`). Each connection runs on its own thread.
pub fn serve(listener: TcpListener, config: ServeConfig, max_connections: Option<usize>) -> std::io::Result<()> {
    let shared = Arc::new(Shared { config, next: AtomicUsize::new(0), feedback: Mutex::new(()) });
    let mut handles = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let shared = Arc::clone(&shared);
        handles.push(std::thread::spawn(move || {
            if let Err(e) = handle(stream, &shared) {
                log::warn!("connection ended with error: {e}");
            }
        }));
        if max_connections.is_some_and(|m| n + 1 >= m) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

fn handle(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut head = [0u8; 2048];
    let n = peek_head(&stream, &mut head)?;
    let text = String::from_utf8_lossy(&head[..n]).to_string();
    if !text.starts_with("GET ") {
        let scenario = pick(shared, None).ok_or_else(|| std::io::Error::other("no scenarios to serve"))?;
        let mut channel = LineChannel::tcp(stream)?;
        return run_and_store(shared, &scenario, &mut channel);
    }
    let path = text.split_whitespace().nth(1).unwrap_or("/").to_string();
    let upgrade = text.lines().any(|l| {
        let l = l.to_ascii_lowercase();
        l.starts_with("upgrade:") && l.contains("websocket")
    });
    if !upgrade {
        return serve_asset(stream, shared, &path);
    }
    let socket = tungstenite::accept(stream).map_err(|e| std::io::Error::other(e.to_string()))?;
    let (route, query) = path.split_once('?').unwrap_or((&path, ""));
    match route {
        "/agent" => {
            let wanted = query.split('&').find_map(|kv| kv.strip_prefix("scenario="));
            let scenario = pick(shared, wanted).ok_or_else(|| std::io::Error::other("unknown scenario"))?;
            let mut channel = WsChannel::new(socket, true);
            run_and_store(shared, &scenario, &mut channel)
        }
        "/feedback" => feedback_loop(socket, shared),
        _ => Ok(()),
    }
}

/// Waits until the request head has arrived without consuming it. Line
/// protocol agents wait for `hello` and send nothing, so a quiet peer counts
/// as one.
fn peek_head(stream: &TcpStream, buf: &mut [u8]) -> std::io::Result<usize> {
    let quiet = std::time::Duration::from_millis(300);
    let start = std::time::Instant::now();
    stream.set_read_timeout(Some(quiet))?;
    let n = loop {
        let n = match stream.peek(buf) {
            Ok(n) => n,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => 0,
            Err(e) => return Err(e),
        };
        let seen = &buf[..n];
        let complete = seen.windows(4).any(|w| w == b"\r\n\r\n");
        let not_http = n >= 4 && &seen[..4] != b"GET ";
        if complete || not_http || n == buf.len() || (n == 0 && start.elapsed() >= quiet) || start.elapsed().as_secs() >= 5 {
            break n;
        }
        std::thread::sleep(std::time::Duration::from_millis(5));
    };
    stream.set_read_timeout(None)?;
    Ok(n)
}

fn pick(shared: &Shared, id: Option<&str>) -> Option<Scenario> {
    let list = &shared.config.scenarios;
    match id {
        Some(id) => list.iter().find(|s| s.id == id).cloned(),
        None if list.is_empty() => None,
        None => Some(list[shared.next.fetch_add(1, Ordering::SeqCst) % list.len()].clone()),
    }
}

fn run_and_store(shared: &Shared, scenario: &Scenario, channel: &mut dyn super::AgentChannel) -> std::io::Result<()> {
    let outcome = run_episode(scenario, Driver::Agent(channel), &shared.config.options)
        .map_err(|e| std::io::Error::other(format!("scenario {}: {e}", scenario.id)))?;
    log::info!("episode {} ended: {:?}", scenario.id, outcome.end);
    if let Some(dir) = &shared.config.out {
        std::fs::create_dir_all(dir)?;
        let stamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis());
        let stem = format!("{}-{stamp}", scenario.id);
        outcome.log.write(&dir.join(format!("{stem}.log.jsonl"))).map_err(|e| std::io::Error::other(e.to_string()))?;
        std::fs::write(
            dir.join(format!("{stem}.result.json")),
            serde_json::to_string_pretty(&outcome.result).expect("result serializes"),
        )?;
    }
    Ok(())
}

fn feedback_loop(mut socket: tungstenite::WebSocket<TcpStream>, shared: &Shared) -> std::io::Result<()> {
    use tungstenite::Message;
    loop {
        let text = match socket.read() {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => return Ok(()),
            Ok(_) => continue,
        };
        let reply = match serde_json::from_str::<serde_json::Value>(&text) {
            Ok(doc) => {
                let _guard = shared.feedback.lock().unwrap_or_else(|p| p.into_inner());
                let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&shared.config.feedback_path)?;
                writeln!(f, "{}", serde_json::to_string(&doc).expect("json value serializes"))?;
                r#"{"type":"ack"}"#.to_string()
            }
            Err(e) => serde_json::json!({ "type": "error", "reason": e.to_string() }).to_string(),
        };
        if socket.send(Message::Text(reply)).is_err() {
            return Ok(());
        }
    }
}

fn serve_asset(mut stream: TcpStream, shared: &Shared, path: &str) -> std::io::Result<()> {
    // drain the request head
    let mut buf = [0u8; 2048];
    let _ = stream.read(&mut buf)?;
    let rel = path.split('?').next().unwrap_or("/").trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let body = shared
        .config
        .ui_dir
        .as_ref()
        .filter(|_| !rel.split('/').any(|c| c == ".."))
        .and_then(|dir| std::fs::read(dir.join(rel)).ok());
    let (status, ctype, body) = match body {
        Some(b) => ("200 OK", content_type(rel), b),
        None => ("404 Not Found", "text/plain", b"not found\n".to_vec()),
    };
    write!(stream, "HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len())?;
    stream.write_all(&body)?;
    stream.flush()
}

fn content_type(path: &str) -> &'static str {
    match path.rsplit('.').next() {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}
