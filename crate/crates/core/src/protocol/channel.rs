//! Environment-side ends of the agent connection.

use super::client::{AgentTransport, ClientError};
use super::{encode, AgentMessage, EnvMessage};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("agent sent nothing within the patience window")]
    Timeout,
    #[error("agent disconnected")]
    Disconnected,
    #[error("malformed agent message: {0}")]
    Malformed(String),
}

impl ChannelError {
    /// Reason recorded when this error forces the autopilot fallback.
    pub fn fallback_reason(&self) -> String {
        match self {
            ChannelError::Timeout => "timeout".into(),
            ChannelError::Disconnected => "disconnect".into(),
            ChannelError::Malformed(m) => format!("malformed: {m}"),
        }
    }
}

pub trait AgentChannel: Send {
    fn send(&mut self, msg: &EnvMessage) -> Result<(), ChannelError>;
    fn recv(&mut self, patience: Duration) -> Result<AgentMessage, ChannelError>;

    /// Whether `stepped` messages should carry a state snapshot.
    fn wants_snapshots(&self) -> bool {
        false
    }
}

impl<C: AgentChannel + ?Sized> AgentChannel for Box<C> {
    fn send(&mut self, msg: &EnvMessage) -> Result<(), ChannelError> {
        (**self).send(msg)
    }

    fn recv(&mut self, patience: Duration) -> Result<AgentMessage, ChannelError> {
        (**self).recv(patience)
    }

    fn wants_snapshots(&self) -> bool {
        (**self).wants_snapshots()
    }
}

fn parse(line: &str) -> Result<AgentMessage, ChannelError> {
    serde_json::from_str(line).map_err(|e| ChannelError::Malformed(e.to_string()))
}

/// In-process connection: messages cross a pair of queues without encoding.
pub struct InProcessChannel {
    to_agent: Sender<EnvMessage>,
    from_agent: Receiver<AgentMessage>,
}

pub struct InProcessTransport {
    to_env: Sender<AgentMessage>,
    from_env: Receiver<EnvMessage>,
}

pub fn in_process() -> (InProcessChannel, InProcessTransport) {
    let (to_agent, from_env) = mpsc::channel();
    let (to_env, from_agent) = mpsc::channel();
    (InProcessChannel { to_agent, from_agent }, InProcessTransport { to_env, from_env })
}

impl AgentChannel for InProcessChannel {
    fn send(&mut self, msg: &EnvMessage) -> Result<(), ChannelError> {
        self.to_agent.send(msg.clone()).map_err(|_| ChannelError::Disconnected)
    }

    fn recv(&mut self, patience: Duration) -> Result<AgentMessage, ChannelError> {
        match self.from_agent.recv_timeout(patience) {
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => Err(ChannelError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(ChannelError::Disconnected),
        }
    }
}

impl AgentTransport for InProcessTransport {
    fn send(&mut self, msg: &AgentMessage) -> Result<(), ClientError> {
        self.to_env.send(msg.clone()).map_err(|_| ClientError::Disconnected)
    }

    fn recv(&mut self) -> Result<EnvMessage, ClientError> {
        self.from_env.recv().map_err(|_| ClientError::Disconnected)
    }
}

/// One JSON document per line over any byte stream. A reader thread feeds
/// lines into a queue so receives can time out.
pub struct LineChannel {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    socket: Option<TcpStream>,
}

impl LineChannel {
    pub fn new(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self { writer: Box::new(writer), lines: rx, socket: None }
    }

    pub fn tcp(stream: TcpStream) -> std::io::Result<Self> {
        let reader = stream.try_clone()?;
        let handle = stream.try_clone()?;
        let mut channel = Self::new(reader, stream);
        channel.socket = Some(handle);
        Ok(channel)
    }
}

impl Drop for LineChannel {
    // the reader thread holds its own handle, so closing takes an explicit shutdown
    fn drop(&mut self) {
        if let Some(s) = &self.socket {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

impl AgentChannel for LineChannel {
    fn send(&mut self, msg: &EnvMessage) -> Result<(), ChannelError> {
        let mut line = encode(msg);
        line.push('\n');
        self.writer.write_all(line.as_bytes()).and_then(|_| self.writer.flush()).map_err(|_| ChannelError::Disconnected)
    }

    fn recv(&mut self, patience: Duration) -> Result<AgentMessage, ChannelError> {
        let deadline = std::time::Instant::now() + patience;
        loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) => return parse(&line),
                Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => return Err(ChannelError::Disconnected),
                Err(RecvTimeoutError::Timeout) => return Err(ChannelError::Timeout),
            }
        }
    }
}

/// A child process speaking the line protocol on its stdin/stdout.
pub struct ExternChannel {
    child: Child,
    lines: LineChannel,
}

impl ExternChannel {
    pub fn spawn(command: &str) -> std::io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self { child, lines: LineChannel::new(stdout, stdin) })
    }
}

impl AgentChannel for ExternChannel {
    fn send(&mut self, msg: &EnvMessage) -> Result<(), ChannelError> {
        self.lines.send(msg)
    }

    fn recv(&mut self, patience: Duration) -> Result<AgentMessage, ChannelError> {
        self.lines.recv(patience)
    }
}

impl Drop for ExternChannel {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One JSON document per text frame over an accepted websocket.
pub struct WsChannel {
    socket: tungstenite::WebSocket<TcpStream>,
    snapshots: bool,
}

impl WsChannel {
    pub fn new(socket: tungstenite::WebSocket<TcpStream>, snapshots: bool) -> Self {
        Self { socket, snapshots }
    }
}

impl AgentChannel for WsChannel {
    fn send(&mut self, msg: &EnvMessage) -> Result<(), ChannelError> {
        self.socket.send(tungstenite::Message::Text(encode(msg))).map_err(|_| ChannelError::Disconnected)
    }

    fn recv(&mut self, patience: Duration) -> Result<AgentMessage, ChannelError> {
        use tungstenite::{Error, Message};
        let deadline = std::time::Instant::now() + patience;
        loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            if left.is_zero() {
                return Err(ChannelError::Timeout);
            }
            let _ = self.socket.get_ref().set_read_timeout(Some(left));
            match self.socket.read() {
                Ok(Message::Text(text)) => return parse(&text),
                Ok(Message::Binary(bytes)) => {
                    return parse(std::str::from_utf8(&bytes).map_err(|e| ChannelError::Malformed(e.to_string()))?)
                }
                Ok(Message::Close(_)) => return Err(ChannelError::Disconnected),
                Ok(_) => continue,
                Err(Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
                {
                    return Err(ChannelError::Timeout)
                }
                Err(_) => return Err(ChannelError::Disconnected),
            }
        }
    }

    fn wants_snapshots(&self) -> bool {
        self.snapshots
    }
}
