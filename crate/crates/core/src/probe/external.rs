use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::wire::{Request, Response};
use super::{Features, Probe, ProbeError};
use crate::corpus::Vocab;

/// Where an external probe lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Shell command speaking the protocol on stdin/stdout.
    Exec(String),
    /// `host:port` of a server speaking the protocol.
    Tcp(String),
}

impl Endpoint {
    /// Parses `exec:<cmd>` or `tcp:<host:port>`.
    pub fn parse(spec: &str) -> Option<Self> {
        if let Some(cmd) = spec.strip_prefix("exec:") {
            return (!cmd.trim().is_empty()).then(|| Self::Exec(cmd.to_owned()));
        }
        if let Some(addr) = spec.strip_prefix("tcp:") {
            return addr.contains(':').then(|| Self::Tcp(addr.to_owned()));
        }
        None
    }
}

struct Transport {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
}

fn spawn_reader<R: std::io::Read + Send + 'static>(reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(reader).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl Transport {
    fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Self, ProbeError> {
        match endpoint {
            Endpoint::Exec(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| ProbeError::Handshake(format!("cannot spawn `{cmd}`: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                })
            }
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(|e| ProbeError::Handshake(format!("bad address {addr}: {e}")))?
                    .next()
                    .ok_or_else(|| ProbeError::Handshake(format!("no address for {addr}")))?;
                let stream = TcpStream::connect_timeout(&sock, timeout)
                    .map_err(|e| ProbeError::Handshake(format!("cannot connect to {addr}: {e}")))?;
                stream.set_nodelay(true).ok();
                let reader = stream.try_clone()?;
                Ok(Self {
                    writer: Box::new(stream),
                    lines: spawn_reader(reader),
                    child: None,
                })
            }
        }
    }
}

/// A probe living in another process, reached over the wire protocol.
pub struct ExternalProbe {
    transport: Transport,
    feature_dim: usize,
    timeout: Duration,
    responses: usize,
    remote_tokenizer: Option<Vocab>,
    transcript: Option<Vec<String>>,
    closed: bool,
}

impl std::fmt::Debug for ExternalProbe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalProbe")
            .field("feature_dim", &self.feature_dim)
            .field("timeout", &self.timeout)
            .field("responses", &self.responses)
            .finish_non_exhaustive()
    }
}

impl ExternalProbe {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

    /// Connects and performs the `hello` handshake.
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, ProbeError> {
        Self::connect_with(endpoint, timeout, None, false)
    }

    /// Like [`connect`](Self::connect). `vocab` is used to attach detokenized
    /// text to requests when the server asks for it; with `record` set every
    /// request line is kept for [`transcript`](Self::transcript).
    pub fn connect_with(
        endpoint: &Endpoint,
        timeout: Duration,
        vocab: Option<Vocab>,
        record: bool,
    ) -> Result<Self, ProbeError> {
        let transport = Transport::open(endpoint, timeout)?;
        let mut probe = Self {
            transport,
            feature_dim: 0,
            timeout,
            responses: 0,
            remote_tokenizer: None,
            transcript: record.then(Vec::new),
            closed: false,
        };
        let hello = probe
            .call(&Request::Hello)
            .map_err(|e| ProbeError::Handshake(e.to_string()))?;
        probe.feature_dim = match hello.feature_dim {
            Some(d) if d >= 1 => d,
            other => {
                return Err(ProbeError::Handshake(format!(
                    "handshake must declare feature_dim >= 1, got {other:?}"
                )))
            }
        };
        if hello.tokenizer.as_deref() == Some("remote") {
            probe.remote_tokenizer = Some(vocab.ok_or_else(|| {
                ProbeError::Handshake("server wants text but no vocabulary was supplied".into())
            })?);
        }
        Ok(probe)
    }

    /// Request lines sent so far, if recording.
    pub fn transcript(&self) -> Option<&[String]> {
        self.transcript.as_deref()
    }

    fn text_of(&self, tokens: &[u32]) -> Option<String> {
        self.remote_tokenizer
            .as_ref()
            .map(|v| v.decode(tokens).join(" "))
    }

    fn call(&mut self, request: &Request) -> Result<Response, ProbeError> {
        if self.closed {
            return Err(ProbeError::Closed);
        }
        let line = serde_json::to_string(request).map_err(std::io::Error::other)?;
        if let Some(t) = self.transcript.as_mut() {
            t.push(line.clone());
        }
        self.transport.writer.write_all(format!("{line}\n").as_bytes())?;
        self.transport.writer.flush()?;

        let raw = match self.transport.lines.recv_timeout(self.timeout) {
            Ok(Ok(raw)) => raw,
            Ok(Err(e)) => return Err(ProbeError::Io(e)),
            Err(RecvTimeoutError::Timeout) => return Err(ProbeError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(ProbeError::Closed),
        };
        self.responses += 1;
        let response: Response =
            serde_json::from_str(&raw).map_err(|e| self.violation(&raw, e.to_string()))?;
        if !response.ok {
            return Err(ProbeError::Remote(
                response.error.unwrap_or_else(|| "unspecified error".into()),
            ));
        }
        Ok(response)
    }

    fn violation(&self, raw: &str, message: impl Into<String>) -> ProbeError {
        let mut line = raw.to_owned();
        if line.len() > 200 {
            let cut = (0..=200).rev().find(|&i| line.is_char_boundary(i)).unwrap_or(0);
            line.truncate(cut);
            line.push('…');
        }
        ProbeError::Protocol {
            seq: self.responses,
            line,
            message: message.into(),
        }
    }

    fn check_vector(&self, name: &str, v: Option<Vec<f64>>, len: usize) -> Result<Vec<f64>, ProbeError> {
        let v = v.ok_or_else(|| self.violation("", format!("missing `{name}`")))?;
        if v.len() != len {
            return Err(self.violation(
                "",
                format!("`{name}` has length {}, expected {len}", v.len()),
            ));
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(self.violation("", format!("`{name}` holds non-finite value {bad}")));
        }
        Ok(v)
    }
}

impl Probe for ExternalProbe {
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn logprobs(&mut self, tokens: &[u32], mask_from: usize) -> Result<Vec<f64>, ProbeError> {
        let request = Request::Logprobs {
            tokens: tokens.to_vec(),
            mask_from,
            text: self.text_of(tokens),
        };
        let response = self.call(&request)?;
        let lps = self.check_vector("logprobs", response.logprobs, tokens.len())?;
        if let Some(bad) = lps.iter().find(|&&lp| lp > 0.0) {
            return Err(self.violation("", format!("positive logprob {bad}")));
        }
        Ok(lps)
    }

    fn update(&mut self, batch: &[&[u32]]) -> Result<(), ProbeError> {
        let texts = self
            .remote_tokenizer
            .is_some()
            .then(|| batch.iter().map(|t| self.text_of(t).unwrap_or_default()).collect());
        let request = Request::Update {
            samples: batch.iter().map(|t| t.to_vec()).collect(),
            texts,
        };
        self.call(&request).map(drop)
    }

    fn features(&mut self, tokens: &[u32], mask_from: usize) -> Result<Features, ProbeError> {
        let request = Request::Features {
            tokens: tokens.to_vec(),
            mask_from,
            text: self.text_of(tokens),
        };
        let response = self.call(&request)?;
        Ok(Features {
            z1: self.check_vector("z1", response.z1, self.feature_dim)?,
            z2: self.check_vector("z2", response.z2, self.feature_dim)?,
        })
    }

    fn snapshot(&mut self) -> Result<(), ProbeError> {
        self.call(&Request::Snapshot).map(drop)
    }

    fn shutdown(&mut self) -> Result<(), ProbeError> {
        if self.closed {
            return Ok(());
        }
        let result = self.call(&Request::Shutdown).map(drop);
        self.closed = true;
        self.transport.writer = Box::new(std::io::sink());
        if let Some(child) = self.transport.child.as_mut() {
            reap(child, Duration::from_secs(5));
        }
        result
    }
}

/// Waits up to `grace` for the child to exit, then kills it.
fn reap(child: &mut Child, grace: Duration) {
    let deadline = std::time::Instant::now() + grace;
    while std::time::Instant::now() < deadline {
        match child.try_wait() {
            Ok(Some(_)) | Err(_) => return,
            Ok(None) => thread::sleep(Duration::from_millis(10)),
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

impl Drop for ExternalProbe {
    fn drop(&mut self) {
        if !self.closed {
            // Best effort: announce shutdown without waiting for the answer.
            let _ = writeln!(self.transport.writer, r#"{{"op":"shutdown"}}"#);
            let _ = self.transport.writer.flush();
            self.transport.writer = Box::new(std::io::sink());
            self.closed = true;
        }
        if let Some(child) = self.transport.child.as_mut() {
            reap(child, Duration::from_millis(500));
        }
    }
}
