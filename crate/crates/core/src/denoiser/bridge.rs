//! Client side of the external denoiser protocol.
//!
//! The server runs as a subprocess and speaks little-endian frames over its
//! stdin/stdout:
//!
//! ```text
//! handshake  client: "DDRM" u32 version, u64 n, u32 channels, u32 side
//!            server: "DDRM" u32 version, u8 status (0 = ok)
//! request    u8 1, u32 step, f64 sigma, i64 class label (-1 = none), n x f32
//! response   u8 2, u8 status, n x f32
//! error      u8 3, u32 byte length, UTF-8 message
//! ```
//!
//! The client never transforms payloads numerically. An in-process echo
//! server ([`serve_echo`]) is provided for conformance testing.

use std::io::{self, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::Denoiser;
use crate::error::{DdrmError, Result};
use crate::scalar::Real;

pub const MAGIC: [u8; 4] = *b"DDRM";
pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

pub const FRAME_REQUEST: u8 = 1;
pub const FRAME_RESPONSE: u8 = 2;
pub const FRAME_ERROR: u8 = 3;

const MAX_ERROR_BYTES: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("server reported an error: {0}")]
    Server(String),
    #[error("denoiser process exited: {0}")]
    Exited(String),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("transport: {0}")]
    Io(#[source] io::Error),
}

type BResult<T> = std::result::Result<T, BridgeError>;

fn read_bytes<R: Read + ?Sized, const N: usize>(r: &mut R) -> BResult<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(eof_as_exit)?;
    Ok(buf)
}

fn eof_as_exit(e: io::Error) -> BridgeError {
    match e.kind() {
        io::ErrorKind::UnexpectedEof => BridgeError::Exited("stream closed".into()),
        io::ErrorKind::BrokenPipe => BridgeError::Exited("pipe closed".into()),
        _ => BridgeError::Io(e),
    }
}

fn read_payload<R: Read + ?Sized>(r: &mut R, n: usize) -> BResult<Vec<f32>> {
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw).map_err(eof_as_exit)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn push_payload(out: &mut Vec<u8>, payload: &[f32]) {
    out.reserve(payload.len() * 4);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Signal geometry announced in the handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub n: u64,
    pub channels: u32,
    pub side: u32,
}

impl Geometry {
    pub fn len(&self) -> usize {
        self.n as usize
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

pub fn encode_handshake(g: &Geometry) -> Vec<u8> {
    let mut out = Vec::with_capacity(24);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    out.extend_from_slice(&g.n.to_le_bytes());
    out.extend_from_slice(&g.channels.to_le_bytes());
    out.extend_from_slice(&g.side.to_le_bytes());
    out
}

/// Server side: reads and checks a client handshake.
pub fn read_handshake<R: Read + ?Sized>(r: &mut R) -> BResult<Geometry> {
    let magic: [u8; 4] = read_bytes(r)?;
    if magic != MAGIC {
        return Err(BridgeError::Handshake(format!("bad magic {magic:02x?}")));
    }
    let version = u32::from_le_bytes(read_bytes(r)?);
    if version != PROTOCOL_VERSION {
        return Err(BridgeError::Handshake(format!("unsupported version {version}")));
    }
    Ok(Geometry {
        n: u64::from_le_bytes(read_bytes(r)?),
        channels: u32::from_le_bytes(read_bytes(r)?),
        side: u32::from_le_bytes(read_bytes(r)?),
    })
}

pub fn encode_handshake_reply(status: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(9);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    out.push(status);
    out
}

/// Client side: returns `(version, status)` after checking the magic.
pub fn read_handshake_reply<R: Read + ?Sized>(r: &mut R) -> BResult<(u32, u8)> {
    let magic: [u8; 4] = read_bytes(r)?;
    if magic != MAGIC {
        return Err(BridgeError::Handshake(format!("bad magic {magic:02x?}")));
    }
    let version = u32::from_le_bytes(read_bytes(r)?);
    let [status] = read_bytes(r)?;
    Ok((version, status))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub step: u32,
    pub sigma: f64,
    /// `-1` when absent
    pub class_label: i64,
    pub payload: Vec<f32>,
}

impl Request {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + 4 * self.payload.len());
        out.push(FRAME_REQUEST);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.sigma.to_le_bytes());
        out.extend_from_slice(&self.class_label.to_le_bytes());
        push_payload(&mut out, &self.payload);
        out
    }

    /// Reads one request of `n` values; `None` on a clean end of stream.
    pub fn read<R: Read + ?Sized>(r: &mut R, n: usize) -> BResult<Option<Self>> {
        let mut kind = [0u8; 1];
        loop {
            match r.read(&mut kind) {
                Ok(0) => return Ok(None),
                Ok(_) => break,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(BridgeError::Io(e)),
            }
        }
        if kind[0] != FRAME_REQUEST {
            return Err(BridgeError::Protocol(format!("unexpected frame type {}", kind[0])));
        }
        Ok(Some(Self {
            step: u32::from_le_bytes(read_bytes(r)?),
            sigma: f64::from_le_bytes(read_bytes(r)?),
            class_label: i64::from_le_bytes(read_bytes(r)?),
            payload: read_payload(r, n)?,
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Prediction { status: u8, payload: Vec<f32> },
    Error(String),
}

impl Response {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Response::Prediction { status, payload } => {
                let mut out = Vec::with_capacity(2 + 4 * payload.len());
                out.push(FRAME_RESPONSE);
                out.push(*status);
                push_payload(&mut out, payload);
                out
            }
            Response::Error(msg) => {
                let mut out = Vec::with_capacity(5 + msg.len());
                out.push(FRAME_ERROR);
                out.extend_from_slice(&(msg.len() as u32).to_le_bytes());
                out.extend_from_slice(msg.as_bytes());
                out
            }
        }
    }

    pub fn read<R: Read + ?Sized>(r: &mut R, n: usize) -> BResult<Self> {
        let [kind] = read_bytes(r)?;
        match kind {
            FRAME_RESPONSE => {
                let [status] = read_bytes(r)?;
                Ok(Response::Prediction {
                    status,
                    payload: read_payload(r, n)?,
                })
            }
            FRAME_ERROR => {
                let len = u32::from_le_bytes(read_bytes(r)?);
                if len > MAX_ERROR_BYTES {
                    return Err(BridgeError::Protocol(format!("error message of {len} bytes")));
                }
                let mut raw = vec![0u8; len as usize];
                r.read_exact(&mut raw).map_err(eof_as_exit)?;
                String::from_utf8(raw)
                    .map(Response::Error)
                    .map_err(|_| BridgeError::Protocol("error message is not UTF-8".into()))
            }
            other => Err(BridgeError::Protocol(format!("unexpected frame type {other}"))),
        }
    }
}

enum Incoming {
    Hello(u32, u8),
    Reply(Response),
}

/// One handshaken session with a denoiser server.
///
/// Not shareable across concurrent samplers; each run owns its own client
/// and, when spawned, its own subprocess.
pub struct BridgeClient {
    geometry: Geometry,
    timeout: Duration,
    writer: Option<Box<dyn Write + Send>>,
    incoming: mpsc::Receiver<BResult<Incoming>>,
    child: Option<Child>,
    broken: bool,
}

impl BridgeClient {
    /// Runs `command` through `sh -c` and handshakes over its stdio.
    pub fn spawn(command: &str, geometry: Geometry, timeout: Duration) -> BResult<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(BridgeError::Io)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::start(stdout, stdin, geometry, timeout);
        client.child = Some(child);
        client.handshake()?;
        Ok(client)
    }

    /// Handshakes over an arbitrary transport.
    pub fn connect<R, W>(reader: R, writer: W, geometry: Geometry, timeout: Duration) -> BResult<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut client = Self::start(reader, writer, geometry, timeout);
        client.handshake()?;
        Ok(client)
    }

    fn start<R, W>(mut reader: R, writer: W, geometry: Geometry, timeout: Duration) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        let n = geometry.len();
        // a blocking reader thread lets the client enforce the timeout
        thread::spawn(move || {
            let hello = read_handshake_reply(&mut reader).map(|(v, s)| Incoming::Hello(v, s));
            let ok = hello.is_ok();
            if tx.send(hello).is_err() || !ok {
                return;
            }
            loop {
                let frame = Response::read(&mut reader, n).map(Incoming::Reply);
                let ok = frame.is_ok();
                if tx.send(frame).is_err() || !ok {
                    return;
                }
            }
        });
        Self {
            geometry,
            timeout,
            writer: Some(Box::new(writer)),
            incoming: rx,
            child: None,
            broken: false,
        }
    }

    fn handshake(&mut self) -> BResult<()> {
        let hello = encode_handshake(&self.geometry);
        self.send(&hello)?;
        match self.receive()? {
            Incoming::Hello(PROTOCOL_VERSION, 0) => Ok(()),
            Incoming::Hello(PROTOCOL_VERSION, status) => {
                self.broken = true;
                Err(BridgeError::Handshake(format!(
                    "server rejected n={} channels={} side={} (status {status})",
                    self.geometry.n, self.geometry.channels, self.geometry.side
                )))
            }
            Incoming::Hello(version, _) => {
                self.broken = true;
                Err(BridgeError::Handshake(format!("server speaks version {version}")))
            }
            Incoming::Reply(_) => unreachable!("reader thread sends the handshake first"),
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    fn send(&mut self, bytes: &[u8]) -> BResult<()> {
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| BridgeError::Exited("session closed".into()))?;
        let res = writer.write_all(bytes).and_then(|_| writer.flush());
        res.map_err(|e| {
            self.broken = true;
            match eof_as_exit(e) {
                BridgeError::Exited(msg) => BridgeError::Exited(self.exit_detail(msg)),
                other => other,
            }
        })
    }

    fn receive(&mut self) -> BResult<Incoming> {
        match self.incoming.recv_timeout(self.timeout) {
            Ok(Ok(frame)) => Ok(frame),
            Ok(Err(e)) => {
                self.broken = true;
                Err(match e {
                    BridgeError::Exited(msg) => BridgeError::Exited(self.exit_detail(msg)),
                    other => other,
                })
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                self.broken = true;
                if let Some(child) = self.child.as_mut() {
                    let _ = child.kill();
                }
                Err(BridgeError::Timeout(self.timeout))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                self.broken = true;
                Err(BridgeError::Exited(self.exit_detail("reader stopped".into())))
            }
        }
    }

    fn exit_detail(&mut self, msg: String) -> String {
        let Some(child) = self.child.as_mut() else {
            return msg;
        };
        for _ in 0..50 {
            if let Ok(Some(status)) = child.try_wait() {
                return format!("{msg} ({status})");
            }
            thread::sleep(Duration::from_millis(10));
        }
        msg
    }

    /// Sends one request and waits for the prediction.
    pub fn predict(&mut self, x_t: &[f32], sigma: f64, step: u32, class_label: i64) -> BResult<Vec<f32>> {
        if self.broken {
            return Err(BridgeError::Protocol("session unusable after an earlier failure".into()));
        }
        if x_t.len() != self.geometry.len() {
            return Err(BridgeError::Protocol(format!(
                "payload of {} values for a session of n={}",
                x_t.len(),
                self.geometry.n
            )));
        }
        let frame = Request {
            step,
            sigma,
            class_label,
            payload: x_t.to_vec(),
        }
        .encode();
        self.send(&frame)?;
        match self.receive()? {
            Incoming::Reply(Response::Prediction { status: 0, payload }) => Ok(payload),
            Incoming::Reply(Response::Prediction { status, .. }) => {
                Err(BridgeError::Server(format!("status {status}")))
            }
            Incoming::Reply(Response::Error(msg)) => Err(BridgeError::Server(msg)),
            Incoming::Hello(..) => {
                self.broken = true;
                Err(BridgeError::Protocol("second handshake reply".into()))
            }
        }
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        // closing stdin asks the server to exit
        self.writer = None;
        if let Some(mut child) = self.child.take() {
            for _ in 0..100 {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl<T: Real> Denoiser<T> for BridgeClient {
    fn predict_x0(&mut self, x_t: &[T], sigma: T, step: usize, class_label: Option<i64>) -> Result<Vec<T>> {
        let label = match class_label {
            None => -1,
            Some(l) if l >= 0 => l,
            Some(l) => {
                return Err(DdrmError::InvalidParameter(format!(
                    "class label {l} collides with the 'none' sentinel"
                )))
            }
        };
        let step = u32::try_from(step)
            .map_err(|_| DdrmError::InvalidParameter(format!("step {step} exceeds u32")))?;
        let payload: Vec<f32> = x_t.iter().map(|v| v.as_f64() as f32).collect();
        let out = self.predict(&payload, sigma.as_f64(), step, label)?;
        Ok(out.into_iter().map(|v| T::lit(f64::from(v))).collect())
    }
}

/// Echo server: answers every request with its own payload. When `expect_n`
/// is set, a handshake announcing another length is rejected with status 1.
/// Returns the number of frames served.
pub fn serve_echo<R: Read, W: Write>(mut reader: R, mut writer: W, expect_n: Option<u64>) -> BResult<u64> {
    let geometry = match read_handshake(&mut reader) {
        Ok(g) => g,
        Err(e) => {
            let _ = writer.write_all(&encode_handshake_reply(1));
            let _ = writer.flush();
            return Err(e);
        }
    };
    if expect_n.is_some_and(|n| n != geometry.n) {
        writer.write_all(&encode_handshake_reply(1)).map_err(BridgeError::Io)?;
        writer.flush().map_err(BridgeError::Io)?;
        return Err(BridgeError::Handshake(format!(
            "client announced n={}, server expects {}",
            geometry.n,
            expect_n.unwrap_or_default()
        )));
    }
    writer.write_all(&encode_handshake_reply(0)).map_err(BridgeError::Io)?;
    writer.flush().map_err(BridgeError::Io)?;
    let mut served = 0;
    while let Some(req) = Request::read(&mut reader, geometry.len())? {
        let reply = Response::Prediction {
            status: 0,
            payload: req.payload,
        };
        writer.write_all(&reply.encode()).map_err(eof_as_exit)?;
        writer.flush().map_err(eof_as_exit)?;
        served += 1;
    }
    Ok(served)
}
