//! Line-delimited JSON protocol for out-of-process denoisers.
//!
//! ```text
//! -> {"op":"hello"}
//! <- {"op":"hello","T":500,"name":"<id>"}
//! -> {"op":"denoise","id":7,"t":31,"points":[[x,y,z],...]}
//! <- {"op":"denoise","id":7,"eps":[[x,y,z],...]}
//! <- {"op":"error","id":7,"msg":"..."}
//! ```
//!
//! One JSON object per line, UTF-8. Points are diffusion-normalized and
//! responses arrive in request order.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello,
    Denoise { id: u64, t: usize, points: Vec<Point> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Response {
    Hello {
        #[serde(rename = "T")]
        timesteps: usize,
        name: String,
    },
    Denoise { id: u64, eps: Vec<Point> },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        msg: String,
    },
}

/// A raw line-oriented connection to a denoiser server. Most callers want
/// [`ExternalDenoiser`]; this is the layer below it, exposed for
/// conformance checks that need to send arbitrary lines.
pub struct LineClient {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
}

impl LineClient {
    pub fn from_streams<R, W>(reader: R, writer: W) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::start(reader, Box::new(writer), None)
    }

    /// Spawns `program` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Ok(Self::start(stdout, Box::new(stdin), Some(child)))
    }

    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        let reader = stream.try_clone()?;
        Ok(Self::start(reader, Box::new(stream), None))
    }

    fn start<R: Read + Send + 'static>(reader: R, writer: Box<dyn Write + Send>, child: Option<Child>) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self { writer, lines: rx, child }
    }

    /// Sends `line` followed by a newline.
    pub fn send_line(&mut self, line: &str) -> Result<()> {
        self.send_bytes(line.as_bytes())
    }

    /// Sends raw bytes followed by a newline; they need not be UTF-8.
    pub fn send_bytes(&mut self, line: &[u8]) -> Result<()> {
        self.writer.write_all(line)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn recv_line(&mut self, timeout: Duration) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Ok(line?),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("denoiser closed the connection".into())),
        }
    }

    pub fn send(&mut self, req: &Request) -> Result<()> {
        self.send_line(&serde_json::to_string(req)?)
    }

    pub fn recv(&mut self, timeout: Duration) -> Result<Response> {
        let line = self.recv_line(timeout)?;
        serde_json::from_str(&line).map_err(|e| Error::Protocol(format!("malformed response {line:?}: {e}")))
    }
}

impl Drop for LineClient {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

struct Connection {
    client: LineClient,
    next_id: u64,
}

/// Client side of the protocol. Requests on one connection are serialized
/// through a mutex, so the client can be shared between threads.
pub struct ExternalDenoiser {
    conn: Mutex<Connection>,
    timesteps: usize,
    name: String,
    timeout: Duration,
}

impl std::fmt::Debug for ExternalDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalDenoiser")
            .field("name", &self.name)
            .field("timesteps", &self.timesteps)
            .finish_non_exhaustive()
    }
}

impl ExternalDenoiser {
    /// Wraps an already-open byte stream pair and performs the handshake.
    /// The handshake fails if the remote `T` differs from `expected_timesteps`.
    pub fn from_streams<R, W>(reader: R, writer: W, expected_timesteps: usize, timeout: Duration) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::handshake(LineClient::from_streams(reader, writer), expected_timesteps, timeout)
    }

    /// Spawns `program` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String], expected_timesteps: usize, timeout: Duration) -> Result<Self> {
        Self::handshake(LineClient::spawn(program, args)?, expected_timesteps, timeout)
    }

    pub fn connect<A: ToSocketAddrs>(addr: A, expected_timesteps: usize, timeout: Duration) -> Result<Self> {
        Self::handshake(LineClient::connect(addr)?, expected_timesteps, timeout)
    }

    fn handshake(mut client: LineClient, expected_timesteps: usize, timeout: Duration) -> Result<Self> {
        client.send(&Request::Hello)?;
        let (timesteps, name) = match client.recv(timeout)? {
            Response::Hello { timesteps, name } => (timesteps, name),
            Response::Error { msg, .. } => return Err(Error::RemoteFailure(msg)),
            other => return Err(Error::Protocol(format!("expected hello, got {other:?}"))),
        };
        if timesteps != expected_timesteps {
            return Err(Error::Protocol(format!(
                "remote schedule has T = {timesteps}, local schedule has T = {expected_timesteps}"
            )));
        }
        Ok(Self { conn: Mutex::new(Connection { client, next_id: 0 }), timesteps, name, timeout })
    }
}

impl Denoiser for ExternalDenoiser {
    fn denoise(&self, x_t: &PointCloud, t: usize) -> Result<Vec<Point>> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let id = conn.next_id;
        conn.next_id += 1;
        conn.client.send(&Request::Denoise { id, t, points: x_t.points.clone() })?;
        match conn.client.recv(self.timeout)? {
            Response::Denoise { id: rid, eps } => {
                if rid != id {
                    return Err(Error::Protocol(format!("response id {rid} does not match request id {id}")));
                }
                if eps.len() != x_t.len() {
                    return Err(Error::ShapeMismatch { expected: x_t.len(), got: eps.len() });
                }
                if eps.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Protocol("non-finite eps".into()));
                }
                Ok(eps)
            }
            Response::Error { msg, .. } => Err(Error::RemoteFailure(msg)),
            other => Err(Error::Protocol(format!("expected denoise response, got {other:?}"))),
        }
    }

    fn timesteps(&self) -> usize {
        self.timesteps
    }

    fn name(&self) -> &str {
        &self.name
    }
}

fn respond<W: Write>(writer: &mut W, resp: &Response) -> Result<()> {
    let mut line = serde_json::to_string(resp)?;
    line.push('\n');
    writer.write_all(line.as_bytes())?;
    writer.flush()?;
    Ok(())
}

/// Server side of the protocol: answers requests from `reader` with
/// `denoiser` until end of input. Malformed lines and denoiser failures are
/// answered with error objects; the loop keeps going.
pub fn serve<R: BufRead, W: Write>(mut reader: R, mut writer: W, denoiser: &dyn Denoiser) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(line) {
            Ok(Request::Hello) => Response::Hello { timesteps: denoiser.timesteps(), name: denoiser.name().to_string() },
            Ok(Request::Denoise { id, t, points }) => match PointCloud::new(points).and_then(|pc| denoiser.denoise(&pc, t)) {
                Ok(eps) => Response::Denoise { id, eps },
                Err(e) => Response::Error { id: Some(id), msg: e.to_string() },
            },
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
                Response::Error { id, msg: format!("malformed request: {e}") }
            }
        };
        respond(&mut writer, &resp)?;
    }
    Ok(())
}
