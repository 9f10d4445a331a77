//! Client for engines speaking wire protocol v1 out-of-process.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use crate::decode::{AudioHandle, Backend, BackendError, BackendInfo};
use crate::vocab::TokenId;
use crate::wire::{self, Request, Response};

enum Conn {
    Child {
        child: Child,
        stdin: ChildStdin,
        stdout: BufReader<ChildStdout>,
    },
    Tcp {
        writer: TcpStream,
        reader: BufReader<TcpStream>,
    },
}

/// Out-of-process backend over stdio or TCP. One request in flight per
/// connection; calls are serialized behind a mutex.
pub struct ExternalBackend {
    conn: Mutex<Conn>,
    info: Mutex<Option<BackendInfo>>,
}

impl ExternalBackend {
    /// Spawn `argv[0]` with the remaining arguments and talk over its stdio.
    pub fn spawn(argv: &[String]) -> Result<Self, BackendError> {
        if argv.is_empty() {
            return Err(BackendError::Io("empty engine command".to_string()));
        }
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Io(format!("spawn `{}`: {e}", argv[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            conn: Mutex::new(Conn::Child {
                child,
                stdin,
                stdout,
            }),
            info: Mutex::new(None),
        })
    }

    /// Connect to an engine listening on a TCP address.
    pub fn connect(address: &str) -> Result<Self, BackendError> {
        let stream =
            TcpStream::connect(address).map_err(|e| BackendError::Io(format!("{address}: {e}")))?;
        let reader = BufReader::new(
            stream
                .try_clone()
                .map_err(|e| BackendError::Io(e.to_string()))?,
        );
        Ok(Self {
            conn: Mutex::new(Conn::Tcp {
                writer: stream,
                reader,
            }),
            info: Mutex::new(None),
        })
    }

    fn request(&self, req: &Request) -> Result<Response, BackendError> {
        let mut conn = self.conn.lock().expect("connection mutex");
        let line = serde_json::to_string(req).map_err(|e| BackendError::Io(e.to_string()))?;
        let (write, read): (&mut dyn Write, &mut dyn BufRead) = match &mut *conn {
            Conn::Child { stdin, stdout, .. } => (stdin, stdout),
            Conn::Tcp { writer, reader } => (writer, reader),
        };
        write
            .write_all(line.as_bytes())
            .and_then(|_| write.write_all(b"\n"))
            .and_then(|_| write.flush())
            .map_err(|e| BackendError::Io(format!("write: {e}")))?;
        let mut buf = String::new();
        let n = read
            .read_line(&mut buf)
            .map_err(|e| BackendError::Io(format!("read: {e}")))?;
        if n == 0 {
            return Err(BackendError::Io("engine closed the stream".to_string()));
        }
        let resp: Response = serde_json::from_str(buf.trim_end())
            .map_err(|e| BackendError::Protocol(format!("bad response: {e}")))?;
        if resp.v != wire::PROTOCOL_VERSION {
            return Err(BackendError::Protocol(format!(
                "unsupported protocol version {}",
                resp.v
            )));
        }
        if let Some(message) = resp.error {
            return Err(BackendError::Remote(message));
        }
        Ok(resp)
    }
}

impl Backend for ExternalBackend {
    fn info(&self) -> Result<BackendInfo, BackendError> {
        if let Some(info) = self.info.lock().expect("info mutex").clone() {
            return Ok(info);
        }
        let resp = self.request(&Request::info())?;
        let info = BackendInfo {
            vocab_size: resp
                .vocab_size
                .ok_or_else(|| BackendError::Protocol("info response missing vocab_size".into()))?,
            languages: resp.languages.unwrap_or_default(),
        };
        *self.info.lock().expect("info mutex") = Some(info.clone());
        Ok(info)
    }

    fn step(&self, audio: &AudioHandle, context: &[TokenId]) -> Result<Vec<f32>, BackendError> {
        let req = Request::step(audio.as_str(), context.iter().map(|t| t.0).collect());
        let resp = self.request(&req)?;
        resp.logits
            .ok_or_else(|| BackendError::Protocol("step response missing logits".into()))
    }

    fn concurrent_safe(&self) -> bool {
        false
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        if let Ok(mut conn) = self.conn.lock() {
            if let Conn::Child { child, .. } = &mut *conn {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}
