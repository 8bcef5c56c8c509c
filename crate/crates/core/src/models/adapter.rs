//! Line-delimited JSON protocol for external predictive models.
//!
//! One UTF-8 JSON object per line, flushed after every line:
//!
//! ```text
//! → {"type":"handshake","version":1}
//! ← {"type":"handshake","version":1,"family":"bernoulli","num_posterior_samples":L}
//! → {"type":"predict","inputs":[[…], …]}
//! ← {"type":"predictions","params":[[{"p":…}, …], …]}      (L rows of N entries)
//! → {"type":"shutdown"}
//! ```
//!
//! Gaussian entries are `{"mu":…,"sigma2":…}`. Floats are written in their
//! shortest round-trip form, so values survive the wire exactly.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::PredictiveSource;
use crate::divergence::{Family, PredictionMatrix, Predictive};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Handshake { version: u32 },
    Predict { inputs: Vec<Vec<f64>> },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Handshake { version: u32, family: Family, num_posterior_samples: usize },
    Predictions { params: Vec<Vec<Value>> },
}

fn write_line<W: Write + ?Sized, T: Serialize>(writer: &mut W, msg: &T) -> Result<()> {
    let line = serde_json::to_string(msg).map_err(|e| Error::Protocol(format!("cannot encode message: {e}")))?;
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// Client side of a session. Exactly one request is in flight at a time.
pub struct AdapterSession {
    family: Family,
    num_samples: usize,
    version: u32,
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    child: Option<Child>,
}

impl std::fmt::Debug for AdapterSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterSession")
            .field("family", &self.family)
            .field("num_samples", &self.num_samples)
            .field("version", &self.version)
            .finish_non_exhaustive()
    }
}

impl AdapterSession {
    /// Spawns `argv` and talks to it over stdin/stdout.
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self> {
        let (program, args) =
            argv.split_first().ok_or_else(|| Error::InvalidArgument("empty adapter command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("cannot start adapter {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(stdout, stdin, Some(child), timeout)
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<Self> {
        let stream =
            TcpStream::connect(addr).map_err(|e| Error::Transport(format!("cannot connect to {addr}: {e}")))?;
        let reader = stream.try_clone()?;
        Self::handshake(reader, stream, None, timeout)
    }

    /// Performs the handshake over an arbitrary byte transport.
    pub fn handshake<R, W>(reader: R, writer: W, child: Option<Child>, timeout: Duration) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut session = Self {
            family: Family::Bernoulli,
            num_samples: 0,
            version: 0,
            writer: Box::new(writer),
            lines: rx,
            timeout,
            child,
        };
        write_line(&mut session.writer, &Request::Handshake { version: PROTOCOL_VERSION })?;
        match session.read_response()? {
            Response::Handshake { version, family, num_posterior_samples } => {
                if version != PROTOCOL_VERSION {
                    return Err(Error::VersionMismatch { expected: PROTOCOL_VERSION, got: version });
                }
                if num_posterior_samples == 0 {
                    return Err(Error::Protocol("adapter declared zero posterior samples".into()));
                }
                session.family = family;
                session.num_samples = num_posterior_samples;
                session.version = version;
                Ok(session)
            }
            other => Err(Error::Protocol(format!("expected a handshake reply, got {other:?}"))),
        }
    }

    fn read_response(&mut self) -> Result<Response> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::Transport(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Transport(format!("adapter did not answer within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Transport("adapter closed the connection".into()))
            }
        };
        serde_json::from_str(&line).map_err(|e| Error::Protocol(format!("malformed line {line:?}: {e}")))
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Sends all inputs in one request and validates the `L × N` reply.
    pub fn predict(&mut self, inputs: &[Vec<f64>]) -> Result<PredictionMatrix> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("no inputs".into()));
        }
        write_line(&mut self.writer, &Request::Predict { inputs: inputs.to_vec() })?;
        let params = match self.read_response()? {
            Response::Predictions { params } => params,
            other => return Err(Error::Protocol(format!("expected predictions, got {other:?}"))),
        };
        parse_predictions(self.family, self.num_samples, inputs.len(), &params)
    }

    /// Ends the session and waits for a spawned adapter to exit.
    pub fn shutdown(mut self) -> Result<()> {
        self.close()
    }

    fn close(&mut self) -> Result<()> {
        let sent = write_line(&mut self.writer, &Request::Shutdown);
        if let Some(mut child) = self.child.take() {
            if sent.is_err() {
                let _ = child.kill();
            }
            child.wait()?;
        }
        sent
    }
}

impl Drop for AdapterSession {
    fn drop(&mut self) {
        if self.child.is_some() {
            let _ = self.close();
        }
    }
}

impl PredictiveSource for AdapterSession {
    fn family(&self) -> Family {
        self.family
    }

    fn num_samples(&self) -> usize {
        self.num_samples
    }

    fn predict(&mut self, inputs: &[Vec<f64>]) -> Result<PredictionMatrix> {
        AdapterSession::predict(self, inputs)
    }
}

fn number(obj: &Map<String, Value>, key: &str, l: usize, i: usize) -> Result<f64> {
    obj.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Protocol(format!("prediction [{l}][{i}]: missing numeric field {key:?}")))
}

fn parse_predictions(family: Family, num_samples: usize, n: usize, params: &[Vec<Value>]) -> Result<PredictionMatrix> {
    if params.len() != num_samples {
        return Err(Error::Protocol(format!(
            "expected {num_samples} posterior rows, got {}",
            params.len()
        )));
    }
    let mut values = Vec::with_capacity(num_samples * n);
    for (l, row) in params.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Protocol(format!("posterior row {l} has {} entries, expected {n}", row.len())));
        }
        for (i, entry) in row.iter().enumerate() {
            let obj = entry
                .as_object()
                .ok_or_else(|| Error::Protocol(format!("prediction [{l}][{i}] is not an object")))?;
            let value = match family {
                Family::Bernoulli => {
                    let p = number(obj, "p", l, i)?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::Protocol(format!("prediction [{l}][{i}]: p={p} outside [0, 1]")));
                    }
                    Predictive::bernoulli(p)?
                }
                Family::Gaussian => {
                    let mu = number(obj, "mu", l, i)?;
                    let sigma2 = number(obj, "sigma2", l, i)?;
                    if !(sigma2 > 0.0) {
                        return Err(Error::Protocol(format!(
                            "prediction [{l}][{i}]: sigma2={sigma2} is not positive"
                        )));
                    }
                    Predictive::gaussian(mu, sigma2)
                        .map_err(|e| Error::Protocol(format!("prediction [{l}][{i}]: {e}")))?
                }
            };
            values.push(value);
        }
    }
    PredictionMatrix::new(family, num_samples, n, values)
}

fn encode(p: &Predictive) -> Value {
    match *p {
        Predictive::Bernoulli { p } => json!({ "p": p }),
        Predictive::Gaussian { mu, sigma2 } => json!({ "mu": mu, "sigma2": sigma2 }),
    }
}

/// Server side: answers requests from `reader` until shutdown or EOF.
pub fn serve<R: BufRead, W: Write>(source: &mut dyn PredictiveSource, reader: R, mut writer: W) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        let request: Request =
            serde_json::from_str(&line).map_err(|e| Error::Protocol(format!("malformed request {line:?}: {e}")))?;
        match request {
            Request::Handshake { version } => {
                if version != PROTOCOL_VERSION {
                    return Err(Error::VersionMismatch { expected: PROTOCOL_VERSION, got: version });
                }
                write_line(
                    &mut writer,
                    &Response::Handshake {
                        version: PROTOCOL_VERSION,
                        family: source.family(),
                        num_posterior_samples: source.num_samples(),
                    },
                )?;
            }
            Request::Predict { inputs } => {
                let preds = source.predict(&inputs)?;
                let params = (0..preds.num_samples())
                    .map(|l| preds.row(l).iter().map(encode).collect())
                    .collect();
                write_line(&mut writer, &Response::Predictions { params })?;
            }
            Request::Shutdown => return Ok(()),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ConstantSource;
    use std::io::Cursor;

    #[test]
    fn request_wire_format() {
        let s = serde_json::to_string(&Request::Handshake { version: 1 }).unwrap();
        assert_eq!(s, r#"{"type":"handshake","version":1}"#);
        let s = serde_json::to_string(&Request::Shutdown).unwrap();
        assert_eq!(s, r#"{"type":"shutdown"}"#);
        let s = serde_json::to_string(&Request::Predict { inputs: vec![vec![0.5, 1.0]] }).unwrap();
        assert_eq!(s, r#"{"type":"predict","inputs":[[0.5,1.0]]}"#);
        let r = Response::Handshake { version: 1, family: Family::Gaussian, num_posterior_samples: 3 };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"type":"handshake","version":1,"family":"gaussian","num_posterior_samples":3}"#
        );
    }

    #[test]
    fn serve_answers_echo() {
        let mut src = ConstantSource { value: Predictive::bernoulli(0.5).unwrap(), num_samples: 2 };
        let input = "{\"type\":\"handshake\",\"version\":1}\n{\"type\":\"predict\",\"inputs\":[[1.0],[2.0]]}\n{\"type\":\"shutdown\"}\n";
        let mut out = Vec::new();
        serve(&mut src, Cursor::new(input), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"type":"handshake","version":1,"family":"bernoulli","num_posterior_samples":2}"#);
        assert_eq!(lines[1], r#"{"type":"predictions","params":[[{"p":0.5},{"p":0.5}],[{"p":0.5},{"p":0.5}]]}"#);
    }

    #[test]
    fn serve_rejects_garbage() {
        let mut src = ConstantSource { value: Predictive::bernoulli(0.5).unwrap(), num_samples: 1 };
        assert!(matches!(serve(&mut src, Cursor::new("hello\n"), Vec::new()), Err(Error::Protocol(_))));
        assert!(matches!(
            serve(&mut src, Cursor::new("{\"type\":\"handshake\",\"version\":7}\n"), Vec::new()),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn parse_reports_offending_index() {
        let params: Vec<Vec<Value>> = vec![vec![json!({"p": 0.2}), json!({"p": 1.5})]];
        let err = parse_predictions(Family::Bernoulli, 1, 2, &params).unwrap_err().to_string();
        assert!(err.contains("[0][1]") && err.contains("1.5"), "{err}");

        let params: Vec<Vec<Value>> = vec![vec![json!({"mu": 0.0, "sigma2": -1.0})]];
        let err = parse_predictions(Family::Gaussian, 1, 1, &params).unwrap_err().to_string();
        assert!(err.contains("[0][0]"), "{err}");

        let params: Vec<Vec<Value>> = vec![vec![json!({"p": 0.2})]];
        assert!(parse_predictions(Family::Bernoulli, 2, 1, &params).is_err());
        assert!(parse_predictions(Family::Bernoulli, 1, 2, &params).is_err());
        let params: Vec<Vec<Value>> = vec![vec![json!({"q": 0.2})]];
        assert!(parse_predictions(Family::Bernoulli, 1, 1, &params).is_err());
    }
}
