//! External models.
//!
//! Two transports:
//!
//! * **subprocess**: a long-lived child reads one request per line on stdin,
//!   `{"instances": [[...], ...]}`, and answers each with one line on stdout,
//!   `{"predictions": [...]}`.
//! * **batch file**: each batch is written as a CSV with a header row, the
//!   command is run with the request and response paths appended as its last
//!   two arguments, and the response CSV must contain a single `prediction`
//!   column.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ModelFailure;
use crate::error::excerpt;

/// Program plus arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalCommand {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    /// Run `line` through `sh -c`.
    pub fn shell(line: &str) -> Self {
        Self::new("sh", vec!["-c".into(), format!("{line} \"$@\""), "sh".into()])
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args);
        cmd
    }
}

#[derive(Serialize)]
struct Request<'a> {
    instances: Vec<&'a [f64]>,
}

#[derive(Deserialize)]
struct Response {
    predictions: Vec<f64>,
}

/// One request line (without the trailing newline).
pub fn encode_request(rows: &DMatrix<f64>) -> String {
    let owned: Vec<Vec<f64>> = rows.row_iter().map(|r| r.iter().copied().collect()).collect();
    let request = Request {
        instances: owned.iter().map(|r| r.as_slice()).collect(),
    };
    // Serializing plain floats cannot fail.
    serde_json::to_string(&request).expect("request serialization")
}

/// Parse a request line back into rows.
pub fn decode_request(line: &str) -> Result<Vec<Vec<f64>>, serde_json::Error> {
    #[derive(Deserialize)]
    struct Owned {
        instances: Vec<Vec<f64>>,
    }
    serde_json::from_str::<Owned>(line).map(|r| r.instances)
}

pub fn encode_response(predictions: &[f64]) -> String {
    serde_json::json!({ "predictions": predictions }).to_string()
}

/// Parse and validate one response line.
pub fn decode_response(line: &str, expected: usize) -> Result<Vec<f64>, ModelFailure> {
    let parsed: Response = serde_json::from_str(line.trim()).map_err(|e| ModelFailure {
        message: format!("malformed response line: {e}"),
        excerpt: Some(excerpt(line)),
    })?;
    if parsed.predictions.len() != expected {
        return Err(ModelFailure {
            message: format!(
                "expected {expected} predictions, got {}",
                parsed.predictions.len()
            ),
            excerpt: Some(excerpt(line)),
        });
    }
    Ok(parsed.predictions)
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for ChildIo {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Line-delimited JSON model behind a child process.
///
/// The child is started on first use and kept for later batches. Requests
/// are serialized through a mutex, so there is at most one in flight.
pub struct SubprocessModel {
    command: ExternalCommand,
    input_dim: usize,
    child: Mutex<Option<ChildIo>>,
}

impl std::fmt::Debug for SubprocessModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessModel")
            .field("command", &self.command)
            .field("input_dim", &self.input_dim)
            .finish()
    }
}

impl SubprocessModel {
    pub fn new(command: ExternalCommand, input_dim: usize) -> Self {
        Self {
            command,
            input_dim,
            child: Mutex::new(None),
        }
    }

    pub fn command(&self) -> &ExternalCommand {
        &self.command
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn spawn(&self) -> Result<ChildIo, ModelFailure> {
        let mut child = self
            .command
            .command()
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ModelFailure::new(format!("cannot start '{}': {e}", self.command.program)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ChildIo {
            child,
            stdin,
            stdout,
        })
    }

    pub(crate) fn predict_batch(&self, rows: &DMatrix<f64>) -> Result<Vec<f64>, ModelFailure> {
        let mut guard = self.child.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let io = guard.as_mut().expect("child present");
        let result = exchange(io, rows);
        if result.is_err() {
            // Whatever state the child is in, start over on the next call.
            *guard = None;
        }
        result
    }
}

fn exchange(io: &mut ChildIo, rows: &DMatrix<f64>) -> Result<Vec<f64>, ModelFailure> {
    let mut line = encode_request(rows);
    line.push('\n');
    io.stdin
        .write_all(line.as_bytes())
        .and_then(|_| io.stdin.flush())
        .map_err(|e| ModelFailure::new(format!("cannot write request: {e}")))?;
    let mut reply = String::new();
    let read = io
        .stdout
        .read_line(&mut reply)
        .map_err(|e| ModelFailure::new(format!("cannot read response: {e}")))?;
    if read == 0 {
        let status = io
            .child
            .wait()
            .map(|s| s.to_string())
            .unwrap_or_else(|e| e.to_string());
        return Err(ModelFailure::new(format!(
            "model process closed its output ({status})"
        )));
    }
    decode_response(&reply, rows.nrows())
}

/// CSV request/response model, one command invocation per batch.
#[derive(Debug, Clone)]
pub struct BatchFileModel {
    command: ExternalCommand,
    request_path: PathBuf,
    response_path: PathBuf,
    input_dim: usize,
    feature_names: Vec<String>,
}

impl BatchFileModel {
    pub fn new(
        command: ExternalCommand,
        request_path: PathBuf,
        response_path: PathBuf,
        feature_names: Vec<String>,
    ) -> Self {
        Self {
            command,
            request_path,
            response_path,
            input_dim: feature_names.len(),
            feature_names,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn command(&self) -> &ExternalCommand {
        &self.command
    }

    pub(crate) fn predict_batch(&self, rows: &DMatrix<f64>) -> Result<Vec<f64>, ModelFailure> {
        self.write_request(rows)
            .map_err(|e| ModelFailure::new(format!("cannot write request CSV: {e}")))?;
        let output = self
            .command
            .command()
            .arg(&self.request_path)
            .arg(&self.response_path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::inherit())
            .status()
            .map_err(|e| ModelFailure::new(format!("cannot start '{}': {e}", self.command.program)))?;
        if !output.success() {
            return Err(ModelFailure::new(format!("model command failed ({output})")));
        }
        read_response_csv(&self.response_path, rows.nrows())
    }

    fn write_request(&self, rows: &DMatrix<f64>) -> csv::Result<()> {
        let mut w = csv::Writer::from_path(&self.request_path)?;
        w.write_record(&self.feature_names)?;
        for row in rows.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn read_response_csv(path: &std::path::Path, expected: usize) -> Result<Vec<f64>, ModelFailure> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| ModelFailure::new(format!("cannot read response CSV: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| ModelFailure::new(format!("bad response header: {e}")))?
        .clone();
    if headers.len() != 1 || &headers[0] != "prediction" {
        return Err(ModelFailure {
            message: "response CSV must have a single 'prediction' column".into(),
            excerpt: Some(excerpt(&headers.iter().collect::<Vec<_>>().join(","))),
        });
    }
    let mut out = Vec::with_capacity(expected);
    for record in reader.records() {
        let record = record.map_err(|e| ModelFailure::new(format!("bad response row: {e}")))?;
        let field = record.get(0).unwrap_or("");
        let v: f64 = field.trim().parse().map_err(|_| ModelFailure {
            message: "unparseable prediction".into(),
            excerpt: Some(excerpt(field)),
        })?;
        out.push(v);
    }
    if out.len() != expected {
        return Err(ModelFailure::new(format!(
            "expected {expected} predictions, got {}",
            out.len()
        )));
    }
    Ok(out)
}
