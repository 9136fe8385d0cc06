//! External scorers over a line-delimited JSON protocol.
//!
//! Each request is one line:
//!
//! ```text
//! {"kind":"pointwise","id":7,"query":"...","doc":"..."}
//! {"kind":"pairwise","id":8,"query":"...","doc":"...","doc2":"..."}
//! {"kind":"extract","id":9,"query":"<question text>","doc":""}
//! ```
//!
//! and is answered by exactly one line echoing its id, in any order:
//! `{"id":7,"score":0.83}` (score in `[0, 1]`) or `{"id":9,"terms":["..."]}`.
//! A pairwise score is the probability that `doc` is more relevant than `doc2`.
//!
//! A scorer is reached through a child process (`exec:CMD`, run by `sh -c`,
//! speaking on stdin/stdout) or a socket (`tcp:HOST:PORT`). Connections are
//! pooled; each batch pipelines up to `in_flight` outstanding requests on one
//! connection. A connection that misbehaves is discarded and replaced on the
//! next batch.

use std::borrow::Cow;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use stagerank_core::rerank::{PairwiseRequest, PointwiseRequest, Scorer, ScorerError};
use stagerank_core::topics::extract_key_terms;
use stagerank_core::{InvertedIndex, ReferenceScorer};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_CONNECTIONS: usize = 4;
pub const DEFAULT_IN_FLIGHT: usize = 64;

/// Where scores come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerSpec {
    Reference,
    Exec(String),
    Tcp(String),
}

impl FromStr for ScorerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "reference" {
            Ok(Self::Reference)
        } else if let Some(cmd) = s.strip_prefix("exec:").filter(|c| !c.trim().is_empty()) {
            Ok(Self::Exec(cmd.to_string()))
        } else if let Some(addr) = s.strip_prefix("tcp:").filter(|a| a.contains(':')) {
            Ok(Self::Tcp(addr.to_string()))
        } else {
            Err(format!(
                "invalid scorer {s:?}: expected reference, exec:CMD or tcp:HOST:PORT"
            ))
        }
    }
}

/// Rare-term extraction for query expansion.
pub trait TermExtractor: Send + Sync {
    fn extract(&self, question: &str) -> Result<Vec<String>, ScorerError>;
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireRequest<'a> {
    #[serde(borrow)]
    pub kind: Cow<'a, str>,
    pub id: u64,
    #[serde(borrow)]
    pub query: Cow<'a, str>,
    #[serde(borrow)]
    pub doc: Cow<'a, str>,
    #[serde(default, borrow, skip_serializing_if = "Option::is_none")]
    pub doc2: Option<Cow<'a, str>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Pointwise,
    Pairwise,
    Extract,
}

impl Kind {
    fn as_str(self) -> &'static str {
        match self {
            Self::Pointwise => "pointwise",
            Self::Pairwise => "pairwise",
            Self::Extract => "extract",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Reply {
    Score(f64),
    Terms(Vec<String>),
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: mpsc::Receiver<io::Result<String>>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader<R: io::Read + Send + 'static>(reader: R) -> mpsc::Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(reader).lines() {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    rx
}

impl Connection {
    fn open(spec: &ScorerSpec) -> Result<Self, ScorerError> {
        match spec {
            ScorerSpec::Exec(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| ScorerError::Unavailable(format!("cannot start {cmd:?}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self {
                    writer: Box::new(BufWriter::new(stdin)),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                })
            }
            ScorerSpec::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| {
                    ScorerError::Unavailable(format!("cannot connect to {addr}: {e}"))
                })?;
                let _ = stream.set_nodelay(true);
                let read_half = stream
                    .try_clone()
                    .map_err(|e| ScorerError::Unavailable(e.to_string()))?;
                Ok(Self {
                    writer: Box::new(BufWriter::new(stream)),
                    lines: spawn_reader(read_half),
                    child: None,
                })
            }
            ScorerSpec::Reference => Err(ScorerError::Unavailable(
                "the reference scorer has no connection".into(),
            )),
        }
    }
}

/// One request of a batch, before id assignment.
struct Job<'a> {
    query: &'a str,
    doc: &'a str,
    doc2: Option<&'a str>,
}

/// Client for a scorer process or service.
pub struct ExternalScorer {
    spec: ScorerSpec,
    idle: Mutex<Vec<Connection>>,
    checked_out: Mutex<usize>,
    returned: Condvar,
    max_connections: usize,
    in_flight: usize,
    timeout: Duration,
    next_id: AtomicU64,
}

impl ExternalScorer {
    pub fn new(spec: ScorerSpec) -> Self {
        Self {
            spec,
            idle: Mutex::new(Vec::new()),
            checked_out: Mutex::new(0),
            returned: Condvar::new(),
            max_connections: DEFAULT_CONNECTIONS,
            in_flight: DEFAULT_IN_FLIGHT,
            timeout: DEFAULT_TIMEOUT,
            next_id: AtomicU64::new(0),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_connections(mut self, n: usize) -> Self {
        self.max_connections = n.max(1);
        self
    }

    pub fn with_in_flight(mut self, n: usize) -> Self {
        self.in_flight = n.max(1);
        self
    }

    fn checkout(&self) -> Result<Connection, ScorerError> {
        {
            let mut out = self.checked_out.lock().expect("pool lock");
            while *out >= self.max_connections {
                out = self.returned.wait(out).expect("pool lock");
            }
            *out += 1;
        }
        let pooled = self.idle.lock().expect("pool lock").pop();
        match pooled.map_or_else(|| Connection::open(&self.spec), Ok) {
            Ok(c) => Ok(c),
            Err(e) => {
                self.release(None);
                Err(e)
            }
        }
    }

    fn release(&self, conn: Option<Connection>) {
        if let Some(c) = conn {
            self.idle.lock().expect("pool lock").push(c);
        }
        *self.checked_out.lock().expect("pool lock") -= 1;
        self.returned.notify_one();
    }

    fn call(&self, kind: Kind, jobs: &[Job<'_>]) -> Result<Vec<Reply>, ScorerError> {
        if jobs.is_empty() {
            return Ok(Vec::new());
        }
        let mut conn = self.checkout()?;
        let result = self.exchange(&mut conn, kind, jobs);
        self.release(result.is_ok().then_some(conn));
        result
    }

    fn exchange(
        &self,
        conn: &mut Connection,
        kind: Kind,
        jobs: &[Job<'_>],
    ) -> Result<Vec<Reply>, ScorerError> {
        let n = jobs.len();
        let base = self.next_id.fetch_add(n as u64, Ordering::Relaxed);
        let mut replies: Vec<Option<Reply>> = vec![None; n];
        let (mut sent, mut received) = (0, 0);
        while received < n {
            if sent < n && sent - received < self.in_flight {
                while sent < n && sent - received < self.in_flight {
                    let j = &jobs[sent];
                    let req = WireRequest {
                        kind: Cow::Borrowed(kind.as_str()),
                        id: base + sent as u64,
                        query: Cow::Borrowed(j.query),
                        doc: Cow::Borrowed(j.doc),
                        doc2: j.doc2.map(Cow::Borrowed),
                    };
                    let line = serde_json::to_string(&req).expect("requests serialize");
                    writeln!(conn.writer, "{line}")
                        .map_err(|_| ScorerError::Closed { index: sent })?;
                    sent += 1;
                }
                conn.writer
                    .flush()
                    .map_err(|_| ScorerError::Closed { index: received })?;
            }
            let line = match conn.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => {
                    return Err(ScorerError::Closed { index: received });
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(ScorerError::Timeout { index: received })
                }
            };
            let protocol = |index: usize, message: String| ScorerError::Protocol { index, message };
            let resp: WireResponse = serde_json::from_str(&line)
                .map_err(|e| protocol(received, format!("bad response: {e}")))?;
            let index = resp
                .id
                .checked_sub(base)
                .map(|i| i as usize)
                .filter(|&i| i < sent && replies[i].is_none())
                .ok_or_else(|| protocol(received, format!("unexpected response id {}", resp.id)))?;
            let reply = match (kind, resp.score, resp.terms) {
                (Kind::Extract, _, Some(terms)) => Reply::Terms(terms),
                (Kind::Pointwise | Kind::Pairwise, Some(score), _) => {
                    if !(0.0..=1.0).contains(&score) {
                        return Err(ScorerError::InvalidScore { index, score });
                    }
                    Reply::Score(score)
                }
                _ => {
                    return Err(protocol(
                        index,
                        format!("response lacks the field a {} request needs", kind.as_str()),
                    ))
                }
            };
            replies[index] = Some(reply);
            received += 1;
        }
        Ok(replies
            .into_iter()
            .map(|r| r.expect("every id answered"))
            .collect())
    }

    fn scores(&self, kind: Kind, jobs: &[Job<'_>]) -> Result<Vec<f64>, ScorerError> {
        Ok(self
            .call(kind, jobs)?
            .into_iter()
            .map(|r| match r {
                Reply::Score(s) => s,
                Reply::Terms(_) => unreachable!("score requests get scores"),
            })
            .collect())
    }
}

impl Scorer for ExternalScorer {
    fn pointwise(&self, batch: &[PointwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError> {
        let jobs: Vec<Job<'_>> = batch
            .iter()
            .map(|r| Job {
                query: r.query,
                doc: r.passage,
                doc2: None,
            })
            .collect();
        self.scores(Kind::Pointwise, &jobs)
    }

    fn pairwise(&self, batch: &[PairwiseRequest<'_>]) -> Result<Vec<f64>, ScorerError> {
        let jobs: Vec<Job<'_>> = batch
            .iter()
            .map(|r| Job {
                query: r.query,
                doc: r.passage_a,
                doc2: Some(r.passage_b),
            })
            .collect();
        self.scores(Kind::Pairwise, &jobs)
    }
}

impl TermExtractor for ExternalScorer {
    fn extract(&self, question: &str) -> Result<Vec<String>, ScorerError> {
        let job = Job {
            query: question,
            doc: "",
            doc2: None,
        };
        match self.call(Kind::Extract, &[job])?.pop() {
            Some(Reply::Terms(t)) => Ok(t),
            _ => unreachable!("extract requests get terms"),
        }
    }
}

/// The reference scorer and idf-threshold extractor behind the wire protocol.
pub struct ReferenceService {
    scorer: ReferenceScorer,
    index: InvertedIndex,
    theta: f64,
}

impl ReferenceService {
    pub fn new(index: InvertedIndex, theta: f64) -> Self {
        Self {
            scorer: ReferenceScorer::from_index(&index),
            index,
            theta,
        }
    }

    /// Answers one request line.
    pub fn respond(&self, line: &str) -> Result<String, String> {
        let req: WireRequest<'_> =
            serde_json::from_str(line).map_err(|e| format!("bad request: {e}"))?;
        let mut resp = WireResponse {
            id: req.id,
            score: None,
            terms: None,
        };
        match (req.kind.as_ref(), req.doc2.as_deref()) {
            ("pointwise", _) => resp.score = Some(self.scorer.score(&req.query, &req.doc)),
            ("pairwise", Some(doc2)) => {
                resp.score = Some(self.scorer.preference(&req.query, &req.doc, doc2))
            }
            ("extract", _) => {
                resp.terms = Some(extract_key_terms(&req.query, &self.index, self.theta))
            }
            (kind, _) => return Err(format!("unsupported request kind {kind:?}")),
        }
        Ok(serde_json::to_string(&resp).expect("responses serialize"))
    }

    /// Serves requests until `input` ends. Malformed requests end the session.
    pub fn serve<R: BufRead, W: Write>(&self, input: R, mut output: W) -> io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let reply = self
                .respond(&line)
                .map_err(|m| io::Error::new(io::ErrorKind::InvalidData, m))?;
            writeln!(output, "{reply}")?;
            output.flush()?;
        }
        Ok(())
    }
}

impl TermExtractor for ReferenceService {
    fn extract(&self, question: &str) -> Result<Vec<String>, ScorerError> {
        Ok(extract_key_terms(question, &self.index, self.theta))
    }
}
