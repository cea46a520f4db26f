//! Recorded request/response logs.
//!
//! A log is JSON lines of `{"request": ..., "response": ...}` or
//! `{"request": ..., "error": ...}`.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, Segmenter, SegmenterRequest, SegmenterResponse};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exchange {
    pub request: SegmenterRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<SegmenterResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<BackendError>,
}

impl Exchange {
    fn outcome(&self) -> Result<SegmenterResponse, BackendError> {
        match (&self.response, &self.error) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(e)) => Err(e.clone()),
            (None, None) => Err(BackendError::Schema(
                "log entry has neither response nor error".into(),
            )),
        }
    }
}

fn key(request: &SegmenterRequest) -> String {
    serde_json::to_string(request).expect("requests serialize")
}

/// Answers requests from a recorded log. Identical requests are answered in
/// recorded order; once only one answer is left it is repeated.
#[derive(Debug, Default)]
pub struct ReplaySegmenter {
    answers: Mutex<HashMap<String, VecDeque<Exchange>>>,
}

impl ReplaySegmenter {
    pub fn from_exchanges(exchanges: impl IntoIterator<Item = Exchange>) -> Self {
        let mut answers: HashMap<String, VecDeque<Exchange>> = HashMap::new();
        for ex in exchanges {
            answers.entry(key(&ex.request)).or_default().push_back(ex);
        }
        ReplaySegmenter {
            answers: Mutex::new(answers),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut exchanges = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Exchange = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), i + 1),
                )
            })?;
            exchanges.push(ex);
        }
        Ok(Self::from_exchanges(exchanges))
    }
}

impl Segmenter for ReplaySegmenter {
    fn segment(&self, request: &SegmenterRequest) -> Result<SegmenterResponse, BackendError> {
        let mut answers = self.answers.lock().expect("replay log");
        let queue = answers
            .get_mut(&key(request))
            .filter(|q| !q.is_empty())
            .ok_or_else(|| {
                BackendError::Transport(format!(
                    "no recorded answer for fragment `{}`",
                    request.fragment
                ))
            })?;
        if queue.len() > 1 {
            queue.pop_front().expect("non-empty").outcome()
        } else {
            queue[0].outcome()
        }
    }
}

/// Wraps a backend and appends every exchange to a log file.
pub struct Recording<S> {
    inner: S,
    out: Mutex<File>,
}

impl<S: Segmenter> Recording<S> {
    pub fn create(inner: S, path: &Path) -> std::io::Result<Self> {
        let out = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Recording {
            inner,
            out: Mutex::new(out),
        })
    }
}

impl<S: Segmenter> Segmenter for Recording<S> {
    fn segment(&self, request: &SegmenterRequest) -> Result<SegmenterResponse, BackendError> {
        let result = self.inner.segment(request);
        let ex = Exchange {
            request: request.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().cloned(),
        };
        let line = serde_json::to_string(&ex).expect("exchanges serialize");
        let mut out = self.out.lock().expect("recording file");
        writeln!(out, "{line}")
            .map_err(|e| BackendError::Transport(format!("cannot write log: {e}")))?;
        result
    }
}
