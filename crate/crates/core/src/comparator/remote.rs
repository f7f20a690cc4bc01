//! HTTP client for a comparator inference service.
//!
//! Wire protocol: `POST {endpoint}/v1/compare` with
//! `{"first_image": .., "second_image": ..}`; a success response carries
//! `{"logits": {"inferior": f, "worse": f, "similar": f, "better": f,
//! "superior": f}, "model_id": s}`. Errors come back as an HTTP status plus
//! `{"error": s}`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Comparator, ComparatorError, ComparisonLogits};
use crate::corpus::ComparativeLevel;
use crate::dataset::ImageRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompareRequest {
    pub first_image: String,
    pub second_image: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prompt_override: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResponse {
    pub logits: BTreeMap<String, f64>,
    pub model_id: String,
}

impl CompareResponse {
    /// Checks the five-key contract and orders the logits by level.
    pub fn level_logits(&self) -> Result<ComparisonLogits, ComparatorError> {
        if let Some(extra) = self.logits.keys().find(|k| k.parse::<ComparativeLevel>().is_err()) {
            return Err(ComparatorError::Protocol(format!("unexpected logits key `{extra}`")));
        }
        let mut values = [0.0; 5];
        for level in ComparativeLevel::ALL {
            values[level.ordinal()] = *self
                .logits
                .get(level.name())
                .ok_or_else(|| ComparatorError::Protocol(format!("missing level `{}` in response", level.name())))?;
        }
        ComparisonLogits::new(values).map_err(|e| ComparatorError::Protocol(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub image_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub attempts: usize,
    pub backoff: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            image_dir: None,
            max_in_flight: 4,
            timeout: Duration::from_secs(30),
            attempts: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

enum Failure {
    Retry { timed_out: bool, message: String },
    Fatal(ComparatorError),
}

#[derive(Debug)]
pub struct RemoteComparator {
    url: String,
    agent: ureq::Agent,
    opts: RemoteOptions,
    gate: InFlight,
}

impl RemoteComparator {
    pub fn new(endpoint: &str, opts: RemoteOptions) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(opts.timeout).build();
        let gate = InFlight { limit: opts.max_in_flight.max(1), active: Mutex::new(0), freed: Condvar::new() };
        Self { url: format!("{}/v1/compare", endpoint.trim_end_matches('/')), agent, opts, gate }
    }

    fn resolve(&self, record: &ImageRecord) -> Result<String, ComparatorError> {
        match &self.opts.image_dir {
            None => Ok(record.image_id.clone()),
            Some(dir) => {
                let path = dir.join(&record.image_id);
                if path.is_file() {
                    Ok(path.display().to_string())
                } else {
                    Err(ComparatorError::Unresolvable(path.display().to_string()))
                }
            }
        }
    }

    fn attempt(&self, request: &CompareRequest) -> Result<ComparisonLogits, Failure> {
        let response = match self.agent.post(&self.url).send_json(request) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                let body = serde_json::from_str::<serde_json::Value>(&body)
                    .ok()
                    .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
                    .unwrap_or(body);
                return Err(Failure::Fatal(ComparatorError::Status { status, body }));
            }
            Err(ureq::Error::Transport(t)) => {
                let timed_out = std::error::Error::source(&t)
                    .and_then(|s| s.downcast_ref::<std::io::Error>())
                    .is_some_and(|e| matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock));
                return Err(Failure::Retry { timed_out, message: t.to_string() });
            }
        };
        let text = response.into_string().map_err(|e| Failure::Retry {
            timed_out: matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock),
            message: e.to_string(),
        })?;
        let parsed: CompareResponse = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(ComparatorError::Protocol(format!("malformed response body: {e}"))))?;
        parsed.level_logits().map_err(Failure::Fatal)
    }

    pub fn remote_compare(&self, first_image: &str, second_image: &str) -> Result<ComparisonLogits, ComparatorError> {
        let request = CompareRequest {
            first_image: first_image.to_string(),
            second_image: second_image.to_string(),
            prompt_override: None,
        };
        let _slot = self.gate.acquire();
        let attempts = self.opts.attempts.max(1);
        let mut last = (false, String::new());
        for k in 0..attempts {
            if k > 0 {
                thread::sleep(self.opts.backoff * 2u32.pow(k as u32 - 1));
            }
            match self.attempt(&request) {
                Ok(logits) => return Ok(logits),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry { timed_out, message }) => {
                    log::debug!("compare attempt {} of {attempts} failed: {message}", k + 1);
                    last = (timed_out, message);
                }
            }
        }
        Err(if last.0 {
            ComparatorError::Timeout { attempts }
        } else {
            ComparatorError::Transport { attempts, message: last.1 }
        })
    }
}

impl Comparator for RemoteComparator {
    fn compare(&self, first: &ImageRecord, second: &ImageRecord) -> Result<ComparisonLogits, ComparatorError> {
        let a = self.resolve(first)?;
        let b = self.resolve(second)?;
        self.remote_compare(&a, &b)
    }
}
