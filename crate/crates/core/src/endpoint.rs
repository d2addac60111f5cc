//! HTTP plumbing shared by the embedding and chat clients: retries with
//! exponential backoff, rate limiting and bounded fan-out.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::Value;

use crate::error::{Error, Result};

/// Failure of a single attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum AttemptError {
    /// Worth retrying: timeouts, 429, 5xx, connection resets.
    Transient(String),
    Timeout(String),
    /// Retrying cannot help (bad request, auth failure, bad payload).
    Fatal(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    pub fn delay_for(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `attempt` until it succeeds, fails fatally, or attempts run out.
    /// Returns the value and the number of retries it took.
    pub fn run<T>(
        &self,
        label: &str,
        mut attempt: impl FnMut(u32) -> std::result::Result<T, AttemptError>,
    ) -> Result<(T, u32)> {
        let attempts = self.max_attempts.max(1);
        let mut last = AttemptError::Transient("no attempt made".into());
        for n in 0..attempts {
            if n > 0 {
                let delay = self.delay_for(n - 1);
                log::warn!("{label}: retry {n}/{} after {:?}: {last:?}", attempts - 1, delay);
                std::thread::sleep(delay);
            }
            match attempt(n) {
                Ok(value) => {
                    if n > 0 {
                        log::info!("{label}: succeeded after {n} retries");
                    }
                    return Ok((value, n));
                }
                Err(AttemptError::Fatal(msg)) => return Err(Error::Endpoint(format!("{label}: {msg}"))),
                Err(e) => last = e,
            }
        }
        Err(match last {
            AttemptError::Timeout(msg) => Error::Timeout(format!("{label}: {msg}")),
            AttemptError::Transient(msg) | AttemptError::Fatal(msg) => {
                Error::Endpoint(format!("{label}: {msg} (after {attempts} attempts)"))
            }
        })
    }
}

/// Spaces consecutive requests at least `interval` apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let interval = if requests == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs(60) / requests
        };
        Self {
            interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut slot = self.next_slot.lock().unwrap_or_else(|p| p.into_inner());
            let now = Instant::now();
            let start = slot.map_or(now, |s| s.max(now));
            *slot = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// POSTs JSON to one URL with an optional bearer token.
#[derive(Debug)]
pub struct JsonEndpoint {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl JsonEndpoint {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            url: url.into(),
            api_key,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post(&self, body: &Value) -> std::result::Result<Value, AttemptError> {
        let mut request = self.agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body) {
            Ok(response) => response
                .into_json::<Value>()
                .map_err(|e| AttemptError::Transient(format!("reading response: {e}"))),
            Err(ureq::Error::Status(code, response)) => {
                let body = response.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", body.chars().take(200).collect::<String>());
                if code == 429 || code >= 500 {
                    Err(AttemptError::Transient(msg))
                } else {
                    Err(AttemptError::Fatal(msg))
                }
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("Timeout") {
                    Err(AttemptError::Timeout(msg))
                } else {
                    Err(AttemptError::Transient(msg))
                }
            }
        }
    }
}

/// Reads an API key from the named environment variable, if set.
pub fn api_key_from_env(var: Option<&str>) -> Option<String> {
    var.and_then(|v| std::env::var(v).ok()).filter(|k| !k.is_empty())
}

/// Maps `f` over `items` with at most `max_in_flight` concurrent calls.
/// Results keep input order.
pub fn bounded_map<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_in_flight.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .unwrap_or_else(|p| p.into_inner())
                .expect("every slot is filled once all workers join")
        })
        .collect()
}
