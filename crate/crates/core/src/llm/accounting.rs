use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub requests: u64,
    pub tokens: u64,
    pub latency: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub total_requests: u64,
    pub total_tokens: u64,
    pub total_latency: Duration,
    pub per_stage: BTreeMap<String, StageUsage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub stage: String,
    pub latency: Duration,
    pub tokens: u64,
}

/// Monotone request counters. One lock guards both the event log and the
/// aggregates so a summary never observes a half-applied update.
#[derive(Debug, Default)]
pub struct Accounting {
    inner: Mutex<AccountingState>,
}

#[derive(Debug, Default)]
struct AccountingState {
    summary: UsageSummary,
    events: Vec<UsageEvent>,
}

impl Accounting {
    pub fn record(&self, stage: &str, latency: Duration, tokens: u64) {
        let mut st = self.inner.lock().expect("accounting lock poisoned");
        st.summary.total_requests += 1;
        st.summary.total_tokens += tokens;
        st.summary.total_latency += latency;
        let entry = st.summary.per_stage.entry(stage.to_string()).or_default();
        entry.requests += 1;
        entry.tokens += tokens;
        entry.latency += latency;
        st.events.push(UsageEvent {
            stage: stage.to_string(),
            latency,
            tokens,
        });
    }

    pub fn summary(&self) -> UsageSummary {
        self.inner
            .lock()
            .expect("accounting lock poisoned")
            .summary
            .clone()
    }

    pub fn events(&self) -> Vec<UsageEvent> {
        self.inner
            .lock()
            .expect("accounting lock poisoned")
            .events
            .clone()
    }
}
