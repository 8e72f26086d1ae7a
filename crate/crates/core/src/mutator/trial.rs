//! Trial runs and refresh timing.

use std::time::{Duration, Instant};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::dsl::MutationProgram;
use crate::campaign::exec::{ExitKind, Runner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accepted,
    RejectedCrash,
    RejectedSlow,
    RejectedInvalid,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accepted => "accepted",
            Verdict::RejectedCrash => "rejected-crash",
            Verdict::RejectedSlow => "rejected-slow",
            Verdict::RejectedInvalid => "rejected-invalid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub execs_per_sec: f64,
    pub harness_crashes: u64,
    pub verdict: Verdict,
    pub execs: u64,
    pub clamps: u64,
    /// Executions that ended in a timeout.
    pub timeouts: u64,
}

impl TrialReport {
    pub fn summary(&self) -> String {
        format!(
            "{} ({:.1} execs/s over {} execs, {} harness faults, {} timeouts)",
            self.verdict.as_str(),
            self.execs_per_sec,
            self.execs,
            self.harness_crashes,
            self.timeouts
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrialThresholds {
    pub duration: Duration,
    pub min_execs_per_sec: f64,
}

impl Default for TrialThresholds {
    fn default() -> Self {
        Self {
            duration: Duration::from_secs(5),
            min_execs_per_sec: 10.0,
        }
    }
}

/// Runs the mutate-execute loop for `thresholds.duration` and judges the
/// program. Runner errors count as harness crashes; target crashes do not.
pub fn trial_run(
    program: &MutationProgram,
    seed: &[u8],
    runner: &mut dyn Runner,
    thresholds: &TrialThresholds,
    rng: &mut dyn RngCore,
) -> TrialReport {
    let started = Instant::now();
    let mut execs = 0u64;
    let mut faults = 0u64;
    let mut clamps = 0u64;
    let mut timeouts = 0u64;
    let mut empty = 0u64;
    while started.elapsed() < thresholds.duration {
        let m = program.apply(seed, rng);
        clamps += m.clamps;
        if m.bytes.is_empty() {
            empty += 1;
        }
        match runner.run(&m.bytes) {
            Ok(r) => {
                if r.exit == ExitKind::Timeout {
                    timeouts += 1;
                }
            }
            Err(e) => {
                log::warn!("trial: harness fault: {e}");
                faults += 1;
            }
        }
        execs += 1;
    }
    let secs = started.elapsed().as_secs_f64().max(1e-9);
    let execs_per_sec = execs as f64 / secs;
    let verdict = if faults > 0 {
        Verdict::RejectedCrash
    } else if execs == 0 || empty == execs || timeouts == execs {
        Verdict::RejectedInvalid
    } else if execs_per_sec < thresholds.min_execs_per_sec {
        Verdict::RejectedSlow
    } else {
        Verdict::Accepted
    };
    TrialReport {
        execs_per_sec,
        harness_crashes: faults,
        verdict,
        execs,
        clamps,
        timeouts,
    }
}

pub const DEFAULT_REFRESH_PERIOD: Duration = Duration::from_secs(3600);

/// True once `period` has elapsed since `last_refresh`.
pub fn refresh_due(last_refresh: Duration, now: Duration, period: Duration) -> bool {
    now.saturating_sub(last_refresh) >= period
}
