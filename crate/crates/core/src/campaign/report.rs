//! Stage-timing and time-to-bug report rendering.

use serde::{Deserialize, Serialize};

use super::CampaignStats;

pub const STAGES: [&str; 4] = ["SA", "RAG", "Opt", "Mutator"];
pub const TIMEOUT_MARK: &str = "T.O.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Timeout,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    pub status: StageStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stages: Vec<StageTiming>,
}

impl StageTimings {
    pub fn record(&mut self, stage: &str, seconds: f64, status: StageStatus) {
        self.stages.retain(|s| s.stage != stage);
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds,
            status,
        });
    }

    pub fn get(&self, stage: &str) -> Option<&StageTiming> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

fn whole_secs(s: f64) -> u64 {
    s.max(0.0).round() as u64
}

fn table(header: &[&str], row: &[String]) -> String {
    let mut s = format!("| {} |\n", header.join(" | "));
    s.push_str(&format!(
        "|{}|\n",
        header
            .iter()
            .map(|h| "-".repeat(h.len() + 2))
            .collect::<Vec<_>>()
            .join("|")
    ));
    s.push_str(&format!("| {} |\n", row.join(" | ")));
    s
}

fn stage_table(t: &StageTimings) -> String {
    let mut cells = Vec::new();
    let mut total = 0u64;
    let mut timed_out = false;
    for name in STAGES {
        let cell = match t.get(name) {
            None => "-".to_string(),
            Some(st) => match st.status {
                StageStatus::Timeout => {
                    timed_out = true;
                    TIMEOUT_MARK.to_string()
                }
                StageStatus::Failed => {
                    total += whole_secs(st.seconds);
                    format!("{}s (failed)", whole_secs(st.seconds))
                }
                StageStatus::Ok => {
                    total += whole_secs(st.seconds);
                    format!("{}s", whole_secs(st.seconds))
                }
            },
        };
        cells.push(cell);
    }
    cells.push(if timed_out {
        TIMEOUT_MARK.to_string()
    } else {
        format!("{total}s")
    });
    let mut header: Vec<&str> = STAGES.to_vec();
    header.push("Total");
    table(&header, &cells)
}

fn campaign_table(s: &CampaignStats) -> String {
    let at_target = s.crashes.iter().filter(|c| c.reached_target).count();
    let row = vec![
        if s.random_only {
            "random-only"
        } else {
            "bug-specific"
        }
        .to_string(),
        match s.time_to_first_target_crash {
            Some(t) => format!("{t:.1}s"),
            None => TIMEOUT_MARK.to_string(),
        },
        s.execs_to_first_target_crash
            .map_or_else(|| "-".to_string(), |n| n.to_string()),
        s.total_execs.to_string(),
        s.execs_reaching_target.to_string(),
        format!("{} ({at_target})", s.crashes.len()),
        s.refresh_events.to_string(),
        s.clamp_events.to_string(),
    ];
    table(
        &[
            "Mode",
            "Time to bug",
            "Execs to bug",
            "Total execs",
            "Reaching target",
            "Crashes (at target)",
            "Refreshes",
            "Clamps",
        ],
        &row,
    )
}

/// Renders the preparation table and, when present, the campaign table.
pub fn render_report(stages: &StageTimings, stats: Option<&CampaignStats>) -> String {
    let mut out = String::from("Preparation\n\n");
    out.push_str(&stage_table(stages));
    if let Some(s) = stats {
        out.push_str("\nCampaign\n\n");
        out.push_str(&campaign_table(s));
    }
    out
}
