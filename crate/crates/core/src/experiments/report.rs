//! Ablation/regularizer report: one row per variant, JSON and markdown
//! renderings of the same numbers.

use crate::training::StepRecord;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct LossCurveSummary {
    pub steps_completed: u64,
    pub first_total_d: Option<f64>,
    pub last_total_d: Option<f64>,
    pub first_total_g: Option<f64>,
    pub last_total_g: Option<f64>,
}

impl LossCurveSummary {
    pub fn from_history(history: &[StepRecord]) -> Self {
        Self {
            steps_completed: history.last().map_or(0, |r| r.step),
            first_total_d: history.first().and_then(|r| r.losses.total_d),
            last_total_d: history.last().and_then(|r| r.losses.total_d),
            first_total_g: history.first().and_then(|r| r.losses.total_g),
            last_total_g: history.last().and_then(|r| r.losses.total_g),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VariantOutcome {
    pub name: String,
    pub run_id: String,
    pub seed: u64,
    pub extractor_id: String,
    pub initial_fid: f64,
    /// Final toy-FID; absent when the run diverged.
    pub final_fid: Option<f64>,
    /// Step at which training aborted on a non-finite loss, if it did.
    pub diverged_at_step: Option<u64>,
    pub losses: LossCurveSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AblationReport {
    pub title: String,
    pub extractor_id: String,
    pub rows: Vec<VariantOutcome>,
}

impl AblationReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n\n", self.title));
        out.push_str(&format!("extractor: `{}`\n\n", self.extractor_id));
        out.push_str("| variant | toy-FID (final) | toy-FID (step 0) | status | run id | seed |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        for row in &self.rows {
            let fid = row
                .final_fid
                .map_or("-".to_string(), |v| format!("{v:.4}"));
            let status = match row.diverged_at_step {
                Some(step) => format!("diverged at step {step}"),
                None => "completed".to_string(),
            };
            out.push_str(&format!(
                "| {} | {} | {:.4} | {} | {} | {} |\n",
                row.name, fid, row.initial_fid, status, row.run_id, row.seed
            ));
        }
        out.push_str(
            "\ntoy-FID values are comparable only within one extractor hash; \
             relative ordering across variants is recorded, not asserted.\n",
        );
        out
    }

    pub fn write(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(self).expect("report serialization"),
        )?;
        std::fs::write(dir.join("report.md"), self.to_markdown())
    }
}
