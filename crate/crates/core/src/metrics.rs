//! Detection metrics over trigger logs.
//!
//! A session's trigger log is scored against the statically identified
//! findings (the ground truth). A record *matches* a finding when the two
//! plausibly describe the same on-screen ad; the matching is deliberately
//! loose about ids because runtime containers often log through an inner
//! child of the statically named widget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AppModel;
use crate::sim::{TriggerLog, TriggerRecord};
use crate::static_ads::AdWidgetFinding;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("detection rate is undefined without ground-truth findings")]
    EmptyGroundTruth,
}

/// True when `record` counts as a detection of `finding`: same window and
/// either the same widget id, a direct child of the finding's widget, or
/// bounds lying entirely within the finding's bounds.
pub fn match_detected(record: &TriggerRecord, finding: &AdWidgetFinding, model: &AppModel) -> bool {
    if record.window_id != finding.window_id {
        return false;
    }
    if record.widget_id == finding.widget_id {
        return true;
    }
    let window = model.window(&finding.window_id);
    let direct_child = window
        .map(|w| w.layout.children_of(&finding.widget_id))
        .is_some_and(|children| children.contains(&record.widget_id));
    if direct_child {
        return true;
    }
    model
        .widget(&finding.window_id, &finding.widget_id)
        .is_some_and(|w| w.bounds.contains(&record.bounds) && record.bounds.is_nonempty())
}

/// Timestamp (logical seconds) at which each finding was first matched,
/// in finding order; unmatched findings yield `None`.
pub fn first_match_times(
    log: &TriggerLog,
    findings: &[AdWidgetFinding],
    model: &AppModel,
) -> Vec<Option<u64>> {
    findings
        .iter()
        .map(|finding| {
            log.records
                .iter()
                .filter(|record| match_detected(record, finding, model))
                .map(|record| record.t)
                .min()
        })
        .collect()
}

/// Fraction of findings with at least one matching trigger record.
pub fn detection_rate(
    log: &TriggerLog,
    findings: &[AdWidgetFinding],
    model: &AppModel,
) -> Result<f64, MetricsError> {
    if findings.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let matched = first_match_times(log, findings, model)
        .iter()
        .filter(|t| t.is_some())
        .count();
    Ok(matched as f64 / findings.len() as f64)
}

/// Per-widget detection latency: the time from session start until the
/// last finding was first matched, averaged over the matched findings.
/// Undefined (None) when nothing matched.
pub fn pwdl(log: &TriggerLog, findings: &[AdWidgetFinding], model: &AppModel) -> Option<f64> {
    let times: Vec<u64> = first_match_times(log, findings, model)
        .into_iter()
        .flatten()
        .collect();
    let last = *times.iter().max()?;
    Some((last - log.t_start) as f64 / times.len() as f64)
}

/// Session-level score row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionScore {
    pub detection_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pwdl: Option<f64>,
    pub matched: usize,
    pub total: usize,
}

/// Scores one log against the findings.
pub fn score_session(
    log: &TriggerLog,
    findings: &[AdWidgetFinding],
    model: &AppModel,
) -> Result<SessionScore, MetricsError> {
    let rate = detection_rate(log, findings, model)?;
    let matched = first_match_times(log, findings, model)
        .iter()
        .filter(|t| t.is_some())
        .count();
    Ok(SessionScore {
        detection_rate: rate,
        pwdl: pwdl(log, findings, model),
        matched,
        total: findings.len(),
    })
}

/// Arithmetic mean; None for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
