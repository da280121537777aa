//! Regulation-rule checking.
//!
//! Six rules over a finished session, grouped by what they inspect:
//!
//! - *placement* (static geometry): oversized ads covering more than 3/10
//!   of the screen, and ads overlapping clickable content;
//! - *interaction* (session trace): disruptive interstitials shown at app
//!   launch or on an exit attempt, and unskippable overlays surviving two
//!   consecutive close attempts;
//! - *content* (triggered creatives): malvertising landing URLs flagged by
//!   enough scan engines, and clickbait ad text.
//!
//! Checks are order-independent and deduplicated: re-running a session or
//! re-triggering the same ad never yields duplicate violations. A missing
//! scanner (or an unavailable clickbait judge) skips the affected check
//! with a notice instead of failing the report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explorer::{ExplorationTrace, StepRecord};
use crate::model::{AppModel, WidgetId, WindowId};
use crate::policy::{Action, DecisionPolicy};
use crate::sim::AD_CLOSE_ID;
use crate::static_ads::{AdCategory, AdWidgetFinding};

/// Strict screen-coverage bound for the oversized rule: flagged iff
/// `area / screen_area > OVERSIZED_RATIO_NUM / OVERSIZED_RATIO_DEN`,
/// evaluated in integers so 3/10 exactly is *not* a violation.
pub const OVERSIZED_RATIO_NUM: i64 = 3;
pub const OVERSIZED_RATIO_DEN: i64 = 10;

/// Minimum flagging engines for a landing URL to count as malvertising.
pub const MALVERTISING_ENGINE_THRESHOLD: u32 = 3;

// ---- report shapes ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleId {
    Oversized,
    Overlapped,
    Disruptive,
    Unskippable,
    Malvertising,
    Clickbait,
}

impl std::fmt::Display for RuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RuleId::Oversized => "oversized",
            RuleId::Overlapped => "overlapped",
            RuleId::Disruptive => "disruptive",
            RuleId::Unskippable => "unskippable",
            RuleId::Malvertising => "malvertising",
            RuleId::Clickbait => "clickbait",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub rule: RuleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_id: Option<WindowId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widget_id: Option<WidgetId>,
    /// Human-readable, stable description; the (rule, window, widget,
    /// evidence) tuple is the dedup key.
    pub evidence: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegulationReport {
    pub placement: Vec<Violation>,
    pub interaction: Vec<Violation>,
    pub content: Vec<Violation>,
    /// Notices for checks that could not run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

impl RegulationReport {
    pub fn all(&self) -> impl Iterator<Item = &Violation> {
        self.placement.iter().chain(self.interaction.iter()).chain(self.content.iter())
    }

    pub fn total(&self) -> usize {
        self.placement.len() + self.interaction.len() + self.content.len()
    }

    pub fn by_rule(&self, rule: RuleId) -> Vec<&Violation> {
        self.all().filter(|v| v.rule == rule).collect()
    }
}

// ---- scanners --------------------------------------------------------------

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("scanner failed for {url}: {message}")]
    Failed { url: String, message: String },
    #[error("cannot read scanner data: {0}")]
    Io(#[from] std::io::Error),
    #[error("scanner data is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// URL reputation source: returns how many engines flag the URL.
pub trait Scanner: Sync + Send {
    fn scan(&self, url: &str) -> Result<u32, ScanError>;
}

/// Offline scanner backed by a URL -> engine-count table; unknown URLs are
/// clean.
#[derive(Debug, Clone, Default)]
pub struct StubScanner {
    table: BTreeMap<String, u32>,
}

impl StubScanner {
    pub fn from_table(table: BTreeMap<String, u32>) -> Self {
        StubScanner { table }
    }

    /// Loads a JSON object mapping URLs to flagging-engine counts.
    pub fn load(path: &Path) -> Result<Self, ScanError> {
        let bytes = std::fs::read(path)?;
        let table: BTreeMap<String, u32> = serde_json::from_slice(&bytes)?;
        Ok(StubScanner { table })
    }
}

impl Scanner for StubScanner {
    fn scan(&self, url: &str) -> Result<u32, ScanError> {
        Ok(self.table.get(url).copied().unwrap_or(0))
    }
}

// ---- errors ----------------------------------------------------------------

#[derive(Debug, Error)]
pub enum RegulationError {
    #[error("screen area is zero; placement ratios are undefined")]
    ZeroScreenArea,
    #[error(transparent)]
    Scan(#[from] ScanError),
}

pub struct RegulationConfig<'a> {
    /// URL scanner; absent skips the malvertising check.
    pub scanner: Option<&'a dyn Scanner>,
    /// Judge for the clickbait check.
    pub policy: &'a dyn DecisionPolicy,
}

// ---- placement rules -------------------------------------------------------

/// Rule scope: inline-rendered ads. Popup findings are full-screen by
/// nature, so geometry rules apply to adview and native widgets.
fn is_inline(category: AdCategory) -> bool {
    matches!(category, AdCategory::Adview | AdCategory::Native)
}

/// Oversized: an inline ad strictly exceeding 3/10 of the screen.
pub fn check_oversized(
    model: &AppModel,
    findings: &[AdWidgetFinding],
) -> Result<Vec<Violation>, RegulationError> {
    let screen_area = model.screen.area();
    if screen_area <= 0 {
        return Err(RegulationError::ZeroScreenArea);
    }
    let mut out = Vec::new();
    for finding in findings.iter().filter(|f| is_inline(f.category)) {
        let Some(widget) = model.widget(&finding.window_id, &finding.widget_id) else {
            continue;
        };
        let area = widget.bounds.area();
        if area * OVERSIZED_RATIO_DEN > screen_area * OVERSIZED_RATIO_NUM {
            out.push(Violation {
                rule: RuleId::Oversized,
                window_id: Some(finding.window_id.clone()),
                widget_id: Some(finding.widget_id.clone()),
                evidence: format!(
                    "ad area {area} of screen {screen_area} exceeds \
                     {OVERSIZED_RATIO_NUM}/{OVERSIZED_RATIO_DEN}"
                ),
            });
        }
    }
    Ok(out)
}

/// Transitive descendants of a widget within its layout.
fn descendants(model: &AppModel, window: &WindowId, root: &WidgetId) -> Vec<WidgetId> {
    let Some(win) = model.window(window) else { return Vec::new() };
    let mut out = Vec::new();
    let mut stack = vec![root.clone()];
    while let Some(id) = stack.pop() {
        for child in win.layout.children_of(&id) {
            out.push(child.clone());
            stack.push(child.clone());
        }
    }
    out
}

/// Overlapped: an inline ad sharing positive screen area with a clickable
/// widget outside the ad's own subtree.
pub fn check_overlapped(model: &AppModel, findings: &[AdWidgetFinding]) -> Vec<Violation> {
    let mut out = Vec::new();
    for finding in findings.iter().filter(|f| is_inline(f.category)) {
        let Some(window) = model.window(&finding.window_id) else { continue };
        let Some(ad) = window.layout.widget(&finding.widget_id) else { continue };
        let subtree: Vec<WidgetId> = descendants(model, &finding.window_id, &finding.widget_id);
        for other in &window.layout.widgets {
            if other.widget_id == finding.widget_id
                || subtree.contains(&other.widget_id)
                || !other.clickable
            {
                continue;
            }
            if ad.bounds.intersection(&other.bounds).is_some() {
                out.push(Violation {
                    rule: RuleId::Overlapped,
                    window_id: Some(finding.window_id.clone()),
                    widget_id: Some(finding.widget_id.clone()),
                    evidence: format!("ad overlaps clickable widget {}", other.widget_id),
                });
            }
        }
    }
    out
}

// ---- interaction rules -----------------------------------------------------

fn is_close_attempt(step: &StepRecord) -> bool {
    step.overlay_before.is_some()
        && match &step.action {
            Action::Back => true,
            Action::Click { widget_id } => widget_id.as_str() == AD_CLOSE_ID,
            _ => false,
        }
}

/// Disruptive: an interstitial at app launch, or one raised by an exit
/// attempt (back at the app root, or an explicit exit).
pub fn check_disruptive(trace: &ExplorationTrace) -> Vec<Violation> {
    let mut out = Vec::new();
    if let Some(source) = &trace.overlay_at_launch {
        out.push(Violation {
            rule: RuleId::Disruptive,
            window_id: Some(source.window_id.clone()),
            widget_id: Some(source.widget_id.clone()),
            evidence: "interstitial shown at app launch".to_owned(),
        });
    }
    for step in &trace.steps {
        let exit_attempt = step.at_entry_root_before
            && matches!(step.action, Action::Back | Action::Exit)
            && step.overlay_before.is_none();
        if exit_attempt {
            if let Some(source) = &step.overlay_after {
                out.push(Violation {
                    rule: RuleId::Disruptive,
                    window_id: Some(source.window_id.clone()),
                    widget_id: Some(source.widget_id.clone()),
                    evidence: "interstitial shown on exit attempt".to_owned(),
                });
            }
        }
    }
    out
}

/// Unskippable: one overlay surviving two consecutive close attempts.
pub fn check_unskippable(trace: &ExplorationTrace) -> Vec<Violation> {
    let mut out = Vec::new();
    for pair in trace.steps.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if !is_close_attempt(a) || !is_close_attempt(b) {
            continue;
        }
        let survived_both = a.overlay_before == a.overlay_after
            && a.overlay_after == b.overlay_before
            && b.overlay_before == b.overlay_after;
        if survived_both {
            if let Some(source) = &a.overlay_before {
                out.push(Violation {
                    rule: RuleId::Unskippable,
                    window_id: Some(source.window_id.clone()),
                    widget_id: Some(source.widget_id.clone()),
                    evidence: "overlay survived two consecutive close attempts".to_owned(),
                });
            }
        }
    }
    out
}

// ---- content rules ---------------------------------------------------------

/// Malvertising: a triggered landing URL flagged by at least
/// [`MALVERTISING_ENGINE_THRESHOLD`] engines.
pub fn check_malvertising(
    trace: &ExplorationTrace,
    scanner: &dyn Scanner,
) -> Result<Vec<Violation>, RegulationError> {
    let mut out = Vec::new();
    for record in &trace.log.records {
        let Some(url) = &record.content.landing_url else { continue };
        let engines = scanner.scan(url)?;
        if engines >= MALVERTISING_ENGINE_THRESHOLD {
            out.push(Violation {
                rule: RuleId::Malvertising,
                window_id: Some(record.window_id.clone()),
                widget_id: Some(record.widget_id.clone()),
                evidence: format!("landing URL {url} flagged by {engines} engines"),
            });
        }
    }
    Ok(out)
}

/// Clickbait: triggered ad text the policy judges as clickbait. Returns
/// the violations plus a skip notice if the judge became unavailable.
pub fn check_clickbait(
    trace: &ExplorationTrace,
    policy: &dyn DecisionPolicy,
) -> (Vec<Violation>, Option<String>) {
    let mut out = Vec::new();
    for record in &trace.log.records {
        let Some(text) = &record.content.text else { continue };
        match policy.is_clickbait(text) {
            Ok(true) => out.push(Violation {
                rule: RuleId::Clickbait,
                window_id: Some(record.window_id.clone()),
                widget_id: Some(record.widget_id.clone()),
                evidence: format!("ad text {text:?} judged clickbait"),
            }),
            Ok(false) => {}
            Err(err) => {
                return (out, Some(format!("clickbait check skipped: {err}")));
            }
        }
    }
    (out, None)
}

// ---- driver ----------------------------------------------------------------

fn dedup(mut violations: Vec<Violation>) -> Vec<Violation> {
    violations.sort();
    violations.dedup();
    violations
}

/// Runs every rule over the session and groups the deduplicated
/// violations into the report.
pub fn run_all(
    trace: &ExplorationTrace,
    model: &AppModel,
    findings: &[AdWidgetFinding],
    cfg: &RegulationConfig<'_>,
) -> Result<RegulationReport, RegulationError> {
    let mut skipped = Vec::new();

    let mut placement = check_oversized(model, findings)?;
    placement.extend(check_overlapped(model, findings));

    let mut interaction = check_disruptive(trace);
    interaction.extend(check_unskippable(trace));

    let mut content = Vec::new();
    match cfg.scanner {
        Some(scanner) => content.extend(check_malvertising(trace, scanner)?),
        None => skipped.push("malvertising check skipped: no scanner configured".to_owned()),
    }
    let (clickbait, notice) = check_clickbait(trace, cfg.policy);
    content.extend(clickbait);
    skipped.extend(notice);

    Ok(RegulationReport {
        placement: dedup(placement),
        interaction: dedup(interaction),
        content: dedup(content),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explorer::{StepPhase, TerminationReason, TRACE_SCHEMA};
    use crate::geometry::Rect;
    use crate::model::parse_app_model;
    use crate::policy::MockPolicy;
    use crate::sim::{AdContent, TriggerLog, TriggerRecord, WidgetRef};
    use crate::static_ads::AdEvidence;

    fn finding(window: &str, widget: &str, category: AdCategory) -> AdWidgetFinding {
        AdWidgetFinding {
            window_id: WindowId::new(window),
            layout_id: crate::model::LayoutId::new("l"),
            widget_id: WidgetId::new(widget),
            category,
            evidence: AdEvidence::ViewClass {
                library: "AdMob".to_owned(),
                view_class: "com.google.android.gms.ads.AdView".to_owned(),
            },
        }
    }

    /// 1080x1920 screen (area 2073600); `big` is exactly 30% (1080x576),
    /// `bigger` is just over, and `button` overlaps `bigger`.
    fn placement_model() -> AppModel {
        let json = r#"{
          "schema": "adwise-model/1",
          "entry_window": "w",
          "metadata": {"app_name": "P", "category": "Tools", "description": "x."},
          "screen": {"width": 1080, "height": 1920},
          "windows": [
            {"window_id": "w", "kind": "activity", "layout": {"layout_id": "l",
              "root": {"widget_id": "root", "view_class": "android.widget.FrameLayout",
                "bounds": {"left": 0, "top": 0, "right": 1080, "bottom": 1920},
                "children": [
                  {"widget_id": "big", "view_class": "com.google.android.gms.ads.AdView",
                   "clickable": false,
                   "bounds": {"left": 0, "top": 0, "right": 1080, "bottom": 576}},
                  {"widget_id": "bigger", "view_class": "com.google.android.gms.ads.AdView",
                   "clickable": false,
                   "bounds": {"left": 0, "top": 600, "right": 1080, "bottom": 1177}},
                  {"widget_id": "button", "view_class": "android.widget.Button",
                   "clickable": true,
                   "bounds": {"left": 0, "top": 1100, "right": 300, "bottom": 1250}},
                  {"widget_id": "clear", "view_class": "android.widget.Button",
                   "clickable": true,
                   "bounds": {"left": 0, "top": 1300, "right": 300, "bottom": 1450}}
                ]}}}
          ],
          "code_facts": {
            "window_decls": [
              {"window_id": "w", "kind": "activity", "declaring_api": "setContentView"}
            ]
          }
        }"#;
        parse_app_model(json.as_bytes()).unwrap()
    }

    fn empty_trace() -> ExplorationTrace {
        ExplorationTrace {
            schema: TRACE_SCHEMA.to_owned(),
            app_name: "P".to_owned(),
            policy: "mock".to_owned(),
            seed: 0,
            max_step: 40,
            overlay_at_launch: None,
            semantic_guidance: String::new(),
            steps: Vec::new(),
            explore_steps: 0,
            termination: TerminationReason::AllTriggered,
            log: TriggerLog::default(),
            remaining_findings: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn overlay_ref() -> WidgetRef {
        WidgetRef { window_id: WindowId::new("w"), widget_id: WidgetId::new("b1") }
    }

    fn step(
        action: Action,
        at_root: bool,
        before: Option<WidgetRef>,
        after: Option<WidgetRef>,
    ) -> StepRecord {
        StepRecord {
            phase: StepPhase::Trigger,
            t: 1,
            action,
            window_before: WindowId::new("w"),
            window_after: WindowId::new("w"),
            at_entry_root_before: at_root,
            overlay_before: before,
            overlay_after: after,
            candidate_count: 0,
            decision_rationale: None,
            state_changed: false,
            marked_failed: false,
            triggered: Vec::new(),
        }
    }

    fn record_with(text: Option<&str>, url: Option<&str>) -> TriggerRecord {
        TriggerRecord {
            t: 1,
            window_id: WindowId::new("w"),
            widget_id: WidgetId::new("b1"),
            bounds: Rect::new(0, 0, 100, 100),
            category: AdCategory::Popup,
            content: AdContent {
                library: Some("AdMob".to_owned()),
                text: text.map(str::to_owned),
                landing_url: url.map(str::to_owned),
                skippable: false,
            },
        }
    }

    #[test]
    fn oversized_is_strictly_above_three_tenths() {
        let model = placement_model();
        let findings = vec![
            finding("w", "big", AdCategory::Adview),
            finding("w", "bigger", AdCategory::Adview),
        ];
        let violations = check_oversized(&model, &findings).unwrap();
        assert_eq!(violations.len(), 1, "only the >30% ad is flagged");
        assert_eq!(violations[0].widget_id, Some(WidgetId::new("bigger")));
    }

    #[test]
    fn popup_findings_are_exempt_from_placement_geometry() {
        let model = placement_model();
        let findings = vec![finding("w", "bigger", AdCategory::Popup)];
        assert!(check_oversized(&model, &findings).unwrap().is_empty());
        assert!(check_overlapped(&model, &findings).is_empty());
    }

    #[test]
    fn overlap_needs_positive_area() {
        let model = placement_model();
        // `bigger` (ends y=1177) overlaps `button` (starts y=1100) but only
        // touches nothing else; `big` (ends y=576) overlaps nothing.
        let findings = vec![
            finding("w", "big", AdCategory::Adview),
            finding("w", "bigger", AdCategory::Adview),
        ];
        let violations = check_overlapped(&model, &findings);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].widget_id, Some(WidgetId::new("bigger")));
        assert!(violations[0].evidence.contains("button"));
    }

    #[test]
    fn disruptive_flags_launch_and_exit_interstitials() {
        let mut trace = empty_trace();
        trace.overlay_at_launch = Some(overlay_ref());
        trace.steps.push(step(Action::Back, true, None, Some(overlay_ref())));
        let violations = check_disruptive(&trace);
        assert_eq!(violations.len(), 2);
        assert!(violations.iter().any(|v| v.evidence.contains("launch")));
        assert!(violations.iter().any(|v| v.evidence.contains("exit")));
    }

    #[test]
    fn back_mid_session_is_not_disruptive() {
        let mut trace = empty_trace();
        trace.steps.push(step(Action::Back, false, None, Some(overlay_ref())));
        assert!(check_disruptive(&trace).is_empty());
    }

    #[test]
    fn unskippable_needs_two_consecutive_surviving_attempts() {
        let src = overlay_ref;
        // Survives one attempt, closes on the second: not a violation.
        let mut mild = empty_trace();
        mild.steps.push(step(Action::Back, false, Some(src()), Some(src())));
        mild.steps.push(step(Action::Back, false, Some(src()), None));
        assert!(check_unskippable(&mild).is_empty());

        // Survives two consecutive attempts: violation.
        let mut harsh = empty_trace();
        harsh.steps.push(step(Action::Back, false, Some(src()), Some(src())));
        harsh.steps.push(step(Action::Back, false, Some(src()), Some(src())));
        harsh.steps.push(step(Action::Back, false, Some(src()), None));
        let violations = check_unskippable(&harsh);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].rule, RuleId::Unskippable);
    }

    #[test]
    fn malvertising_respects_engine_threshold() {
        let scanner = StubScanner::from_table(
            [
                ("https://bad.example/a".to_owned(), 3),
                ("https://meh.example/b".to_owned(), 2),
            ]
            .into(),
        );
        let mut trace = empty_trace();
        trace.log.records.push(record_with(None, Some("https://bad.example/a")));
        trace.log.records.push(record_with(None, Some("https://meh.example/b")));
        trace.log.records.push(record_with(None, Some("https://unknown.example/c")));
        let violations = check_malvertising(&trace, &scanner).unwrap();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].evidence.contains("bad.example"));
    }

    #[test]
    fn clickbait_uses_the_policy_judge() {
        let mut trace = empty_trace();
        trace.log.records.push(record_with(Some("You WON a free phone"), None));
        trace.log.records.push(record_with(Some("Spring sale, 20% off"), None));
        let (violations, notice) = check_clickbait(&trace, &MockPolicy::default());
        assert!(notice.is_none());
        assert_eq!(violations.len(), 1);
        assert!(violations[0].evidence.contains("You WON"));
    }

    #[test]
    fn run_all_dedups_and_groups() {
        let model = placement_model();
        let findings = vec![
            finding("w", "bigger", AdCategory::Adview),
            finding("w", "bigger", AdCategory::Adview), // duplicate input
        ];
        let mut trace = empty_trace();
        // The same URL triggered twice must yield one violation.
        trace.log.records.push(record_with(None, Some("https://bad.example/a")));
        trace.log.records.push(record_with(None, Some("https://bad.example/a")));
        let scanner = StubScanner::from_table([("https://bad.example/a".to_owned(), 5)].into());
        let cfg = RegulationConfig { scanner: Some(&scanner), policy: &MockPolicy::default() };
        let report = run_all(&trace, &model, &findings, &cfg).unwrap();
        assert_eq!(report.by_rule(RuleId::Oversized).len(), 1);
        assert_eq!(report.by_rule(RuleId::Overlapped).len(), 1);
        assert_eq!(report.by_rule(RuleId::Malvertising).len(), 1);
        assert!(report.skipped.is_empty());
    }

    #[test]
    fn missing_scanner_skips_with_notice() {
        let model = placement_model();
        let trace = empty_trace();
        let cfg = RegulationConfig { scanner: None, policy: &MockPolicy::default() };
        let report = run_all(&trace, &model, &[], &cfg).unwrap();
        assert_eq!(report.total(), 0);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].contains("no scanner"));
    }
}
