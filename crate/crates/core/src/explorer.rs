//! Guided exploration sessions.
//!
//! [`explore`] drives a simulated session toward the windows that still
//! hold untriggered ad findings. Each iteration has two phases:
//!
//! - the *trigger phase* absorbs whatever the current window offers
//!   without spending budget: it closes overlays (bounded attempts) and
//!   clicks popup/native findings whose widgets are present in the live
//!   layout;
//! - the *explore phase* spends one budgeted step: it verifies the UI
//!   state into clickable candidates, assembles the guidance prompt
//!   (semantic summary computed once per session, WTG distances and
//!   structural retrieval recomputed per step), asks the policy for a
//!   decision, performs the action, and reflects on the outcome.
//!
//! Actions whose reflection marks them as failed enter a bounded history
//! and are withheld from later candidate lists while they remain in the
//! window, so no failed action is ever repeated. Failed clicks are also
//! recorded for the whole session and their transitions pruned from the
//! WTG before computing route guidance, so planning steers around
//! transitions the session has learned are broken instead of retrying the
//! same dead end.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{
    assemble_bundle, render_records, render_structural_guidance, retrieve_top_k_in,
    summarize_functionality, EmbedError, Embedder, KbError, KnowledgeBase, UiRecord,
    DEFAULT_TOP_K,
};
use crate::model::{AppModel, Screen, WidgetId, WindowId};
use crate::policy::{
    assemble_action_prompt, assemble_reflection_prompt, Action, ActionHistory, DecisionPolicy,
    DecisionRequest, GuidanceMeta, PolicyError, ReflectionOutcome, ReflectionRequest,
    HISTORY_CAPACITY,
};
use crate::sim::{
    SimConfig, SimError, Simulator, TriggerLog, TriggerRecord, UiState, WidgetRef, AD_CLOSE_ID,
};
use crate::static_ads::{AdCategory, AdWidgetFinding};
use crate::wtg::{render_wtg_guidance, shortest_distances, Trigger, Wtg};

/// Schema tag of serialized traces.
pub const TRACE_SCHEMA: &str = "adwise-trace/1";
/// Default exploration budget (explore-phase steps).
pub const DEFAULT_MAX_STEP: usize = 40;

// ---- options and trace -----------------------------------------------------

#[derive(Debug, Clone)]
pub struct ExploreOptions {
    /// Explore-phase step budget.
    pub max_step: usize,
    /// Similar UIs retrieved per step.
    pub top_k: usize,
    pub sim: SimConfig,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions { max_step: DEFAULT_MAX_STEP, top_k: DEFAULT_TOP_K, sim: SimConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    /// Every finding has a matching trigger record.
    AllTriggered,
    /// The step budget ran out with findings left.
    BudgetExhausted,
    /// The policy declined at the app root with nothing left to try.
    NoCandidates,
    /// The policy failed unrecoverably.
    PolicyError,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TerminationReason::AllTriggered => "all-triggered",
            TerminationReason::BudgetExhausted => "budget-exhausted",
            TerminationReason::NoCandidates => "no-candidates",
            TerminationReason::PolicyError => "policy-error",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepPhase {
    /// Uncounted absorption of present ads (overlay closing, finding clicks).
    Trigger,
    /// Budgeted policy-driven step.
    Explore,
}

/// One performed action, either phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: StepPhase,
    /// Logical time after the action.
    pub t: u64,
    pub action: Action,
    pub window_before: WindowId,
    pub window_after: WindowId,
    /// Whether the session was at the entry window with an empty back
    /// stack before the action (back there means leaving the app).
    pub at_entry_root_before: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay_before: Option<WidgetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay_after: Option<WidgetRef>,
    /// Candidates offered to the policy (explore steps; 0 in trigger phase).
    pub candidate_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_rationale: Option<String>,
    pub state_changed: bool,
    /// Whether reflection marked the action as one to avoid.
    pub marked_failed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triggered: Vec<TriggerRecord>,
}

/// Full record of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationTrace {
    pub schema: String,
    pub app_name: String,
    pub policy: String,
    pub seed: u64,
    pub max_step: usize,
    /// Source of the overlay already present when the session loaded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay_at_launch: Option<WidgetRef>,
    pub semantic_guidance: String,
    pub steps: Vec<StepRecord>,
    /// Budgeted steps actually spent (== explore-phase records).
    pub explore_steps: usize,
    pub termination: TerminationReason,
    pub log: TriggerLog,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub remaining_findings: Vec<AdWidgetFinding>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("trace is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported trace schema {found:?}")]
    SchemaVersion { found: String },
}

pub fn serialize_trace(trace: &ExplorationTrace) -> String {
    let mut text = serde_json::to_string_pretty(trace).expect("traces always serialize");
    text.push('\n');
    text
}

pub fn parse_trace(bytes: &[u8]) -> Result<ExplorationTrace, ExploreError> {
    let trace: ExplorationTrace = serde_json::from_slice(bytes)?;
    if trace.schema != TRACE_SCHEMA {
        return Err(ExploreError::SchemaVersion { found: trace.schema });
    }
    Ok(trace)
}

// ---- state verification ----------------------------------------------------

/// Filters the live state down to actionable candidates: a widget
/// qualifies iff it is visible, clickable, intersects the screen with
/// positive area, and is not fully covered by a single widget drawn above
/// it. With an overlay up, the only candidate is its close control (once
/// visible).
pub fn verify_ui_state(state: &UiState, screen: &Screen) -> Vec<UiRecord> {
    if let Some(overlay) = &state.overlay {
        if overlay.close_visible {
            return vec![UiRecord {
                resource_id: WidgetId::new(AD_CLOSE_ID),
                text: Some("X".to_owned()),
                content_description: Some("close ad".to_owned()),
                clickable: true,
            }];
        }
        return Vec::new();
    }
    let screen_rect = crate::geometry::Rect::new(0, 0, screen.width, screen.height);
    state
        .widgets
        .iter()
        .filter(|w| w.visible && w.clickable)
        .filter(|w| w.bounds.intersection(&screen_rect).is_some())
        .filter(|w| {
            !state.widgets.iter().any(|above| {
                above.visible
                    && above.z_index > w.z_index
                    && above.widget_id != w.widget_id
                    && above.bounds.contains(&w.bounds)
            })
        })
        .map(|w| UiRecord {
            resource_id: w.widget_id.clone(),
            text: w.text.clone(),
            content_description: w.content_description.clone(),
            clickable: w.clickable,
        })
        .collect()
}

/// Copy of the WTG without edges whose click trigger already failed in
/// their source window this session.
fn prune_broken_edges(wtg: &Wtg, broken: &BTreeSet<(WindowId, WidgetId)>) -> Wtg {
    if broken.is_empty() {
        return wtg.clone();
    }
    let mut pruned = wtg.clone();
    pruned.edges.retain(|edge| {
        let clicked = match wtg.trigger_map.get(&edge.edge_id) {
            Some(Trigger::Widget { widget_id, .. }) => widget_id,
            _ => return true,
        };
        !broken.iter().any(|(window, widget)| window == &edge.source && widget == clicked)
    });
    pruned
}

// ---- session loop ----------------------------------------------------------

struct SessionCtx<'a> {
    findings: &'a [AdWidgetFinding],
    steps: Vec<StepRecord>,
    warnings: Vec<String>,
    warned_hidden: BTreeSet<(WindowId, WidgetId)>,
}

impl<'a> SessionCtx<'a> {
    fn triggered_keys(&self, sim: &Simulator<'_>) -> BTreeSet<(WindowId, WidgetId)> {
        sim.triggered_log()
            .records
            .iter()
            .map(|r| (r.window_id.clone(), r.widget_id.clone()))
            .collect()
    }

    fn remaining(&self, sim: &Simulator<'_>) -> Vec<&'a AdWidgetFinding> {
        let triggered = self.triggered_keys(sim);
        self.findings
            .iter()
            .filter(|f| !triggered.contains(&(f.window_id.clone(), f.widget_id.clone())))
            .collect()
    }

    /// Performs one action and appends its step record.
    fn perform(
        &mut self,
        sim: &mut Simulator<'_>,
        phase: StepPhase,
        action: Action,
        candidate_count: usize,
        rationale: Option<String>,
        reflection: Option<&ReflectionOutcome>,
    ) -> Result<bool, SimError> {
        let at_root = sim.at_entry_root();
        let step = sim.perform(&action)?;
        let state_changed = match reflection {
            Some(outcome) => outcome.state_changed,
            None => step.prev_state != step.new_state,
        };
        let marked_failed = reflection.is_some_and(|o| o.avoid_action);
        self.steps.push(StepRecord {
            phase,
            t: step.t,
            action,
            window_before: step.prev_state.window_id.clone(),
            window_after: step.new_state.window_id.clone(),
            at_entry_root_before: at_root,
            overlay_before: step.prev_state.overlay.as_ref().map(|o| o.source.clone()),
            overlay_after: step.new_state.overlay.as_ref().map(|o| o.source.clone()),
            candidate_count,
            decision_rationale: rationale,
            state_changed,
            marked_failed,
            triggered: step.triggered,
        });
        Ok(state_changed)
    }
}

/// Runs one session and returns its trace.
pub fn explore(
    model: &AppModel,
    findings: &[AdWidgetFinding],
    wtg: &Wtg,
    kb: &KnowledgeBase,
    embedder: &dyn Embedder,
    policy: &dyn DecisionPolicy,
    opts: &ExploreOptions,
) -> Result<ExplorationTrace, ExploreError> {
    let mut sim = Simulator::load_session(model, findings, opts.sim.clone())?;
    let overlay_at_launch = sim.ui_state().overlay.as_ref().map(|o| o.source.clone());
    let semantic = summarize_functionality(&model.metadata, policy);
    let screen = model.screen;

    let mut ctx = SessionCtx {
        findings,
        steps: Vec::new(),
        warnings: Vec::new(),
        warned_hidden: BTreeSet::new(),
    };
    let mut history = ActionHistory::new(HISTORY_CAPACITY);
    let mut visited: BTreeSet<WindowId> = BTreeSet::new();
    visited.insert(sim.current_window().clone());
    // Clicks that failed, keyed by the window they were tried in. Unlike
    // the bounded history the policy sees, this record never evicts; it
    // feeds WTG pruning so route planning stops relying on dead edges.
    let mut broken: BTreeSet<(WindowId, WidgetId)> = BTreeSet::new();
    let mut explore_steps = 0usize;

    let termination = loop {
        absorb_present_ads(&mut ctx, &mut sim)?;
        if ctx.remaining(&sim).is_empty() {
            break TerminationReason::AllTriggered;
        }
        if explore_steps >= opts.max_step {
            break TerminationReason::BudgetExhausted;
        }

        // ---- explore phase: one budgeted decision ----
        let state = sim.ui_state();
        let current = state.window_id.clone();
        let ui_text = render_records(&state.records());
        let candidates: Vec<UiRecord> = verify_ui_state(&state, &screen)
            .into_iter()
            .filter(|r| {
                !history.contains_failed(&Action::Click { widget_id: r.resource_id.clone() })
            })
            .collect();

        let remaining = ctx.remaining(&sim);
        let remaining_windows: BTreeSet<WindowId> =
            remaining.iter().map(|f| f.window_id.clone()).collect();
        let remaining_categories: BTreeSet<AdCategory> =
            remaining.iter().map(|f| f.category).collect();
        let planning_wtg = prune_broken_edges(wtg, &broken);
        let (wtg_text, wtg_first_step) =
            match shortest_distances(&planning_wtg, &current, &remaining_windows) {
                Ok(paths) => {
                    let nearest = paths
                        .values()
                        .min_by(|a, b| (a.distance, &a.target).cmp(&(b.distance, &b.target)));
                    let step = nearest.and_then(|p| match &p.first_step {
                        Some(Trigger::Widget { widget_id, .. }) => Some(widget_id.clone()),
                        _ => None,
                    });
                    (render_wtg_guidance(model, &current, &paths, &visited), step)
                }
                Err(err) => {
                    ctx.warnings.push(format!("wtg guidance unavailable: {err}"));
                    (crate::wtg::NO_REACHABLE_AD_WINDOWS.to_owned(), None)
                }
            };
        // Structural retrieval only considers ad categories still
        // untriggered; stale guidance toward absorbed ads would otherwise
        // keep steering the session back to visited windows.
        let query = embedder.embed(&ui_text)?;
        let retrieved = retrieve_top_k_in(kb, &query, opts.top_k, &remaining_categories)?;
        let structural_notes: Vec<String> =
            retrieved.iter().map(|r| r.entry.note.clone()).collect();
        let structural_text = render_structural_guidance(&retrieved);

        let bundle = assemble_bundle(wtg_text, semantic.clone(), structural_text);
        let prompt = assemble_action_prompt(&bundle, &candidates);
        let guidance = GuidanceMeta {
            structural_notes,
            wtg_first_step,
            current_window: Some(current.clone()),
            remaining_windows,
        };
        let request = DecisionRequest {
            prompt: &prompt,
            candidates: &candidates,
            guidance: &guidance,
            history: &history,
        };
        let decision = match policy.decide(&request) {
            Ok(decision) => decision,
            Err(PolicyError::Unavailable { retryable: true, message }) => {
                ctx.warnings.push(format!("policy unavailable, retrying once: {message}"));
                match policy.decide(&request) {
                    Ok(decision) => decision,
                    Err(err) => {
                        ctx.warnings.push(format!("policy failed: {err}"));
                        break TerminationReason::PolicyError;
                    }
                }
            }
            Err(err) => {
                ctx.warnings.push(format!("policy failed: {err}"));
                break TerminationReason::PolicyError;
            }
        };

        let action = match decision.choice {
            Some(i) if i < candidates.len() => {
                Action::Click { widget_id: candidates[i].resource_id.clone() }
            }
            Some(i) => {
                ctx.warnings.push(format!(
                    "policy chose index {i} of {}; treating as none",
                    candidates.len()
                ));
                if sim.at_entry_root() && state.overlay.is_none() {
                    break TerminationReason::NoCandidates;
                }
                Action::Back
            }
            None => {
                if sim.at_entry_root() && state.overlay.is_none() {
                    break TerminationReason::NoCandidates;
                }
                Action::Back
            }
        };

        explore_steps += 1;

        // Perform, then reflect on the serialized before/after states.
        let at_root = sim.at_entry_root();
        let step = sim.perform(&action)?;
        let new_text = render_records(&step.new_state.records());
        let reflection_prompt =
            assemble_reflection_prompt(&ui_text, &new_text, &action, &history);
        let reflection_request = ReflectionRequest {
            prompt: &reflection_prompt,
            prev_ui: &ui_text,
            curr_ui: &new_text,
            action: &action,
        };
        let outcome = match policy.reflect(&reflection_request) {
            Ok(outcome) => outcome,
            Err(err) => {
                // Fall back to comparing the serialized states directly.
                ctx.warnings.push(format!("reflection failed, using state diff: {err}"));
                let changed = ui_text != new_text;
                ReflectionOutcome {
                    state_changed: changed,
                    change_description: if changed {
                        "the UI state changed".to_owned()
                    } else {
                        "the UI state did not change".to_owned()
                    },
                    failure_reason: (!changed)
                        .then(|| format!("action {action} produced no visible state change")),
                    avoid_action: !changed,
                    alternative_action: None,
                }
            }
        };
        if outcome.avoid_action {
            if let Action::Click { widget_id } = &action {
                broken.insert((step.prev_state.window_id.clone(), widget_id.clone()));
            }
        }
        history.push(action.clone(), !outcome.avoid_action);
        visited.insert(step.new_state.window_id.clone());
        ctx.steps.push(StepRecord {
            phase: StepPhase::Explore,
            t: step.t,
            action,
            window_before: step.prev_state.window_id.clone(),
            window_after: step.new_state.window_id.clone(),
            at_entry_root_before: at_root,
            overlay_before: step.prev_state.overlay.as_ref().map(|o| o.source.clone()),
            overlay_after: step.new_state.overlay.as_ref().map(|o| o.source.clone()),
            candidate_count: candidates.len(),
            decision_rationale: decision.rationale,
            state_changed: outcome.state_changed,
            marked_failed: outcome.avoid_action,
            triggered: step.triggered,
        });
    };

    let remaining_findings: Vec<AdWidgetFinding> =
        ctx.remaining(&sim).into_iter().cloned().collect();
    let mut warnings = ctx.warnings;
    warnings.extend(sim.warnings.iter().cloned());
    Ok(ExplorationTrace {
        schema: TRACE_SCHEMA.to_owned(),
        app_name: model.metadata.app_name.clone(),
        policy: policy.name().to_owned(),
        seed: opts.sim.seed,
        max_step: opts.max_step,
        overlay_at_launch,
        semantic_guidance: semantic,
        steps: ctx.steps,
        explore_steps,
        termination,
        log: sim.triggered_log(),
        remaining_findings,
        warnings,
    })
}

/// Trigger phase: closes any overlay (bounded attempts) and clicks every
/// present popup/native finding of the current window. Hidden findings are
/// retained with a warning. None of this consumes budget.
fn absorb_present_ads(
    ctx: &mut SessionCtx<'_>,
    sim: &mut Simulator<'_>,
) -> Result<(), SimError> {
    loop {
        close_overlay_bounded(ctx, sim)?;

        let current = sim.current_window().clone();
        let state = sim.ui_state();
        if state.overlay.is_some() {
            return Ok(()); // give the explore phase the stuck overlay
        }
        let present: BTreeSet<WidgetId> = state
            .widgets
            .iter()
            .filter(|w| w.visible)
            .map(|w| w.widget_id.clone())
            .collect();
        let triggered = ctx.triggered_keys(sim);
        let mut pending: Vec<AdWidgetFinding> = ctx
            .findings
            .iter()
            .filter(|f| {
                f.window_id == current
                    && f.category != AdCategory::Adview
                    && !triggered.contains(&(f.window_id.clone(), f.widget_id.clone()))
            })
            .cloned()
            .collect();
        pending.sort_by(|a, b| a.widget_id.cmp(&b.widget_id));

        let mut clicked = false;
        for finding in pending {
            if present.contains(&finding.widget_id) {
                ctx.perform(
                    sim,
                    StepPhase::Trigger,
                    Action::Click { widget_id: finding.widget_id.clone() },
                    0,
                    Some(format!("trigger {} finding", finding.category)),
                    None,
                )?;
                clicked = true;
                break; // re-scan: the click may have raised an overlay
            }
            let key = (finding.window_id.clone(), finding.widget_id.clone());
            if ctx.warned_hidden.insert(key) {
                ctx.warnings.push(format!(
                    "finding {}/{} is absent from the live layout; retained",
                    finding.window_id, finding.widget_id
                ));
            }
        }
        if !clicked {
            return Ok(());
        }
    }
}

/// Attempts to close a present overlay, bounded by `ad_close_delay + 2`
/// actions so unskippable configurations cannot wedge the session.
fn close_overlay_bounded(
    ctx: &mut SessionCtx<'_>,
    sim: &mut Simulator<'_>,
) -> Result<(), SimError> {
    let bound = sim.config().ad_close_delay as usize + 2;
    let mut attempts = 0;
    while let Some(overlay) = sim.ui_state().overlay {
        if attempts >= bound {
            ctx.warnings.push(format!(
                "overlay from {}/{} survived {attempts} close attempts",
                overlay.source.window_id, overlay.source.widget_id
            ));
            return Ok(());
        }
        let action = if overlay.close_visible {
            Action::Click { widget_id: WidgetId::new(AD_CLOSE_ID) }
        } else {
            Action::Back
        };
        ctx.perform(sim, StepPhase::Trigger, action, 0, Some("close overlay".to_owned()), None)?;
        attempts += 1;
    }
    Ok(())
}
