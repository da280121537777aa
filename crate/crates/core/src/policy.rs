//! Decision policies.
//!
//! The explorer delegates every judgment call — which widget to interact
//! with, whether an action worked, whether ad text is clickbait, how to
//! summarize the app — to a [`DecisionPolicy`]. Four implementations ship:
//!
//! - [`MockPolicy`] — deterministic scoring over the guidance metadata;
//!   the offline stand-in for an LLM and the subject of the benchmark.
//! - [`RandomPolicy`] — seeded uniform choice; the naive-crawler baseline.
//! - [`OmniscientPolicy`] — knows the runtime-feasible edges; upper bound.
//! - [`RemotePolicy`] — single-turn HTTP completion endpoint speaking the
//!   prompt templates below (temperature 0 for reproducibility).
//!
//! Prompt assembly lives here too, so every policy sees identical text.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{GuidanceBundle, UiRecord};
use crate::model::{AppMetadata, WidgetId, WindowId};
use crate::wtg::{EventKind, Trigger, Wtg};

/// Capacity of the short-term action history ring.
pub const HISTORY_CAPACITY: usize = 10;

// ---- actions ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrollDirection {
    Up,
    Down,
}

/// An executable UI action.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Click { widget_id: WidgetId },
    Back,
    Scroll { direction: ScrollDirection },
    Launch,
    Exit,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Click { widget_id } => write!(f, "click({widget_id})"),
            Action::Back => f.write_str("back"),
            Action::Scroll { direction } => {
                let d = match direction {
                    ScrollDirection::Up => "up",
                    ScrollDirection::Down => "down",
                };
                write!(f, "scroll({d})")
            }
            Action::Launch => f.write_str("launch"),
            Action::Exit => f.write_str("exit"),
        }
    }
}

// ---- decisions and reflection ----------------------------------------------

/// The policy's choice for one step: an index into the presented candidate
/// list, or none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub choice: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// Parsed outcome of the five-question reflection template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionOutcome {
    pub state_changed: bool,
    pub change_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    pub avoid_action: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative_action: Option<String>,
}

/// Bounded ring of recent actions and their outcomes, newest last.
#[derive(Debug, Clone, Default)]
pub struct ActionHistory {
    items: VecDeque<HistoryItem>,
    capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryItem {
    pub action: Action,
    pub succeeded: bool,
}

impl ActionHistory {
    pub fn new(capacity: usize) -> Self {
        ActionHistory { items: VecDeque::new(), capacity }
    }

    pub fn push(&mut self, action: Action, succeeded: bool) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(HistoryItem { action, succeeded });
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HistoryItem> {
        self.items.iter()
    }

    /// True when the action is recorded as failed anywhere in the window.
    pub fn contains_failed(&self, action: &Action) -> bool {
        self.items.iter().any(|item| !item.succeeded && &item.action == action)
    }

    /// Renders the history for prompts: `[]` when empty, else a JSON-style
    /// list oldest-first.
    pub fn render(&self) -> String {
        if self.items.is_empty() {
            return "[]".to_owned();
        }
        let rendered: Vec<String> = self
            .items
            .iter()
            .map(|item| {
                format!(
                    "{{\"action\": \"{}\", \"outcome\": \"{}\"}}",
                    item.action,
                    if item.succeeded { "succeeded" } else { "failed" }
                )
            })
            .collect();
        format!("[{}]", rendered.join(", "))
    }
}

// ---- prompt assembly -------------------------------------------------------

/// Role preamble of the action prompt.
pub const PROMPT_PREAMBLE: &str = "Suppose you are an Android UI testing expert to explore an \
                                   app and trigger its advertising content.";

/// Fixed closing instruction of the action prompt.
pub const PROMPT_CLOSING: &str =
    "Please choose only one UI element with its index such that the element can bring us \
     closer to our test target. If none of the UI elements can do so, respond with index-none.";

/// Renders the current UI's candidate list with `index -i` labels.
pub fn render_candidate_list(candidates: &[UiRecord]) -> String {
    let mut text = format!("Currently, we have {} UI widgets, namely:\n", candidates.len());
    for (i, candidate) in candidates.iter().enumerate() {
        text.push_str(&format!("  index -{i}: {} to click\n", candidate.render()));
    }
    text
}

/// Assembles the full action prompt: preamble, the three guidance sections
/// (semantic, WTG, structural), the indexed candidate list, and the fixed
/// closing instruction.
pub fn assemble_action_prompt(bundle: &GuidanceBundle, candidates: &[UiRecord]) -> String {
    format!(
        "{PROMPT_PREAMBLE}\n\n\
         [Semantic Guidance]\n{semantic}\n\n\
         [WTG-Based Guidance]\n{wtg}\n\n\
         [Structural Guidance]\n{structural}\n\n\
         {candidate_list}\n\
         {PROMPT_CLOSING}\n",
        semantic = bundle.semantic_text.trim_end(),
        wtg = bundle.wtg_text.trim_end(),
        structural = bundle.structural_text.trim_end(),
        candidate_list = render_candidate_list(candidates),
    )
}

/// Assembles the action-reflection prompt from the serialized UI states,
/// the performed action, and the rendered history.
pub fn assemble_reflection_prompt(
    prev_ui: &str,
    curr_ui: &str,
    action: &Action,
    history: &ActionHistory,
) -> String {
    format!(
        "You are a mobile UI testing agent. Your task is to determine whether the previous \
         action successfully navigated to a new UI state.\n\n\
         You have just performed the action {action} on the mobile app UI.\n\n\
         Below is the UI state before the action:\n{prev}\n\n\
         Below is the UI state after the action:\n{curr}\n\n\
         Here is the history of recent actions and their outcomes:\n{history}\n\n\
         Based on the above, answer the following:\n\
         1. Did the UI state change after the action? (Yes/No)\n\
         2. If yes, describe briefly what changed (e.g., new screen, dialog appeared, \
         list scrolled).\n\
         3. If no, hypothesize why the action may have failed (e.g., widget was \
         non-interactable, action was invalid for the current state).\n\
         4. Should this action be avoided in subsequent steps? (Yes/No)\n\
         5. Suggest an alternative action if the previous one failed.\n\n\
         Respond in the following JSON format:\n\
         {{\"state_changed\": true/false, \"change_description\": \"...\", \
         \"failure_reason\": \"...\" or null, \"avoid_action\": true/false, \
         \"alternative_action\": \"...\" or null}}\n",
        prev = prev_ui.trim_end(),
        curr = curr_ui.trim_end(),
        history = history.render(),
    )
}

// ---- errors ----------------------------------------------------------------

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy backend unavailable ({}): {message}", if *.retryable { "retryable" } else { "permanent" })]
    Unavailable { message: String, retryable: bool },
    #[error("unparsable policy response: {raw:?}")]
    Unparsable { raw: String },
    #[error("reflection response is missing required field {field:?}")]
    MissingField { field: &'static str },
    #[error("malformed reflection: {message}")]
    MalformedReflection { message: String },
    #[error("app description is empty; no summary available")]
    EmptyDescription,
}

// ---- response parsing ------------------------------------------------------

/// Parses an `index-k` / `index-none` decision response. Out-of-range
/// indices are clamped to none with a warning in the rationale; text with
/// no index marker at all is an error carrying the raw response.
pub fn parse_decision_response(
    text: &str,
    candidate_count: usize,
) -> Result<Decision, PolicyError> {
    let lowered = text.to_lowercase();
    let Some(pos) = lowered.find("index") else {
        return Err(PolicyError::Unparsable { raw: text.to_owned() });
    };
    let rest: &str = lowered[pos + "index".len()..].trim_start_matches([' ', '-', ':']);
    if rest.starts_with("none") {
        return Ok(Decision { choice: None, rationale: None });
    }
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return Err(PolicyError::Unparsable { raw: text.to_owned() });
    }
    let index: usize = digits.parse().map_err(|_| PolicyError::Unparsable {
        raw: text.to_owned(),
    })?;
    if index >= candidate_count {
        return Ok(Decision {
            choice: None,
            rationale: Some(format!(
                "warning: index {index} out of range for {candidate_count} candidates; \
                 treated as none"
            )),
        });
    }
    Ok(Decision { choice: Some(index), rationale: None })
}

#[derive(Deserialize)]
struct ReflectionDoc {
    state_changed: Option<bool>,
    change_description: Option<String>,
    #[serde(default)]
    failure_reason: Option<String>,
    avoid_action: Option<bool>,
    #[serde(default)]
    alternative_action: Option<String>,
}

/// Parses the five-field JSON object of the reflection template.
/// `state_changed`, `change_description`, and `avoid_action` are required;
/// the two nullable fields default to absent.
pub fn parse_reflection_response(text: &str) -> Result<ReflectionOutcome, PolicyError> {
    let start = text.find('{');
    let end = text.rfind('}');
    let json = match (start, end) {
        (Some(s), Some(e)) if s < e => &text[s..=e],
        _ => return Err(PolicyError::Unparsable { raw: text.to_owned() }),
    };
    let doc: ReflectionDoc = serde_json::from_str(json)
        .map_err(|_| PolicyError::Unparsable { raw: text.to_owned() })?;
    let state_changed =
        doc.state_changed.ok_or(PolicyError::MissingField { field: "state_changed" })?;
    let change_description = doc
        .change_description
        .ok_or(PolicyError::MissingField { field: "change_description" })?;
    let avoid_action =
        doc.avoid_action.ok_or(PolicyError::MissingField { field: "avoid_action" })?;
    if doc.failure_reason.is_some() && state_changed && !avoid_action {
        return Err(PolicyError::MalformedReflection {
            message: "failure_reason given although the action succeeded and is not avoided"
                .to_owned(),
        });
    }
    Ok(ReflectionOutcome {
        state_changed,
        change_description,
        failure_reason: doc.failure_reason,
        avoid_action,
        alternative_action: doc.alternative_action,
    })
}

// ---- policy interface ------------------------------------------------------

/// Structured context accompanying the textual prompt, so deterministic
/// policies can score candidates without re-parsing prose.
#[derive(Debug, Clone, Default)]
pub struct GuidanceMeta {
    /// Notes of the retrieved similar UIs, best match first.
    pub structural_notes: Vec<String>,
    /// First-step widget of the minimal-distance guidance path.
    pub wtg_first_step: Option<WidgetId>,
    /// Window the session is currently in.
    pub current_window: Option<WindowId>,
    /// Windows still holding untriggered findings.
    pub remaining_windows: BTreeSet<WindowId>,
}

/// One decision request: the assembled prompt plus structured context.
pub struct DecisionRequest<'a> {
    pub prompt: &'a str,
    pub candidates: &'a [UiRecord],
    pub guidance: &'a GuidanceMeta,
    pub history: &'a ActionHistory,
}

/// One reflection request: the assembled prompt plus the serialized states.
pub struct ReflectionRequest<'a> {
    pub prompt: &'a str,
    pub prev_ui: &'a str,
    pub curr_ui: &'a str,
    pub action: &'a Action,
}

/// The pluggable decision-maker. Implementations must be shareable across
/// concurrently running sessions.
pub trait DecisionPolicy: Sync + Send {
    fn name(&self) -> &'static str;

    /// One-sentence summary of the app's functionality for semantic
    /// guidance.
    fn summarize_app(&self, metadata: &AppMetadata) -> Result<String, PolicyError>;

    /// Chooses a candidate index (or none) for the step.
    fn decide(&self, request: &DecisionRequest<'_>) -> Result<Decision, PolicyError>;

    /// Judges whether the previous action changed the UI state.
    fn reflect(&self, request: &ReflectionRequest<'_>) -> Result<ReflectionOutcome, PolicyError>;

    /// Yes/no judgment of whether ad text is clickbait.
    fn is_clickbait(&self, ad_text: &str) -> Result<bool, PolicyError>;
}

/// Deterministic reflection shared by the offline policies: the state
/// changed iff the serialized states differ; unchanged states mark the
/// action as one to avoid.
fn deterministic_reflection(request: &ReflectionRequest<'_>) -> ReflectionOutcome {
    if request.prev_ui == request.curr_ui {
        ReflectionOutcome {
            state_changed: false,
            change_description: "the UI state did not change".to_owned(),
            failure_reason: Some(format!(
                "action {} produced no visible state change",
                request.action
            )),
            avoid_action: true,
            alternative_action: Some("choose a different widget".to_owned()),
        }
    } else {
        ReflectionOutcome {
            state_changed: true,
            change_description: "the UI state changed".to_owned(),
            failure_reason: None,
            avoid_action: false,
            alternative_action: None,
        }
    }
}

// ---- mock policy -----------------------------------------------------------

/// Keywords the mock clickbait check matches (lowercased containment).
pub const CLICKBAIT_KEYWORDS: &[&str] = &[
    "you won",
    "congratulations",
    "claim your prize",
    "free money",
    "virus detected",
    "act now",
];

/// Deterministic guidance-following policy.
///
/// Picks, in order: (1) a candidate named in a structural note, best note
/// first; (2) the candidate matching the WTG first step — always skipping
/// candidates whose click is recorded as failed in the history window. When
/// neither tier names an eligible candidate the policy declines, so the
/// caller backs out toward guided territory instead of clicking blindly.
/// Either tier can be disabled for ablation.
#[derive(Debug, Clone)]
pub struct MockPolicy {
    pub use_structural: bool,
    pub use_wtg: bool,
}

impl Default for MockPolicy {
    fn default() -> Self {
        MockPolicy { use_structural: true, use_wtg: true }
    }
}

impl MockPolicy {
    pub fn without_structural() -> Self {
        MockPolicy { use_structural: false, use_wtg: true }
    }

    pub fn without_wtg() -> Self {
        MockPolicy { use_structural: true, use_wtg: false }
    }
}

/// True when the note names the widget id as a standalone token.
fn note_names_widget(note: &str, widget_id: &WidgetId) -> bool {
    note.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .any(|token| token == widget_id.as_str())
}

impl DecisionPolicy for MockPolicy {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn summarize_app(&self, metadata: &AppMetadata) -> Result<String, PolicyError> {
        let description = metadata.description.trim();
        if description.is_empty() {
            return Err(PolicyError::EmptyDescription);
        }
        // First sentence of the description.
        let first = match description.find(['.', '!', '?']) {
            Some(pos) => &description[..=pos],
            None => description,
        };
        Ok(first.trim().to_owned())
    }

    fn decide(&self, request: &DecisionRequest<'_>) -> Result<Decision, PolicyError> {
        let eligible: Vec<usize> = (0..request.candidates.len())
            .filter(|&i| {
                let action =
                    Action::Click { widget_id: request.candidates[i].resource_id.clone() };
                !request.history.contains_failed(&action)
            })
            .collect();
        if eligible.is_empty() {
            return Ok(Decision {
                choice: None,
                rationale: Some("no eligible candidates".to_owned()),
            });
        }
        if self.use_structural {
            for note in &request.guidance.structural_notes {
                if let Some(&i) = eligible
                    .iter()
                    .find(|&&i| note_names_widget(note, &request.candidates[i].resource_id))
                {
                    return Ok(Decision {
                        choice: Some(i),
                        rationale: Some("named in structural guidance".to_owned()),
                    });
                }
            }
        }
        if self.use_wtg {
            if let Some(step) = &request.guidance.wtg_first_step {
                if let Some(&i) =
                    eligible.iter().find(|&&i| &request.candidates[i].resource_id == step)
                {
                    return Ok(Decision {
                        choice: Some(i),
                        rationale: Some("matches the WTG first step".to_owned()),
                    });
                }
            }
        }
        Ok(Decision {
            choice: None,
            rationale: Some("no guided candidate".to_owned()),
        })
    }

    fn reflect(&self, request: &ReflectionRequest<'_>) -> Result<ReflectionOutcome, PolicyError> {
        Ok(deterministic_reflection(request))
    }

    fn is_clickbait(&self, ad_text: &str) -> Result<bool, PolicyError> {
        let lowered = ad_text.to_lowercase();
        Ok(CLICKBAIT_KEYWORDS.iter().any(|kw| lowered.contains(kw)))
    }
}

// ---- random policy ---------------------------------------------------------

/// Seeded uniform-random baseline: each decision draws uniformly from the
/// candidates plus the none branch.
pub struct RandomPolicy {
    rng: Mutex<ChaCha8Rng>,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) }
    }
}

impl DecisionPolicy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn summarize_app(&self, _metadata: &AppMetadata) -> Result<String, PolicyError> {
        // The baseline has no summarization capability; callers fall back
        // to the metadata template.
        Err(PolicyError::Unavailable {
            message: "random baseline cannot summarize".to_owned(),
            retryable: false,
        })
    }

    fn decide(&self, request: &DecisionRequest<'_>) -> Result<Decision, PolicyError> {
        let mut rng = self.rng.lock().expect("random policy lock");
        let n = request.candidates.len();
        let pick = rng.random_range(0..=n);
        Ok(Decision { choice: (pick < n).then_some(pick), rationale: None })
    }

    fn reflect(&self, request: &ReflectionRequest<'_>) -> Result<ReflectionOutcome, PolicyError> {
        Ok(deterministic_reflection(request))
    }

    fn is_clickbait(&self, _ad_text: &str) -> Result<bool, PolicyError> {
        Ok(false)
    }
}

// ---- omniscient policy -----------------------------------------------------

/// Upper-bound oracle: knows exactly which edges are feasible at runtime
/// and walks a shortest feasible path toward the nearest window that still
/// holds findings.
pub struct OmniscientPolicy {
    wtg: Wtg,
    feasible: BTreeSet<crate::wtg::EdgeId>,
}

impl OmniscientPolicy {
    pub fn new(wtg: Wtg, feasible: BTreeSet<crate::wtg::EdgeId>) -> Self {
        OmniscientPolicy { wtg, feasible }
    }

    /// First-step widget of a shortest feasible path from `current` to any
    /// remaining window (deterministic BFS, smallest next window first).
    fn best_first_step(
        &self,
        current: &WindowId,
        remaining: &BTreeSet<WindowId>,
    ) -> Option<WidgetId> {
        let mut queue = VecDeque::new();
        let mut first_step: std::collections::BTreeMap<WindowId, WidgetId> =
            std::collections::BTreeMap::new();
        let mut visited = BTreeSet::new();
        visited.insert(current.clone());
        queue.push_back(current.clone());
        while let Some(node) = queue.pop_front() {
            if &node != current && remaining.contains(&node) {
                return first_step.get(&node).cloned();
            }
            for edge in self.wtg.edges_from(&node) {
                if !self.feasible.contains(&edge.edge_id) {
                    continue;
                }
                let Some(Trigger::Widget { widget_id, event: EventKind::Click }) =
                    self.wtg.trigger_map.get(&edge.edge_id)
                else {
                    continue;
                };
                if visited.insert(edge.target.clone()) {
                    let step = if &node == current {
                        widget_id.clone()
                    } else {
                        first_step[&node].clone()
                    };
                    first_step.insert(edge.target.clone(), step);
                    queue.push_back(edge.target.clone());
                }
            }
        }
        None
    }
}

impl DecisionPolicy for OmniscientPolicy {
    fn name(&self) -> &'static str {
        "omniscient"
    }

    fn summarize_app(&self, _metadata: &AppMetadata) -> Result<String, PolicyError> {
        Err(PolicyError::Unavailable {
            message: "oracle policy does not summarize".to_owned(),
            retryable: false,
        })
    }

    fn decide(&self, request: &DecisionRequest<'_>) -> Result<Decision, PolicyError> {
        let Some(current) = &request.guidance.current_window else {
            return Ok(Decision { choice: None, rationale: None });
        };
        let step = self.best_first_step(current, &request.guidance.remaining_windows);
        let choice = step.and_then(|widget| {
            request.candidates.iter().position(|c| c.resource_id == widget)
        });
        Ok(Decision { choice, rationale: Some("feasible shortest path".to_owned()) })
    }

    fn reflect(&self, request: &ReflectionRequest<'_>) -> Result<ReflectionOutcome, PolicyError> {
        Ok(deterministic_reflection(request))
    }

    fn is_clickbait(&self, _ad_text: &str) -> Result<bool, PolicyError> {
        Ok(false)
    }
}

// ---- remote policy ---------------------------------------------------------

/// Environment variable naming the remote completion endpoint URL.
pub const LLM_ENDPOINT_VAR: &str = "ADWISE_LLM_ENDPOINT";
/// Environment variable holding the optional bearer key.
pub const LLM_KEY_VAR: &str = "ADWISE_LLM_KEY";
/// Environment variable naming the model to request.
pub const LLM_MODEL_VAR: &str = "ADWISE_LLM_MODEL";

/// Client for a single-turn HTTP completion endpoint: POST `{"model": …,
/// "prompt": …, "temperature": 0}`, response `{"text": …}`.
pub struct RemotePolicy {
    endpoint: String,
    key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

impl RemotePolicy {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        RemotePolicy {
            endpoint: endpoint.into(),
            key,
            model: model.into(),
            client: reqwest::blocking::Client::new(),
        }
    }

    /// Builds the client from `ADWISE_LLM_ENDPOINT` / `ADWISE_LLM_KEY` /
    /// `ADWISE_LLM_MODEL`; `None` when the endpoint variable is unset.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(LLM_ENDPOINT_VAR).ok()?;
        let key = std::env::var(LLM_KEY_VAR).ok();
        let model = std::env::var(LLM_MODEL_VAR).unwrap_or_else(|_| "default".to_owned());
        Some(RemotePolicy::new(endpoint, key, model))
    }

    fn complete(&self, prompt: &str) -> Result<String, PolicyError> {
        let mut request = self.client.post(&self.endpoint).json(&CompletionRequest {
            model: &self.model,
            prompt,
            temperature: 0.0,
        });
        if let Some(key) = &self.key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| PolicyError::Unavailable {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(PolicyError::Unavailable {
                message: format!("endpoint returned status {status}"),
                retryable: status.is_server_error(),
            });
        }
        let body: CompletionResponse = response.json().map_err(|e| PolicyError::Unavailable {
            message: format!("malformed completion response: {e}"),
            retryable: false,
        })?;
        Ok(body.text)
    }
}

impl DecisionPolicy for RemotePolicy {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn summarize_app(&self, metadata: &AppMetadata) -> Result<String, PolicyError> {
        let prompt = format!(
            "Summarize the main functionality of the mobile app {} (category: {}) in one \
             sentence, based on this store description:\n{}\n",
            metadata.app_name, metadata.category, metadata.description
        );
        let text = self.complete(&prompt)?;
        let summary = text.trim();
        if summary.is_empty() {
            return Err(PolicyError::Unparsable { raw: text });
        }
        Ok(summary.to_owned())
    }

    fn decide(&self, request: &DecisionRequest<'_>) -> Result<Decision, PolicyError> {
        let text = self.complete(request.prompt)?;
        parse_decision_response(&text, request.candidates.len())
    }

    fn reflect(&self, request: &ReflectionRequest<'_>) -> Result<ReflectionOutcome, PolicyError> {
        let text = self.complete(request.prompt)?;
        parse_reflection_response(&text)
    }

    fn is_clickbait(&self, ad_text: &str) -> Result<bool, PolicyError> {
        let prompt = format!(
            "Is the following advertisement text clickbait? Answer yes or no.\n{ad_text}\n"
        );
        let text = self.complete(&prompt)?;
        let lowered = text.to_lowercase();
        if lowered.contains("yes") {
            Ok(true)
        } else if lowered.contains("no") {
            Ok(false)
        } else {
            Err(PolicyError::Unparsable { raw: text })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> UiRecord {
        UiRecord {
            resource_id: WidgetId::new(id),
            text: None,
            content_description: None,
            clickable: true,
        }
    }

    fn request<'a>(
        candidates: &'a [UiRecord],
        guidance: &'a GuidanceMeta,
        history: &'a ActionHistory,
    ) -> DecisionRequest<'a> {
        DecisionRequest { prompt: "", candidates, guidance, history }
    }

    #[test]
    fn action_display_forms() {
        assert_eq!(Action::Click { widget_id: WidgetId::new("b1") }.to_string(), "click(b1)");
        assert_eq!(Action::Back.to_string(), "back");
        assert_eq!(
            Action::Scroll { direction: ScrollDirection::Down }.to_string(),
            "scroll(down)"
        );
        assert_eq!(Action::Launch.to_string(), "launch");
        assert_eq!(Action::Exit.to_string(), "exit");
    }

    #[test]
    fn history_ring_evicts_oldest() {
        let mut history = ActionHistory::new(2);
        history.push(Action::Back, true);
        history.push(Action::Launch, true);
        history.push(Action::Exit, false);
        assert_eq!(history.len(), 2);
        let items: Vec<&HistoryItem> = history.iter().collect();
        assert_eq!(items[0].action, Action::Launch);
        assert_eq!(items[1].action, Action::Exit);
    }

    #[test]
    fn history_render_empty_and_ordered() {
        let mut history = ActionHistory::new(HISTORY_CAPACITY);
        assert_eq!(history.render(), "[]");
        history.push(Action::Click { widget_id: WidgetId::new("a") }, false);
        history.push(Action::Click { widget_id: WidgetId::new("b") }, false);
        let rendered = history.render();
        let a = rendered.find("click(a)").unwrap();
        let b = rendered.find("click(b)").unwrap();
        assert!(a < b, "oldest first: {rendered}");
        assert!(rendered.contains("\"outcome\": \"failed\""));
    }

    #[test]
    fn prompt_contains_sections_and_indices() {
        let bundle = GuidanceBundle {
            wtg_text: "WTG".into(),
            semantic_text: "SEM".into(),
            structural_text: "STRUCT".into(),
        };
        let candidates = vec![record("a"), record("b")];
        let prompt = assemble_action_prompt(&bundle, &candidates);
        assert!(prompt.contains("index -0"));
        assert!(prompt.contains("index -1"));
        assert!(prompt.contains(PROMPT_CLOSING));
        let sem = prompt.find("SEM").unwrap();
        let wtg = prompt.find("WTG-Based Guidance").unwrap();
        let st = prompt.find("STRUCT").unwrap();
        assert!(sem < wtg && wtg < st, "section order: {prompt}");
    }

    #[test]
    fn prompt_with_zero_candidates_still_emits() {
        let bundle = GuidanceBundle {
            wtg_text: "w".into(),
            semantic_text: "s".into(),
            structural_text: "t".into(),
        };
        let prompt = assemble_action_prompt(&bundle, &[]);
        assert!(prompt.contains("we have 0 UI widgets"));
        assert!(prompt.contains("index-none"));
    }

    #[test]
    fn prompt_assembly_is_deterministic() {
        let bundle = GuidanceBundle {
            wtg_text: "w".into(),
            semantic_text: "s".into(),
            structural_text: "t".into(),
        };
        let candidates = vec![record("x")];
        assert_eq!(
            assemble_action_prompt(&bundle, &candidates),
            assemble_action_prompt(&bundle, &candidates)
        );
    }

    #[test]
    fn reflection_prompt_embeds_states_and_history() {
        let mut history = ActionHistory::new(HISTORY_CAPACITY);
        history.push(Action::Back, false);
        let prompt = assemble_reflection_prompt(
            "STATE-A",
            "STATE-A",
            &Action::Click { widget_id: WidgetId::new("b1") },
            &history,
        );
        assert!(prompt.contains("STATE-A"));
        assert!(prompt.contains("click(b1)"));
        assert!(prompt.contains("\"outcome\": \"failed\""));
        assert!(prompt.contains("Did the UI state change"));
    }

    #[test]
    fn decision_parsing() {
        assert_eq!(parse_decision_response("index-none", 3).unwrap().choice, None);
        assert_eq!(parse_decision_response("I pick index -1 here", 3).unwrap().choice, Some(1));
        assert_eq!(parse_decision_response("INDEX-2", 3).unwrap().choice, Some(2));
        let clamped = parse_decision_response("index-7", 3).unwrap();
        assert_eq!(clamped.choice, None);
        assert!(clamped.rationale.unwrap().contains("out of range"));
        assert!(matches!(
            parse_decision_response("banana", 3),
            Err(PolicyError::Unparsable { .. })
        ));
    }

    #[test]
    fn reflection_parsing() {
        let ok = parse_reflection_response(
            r#"{"state_changed": false, "change_description": "nothing",
                "failure_reason": "widget disabled", "avoid_action": true,
                "alternative_action": null}"#,
        )
        .unwrap();
        assert!(!ok.state_changed);
        assert!(ok.avoid_action);
        assert_eq!(ok.failure_reason.as_deref(), Some("widget disabled"));

        assert!(matches!(
            parse_reflection_response(r#"{"state_changed": true, "change_description": "x"}"#),
            Err(PolicyError::MissingField { field: "avoid_action" })
        ));
        assert!(matches!(
            parse_reflection_response("not json at all"),
            Err(PolicyError::Unparsable { .. })
        ));
        // failure_reason on a successful, non-avoided action violates the
        // outcome invariant.
        assert!(matches!(
            parse_reflection_response(
                r#"{"state_changed": true, "change_description": "x",
                    "failure_reason": "but why", "avoid_action": false}"#
            ),
            Err(PolicyError::MalformedReflection { .. })
        ));
    }

    #[test]
    fn mock_prefers_structural_then_wtg_else_declines() {
        let mock = MockPolicy::default();
        let candidates = vec![record("home"), record("go_ads"), record("more_apps")];
        let history = ActionHistory::new(HISTORY_CAPACITY);

        // Structural note names more_apps: it wins over everything.
        let guidance = GuidanceMeta {
            structural_notes: vec!["(resource-id: more_apps, text: More Apps)".into()],
            wtg_first_step: Some(WidgetId::new("go_ads")),
            ..GuidanceMeta::default()
        };
        let d = mock.decide(&request(&candidates, &guidance, &history)).unwrap();
        assert_eq!(d.choice, Some(2));

        // No structural note: the WTG first step wins.
        let guidance = GuidanceMeta {
            wtg_first_step: Some(WidgetId::new("go_ads")),
            ..GuidanceMeta::default()
        };
        let d = mock.decide(&request(&candidates, &guidance, &history)).unwrap();
        assert_eq!(d.choice, Some(1));

        // No guidance at all: decline rather than click blindly.
        let guidance = GuidanceMeta::default();
        let d = mock.decide(&request(&candidates, &guidance, &history)).unwrap();
        assert_eq!(d.choice, None);
    }

    #[test]
    fn mock_never_repeats_failed_action() {
        let mock = MockPolicy::default();
        let candidates = vec![record("a"), record("b")];
        let mut history = ActionHistory::new(HISTORY_CAPACITY);
        history.push(Action::Click { widget_id: WidgetId::new("a") }, false);
        let guidance = GuidanceMeta {
            structural_notes: vec!["tap a to reach the ad screen".into()],
            wtg_first_step: Some(WidgetId::new("b")),
            ..GuidanceMeta::default()
        };
        // The note names `a`, but the failed history bans it; the WTG step
        // is the next guided candidate.
        let d = mock.decide(&request(&candidates, &guidance, &history)).unwrap();
        assert_eq!(d.choice, Some(1));

        history.push(Action::Click { widget_id: WidgetId::new("b") }, false);
        let d = mock.decide(&request(&candidates, &guidance, &history)).unwrap();
        assert_eq!(d.choice, None);
    }

    #[test]
    fn ablation_flags_disable_tiers() {
        let candidates = vec![record("a"), record("noted"), record("stepped")];
        let history = ActionHistory::new(HISTORY_CAPACITY);
        let guidance = GuidanceMeta {
            structural_notes: vec!["widget noted leads to ads".into()],
            wtg_first_step: Some(WidgetId::new("stepped")),
            ..GuidanceMeta::default()
        };
        let no_structural = MockPolicy::without_structural();
        let d = no_structural.decide(&request(&candidates, &guidance, &history)).unwrap();
        assert_eq!(d.choice, Some(2), "without structural, WTG tier wins");
        let no_wtg = MockPolicy::without_wtg();
        let d = no_wtg.decide(&request(&candidates, &guidance, &history)).unwrap();
        assert_eq!(d.choice, Some(1), "without WTG, structural tier still wins");
    }

    #[test]
    fn mock_summary_is_first_sentence() {
        let mock = MockPolicy::default();
        let metadata = AppMetadata {
            app_name: "Taj Music".into(),
            category: "Music".into(),
            description: "Listen to Taj's songs. Includes playlists and offline mode.".into(),
            download_count: None,
        };
        assert_eq!(mock.summarize_app(&metadata).unwrap(), "Listen to Taj's songs.");
        let empty = AppMetadata { description: "  ".into(), ..metadata };
        assert!(matches!(mock.summarize_app(&empty), Err(PolicyError::EmptyDescription)));
    }

    #[test]
    fn mock_reflection_mirrors_state_equality() {
        let mock = MockPolicy::default();
        let action = Action::Back;
        let same = ReflectionRequest { prompt: "", prev_ui: "X", curr_ui: "X", action: &action };
        let outcome = mock.reflect(&same).unwrap();
        assert!(!outcome.state_changed);
        assert!(outcome.avoid_action);
        let diff = ReflectionRequest { prompt: "", prev_ui: "X", curr_ui: "Y", action: &action };
        let outcome = mock.reflect(&diff).unwrap();
        assert!(outcome.state_changed);
        assert!(!outcome.avoid_action);
        assert!(outcome.failure_reason.is_none());
    }

    #[test]
    fn mock_clickbait_keywords() {
        let mock = MockPolicy::default();
        assert!(mock.is_clickbait("You WON a brand new phone!").unwrap());
        assert!(!mock.is_clickbait("50% off winter boots").unwrap());
        assert!(!mock.is_clickbait("").unwrap());
    }

    #[test]
    fn random_policy_is_seeded_and_in_bounds() {
        let candidates = vec![record("a"), record("b"), record("c")];
        let guidance = GuidanceMeta::default();
        let history = ActionHistory::new(HISTORY_CAPACITY);
        let run = |seed: u64| {
            let policy = RandomPolicy::new(seed);
            (0..20)
                .map(|_| policy.decide(&request(&candidates, &guidance, &history)).unwrap().choice)
                .collect::<Vec<_>>()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a, b, "same seed, same draws");
        for choice in a.iter().flatten() {
            assert!(*choice < candidates.len());
        }
    }
}
