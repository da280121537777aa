//! Deterministic device simulator.
//!
//! A [`Simulator`] executes an app model as a UI state machine: it tracks
//! the current window and a back stack, applies actions, fires navigations
//! (honoring the configured set of runtime-feasible edges), shows ad
//! overlays, and logs every triggered ad with a logical timestamp. Time is
//! a logical clock (`clock` seconds per action) so detection-latency
//! numbers are reproducible.
//!
//! Ad semantics:
//! - entering a window logs a trigger for each of its adview findings
//!   (banners render on entry when `auto_show_adviews` is set);
//! - clicking a popup finding's widget logs a trigger and opens a
//!   full-screen overlay whose close control only appears after
//!   `ad_close_delay` further actions (`>= 2` models unskippable ads);
//! - clicking a native finding's widget logs a trigger carrying the landing
//!   URL and leaves the window unchanged (the external redirect is modeled
//!   as a log entry so the session stays alive);
//! - interstitials can additionally be configured to fire at app launch or
//!   on an exit attempt.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Rect;
use crate::kb::UiRecord;
use crate::model::{AppModel, InvocationId, WidgetId, WindowId};
use crate::policy::Action;
use crate::static_ads::{
    recover_widget_attributes, AdCategory, AdEvidence, AdWidgetFinding, StaticAdsError,
    WidgetAttributeTable,
};

/// Resource id of the synthetic close control on ad overlays.
pub const AD_CLOSE_ID: &str = "ad_close";
/// Resource id of the synthetic overlay body widget.
pub const AD_OVERLAY_ID: &str = "ad_overlay";

// ---- configuration ---------------------------------------------------------

/// A (window, widget) reference into the model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WidgetRef {
    pub window_id: WindowId,
    pub widget_id: WidgetId,
}

/// When a configured interstitial fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterstitialMoment {
    /// Immediately when the session loads, before any action.
    Launch,
    /// When the user tries to leave the app (back at the entry window with
    /// an empty stack, or an explicit exit action).
    Exit,
}

/// Ties a popup finding to launch/exit moments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterstitialSpec {
    pub window_id: WindowId,
    pub widget_id: WidgetId,
    pub on: BTreeSet<InterstitialMoment>,
}

/// Optional ad creative attached to a finding's widget: display text and
/// landing URL override whatever the static evidence provides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdInventoryItem {
    pub window_id: WindowId,
    pub widget_id: WidgetId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landing_url: Option<String>,
}

fn default_true() -> bool {
    true
}

fn default_clock() -> u64 {
    1
}

/// Runtime configuration of a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Edges honored at runtime; `None` means every navigation is feasible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible_edges: Option<BTreeSet<InvocationId>>,
    /// Log adview findings whenever their window is entered.
    #[serde(default = "default_true")]
    pub auto_show_adviews: bool,
    /// Popup findings additionally shown at launch/exit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interstitials: Vec<InterstitialSpec>,
    /// Actions before an overlay's close control appears (>= 2 models
    /// unskippable ads).
    #[serde(default)]
    pub ad_close_delay: u32,
    /// Logical seconds per action.
    #[serde(default = "default_clock")]
    pub clock: u64,
    /// Session seed; the dynamics are deterministic, the seed is recorded
    /// in traces so batch runs stay attributable.
    #[serde(default)]
    pub seed: u64,
    /// Widgets absent from the live layout even though the model lists
    /// them (runtime-hidden views).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden_widgets: Vec<WidgetRef>,
    /// Creatives served into findings' widgets.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ad_inventory: Vec<AdInventoryItem>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            feasible_edges: None,
            auto_show_adviews: true,
            interstitials: Vec::new(),
            ad_close_delay: 0,
            clock: 1,
            seed: 0,
            hidden_widgets: Vec::new(),
            ad_inventory: Vec::new(),
        }
    }
}

// ---- runtime state ---------------------------------------------------------

/// Snapshot of an ad's content at trigger time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdContent {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landing_url: Option<String>,
    pub skippable: bool,
}

/// One logged ad trigger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerRecord {
    /// Logical seconds since session start.
    pub t: u64,
    pub window_id: WindowId,
    pub widget_id: WidgetId,
    pub bounds: Rect,
    pub category: AdCategory,
    pub content: AdContent,
}

/// The ordered trigger log of a session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerLog {
    pub t_start: u64,
    pub records: Vec<TriggerRecord>,
}

/// A widget as it appears at runtime.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveWidget {
    pub widget_id: WidgetId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_description: Option<String>,
    pub clickable: bool,
    pub bounds: Rect,
    /// Draw order within the window; later (higher) draws on top.
    pub z_index: usize,
    pub visible: bool,
}

/// The live ad overlay, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdOverlayView {
    pub source: WidgetRef,
    pub content: AdContent,
    pub bounds: Rect,
    /// Whether the close control has appeared yet.
    pub close_visible: bool,
}

/// Full observable UI state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiState {
    pub window_id: WindowId,
    pub widgets: Vec<LiveWidget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay: Option<AdOverlayView>,
    pub exited: bool,
}

impl UiState {
    /// Serializes the state to retained-attribute records: overlay widgets
    /// when an overlay covers the window, else the visible layout widgets
    /// in document order.
    pub fn records(&self) -> Vec<UiRecord> {
        if let Some(overlay) = &self.overlay {
            let mut records = vec![UiRecord {
                resource_id: WidgetId::new(AD_OVERLAY_ID),
                text: overlay.content.text.clone(),
                content_description: Some("advertisement".to_owned()),
                clickable: false,
            }];
            if overlay.close_visible {
                records.push(UiRecord {
                    resource_id: WidgetId::new(AD_CLOSE_ID),
                    text: Some("X".to_owned()),
                    content_description: Some("close ad".to_owned()),
                    clickable: true,
                });
            }
            return records;
        }
        self.widgets
            .iter()
            .filter(|w| w.visible)
            .map(|w| UiRecord {
                resource_id: w.widget_id.clone(),
                text: w.text.clone(),
                content_description: w.content_description.clone(),
                clickable: w.clickable,
            })
            .collect()
    }
}

/// Result of performing one action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResult {
    pub action: Action,
    /// Logical time after the action.
    pub t: u64,
    pub prev_state: UiState,
    pub new_state: UiState,
    /// The WTG edge taken, when the action navigated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_taken: Option<InvocationId>,
    /// Ads triggered by this action.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triggered: Vec<TriggerRecord>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config references unknown edge {0}")]
    UnknownEdge(InvocationId),
    #[error("config references {window_id}/{widget_id}, which is not a popup finding")]
    NotAPopupFinding { window_id: WindowId, widget_id: WidgetId },
    #[error("config references unknown widget {widget_id} in window {window_id}")]
    UnknownConfigWidget { window_id: WindowId, widget_id: WidgetId },
    #[error("widget {widget_id} is absent from the current layout of {window_id}")]
    UnknownWidget { window_id: WindowId, widget_id: WidgetId },
    #[error("session has exited; no further actions possible")]
    SessionExited,
    #[error(transparent)]
    Static(#[from] StaticAdsError),
}

struct OverlayState {
    view: AdOverlayView,
    /// `actions_performed` when the overlay appeared.
    shown_at: u64,
}

/// The simulator owning one session.
pub struct Simulator<'a> {
    model: &'a AppModel,
    findings: &'a [AdWidgetFinding],
    config: SimConfig,
    table: WidgetAttributeTable,
    feasible: BTreeSet<InvocationId>,
    current: WindowId,
    nav_stack: Vec<WindowId>,
    overlay: Option<OverlayState>,
    log: Vec<TriggerRecord>,
    actions_performed: u64,
    t: u64,
    exited: bool,
    exit_interstitials_shown: BTreeSet<WidgetRef>,
    /// Anomalies observed during the session.
    pub warnings: Vec<String>,
}

impl<'a> Simulator<'a> {
    /// Validates the config against the model and findings, positions the
    /// session at the entry window, and fires launch-time ads (entry-window
    /// adviews, then any launch interstitial) at t = 0.
    pub fn load_session(
        model: &'a AppModel,
        findings: &'a [AdWidgetFinding],
        config: SimConfig,
    ) -> Result<Self, SimError> {
        let nav_edges: BTreeSet<&InvocationId> =
            model.code_facts.navigations.iter().map(|n| &n.invocation_id).collect();
        if let Some(feasible) = &config.feasible_edges {
            for edge in feasible {
                if !nav_edges.contains(edge) {
                    return Err(SimError::UnknownEdge(edge.clone()));
                }
            }
        }
        for spec in &config.interstitials {
            let is_popup = findings.iter().any(|f| {
                f.category == AdCategory::Popup
                    && f.window_id == spec.window_id
                    && f.widget_id == spec.widget_id
            });
            if !is_popup {
                return Err(SimError::NotAPopupFinding {
                    window_id: spec.window_id.clone(),
                    widget_id: spec.widget_id.clone(),
                });
            }
        }
        for r in &config.hidden_widgets {
            if model.widget(&r.window_id, &r.widget_id).is_none() {
                return Err(SimError::UnknownConfigWidget {
                    window_id: r.window_id.clone(),
                    widget_id: r.widget_id.clone(),
                });
            }
        }
        for item in &config.ad_inventory {
            if model.widget(&item.window_id, &item.widget_id).is_none() {
                return Err(SimError::UnknownConfigWidget {
                    window_id: item.window_id.clone(),
                    widget_id: item.widget_id.clone(),
                });
            }
        }

        let table = recover_widget_attributes(model)?;
        let feasible = match &config.feasible_edges {
            Some(set) => set.clone(),
            None => nav_edges.into_iter().cloned().collect(),
        };
        let mut sim = Simulator {
            model,
            findings,
            config,
            table,
            feasible,
            current: model.entry_window.clone(),
            nav_stack: Vec::new(),
            overlay: None,
            log: Vec::new(),
            actions_performed: 0,
            t: 0,
            exited: false,
            exit_interstitials_shown: BTreeSet::new(),
            warnings: Vec::new(),
        };

        sim.log_adviews_on_entry();
        let launch: Vec<InterstitialSpec> = sim
            .config
            .interstitials
            .iter()
            .filter(|s| s.on.contains(&InterstitialMoment::Launch))
            .cloned()
            .collect();
        for (i, spec) in launch.iter().enumerate() {
            if i == 0 {
                sim.show_interstitial(&spec.window_id, &spec.widget_id);
            } else {
                sim.warnings.push(format!(
                    "only one launch interstitial can be shown; {}/{} skipped",
                    spec.window_id, spec.widget_id
                ));
            }
        }
        Ok(sim)
    }

    // ---- accessors ----

    pub fn current_window(&self) -> &WindowId {
        &self.current
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn has_exited(&self) -> bool {
        self.exited
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Whether the session is at the entry window with nothing to go back
    /// to — the point where `back` means leaving the app.
    pub fn at_entry_root(&self) -> bool {
        self.current == self.model.entry_window && self.nav_stack.is_empty()
    }

    /// Immutable snapshot of the trigger log so far.
    pub fn triggered_log(&self) -> TriggerLog {
        TriggerLog { t_start: 0, records: self.log.clone() }
    }

    fn is_hidden(&self, window: &WindowId, widget: &WidgetId) -> bool {
        self.config
            .hidden_widgets
            .iter()
            .any(|r| &r.window_id == window && &r.widget_id == widget)
    }

    fn overlay_age(&self) -> Option<u64> {
        // Completed actions since the overlay appeared, excluding the one
        // currently being performed.
        self.overlay.as_ref().map(|o| self.actions_performed.saturating_sub(1 + o.shown_at))
    }

    /// Current observable state.
    pub fn ui_state(&self) -> UiState {
        let widgets = match self.model.window(&self.current) {
            None => Vec::new(),
            Some(window) => window
                .layout
                .widgets
                .iter()
                .enumerate()
                .map(|(i, w)| LiveWidget {
                    widget_id: w.widget_id.clone(),
                    text: w.text.clone(),
                    content_description: w.content_description.clone(),
                    clickable: w.clickable,
                    bounds: w.bounds,
                    z_index: i,
                    visible: !self.is_hidden(&self.current, &w.widget_id),
                })
                .collect(),
        };
        UiState {
            window_id: self.current.clone(),
            widgets,
            overlay: self.overlay.as_ref().map(|o| o.view.clone()),
            exited: self.exited,
        }
    }

    // ---- ad plumbing ----

    fn inventory_for(&self, window: &WindowId, widget: &WidgetId) -> Option<&AdInventoryItem> {
        self.config
            .ad_inventory
            .iter()
            .find(|i| &i.window_id == window && &i.widget_id == widget)
    }

    fn content_for(&self, finding: &AdWidgetFinding, skippable: bool) -> AdContent {
        let (library, landing_url) = match &finding.evidence {
            AdEvidence::ViewClass { library, .. } => (Some(library.clone()), None),
            AdEvidence::ShowApi { library, .. } => (Some(library.clone()), None),
            AdEvidence::Intent { uri, .. } => (None, Some(uri.clone())),
        };
        let inventory = self.inventory_for(&finding.window_id, &finding.widget_id);
        AdContent {
            library,
            text: inventory.and_then(|i| i.text.clone()),
            landing_url: inventory
                .and_then(|i| i.landing_url.clone())
                .or(landing_url),
            skippable,
        }
    }

    fn record_trigger(&mut self, finding: &AdWidgetFinding, content: AdContent) -> TriggerRecord {
        let bounds = self
            .model
            .widget(&finding.window_id, &finding.widget_id)
            .map(|w| w.bounds)
            .unwrap_or(Rect::new(0, 0, 0, 0));
        let record = TriggerRecord {
            t: self.t,
            window_id: finding.window_id.clone(),
            widget_id: finding.widget_id.clone(),
            bounds,
            category: finding.category,
            content,
        };
        self.log.push(record.clone());
        record
    }

    /// Logs every visible adview finding of the current window.
    fn log_adviews_on_entry(&mut self) {
        if !self.config.auto_show_adviews {
            return;
        }
        let adviews: Vec<AdWidgetFinding> = self
            .findings
            .iter()
            .filter(|f| {
                f.category == AdCategory::Adview
                    && f.window_id == self.current
                    && !self.is_hidden(&f.window_id, &f.widget_id)
            })
            .cloned()
            .collect();
        for finding in adviews {
            let content = self.content_for(&finding, true);
            self.record_trigger(&finding, content);
        }
    }

    fn find_finding(&self, window: &WindowId, widget: &WidgetId) -> Option<&AdWidgetFinding> {
        self.findings
            .iter()
            .find(|f| &f.window_id == window && &f.widget_id == widget)
    }

    /// Shows the popup finding's overlay and logs its trigger.
    fn show_interstitial(&mut self, window: &WindowId, widget: &WidgetId) {
        let Some(finding) = self.find_finding(window, widget).cloned() else {
            return;
        };
        let skippable = self.config.ad_close_delay < 2;
        let content = self.content_for(&finding, skippable);
        self.record_trigger(&finding, content.clone());
        let screen = Rect::new(0, 0, self.model.screen.width, self.model.screen.height);
        self.overlay = Some(OverlayState {
            view: AdOverlayView {
                source: WidgetRef { window_id: window.clone(), widget_id: widget.clone() },
                content,
                bounds: screen,
                close_visible: self.config.ad_close_delay == 0,
            },
            shown_at: self.actions_performed,
        });
    }

    /// Fires the first configured exit interstitial not yet shown. Returns
    /// true when one appeared (the exit attempt is intercepted).
    fn try_exit_interstitial(&mut self) -> bool {
        let mut specs: Vec<InterstitialSpec> = self
            .config
            .interstitials
            .iter()
            .filter(|s| s.on.contains(&InterstitialMoment::Exit))
            .cloned()
            .collect();
        specs.sort_by(|a, b| (&a.window_id, &a.widget_id).cmp(&(&b.window_id, &b.widget_id)));
        for spec in specs {
            let key = WidgetRef {
                window_id: spec.window_id.clone(),
                widget_id: spec.widget_id.clone(),
            };
            if self.exit_interstitials_shown.contains(&key) {
                continue;
            }
            self.exit_interstitials_shown.insert(key);
            self.show_interstitial(&spec.window_id, &spec.widget_id);
            return true;
        }
        false
    }

    /// A close attempt dismisses the overlay only once `ad_close_delay`
    /// actions have elapsed since it appeared.
    fn attempt_close_overlay(&mut self) {
        let Some(age) = self.overlay_age() else { return };
        if age >= u64::from(self.config.ad_close_delay) {
            self.overlay = None;
        }
    }

    /// Keeps the overlay's close-control visibility in sync with its age.
    fn refresh_overlay(&mut self) {
        let age_now = self
            .overlay
            .as_ref()
            .map(|o| self.actions_performed - o.shown_at);
        if let (Some(overlay), Some(age)) = (self.overlay.as_mut(), age_now) {
            overlay.view.close_visible = age >= u64::from(self.config.ad_close_delay);
        }
    }

    // ---- actions ----

    /// Performs one action. The clock advances by `clock` first; all
    /// effects carry the post-advance timestamp.
    pub fn perform(&mut self, action: &Action) -> Result<StepResult, SimError> {
        if self.exited {
            return Err(SimError::SessionExited);
        }
        let prev_state = self.ui_state();
        let log_before = self.log.len();
        self.actions_performed += 1;
        self.t += self.config.clock;

        let transition_taken = match action {
            Action::Click { widget_id } => self.do_click(widget_id)?,
            Action::Back => {
                self.do_back();
                None
            }
            Action::Scroll { .. } | Action::Launch => None, // no scrollable regions modeled
            Action::Exit => {
                if !self.try_exit_interstitial() {
                    self.exited = true;
                }
                None
            }
        };
        self.refresh_overlay();

        Ok(StepResult {
            action: action.clone(),
            t: self.t,
            prev_state,
            new_state: self.ui_state(),
            transition_taken,
            triggered: self.log[log_before..].to_vec(),
        })
    }

    fn do_click(&mut self, widget_id: &WidgetId) -> Result<Option<InvocationId>, SimError> {
        if self.overlay.is_some() {
            // The overlay covers the window; only its own controls exist.
            if widget_id.as_str() == AD_CLOSE_ID {
                self.attempt_close_overlay();
                return Ok(None);
            }
            if widget_id.as_str() == AD_OVERLAY_ID {
                return Ok(None); // tapping the creative is a no-op here
            }
            return Err(SimError::UnknownWidget {
                window_id: self.current.clone(),
                widget_id: widget_id.clone(),
            });
        }

        let exists = self.model.widget(&self.current, widget_id).is_some();
        if !exists || self.is_hidden(&self.current, widget_id) {
            return Err(SimError::UnknownWidget {
                window_id: self.current.clone(),
                widget_id: widget_id.clone(),
            });
        }

        // Ad findings take precedence over navigation.
        if let Some(finding) = self.find_finding(&self.current, widget_id).cloned() {
            match finding.category {
                AdCategory::Popup => {
                    let window = self.current.clone();
                    self.show_interstitial(&window, widget_id);
                    return Ok(None);
                }
                AdCategory::Native => {
                    let content = self.content_for(&finding, true);
                    self.record_trigger(&finding, content);
                    return Ok(None);
                }
                // Adviews trigger on window entry, not on click; a click
                // falls through to whatever navigation the widget owns.
                AdCategory::Adview => {}
            }
        }

        // Navigation: the first feasible edge owned by this widget, in
        // (target, edge) order.
        let owned: Vec<(WindowId, InvocationId)> = {
            let attrs = self.table.get(&self.current, widget_id);
            let mut edges: Vec<(WindowId, InvocationId)> = self
                .model
                .code_facts
                .navigations
                .iter()
                .filter(|nav| {
                    nav.source_window == self.current
                        && attrs.is_some_and(|a| a.invocations.contains(&nav.invocation_id))
                })
                .map(|nav| (nav.target_window.clone(), nav.invocation_id.clone()))
                .collect();
            edges.sort();
            edges
        };
        for (target, edge) in owned {
            if !self.feasible.contains(&edge) {
                continue; // statically claimed but runtime-infeasible
            }
            self.nav_stack.push(self.current.clone());
            self.current = target;
            self.log_adviews_on_entry();
            return Ok(Some(edge));
        }
        Ok(None) // benign widget or infeasible edge: state unchanged
    }

    fn do_back(&mut self) {
        if self.overlay.is_some() {
            self.attempt_close_overlay();
            return;
        }
        match self.nav_stack.pop() {
            Some(previous) => {
                self.current = previous;
                self.log_adviews_on_entry();
            }
            None => {
                // Back at the app root: an exit attempt. An exit
                // interstitial may intercept it; otherwise stay put so the
                // session remains drivable.
                let _ = self.try_exit_interstitial();
            }
        }
    }
}
