//! The app intermediate representation.
//!
//! Instead of analyzing APK bytecode, the pipeline consumes a declarative
//! model of the app: windows with widget trees, plus *code facts* — explicit
//! records of `findViewById` bindings, casts, variable aliases, method
//! invocations, window declarations, and navigations. The facts carry exactly
//! the information a bytecode dataflow analysis would recover, which keeps
//! the downstream classification and graph construction deterministic and
//! testable.
//!
//! Models are interchanged as JSON documents (schema id `adwise-model/1`)
//! in which each layout nests its widgets under `children` arrays;
//! [`parse_app_model`] flattens that tree into the in-memory form and
//! [`serialize_app_model`] reverses it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Rect;

/// Schema identifier accepted by [`parse_app_model`].
pub const MODEL_SCHEMA: &str = "adwise-model/1";

// ---- identifiers -----------------------------------------------------------

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// Identifier of a window (activity, dialog, menu, or fragment host).
    WindowId
);
id_type!(
    /// Resource identifier of a widget, unique within its layout.
    WidgetId
);
id_type!(
    /// Identifier of a layout tree.
    LayoutId
);
id_type!(
    /// Identifier of an invocation record in the code facts.
    InvocationId
);

// ---- windows and widgets ---------------------------------------------------

/// The four window kinds the analysis distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Activity,
    Dialog,
    Menu,
    Fragment,
}

impl std::fmt::Display for WindowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            WindowKind::Activity => "activity",
            WindowKind::Dialog => "dialog",
            WindowKind::Menu => "menu",
            WindowKind::Fragment => "fragment",
        };
        f.write_str(name)
    }
}

/// A single UI widget: view class `v`, resource id, and the invocations `I`
/// reachable from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widget {
    pub widget_id: WidgetId,
    /// Fully qualified view class as declared in the layout.
    pub view_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_description: Option<String>,
    #[serde(default)]
    pub clickable: bool,
    pub bounds: Rect,
    /// Invocation records attached to this widget (e.g. click handlers).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invocation_ids: Vec<InvocationId>,
}

/// A widget tree, flattened: `widgets` lists nodes in document (pre-)order
/// and `children` records each parent's ordered children. Keeping the edges
/// as data (rather than nested ownership) lets [`validate`] describe
/// malformed trees instead of making them unrepresentable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UiLayout {
    pub layout_id: LayoutId,
    pub root: WidgetId,
    pub widgets: Vec<Widget>,
    pub children: BTreeMap<WidgetId, Vec<WidgetId>>,
}

impl UiLayout {
    /// Looks up a widget by id (first occurrence in document order).
    pub fn widget(&self, id: &WidgetId) -> Option<&Widget> {
        self.widgets.iter().find(|w| &w.widget_id == id)
    }

    /// Ordered children of a widget; empty slice for leaves.
    pub fn children_of(&self, id: &WidgetId) -> &[WidgetId] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Parent of a widget, if it has one.
    pub fn parent_of(&self, id: &WidgetId) -> Option<&WidgetId> {
        self.children
            .iter()
            .find(|(_, kids)| kids.contains(id))
            .map(|(parent, _)| parent)
    }

    /// Siblings drawn after (therefore on top of) the given widget, in
    /// back-to-front order. Later siblings have higher z order.
    pub fn siblings_above(&self, id: &WidgetId) -> Vec<&WidgetId> {
        match self.parent_of(id) {
            None => Vec::new(),
            Some(parent) => {
                let kids = self.children_of(parent);
                match kids.iter().position(|k| k == id) {
                    None => Vec::new(),
                    Some(pos) => kids[pos + 1..].iter().collect(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub window_id: WindowId,
    pub kind: WindowKind,
    pub layout: UiLayout,
}

// ---- code facts ------------------------------------------------------------

/// A `findViewById`-style resolution: variable `var` holds the widget
/// `widget_id` of window `window_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub var: String,
    pub widget_id: WidgetId,
    pub window_id: WindowId,
}

/// A cast of variable `var` to `view_class`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cast {
    pub var: String,
    pub view_class: String,
}

/// An assignment `var = alias` making the two variables refer to the same
/// widget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alias {
    pub var: String,
    pub alias: String,
}

/// A method invocation observed in code reachable from a widget's handlers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub invocation_id: InvocationId,
    /// Receiver variable the call is made on.
    pub receiver: String,
    /// Fully qualified target method, e.g.
    /// `com.google.android.gms.ads.interstitial.InterstitialAd.show`.
    pub target: String,
    /// Intent payload carried by the call: a URI string such as
    /// `https://…` or `market://details?id=…`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
}

/// A window declaration: which API materializes the window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowDecl {
    pub window_id: WindowId,
    pub kind: WindowKind,
    /// Declaring API name, e.g. `setContentView` or `Dialog.show`.
    pub declaring_api: String,
}

/// A window transition: performing `invocation_id` in `source_window`
/// navigates to `target_window`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Navigation {
    pub source_window: WindowId,
    pub invocation_id: InvocationId,
    pub target_window: WindowId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeFacts {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bindings: Vec<Binding>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub casts: Vec<Cast>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<Alias>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invocations: Vec<Invocation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub window_decls: Vec<WindowDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub navigations: Vec<Navigation>,
}

impl CodeFacts {
    pub fn invocation(&self, id: &InvocationId) -> Option<&Invocation> {
        self.invocations.iter().find(|i| &i.invocation_id == id)
    }
}

// ---- metadata and the model ------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppMetadata {
    pub app_name: String,
    pub category: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub download_count: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screen {
    pub width: i32,
    pub height: i32,
}

impl Screen {
    pub fn area(&self) -> i64 {
        i64::from(self.width.max(0)) * i64::from(self.height.max(0))
    }
}

/// The complete app model. Immutable after parsing; all pipeline stages read
/// it concurrently without synchronization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppModel {
    pub windows: Vec<Window>,
    pub entry_window: WindowId,
    pub code_facts: CodeFacts,
    pub metadata: AppMetadata,
    pub screen: Screen,
}

impl AppModel {
    pub fn window(&self, id: &WindowId) -> Option<&Window> {
        self.windows.iter().find(|w| &w.window_id == id)
    }

    /// The entry window. Panics if the model is malformed; parsed models
    /// always validate first.
    pub fn entry(&self) -> &Window {
        self.window(&self.entry_window)
            .expect("entry window must exist in a validated model")
    }

    pub fn widget(&self, window: &WindowId, widget: &WidgetId) -> Option<&Widget> {
        self.window(window).and_then(|w| w.layout.widget(widget))
    }
}

// ---- validation ------------------------------------------------------------

/// One invariant violation, with a logical path into the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    /// Logical path such as `windows[w_main].layout.widgets[adView].bounds`.
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// The full list of violations found by [`validate`]. Empty iff the model is
/// well-formed.
pub type ValidationReport = Vec<ValidationIssue>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("app model document is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema {found:?}, expected {MODEL_SCHEMA:?}")]
    SchemaVersion { found: String },
    #[error("app model violates {} invariant(s); first: {}", report.len(), report[0])]
    Invalid { report: ValidationReport },
}

fn issue(report: &mut ValidationReport, path: impl Into<String>, message: impl Into<String>) {
    report.push(ValidationIssue { path: path.into(), message: message.into() });
}

/// Checks every structural invariant of the model and reports all
/// violations. Violations are data, not failures: a malformed model yields a
/// non-empty report, never an error.
pub fn validate(model: &AppModel) -> ValidationReport {
    let mut report = ValidationReport::new();

    if model.screen.width <= 0 || model.screen.height <= 0 {
        issue(
            &mut report,
            "screen",
            format!(
                "screen dimensions must be positive, got {}x{}",
                model.screen.width, model.screen.height
            ),
        );
    }
    if model.metadata.app_name.is_empty() {
        issue(&mut report, "metadata.app_name", "app name must be non-empty");
    }

    // Window and layout identifier uniqueness.
    let mut window_ids = BTreeSet::new();
    let mut layout_ids = BTreeSet::new();
    for window in &model.windows {
        if !window_ids.insert(&window.window_id) {
            issue(
                &mut report,
                format!("windows[{}]", window.window_id),
                "duplicate window id",
            );
        }
        if !layout_ids.insert(&window.layout.layout_id) {
            issue(
                &mut report,
                format!("windows[{}].layout[{}]", window.window_id, window.layout.layout_id),
                "duplicate layout id",
            );
        }
    }

    if model.window(&model.entry_window).is_none() {
        issue(
            &mut report,
            "entry_window",
            format!("entry window {} does not exist", model.entry_window),
        );
    }

    for window in &model.windows {
        validate_layout(window, &mut report);
        for widget in &window.layout.widgets {
            for inv in &widget.invocation_ids {
                if model.code_facts.invocation(inv).is_none() {
                    issue(
                        &mut report,
                        format!(
                            "windows[{}].layout.widgets[{}].invocation_ids",
                            window.window_id, widget.widget_id
                        ),
                        format!("invocation {inv} is not declared in code_facts"),
                    );
                }
            }
        }
    }

    validate_code_facts(model, &mut report);
    report
}

fn validate_layout(window: &Window, report: &mut ValidationReport) {
    let layout = &window.layout;
    let prefix = format!("windows[{}].layout", window.window_id);

    // Widget ids must be unique within the layout.
    let mut seen = BTreeSet::new();
    for widget in &layout.widgets {
        if !seen.insert(&widget.widget_id) {
            issue(
                report,
                format!("{prefix}.widgets[{}]", widget.widget_id),
                "duplicate widget id within layout",
            );
        }
        if widget.bounds.left > widget.bounds.right || widget.bounds.top > widget.bounds.bottom {
            issue(
                report,
                format!("{prefix}.widgets[{}].bounds", widget.widget_id),
                format!("inverted bounds {}", widget.bounds),
            );
        }
    }

    if layout.widget(&layout.root).is_none() {
        issue(
            report,
            format!("{prefix}.root"),
            format!("root widget {} does not exist", layout.root),
        );
        return;
    }

    // Child references must resolve, and every child slot gives its widget
    // one parent.
    let mut parent_count: BTreeMap<&WidgetId, usize> = BTreeMap::new();
    for (parent, kids) in &layout.children {
        if layout.widget(parent).is_none() {
            issue(
                report,
                format!("{prefix}.children[{parent}]"),
                "children listed for a widget that does not exist",
            );
        }
        for kid in kids {
            if layout.widget(kid).is_none() {
                issue(
                    report,
                    format!("{prefix}.children[{parent}]"),
                    format!("child {kid} does not exist"),
                );
            }
            *parent_count.entry(kid).or_insert(0) += 1;
        }
    }

    for widget in &layout.widgets {
        let count = parent_count.get(&widget.widget_id).copied().unwrap_or(0);
        let path = format!("{prefix}.widgets[{}]", widget.widget_id);
        if widget.widget_id == layout.root {
            if count != 0 {
                issue(report, path, "root widget must not appear as a child");
            }
        } else if count == 0 {
            // Covers both orphans and child groups detached by a cycle.
            issue(report, path, "widget is not reachable from the layout root");
        } else if count > 1 {
            issue(report, path, format!("widget has {count} parents, expected exactly 1"));
        }
    }

    // Walk from the root to catch cycles among reachable widgets.
    let mut visited = BTreeSet::new();
    let mut stack = vec![&layout.root];
    while let Some(id) = stack.pop() {
        if !visited.insert(id) {
            issue(
                report,
                format!("{prefix}.widgets[{id}]"),
                "widget tree contains a cycle",
            );
            continue;
        }
        stack.extend(layout.children_of(id));
    }
}

fn validate_code_facts(model: &AppModel, report: &mut ValidationReport) {
    let facts = &model.code_facts;

    for (i, binding) in facts.bindings.iter().enumerate() {
        let path = format!("code_facts.bindings[{i}]");
        match model.window(&binding.window_id) {
            None => issue(
                report,
                path,
                format!("binding references missing window {}", binding.window_id),
            ),
            Some(window) => {
                if window.layout.widget(&binding.widget_id).is_none() {
                    issue(
                        report,
                        path,
                        format!(
                            "binding references missing widget {} in window {}",
                            binding.widget_id, binding.window_id
                        ),
                    );
                }
            }
        }
    }

    let mut invocation_ids = BTreeSet::new();
    for (i, inv) in facts.invocations.iter().enumerate() {
        if !invocation_ids.insert(&inv.invocation_id) {
            issue(
                report,
                format!("code_facts.invocations[{i}]"),
                format!("duplicate invocation id {}", inv.invocation_id),
            );
        }
    }

    for (i, decl) in facts.window_decls.iter().enumerate() {
        if model.window(&decl.window_id).is_none() {
            issue(
                report,
                format!("code_facts.window_decls[{i}]"),
                format!("declaration references missing window {}", decl.window_id),
            );
        }
    }

    for (i, nav) in facts.navigations.iter().enumerate() {
        let path = format!("code_facts.navigations[{i}]");
        if model.window(&nav.source_window).is_none() {
            issue(
                report,
                path.clone(),
                format!("navigation references missing source window {}", nav.source_window),
            );
        }
        if model.window(&nav.target_window).is_none() {
            issue(
                report,
                path.clone(),
                format!("navigation references missing target window {}", nav.target_window),
            );
        }
        if !invocation_ids.contains(&nav.invocation_id) {
            issue(
                report,
                path,
                format!("navigation references missing invocation {}", nav.invocation_id),
            );
        }
    }
}

// ---- document form ---------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct WidgetDoc {
    #[serde(flatten)]
    widget: Widget,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<WidgetDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayoutDoc {
    layout_id: LayoutId,
    root: WidgetDoc,
}

#[derive(Debug, Serialize, Deserialize)]
struct WindowDoc {
    window_id: WindowId,
    kind: WindowKind,
    layout: LayoutDoc,
}

#[derive(Debug, Serialize, Deserialize)]
struct AppModelDoc {
    schema: String,
    windows: Vec<WindowDoc>,
    entry_window: WindowId,
    #[serde(default)]
    code_facts: CodeFacts,
    metadata: AppMetadata,
    screen: Screen,
}

fn flatten_widget(doc: WidgetDoc, layout: &mut UiLayout) {
    let kid_ids: Vec<WidgetId> = doc.children.iter().map(|c| c.widget.widget_id.clone()).collect();
    if !kid_ids.is_empty() {
        layout
            .children
            .entry(doc.widget.widget_id.clone())
            .or_default()
            .extend(kid_ids);
    }
    layout.widgets.push(doc.widget);
    for child in doc.children {
        flatten_widget(child, layout);
    }
}

fn layout_from_doc(doc: LayoutDoc) -> UiLayout {
    let mut layout = UiLayout {
        layout_id: doc.layout_id,
        root: doc.root.widget.widget_id.clone(),
        widgets: Vec::new(),
        children: BTreeMap::new(),
    };
    flatten_widget(doc.root, &mut layout);
    layout
}

fn widget_to_doc(layout: &UiLayout, id: &WidgetId) -> WidgetDoc {
    let widget = layout
        .widget(id)
        .expect("serialize requires a well-formed layout")
        .clone();
    let children = layout.children_of(id).iter().map(|kid| widget_to_doc(layout, kid)).collect();
    WidgetDoc { widget, children }
}

fn model_to_doc(model: &AppModel) -> AppModelDoc {
    AppModelDoc {
        schema: MODEL_SCHEMA.to_owned(),
        windows: model
            .windows
            .iter()
            .map(|w| WindowDoc {
                window_id: w.window_id.clone(),
                kind: w.kind,
                layout: LayoutDoc {
                    layout_id: w.layout.layout_id.clone(),
                    root: widget_to_doc(&w.layout, &w.layout.root),
                },
            })
            .collect(),
        entry_window: model.entry_window.clone(),
        code_facts: model.code_facts.clone(),
        metadata: model.metadata.clone(),
        screen: model.screen,
    }
}

/// Parses a standalone layout fragment — the nested `{layout_id, root}`
/// form used by knowledge-base entries — into a flattened [`UiLayout`].
pub fn parse_layout_fragment(value: &serde_json::Value) -> Result<UiLayout, ModelError> {
    let doc: LayoutDoc = serde_json::from_value(value.clone())?;
    Ok(layout_from_doc(doc))
}

/// Serializes a layout back into the nested fragment form.
pub fn layout_fragment_to_value(layout: &UiLayout) -> serde_json::Value {
    let doc = LayoutDoc {
        layout_id: layout.layout_id.clone(),
        root: widget_to_doc(layout, &layout.root),
    };
    serde_json::to_value(doc).expect("layout serialization cannot fail")
}

/// Parses an `adwise-model/1` JSON document and validates it. Returns the
/// model only when every invariant holds.
pub fn parse_app_model(bytes: &[u8]) -> Result<AppModel, ModelError> {
    let doc: AppModelDoc = serde_json::from_slice(bytes)?;
    if doc.schema != MODEL_SCHEMA {
        return Err(ModelError::SchemaVersion { found: doc.schema });
    }
    let model = AppModel {
        windows: doc
            .windows
            .into_iter()
            .map(|w| Window {
                window_id: w.window_id,
                kind: w.kind,
                layout: layout_from_doc(w.layout),
            })
            .collect(),
        entry_window: doc.entry_window,
        code_facts: doc.code_facts,
        metadata: doc.metadata,
        screen: doc.screen,
    };
    let report = validate(&model);
    if report.is_empty() {
        Ok(model)
    } else {
        Err(ModelError::Invalid { report })
    }
}

/// Serializes a well-formed model back into the nested document form.
/// `parse_app_model(serialize_app_model(m)) == m` for every valid `m`.
pub fn serialize_app_model(model: &AppModel) -> String {
    let doc = model_to_doc(model);
    serde_json::to_string_pretty(&doc).expect("model serialization cannot fail")
}
