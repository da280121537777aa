//! Static identification of ad widgets.
//!
//! A widget is an *ad widget* when one of three rules fires on its recovered
//! attributes:
//!
//! - **Adview** — its resolved view class belongs to an ad library;
//! - **Popup** — an invocation reachable from it targets an ad library's
//!   show API (interstitial-style ads);
//! - **Native** — an invocation reachable from it carries an intent to a web
//!   URL or an app-market URI (developer-built redirect widgets).
//!
//! Attribute recovery mirrors a dataflow analysis over the code facts: the
//! view class comes from casts on the widget's bound variable or any alias
//! of it, and the invocation set is the union over the whole alias group.
//! Aliasing is the reflexive-symmetric-transitive closure of the recorded
//! alias pairs, computed with a union-find.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::model::{AppModel, InvocationId, LayoutId, WidgetId, WindowId};

// ---- registry --------------------------------------------------------------

/// One ad library: the view classes it contributes to layouts and the APIs
/// that display its full-screen ad formats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdLibrary {
    pub name: String,
    pub view_classes: BTreeSet<String>,
    pub show_apis: BTreeSet<String>,
}

/// The registry of known ad libraries, loaded from a JSON array so the set
/// is replaceable without recompiling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdLibraryRegistry {
    pub libraries: Vec<AdLibrary>,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read registry file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed registry entry: {0}")]
    Json(#[from] serde_json::Error),
    #[error("registry contains no libraries")]
    Empty,
    #[error("duplicate library name {0:?}")]
    DuplicateName(String),
    #[error("library {library:?}: {field} must be non-empty")]
    EmptyField { library: String, field: &'static str },
    #[error("library {library:?}: {name:?} is not a qualified name (needs at least one dot)")]
    Unqualified { library: String, name: String },
}

impl AdLibraryRegistry {
    /// Parses and validates a registry from its JSON form (an array of
    /// `{name, view_classes[], show_apis[]}` objects).
    pub fn parse(bytes: &[u8]) -> Result<Self, RegistryError> {
        let libraries: Vec<AdLibrary> = serde_json::from_slice(bytes)?;
        let registry = AdLibraryRegistry { libraries };
        registry.check()?;
        Ok(registry)
    }

    fn check(&self) -> Result<(), RegistryError> {
        if self.libraries.is_empty() {
            return Err(RegistryError::Empty);
        }
        let mut names = BTreeSet::new();
        for lib in &self.libraries {
            if !names.insert(&lib.name) {
                return Err(RegistryError::DuplicateName(lib.name.clone()));
            }
            if lib.view_classes.is_empty() {
                return Err(RegistryError::EmptyField {
                    library: lib.name.clone(),
                    field: "view_classes",
                });
            }
            if lib.show_apis.is_empty() {
                return Err(RegistryError::EmptyField {
                    library: lib.name.clone(),
                    field: "show_apis",
                });
            }
            for name in lib.view_classes.iter().chain(&lib.show_apis) {
                if !name.contains('.') {
                    return Err(RegistryError::Unqualified {
                        library: lib.name.clone(),
                        name: name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Name of the first registry library whose view classes contain
    /// `view_class`.
    pub fn library_for_view_class(&self, view_class: &str) -> Option<&str> {
        self.libraries
            .iter()
            .find(|l| l.view_classes.contains(view_class))
            .map(|l| l.name.as_str())
    }

    /// Name of the first registry library whose show APIs contain `target`.
    pub fn library_for_show_api(&self, target: &str) -> Option<&str> {
        self.libraries
            .iter()
            .find(|l| l.show_apis.contains(target))
            .map(|l| l.name.as_str())
    }
}

/// Loads a registry from a file path.
pub fn load_registry(path: &Path) -> Result<AdLibraryRegistry, RegistryError> {
    let bytes = std::fs::read(path)?;
    AdLibraryRegistry::parse(&bytes)
}

/// The registry bundled with the crate: AdMob, Unity Ads, Meta Audience
/// Network, and AppLovin, with their common view classes and show APIs.
pub fn default_registry() -> AdLibraryRegistry {
    AdLibraryRegistry::parse(include_bytes!("../data/default_registry.json"))
        .expect("bundled registry must be valid")
}

// ---- attribute recovery ----------------------------------------------------

/// Resolved attributes of one widget: effective view class and the widget's
/// full invocation set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WidgetAttributes {
    pub view_class: String,
    pub invocations: BTreeSet<InvocationId>,
}

/// Per-widget resolved attributes, keyed by (window, widget).
#[derive(Debug, Clone, Default)]
pub struct WidgetAttributeTable {
    entries: BTreeMap<(WindowId, WidgetId), WidgetAttributes>,
}

impl WidgetAttributeTable {
    pub fn get(&self, window: &WindowId, widget: &WidgetId) -> Option<&WidgetAttributes> {
        self.entries.get(&(window.clone(), widget.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(WindowId, WidgetId), &WidgetAttributes)> {
        self.entries.iter()
    }

    /// Widget of `window` whose invocation set contains `invocation`, if
    /// any; smallest widget id wins when several widgets share the record.
    pub fn owner_of(&self, window: &WindowId, invocation: &InvocationId) -> Option<&WidgetId> {
        self.entries
            .iter()
            .filter(|((w, _), _)| w == window)
            .find(|(_, attrs)| attrs.invocations.contains(invocation))
            .map(|((_, widget), _)| widget)
    }
}

#[derive(Debug, Error)]
pub enum StaticAdsError {
    #[error(
        "conflicting casts {view_classes:?} on alias group {variables:?}: \
         widget view class is ambiguous"
    )]
    AmbiguousCast { variables: Vec<String>, view_classes: Vec<String> },
}

/// Union-find over variable names.
struct AliasGroups {
    parent: BTreeMap<String, String>,
}

impl AliasGroups {
    fn new() -> Self {
        AliasGroups { parent: BTreeMap::new() }
    }

    fn find(&mut self, var: &str) -> String {
        let parent = match self.parent.get(var) {
            None => {
                self.parent.insert(var.to_owned(), var.to_owned());
                return var.to_owned();
            }
            Some(p) => p.clone(),
        };
        if parent == var {
            return parent;
        }
        let root = self.find(&parent);
        self.parent.insert(var.to_owned(), root.clone());
        root
    }

    fn union(&mut self, a: &str, b: &str) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // Deterministic representative: the lexicographically smaller root.
            let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent.insert(drop, keep);
        }
    }

    /// All variables in the same group as `var`, sorted.
    fn group(&mut self, var: &str) -> Vec<String> {
        let root = self.find(var);
        let vars: Vec<String> = self.parent.keys().cloned().collect();
        vars.into_iter().filter(|v| self.find(v) == root).collect()
    }
}

/// Recovers each widget's effective (view class, invocation set) from the
/// code facts.
///
/// For a widget bound to variable `x`, the view class is the cast recorded
/// on `x` or any alias of `x` (falling back to the declared layout class),
/// and the invocation set is the union of the widget's own invocation list
/// with every invocation whose receiver is in `x`'s alias group. Widgets
/// with no binding keep their declared class and listed invocations.
pub fn recover_widget_attributes(
    model: &AppModel,
) -> Result<WidgetAttributeTable, StaticAdsError> {
    let facts = &model.code_facts;
    let mut groups = AliasGroups::new();
    for alias in &facts.aliases {
        groups.union(&alias.var, &alias.alias);
    }
    // Touch every mentioned variable so singleton groups exist.
    for binding in &facts.bindings {
        groups.find(&binding.var);
    }
    for cast in &facts.casts {
        groups.find(&cast.var);
    }
    for inv in &facts.invocations {
        groups.find(&inv.receiver);
    }

    // Resolve each alias group once: the cast class (checking for
    // conflicts) and the invocation ids received by the group.
    let mut group_cast: BTreeMap<String, String> = BTreeMap::new();
    for cast in &facts.casts {
        let root = groups.find(&cast.var);
        if let Some(existing) = group_cast.get(&root) {
            if existing != &cast.view_class {
                let mut classes = vec![existing.clone(), cast.view_class.clone()];
                classes.sort();
                classes.dedup();
                return Err(StaticAdsError::AmbiguousCast {
                    variables: groups.group(&cast.var),
                    view_classes: classes,
                });
            }
        } else {
            group_cast.insert(root, cast.view_class.clone());
        }
    }
    let mut group_invocations: BTreeMap<String, BTreeSet<InvocationId>> = BTreeMap::new();
    for inv in &facts.invocations {
        let root = groups.find(&inv.receiver);
        group_invocations.entry(root).or_default().insert(inv.invocation_id.clone());
    }

    let mut table = WidgetAttributeTable::default();
    for window in &model.windows {
        for widget in &window.layout.widgets {
            let key = (window.window_id.clone(), widget.widget_id.clone());
            let entry = table.entries.entry(key).or_insert_with(|| WidgetAttributes {
                view_class: widget.view_class.clone(),
                invocations: widget.invocation_ids.iter().cloned().collect(),
            });
            for binding in &facts.bindings {
                if binding.window_id != window.window_id || binding.widget_id != widget.widget_id
                {
                    continue;
                }
                let root = groups.find(&binding.var);
                if let Some(class) = group_cast.get(&root) {
                    entry.view_class = class.clone();
                }
                if let Some(invs) = group_invocations.get(&root) {
                    entry.invocations.extend(invs.iter().cloned());
                }
            }
        }
    }
    Ok(table)
}

// ---- classification --------------------------------------------------------

/// The ad-widget taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdCategory {
    Adview,
    Popup,
    Native,
}

impl std::fmt::Display for AdCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            AdCategory::Adview => "adview",
            AdCategory::Popup => "popup",
            AdCategory::Native => "native",
        };
        f.write_str(name)
    }
}

/// The evidence that made a rule fire.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdEvidence {
    /// The widget's resolved view class is an ad-library class.
    ViewClass { library: String, view_class: String },
    /// An invocation targets an ad-library show API.
    ShowApi { library: String, invocation_id: InvocationId, target: String },
    /// An invocation carries an intent to a web URL or market URI.
    Intent { invocation_id: InvocationId, uri: String },
}

/// One classified ad widget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdWidgetFinding {
    pub window_id: WindowId,
    pub layout_id: LayoutId,
    pub widget_id: WidgetId,
    pub category: AdCategory,
    pub evidence: AdEvidence,
}

/// True when the intent URI points at the web or an app market: scheme
/// `http`/`https`, scheme `market`, or host `play.google.com`.
pub fn is_ad_destination(uri: &str) -> bool {
    match Url::parse(uri) {
        Err(_) => false,
        Ok(url) => {
            matches!(url.scheme(), "http" | "https" | "market")
                || url.host_str() == Some("play.google.com")
        }
    }
}

/// Classifies one widget's resolved attributes against the registry.
///
/// Precedence when several rules fire: Adview > Popup > Native (view-class
/// evidence is the most specific).
pub fn classify_ad_widget(
    attrs: &WidgetAttributes,
    facts: &crate::model::CodeFacts,
    registry: &AdLibraryRegistry,
) -> Option<(AdCategory, AdEvidence)> {
    if let Some(library) = registry.library_for_view_class(&attrs.view_class) {
        return Some((
            AdCategory::Adview,
            AdEvidence::ViewClass {
                library: library.to_owned(),
                view_class: attrs.view_class.clone(),
            },
        ));
    }
    // Invocation sets are ordered, so the first match is deterministic.
    for inv_id in &attrs.invocations {
        let Some(inv) = facts.invocation(inv_id) else { continue };
        if let Some(library) = registry.library_for_show_api(&inv.target) {
            return Some((
                AdCategory::Popup,
                AdEvidence::ShowApi {
                    library: library.to_owned(),
                    invocation_id: inv_id.clone(),
                    target: inv.target.clone(),
                },
            ));
        }
    }
    for inv_id in &attrs.invocations {
        let Some(inv) = facts.invocation(inv_id) else { continue };
        if let Some(uri) = &inv.intent {
            if is_ad_destination(uri) {
                return Some((
                    AdCategory::Native,
                    AdEvidence::Intent { invocation_id: inv_id.clone(), uri: uri.clone() },
                ));
            }
        }
    }
    None
}

/// Runs attribute recovery and classification over every widget of every
/// window. Findings come out in (window, widget) document order, one per
/// classified widget; potential ad widgets are kept conservatively (runtime
/// exploration filters false positives later).
pub fn identify_ad_widgets(
    model: &AppModel,
    registry: &AdLibraryRegistry,
) -> Result<Vec<AdWidgetFinding>, StaticAdsError> {
    let table = recover_widget_attributes(model)?;
    let mut findings = Vec::new();
    for window in &model.windows {
        for widget in &window.layout.widgets {
            let attrs = table
                .get(&window.window_id, &widget.widget_id)
                .expect("attribute table covers every widget");
            if let Some((category, evidence)) =
                classify_ad_widget(attrs, &model.code_facts, registry)
            {
                findings.push(AdWidgetFinding {
                    window_id: window.window_id.clone(),
                    layout_id: window.layout.layout_id.clone(),
                    widget_id: widget.widget_id.clone(),
                    category,
                    evidence,
                });
            }
        }
    }
    Ok(findings)
}
