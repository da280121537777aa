//! Window transition graph (WTG) construction and shortest-path guidance.
//!
//! Windows become graph nodes when the code facts declare them through one
//! of the recognized windowing APIs; navigation facts become directed edges,
//! and each edge is mapped to the widget whose invocation performs the
//! navigation (the trigger map). Guidance toward ad-bearing windows is
//! computed as unit-weight shortest paths.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AppModel, InvocationId, WidgetId, WindowId, WindowKind};
use crate::static_ads::{recover_widget_attributes, StaticAdsError, WidgetAttributeTable};

/// APIs whose window_decl records make a window a WTG node.
pub const WINDOW_DECL_APIS: &[&str] = &[
    "setContentView",
    "Dialog.show",
    "MenuInflater.inflate",
    "FragmentTransaction.add",
    "FragmentTransaction.replace",
];

/// Edge identifier: the navigation's invocation id.
pub type EdgeId = InvocationId;

/// Interaction kind that fires a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Click,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventKind::Click => f.write_str("click"),
        }
    }
}

/// What triggers a transition: a widget interaction, or — when no widget
/// owns the navigation invocation — a synthetic window-level trigger.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    Widget { widget_id: WidgetId, event: EventKind },
    WindowLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WtgEdge {
    pub source: WindowId,
    pub target: WindowId,
    pub edge_id: EdgeId,
}

/// The graph G = (windows, transitions, trigger map).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wtg {
    pub nodes: BTreeMap<WindowId, WindowKind>,
    pub edges: Vec<WtgEdge>,
    pub trigger_map: BTreeMap<EdgeId, Trigger>,
    /// Anomalies observed during construction (undeclared windows, dropped
    /// navigations, synthesized window-level triggers).
    pub warnings: Vec<String>,
}

/// One guidance path toward a target window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidancePath {
    pub target: WindowId,
    /// Hop count from the current window; 0 only for the current window.
    pub distance: u32,
    /// Trigger of the first edge on one minimal path; absent at distance 0.
    pub first_step: Option<Trigger>,
    /// Whether the target has been visited this session; filled when the
    /// guidance text is rendered.
    pub visited: bool,
}

#[derive(Debug, Error)]
pub enum WtgError {
    #[error("window {0} is not a node of the transition graph")]
    UnknownWindow(WindowId),
    #[error(transparent)]
    StaticAds(#[from] StaticAdsError),
}

// ---- construction ----------------------------------------------------------

/// Builds the WTG from a validated model, recovering widget attributes
/// internally to resolve edge triggers.
pub fn build_wtg(model: &AppModel) -> Result<Wtg, WtgError> {
    let table = recover_widget_attributes(model)?;
    Ok(build_wtg_with_table(model, &table))
}

/// Builds the WTG with a pre-computed attribute table.
pub fn build_wtg_with_table(model: &AppModel, table: &WidgetAttributeTable) -> Wtg {
    let mut wtg = Wtg {
        nodes: BTreeMap::new(),
        edges: Vec::new(),
        trigger_map: BTreeMap::new(),
        warnings: Vec::new(),
    };

    for decl in &model.code_facts.window_decls {
        if !WINDOW_DECL_APIS.contains(&decl.declaring_api.as_str()) {
            wtg.warnings.push(format!(
                "window {} declared via unrecognized API {:?}; not added as a node",
                decl.window_id, decl.declaring_api
            ));
            continue;
        }
        wtg.nodes.insert(decl.window_id.clone(), decl.kind);
    }

    for nav in &model.code_facts.navigations {
        if !wtg.nodes.contains_key(&nav.source_window)
            || !wtg.nodes.contains_key(&nav.target_window)
        {
            wtg.warnings.push(format!(
                "navigation {} ({} -> {}) touches an undeclared window; edge dropped",
                nav.invocation_id, nav.source_window, nav.target_window
            ));
            continue;
        }
        let trigger = match table.owner_of(&nav.source_window, &nav.invocation_id) {
            Some(widget) => {
                Trigger::Widget { widget_id: widget.clone(), event: EventKind::Click }
            }
            None => {
                wtg.warnings.push(format!(
                    "navigation {} in window {} is owned by no widget; \
                     window-level trigger synthesized",
                    nav.invocation_id, nav.source_window
                ));
                Trigger::WindowLevel
            }
        };
        wtg.edges.push(WtgEdge {
            source: nav.source_window.clone(),
            target: nav.target_window.clone(),
            edge_id: nav.invocation_id.clone(),
        });
        wtg.trigger_map.insert(nav.invocation_id.clone(), trigger);
    }

    wtg
}

impl Wtg {
    /// Outgoing edges of `window`, sorted by (target, edge id) so traversal
    /// order is deterministic.
    pub fn edges_from(&self, window: &WindowId) -> Vec<&WtgEdge> {
        let mut out: Vec<&WtgEdge> = self.edges.iter().filter(|e| &e.source == window).collect();
        out.sort_by(|a, b| (&a.target, &a.edge_id).cmp(&(&b.target, &b.edge_id)));
        out
    }

    /// Incoming edges of `window`.
    pub fn edges_into(&self, window: &WindowId) -> Vec<&WtgEdge> {
        let mut out: Vec<&WtgEdge> = self.edges.iter().filter(|e| &e.target == window).collect();
        out.sort_by(|a, b| (&a.source, &a.edge_id).cmp(&(&b.source, &b.edge_id)));
        out
    }

    /// Plain-text export: one `source -> target [widget, event]` line per
    /// edge, sorted, for inspection.
    pub fn export_text(&self) -> String {
        let mut lines: Vec<String> = self
            .edges
            .iter()
            .map(|e| {
                let trigger = match self.trigger_map.get(&e.edge_id) {
                    Some(Trigger::Widget { widget_id, event }) => {
                        format!("{widget_id}, {event}")
                    }
                    Some(Trigger::WindowLevel) | None => "window-level".to_owned(),
                };
                format!("{} -> {} [{}]", e.source, e.target, trigger)
            })
            .collect();
        lines.sort();
        let mut text = lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        text
    }
}

// ---- shortest paths --------------------------------------------------------

/// Unit-weight shortest distances from `current` to every node, via
/// Dijkstra with a deterministic (distance, window id) pop order.
fn distances_from(wtg: &Wtg, start: &WindowId, reversed: bool) -> BTreeMap<WindowId, u32> {
    let mut dist: BTreeMap<WindowId, u32> = BTreeMap::new();
    let mut heap: BinaryHeap<Reverse<(u32, WindowId)>> = BinaryHeap::new();
    dist.insert(start.clone(), 0);
    heap.push(Reverse((0, start.clone())));
    while let Some(Reverse((d, node))) = heap.pop() {
        if dist.get(&node).copied() != Some(d) {
            continue; // stale heap entry
        }
        let neighbors = if reversed { wtg.edges_into(&node) } else { wtg.edges_from(&node) };
        for edge in neighbors {
            let next = if reversed { &edge.source } else { &edge.target };
            let nd = d + 1;
            if dist.get(next).is_none_or(|&cur| nd < cur) {
                dist.insert(next.clone(), nd);
                heap.push(Reverse((nd, next.clone())));
            }
        }
    }
    dist
}

/// Shortest-path guidance from `current` to each of `targets`.
///
/// Unreachable targets are absent from the result. When several minimal
/// paths exist, the first step belongs to the path whose next window id is
/// lexicographically smallest; parallel edges tie-break by edge id.
pub fn shortest_distances(
    wtg: &Wtg,
    current: &WindowId,
    targets: &BTreeSet<WindowId>,
) -> Result<BTreeMap<WindowId, GuidancePath>, WtgError> {
    if !wtg.nodes.contains_key(current) {
        return Err(WtgError::UnknownWindow(current.clone()));
    }
    let dist = distances_from(wtg, current, false);
    let mut paths = BTreeMap::new();
    for target in targets {
        let Some(&d) = dist.get(target) else { continue };
        if d == 0 {
            paths.insert(
                target.clone(),
                GuidancePath {
                    target: target.clone(),
                    distance: 0,
                    first_step: None,
                    visited: false,
                },
            );
            continue;
        }
        // Pick the first hop: the smallest next window that still lies on a
        // minimal path, judged by distance-to-target from each neighbor.
        let to_target = distances_from(wtg, target, true);
        let first_edge = wtg
            .edges_from(current)
            .into_iter()
            .find(|e| to_target.get(&e.target).is_some_and(|&rest| 1 + rest == d));
        let first_step = first_edge.and_then(|e| wtg.trigger_map.get(&e.edge_id)).cloned();
        paths.insert(
            target.clone(),
            GuidancePath { target: target.clone(), distance: d, first_step, visited: false },
        );
    }
    Ok(paths)
}

// ---- guidance rendering ----------------------------------------------------

/// Fixed text emitted when no ad window is reachable.
pub const NO_REACHABLE_AD_WINDOWS: &str = "no reachable ad windows";

fn render_widget_ref(model: &AppModel, window: &WindowId, widget_id: &WidgetId) -> String {
    let text = model.widget(window, widget_id).and_then(|w| w.text.clone());
    match text {
        Some(text) => format!("(resource-id={widget_id}, text={text})"),
        None => format!("resource-id={widget_id}"),
    }
}

/// Renders WTG guidance: a header naming the current window, then one line
/// per reachable target in ascending (distance, target) order, each naming
/// the visited flag, cost, triggering widget, and event.
pub fn render_wtg_guidance(
    model: &AppModel,
    current: &WindowId,
    paths: &BTreeMap<WindowId, GuidancePath>,
    visited: &BTreeSet<WindowId>,
) -> String {
    let mut ordered: Vec<&GuidancePath> = paths.values().collect();
    ordered.sort_by(|a, b| (a.distance, &a.target).cmp(&(b.distance, &b.target)));

    if ordered.is_empty() {
        return NO_REACHABLE_AD_WINDOWS.to_owned();
    }

    let mut text = format!(
        "Based on the window transition graph, the current activity {current} can transfer \
         to the following activities:\n"
    );
    for path in ordered {
        let flag = if visited.contains(&path.target) || path.visited {
            "visited"
        } else {
            "not-visited"
        };
        let via = match &path.first_step {
            Some(Trigger::Widget { widget_id, event }) => {
                let widget = render_widget_ref(model, current, widget_id);
                format!("via widget {widget} to {event}")
            }
            Some(Trigger::WindowLevel) => "via a window-level transition".to_owned(),
            None => "(current window)".to_owned(),
        };
        text.push_str(&format!(
            "  {} {} with cost {} {}\n",
            path.target, flag, path.distance, via
        ));
    }
    text
}
