//! Seeded benchmark apps and the batch runner.
//!
//! [`generate_app`] derives a complete synthetic app from a seed: a
//! random strongly-entry-reachable window graph (spanning tree plus extra
//! edges), per-window decoy buttons, ad widgets of all three categories in
//! non-entry windows, and a sampled set of runtime-infeasible edges. The
//! same seed always yields the same app, so results are reproducible and
//! comparable across policies.
//!
//! [`build_bench_kb`] derives structural guidance from the *feasible*
//! edges only: for every window with a feasible route to ads, one entry
//! whose note names the next-hop widget. This mirrors how a knowledge
//! base distilled from successful sessions would look — it encodes what
//! worked at runtime, not what the static graph promises.
//!
//! [`run_bench`] fans seed x policy sessions out over a thread pool and
//! collects per-session detection rows plus per-policy means.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explorer::{explore, ExploreError, ExploreOptions, ExplorationTrace};
use crate::geometry::Rect;
use crate::kb::{Embedder, HashEmbedder, KbError, KnowledgeBase, DEFAULT_TOP_K};
use crate::metrics::{score_session, MetricsError, SessionScore};
use crate::model::{
    AppMetadata, AppModel, CodeFacts, Invocation, InvocationId, Navigation, Screen, UiLayout,
    Widget, WidgetId, Window, WindowDecl, WindowId, WindowKind,
};
use crate::policy::{DecisionPolicy, MockPolicy, OmniscientPolicy, RandomPolicy};
use crate::sim::SimConfig;
use crate::static_ads::{
    default_registry, identify_ad_widgets, AdCategory, AdWidgetFinding, StaticAdsError,
};
use crate::wtg::{build_wtg, WtgError};

// ---- spec ------------------------------------------------------------------

fn default_num_windows() -> usize {
    8
}

fn default_edge_density() -> f64 {
    0.15
}

fn default_findings() -> usize {
    1
}

fn default_max_step() -> usize {
    40
}

fn default_num_seeds() -> usize {
    20
}

/// Parameters of a benchmark family. Sessions use seeds
/// `seed .. seed + num_seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_num_seeds")]
    pub num_seeds: usize,
    #[serde(default = "default_num_windows")]
    pub num_windows: usize,
    /// Probability of each extra (non-tree) edge.
    #[serde(default = "default_edge_density")]
    pub edge_density: f64,
    /// Ad findings generated per category (3 categories).
    #[serde(default = "default_findings")]
    pub findings_per_category: usize,
    /// Fraction of edges sampled as runtime-infeasible.
    #[serde(default)]
    pub infeasible_fraction: f64,
    #[serde(default = "default_max_step")]
    pub max_step: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            seed: 0,
            num_seeds: default_num_seeds(),
            num_windows: default_num_windows(),
            edge_density: default_edge_density(),
            findings_per_category: default_findings(),
            infeasible_fraction: 0.0,
            max_step: default_max_step(),
        }
    }
}

/// A generated app plus its runtime ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedApp {
    pub model: AppModel,
    /// Edges sampled as runtime-infeasible.
    pub infeasible: BTreeSet<InvocationId>,
    /// Non-entry windows that received ad widgets.
    pub finding_windows: BTreeSet<WindowId>,
}

impl GeneratedApp {
    /// The complement of the infeasible set over all navigation edges.
    pub fn feasible(&self) -> BTreeSet<InvocationId> {
        self.model
            .code_facts
            .navigations
            .iter()
            .map(|n| n.invocation_id.clone())
            .filter(|e| !self.infeasible.contains(e))
            .collect()
    }
}

// ---- generation ------------------------------------------------------------

const SCREEN: Screen = Screen { width: 1080, height: 1920 };
const DECOYS_PER_WINDOW: usize = 3;

/// Grid slot -> bounds; three columns, rows of 170px, leaving the bottom
/// strip (y >= 1700) free for banners.
fn grid_bounds(slot: usize) -> Rect {
    debug_assert!(slot < 27, "window widget capacity exceeded");
    let col = (slot % 3) as i32;
    let row = (slot / 3) as i32;
    let left = col * 360 + 10;
    let top = row * 170 + 10;
    Rect::new(left, top, left + 340, top + 160)
}

struct WindowBuilder {
    window_id: WindowId,
    widgets: Vec<Widget>,
    slot: usize,
}

impl WindowBuilder {
    fn new(window_id: WindowId) -> Self {
        WindowBuilder { window_id, widgets: Vec::new(), slot: 0 }
    }

    fn push(&mut self, mut widget: Widget) -> WidgetId {
        widget.bounds = grid_bounds(self.slot);
        self.slot += 1;
        let id = widget.widget_id.clone();
        self.widgets.push(widget);
        id
    }

    fn push_banner(&mut self, widget_id: WidgetId, view_class: &str) {
        self.widgets.push(Widget {
            widget_id,
            view_class: view_class.to_owned(),
            text: Some("Sponsored".to_owned()),
            content_description: None,
            clickable: false,
            bounds: Rect::new(0, 1700, 1080, 1920),
            invocation_ids: Vec::new(),
        });
    }

    fn into_window(self) -> Window {
        let root_id = WidgetId::new(format!("root_{}", self.window_id));
        let child_ids: Vec<WidgetId> = self.widgets.iter().map(|w| w.widget_id.clone()).collect();
        let mut widgets = vec![Widget {
            widget_id: root_id.clone(),
            view_class: "android.widget.FrameLayout".to_owned(),
            text: None,
            content_description: None,
            clickable: false,
            bounds: Rect::new(0, 0, SCREEN.width, SCREEN.height),
            invocation_ids: Vec::new(),
        }];
        widgets.extend(self.widgets);
        let mut children = BTreeMap::new();
        children.insert(root_id.clone(), child_ids);
        Window {
            window_id: self.window_id.clone(),
            kind: WindowKind::Activity,
            layout: UiLayout {
                layout_id: crate::model::LayoutId::new(format!("layout_{}", self.window_id)),
                root: root_id,
                widgets,
                children,
            },
        }
    }
}

fn button(id: impl Into<String>, text: impl Into<String>) -> Widget {
    Widget {
        widget_id: WidgetId::new(id),
        view_class: "android.widget.Button".to_owned(),
        text: Some(text.into()),
        content_description: None,
        clickable: true,
        bounds: Rect::new(0, 0, 0, 0), // placed by the builder
        invocation_ids: Vec::new(),
    }
}

/// Deterministically generates the app for `seed`.
pub fn generate_app(spec: &BenchmarkSpec, seed: u64) -> GeneratedApp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.num_windows.max(2);
    let window_ids: Vec<WindowId> =
        (0..n).map(|i| WindowId::new(format!("w{i:02}"))).collect();

    // Edges: a random spanning tree rooted at the entry keeps every window
    // reachable, then extra edges add shortcuts and cycles.
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 1..n {
        let parent = rng.random_range(0..i);
        edges.push((parent, i));
    }
    for source in 0..n {
        for target in 0..n {
            if source == target || edges.contains(&(source, target)) {
                continue;
            }
            if rng.random_bool(spec.edge_density.clamp(0.0, 1.0)) {
                edges.push((source, target));
            }
        }
    }

    let mut builders: Vec<WindowBuilder> =
        window_ids.iter().map(|w| WindowBuilder::new(w.clone())).collect();
    let mut invocations = Vec::new();
    let mut navigations = Vec::new();

    // Decoys first so they occupy the lowest candidate indices.
    for (i, builder) in builders.iter_mut().enumerate() {
        for d in 0..DECOYS_PER_WINDOW {
            builder.push(button(format!("decoy_w{i:02}_{d}"), format!("Item {d}")));
        }
    }

    for (k, (source, target)) in edges.iter().enumerate() {
        let edge_id = InvocationId::new(format!("edge_{k:03}"));
        let mut widget = button(format!("go_{k:03}"), format!("Open {}", window_ids[*target]));
        widget.invocation_ids.push(edge_id.clone());
        builders[*source].push(widget);
        invocations.push(Invocation {
            invocation_id: edge_id.clone(),
            receiver: format!("v{k:03}"),
            target: "android.content.Context.startActivity".to_owned(),
            intent: None,
        });
        navigations.push(Navigation {
            source_window: window_ids[*source].clone(),
            invocation_id: edge_id,
            target_window: window_ids[*target].clone(),
        });
    }

    // Ad widgets live in non-entry windows.
    let mut host_pool: Vec<usize> = (1..n).collect();
    host_pool.shuffle(&mut rng);
    let mut hosts = host_pool.iter().cycle();
    let mut finding_windows = BTreeSet::new();
    for m in 0..spec.findings_per_category {
        let adview_host = *hosts.next().expect("non-empty pool");
        builders[adview_host].push_banner(
            WidgetId::new(format!("banner_{m:02}")),
            "com.google.android.gms.ads.AdView",
        );
        finding_windows.insert(window_ids[adview_host].clone());

        let popup_host = *hosts.next().expect("non-empty pool");
        let show_id = InvocationId::new(format!("show_{m:02}"));
        let mut popup = button(format!("popup_{m:02}"), "Play now");
        popup.invocation_ids.push(show_id.clone());
        builders[popup_host].push(popup);
        invocations.push(Invocation {
            invocation_id: show_id,
            receiver: format!("vp{m:02}"),
            target: "com.google.android.gms.ads.InterstitialAd.show".to_owned(),
            intent: None,
        });
        finding_windows.insert(window_ids[popup_host].clone());

        let native_host = *hosts.next().expect("non-empty pool");
        let promo_id = InvocationId::new(format!("promo_{m:02}"));
        let mut native = button(format!("native_{m:02}"), "More apps");
        native.invocation_ids.push(promo_id.clone());
        builders[native_host].push(native);
        invocations.push(Invocation {
            invocation_id: promo_id,
            receiver: format!("vn{m:02}"),
            target: "android.content.Context.startActivity".to_owned(),
            intent: Some(format!("market://details?id=com.example.sponsor{m}")),
        });
        finding_windows.insert(window_ids[native_host].clone());
    }

    // Runtime-infeasible sample: round(fraction * |edges|) distinct edges.
    let edge_ids: Vec<InvocationId> =
        (0..edges.len()).map(|k| InvocationId::new(format!("edge_{k:03}"))).collect();
    let infeasible_count =
        (spec.infeasible_fraction.clamp(0.0, 1.0) * edges.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..edge_ids.len()).collect();
    order.shuffle(&mut rng);
    let infeasible: BTreeSet<InvocationId> =
        order.into_iter().take(infeasible_count).map(|i| edge_ids[i].clone()).collect();

    let window_decls: Vec<WindowDecl> = window_ids
        .iter()
        .map(|w| WindowDecl {
            window_id: w.clone(),
            kind: WindowKind::Activity,
            declaring_api: "setContentView".to_owned(),
        })
        .collect();

    let model = AppModel {
        windows: builders.into_iter().map(WindowBuilder::into_window).collect(),
        entry_window: window_ids[0].clone(),
        code_facts: CodeFacts {
            bindings: Vec::new(),
            casts: Vec::new(),
            aliases: Vec::new(),
            invocations,
            window_decls,
            navigations,
        },
        metadata: AppMetadata {
            app_name: format!("BenchApp-{seed}"),
            category: "Casual".to_owned(),
            description: "Browse windows and tap around. Generated for benchmarking.".to_owned(),
            download_count: Some(1000 + seed),
        },
        screen: SCREEN,
    };
    GeneratedApp { model, infeasible, finding_windows }
}

// ---- knowledge base from feasible routes -----------------------------------

/// Feasible-only adjacency, neighbors sorted by (target, edge).
fn feasible_adjacency(
    model: &AppModel,
    feasible: &BTreeSet<InvocationId>,
) -> BTreeMap<WindowId, Vec<(WindowId, InvocationId)>> {
    let mut adj: BTreeMap<WindowId, Vec<(WindowId, InvocationId)>> = BTreeMap::new();
    for window in &model.windows {
        adj.entry(window.window_id.clone()).or_default();
    }
    for nav in &model.code_facts.navigations {
        if feasible.contains(&nav.invocation_id) {
            adj.entry(nav.source_window.clone())
                .or_default()
                .push((nav.target_window.clone(), nav.invocation_id.clone()));
        }
    }
    for neighbors in adj.values_mut() {
        neighbors.sort();
    }
    adj
}

/// BFS distances to `target` walking edges backwards.
fn distances_to(
    adj: &BTreeMap<WindowId, Vec<(WindowId, InvocationId)>>,
    target: &WindowId,
) -> BTreeMap<WindowId, u32> {
    let mut reverse: BTreeMap<&WindowId, Vec<&WindowId>> = BTreeMap::new();
    for (source, neighbors) in adj {
        for (next, _) in neighbors {
            reverse.entry(next).or_default().push(source);
        }
    }
    let mut dist = BTreeMap::new();
    let mut queue = std::collections::VecDeque::new();
    dist.insert(target.clone(), 0u32);
    queue.push_back(target.clone());
    while let Some(node) = queue.pop_front() {
        let d = dist[&node];
        for &source in reverse.get(&node).into_iter().flatten() {
            if !dist.contains_key(source) {
                dist.insert(source.clone(), d + 1);
                queue.push_back(source.clone());
            }
        }
    }
    dist
}

/// One guidance entry per (window, reachable ad window) pair: the note
/// names the next-hop widget of the shortest feasible route and the entry
/// carries the target's ad category, so sessions stop retrieving a route
/// once its kind of ad has been triggered.
pub fn build_bench_kb(
    app: &GeneratedApp,
    findings: &[AdWidgetFinding],
    embedder: &dyn Embedder,
) -> Result<KnowledgeBase, KbError> {
    let feasible = app.feasible();
    let adj = feasible_adjacency(&app.model, &feasible);
    let targets: BTreeSet<WindowId> = findings.iter().map(|f| f.window_id.clone()).collect();
    let per_target: BTreeMap<&WindowId, BTreeMap<WindowId, u32>> =
        targets.iter().map(|t| (t, distances_to(&adj, t))).collect();
    let category_of: BTreeMap<&WindowId, AdCategory> = findings
        .iter()
        .rev() // first finding of the window wins
        .map(|f| (&f.window_id, f.category))
        .collect();

    let mut entries = Vec::new();
    for window in &app.model.windows {
        let w = &window.window_id;
        for target in &targets {
            let Some(&d) = per_target[target].get(w).filter(|&&d| d > 0) else { continue };
            let next_hop = adj[w].iter().find(|(next, _)| {
                per_target[target].get(next).is_some_and(|&rest| rest + 1 == d)
            });
            let Some((_, edge)) = next_hop else { continue };
            let Some(widget) =
                window.layout.widgets.iter().find(|x| x.invocation_ids.contains(edge))
            else {
                continue;
            };
            let note = format!(
                "tapping {} in {} leads toward window {} with advertising content",
                widget.widget_id, w, target
            );
            let category = category_of.get(target).copied().unwrap_or(AdCategory::Adview);
            let entry = KnowledgeBase::make_entry(
                format!("route_{w}_{target}"),
                category,
                &window.layout,
                note,
                embedder,
            )
            .map_err(KbError::Embed)?;
            entries.push(entry);
        }
    }
    KnowledgeBase::from_entries(entries, embedder)
}

// ---- runner ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchPolicy {
    Mock,
    MockNoStructural,
    MockNoWtg,
    Random,
    Omniscient,
}

impl BenchPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            BenchPolicy::Mock => "mock",
            BenchPolicy::MockNoStructural => "mock-no-structural",
            BenchPolicy::MockNoWtg => "mock-no-wtg",
            BenchPolicy::Random => "random",
            BenchPolicy::Omniscient => "omniscient",
        }
    }
}

impl std::fmt::Display for BenchPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Static(#[from] StaticAdsError),
    #[error(transparent)]
    Wtg(#[from] WtgError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One session's scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub seed: u64,
    pub policy: String,
    pub detection_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pwdl: Option<f64>,
    pub explore_steps: usize,
    pub termination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub spec: BenchmarkSpec,
    pub rows: Vec<BenchRow>,
    /// Mean detection rate per policy label.
    pub mean_detection_rate: BTreeMap<String, f64>,
    /// Mean latency per policy label, over sessions where it was defined.
    pub mean_pwdl: BTreeMap<String, f64>,
}

/// Runs one seeded session under one policy.
pub fn run_one(spec: &BenchmarkSpec, seed: u64, kind: BenchPolicy) -> Result<BenchRow, BenchError> {
    let (trace, score) = run_one_traced(spec, seed, kind)?;
    Ok(BenchRow {
        seed,
        policy: kind.label().to_owned(),
        detection_rate: score.detection_rate,
        pwdl: score.pwdl,
        explore_steps: trace.explore_steps,
        termination: trace.termination.to_string(),
    })
}

/// Like [`run_one`] but also returns the full trace (used by invariant
/// checks that inspect step structure).
pub fn run_one_traced(
    spec: &BenchmarkSpec,
    seed: u64,
    kind: BenchPolicy,
) -> Result<(ExplorationTrace, SessionScore), BenchError> {
    let app = generate_app(spec, seed);
    let registry = default_registry();
    let findings = identify_ad_widgets(&app.model, &registry)?;
    let wtg = build_wtg(&app.model)?;
    let feasible = app.feasible();
    let embedder = HashEmbedder::default();
    let kb = build_bench_kb(&app, &findings, &embedder)?;

    let policy: Box<dyn DecisionPolicy> = match kind {
        BenchPolicy::Mock => Box::new(MockPolicy::default()),
        BenchPolicy::MockNoStructural => Box::new(MockPolicy::without_structural()),
        BenchPolicy::MockNoWtg => Box::new(MockPolicy::without_wtg()),
        BenchPolicy::Random => Box::new(RandomPolicy::new(seed)),
        BenchPolicy::Omniscient => {
            Box::new(OmniscientPolicy::new(wtg.clone(), feasible.clone()))
        }
    };
    let opts = ExploreOptions {
        max_step: spec.max_step,
        top_k: DEFAULT_TOP_K,
        sim: SimConfig { feasible_edges: Some(feasible), seed, ..SimConfig::default() },
    };
    let trace = explore(&app.model, &findings, &wtg, &kb, &embedder, policy.as_ref(), &opts)?;
    let score = score_session(&trace.log, &findings, &app.model)?;
    Ok((trace, score))
}

/// Runs every seed under every policy in parallel; rows sorted by
/// (seed, policy).
pub fn run_bench(spec: &BenchmarkSpec, policies: &[BenchPolicy]) -> Result<BenchSummary, BenchError> {
    let jobs: Vec<(u64, BenchPolicy)> = (spec.seed..spec.seed + spec.num_seeds as u64)
        .flat_map(|seed| policies.iter().map(move |&p| (seed, p)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(seed, kind)| run_one(spec, seed, kind))
        .collect::<Result<Vec<BenchRow>, BenchError>>()?;
    rows.sort_by(|a, b| (a.seed, &a.policy).cmp(&(b.seed, &b.policy)));

    let mut mean_detection_rate = BTreeMap::new();
    let mut mean_pwdl = BTreeMap::new();
    for kind in policies {
        let label = kind.label();
        let rates: Vec<f64> =
            rows.iter().filter(|r| r.policy == label).map(|r| r.detection_rate).collect();
        if let Some(mean) = crate::metrics::mean(&rates) {
            mean_detection_rate.insert(label.to_owned(), mean);
        }
        let latencies: Vec<f64> =
            rows.iter().filter(|r| r.policy == label).filter_map(|r| r.pwdl).collect();
        if let Some(mean) = crate::metrics::mean(&latencies) {
            mean_pwdl.insert(label.to_owned(), mean);
        }
    }
    Ok(BenchSummary { spec: spec.clone(), rows, mean_detection_rate, mean_pwdl })
}

/// CSV rendering of the per-session rows.
pub fn to_csv(summary: &BenchSummary) -> String {
    let mut out = String::from("seed,policy,detection_rate,pwdl,explore_steps,termination\n");
    for row in &summary.rows {
        let pwdl = row.pwdl.map(|v| format!("{v}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.seed, row.policy, row.detection_rate, pwdl, row.explore_steps, row.termination
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;

    fn spec() -> BenchmarkSpec {
        BenchmarkSpec {
            seed: 7,
            num_seeds: 3,
            num_windows: 8,
            edge_density: 0.15,
            findings_per_category: 1,
            infeasible_fraction: 0.25,
            max_step: 40,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_app(&spec(), 42);
        let b = generate_app(&spec(), 42);
        assert_eq!(a.model, b.model);
        assert_eq!(a.infeasible, b.infeasible);
        let c = generate_app(&spec(), 43);
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn generated_models_validate_cleanly() {
        for seed in 0..20 {
            let app = generate_app(&spec(), seed);
            let report = validate(&app.model);
            assert!(report.is_empty(), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn findings_cover_all_categories_outside_the_entry() {
        for seed in 0..10 {
            let app = generate_app(&spec(), seed);
            let findings = identify_ad_widgets(&app.model, &default_registry()).unwrap();
            assert_eq!(findings.len(), 3, "seed {seed}");
            let cats: BTreeSet<AdCategory> = findings.iter().map(|f| f.category).collect();
            assert_eq!(cats.len(), 3, "one finding per category");
            for f in &findings {
                assert_ne!(f.window_id, app.model.entry_window, "no ads in the entry window");
            }
        }
    }

    #[test]
    fn infeasible_sample_size_is_rounded_fraction() {
        for seed in 0..10 {
            let app = generate_app(&spec(), seed);
            let total = app.model.code_facts.navigations.len();
            let expected = (0.25 * total as f64).round() as usize;
            assert_eq!(app.infeasible.len(), expected, "seed {seed}");
        }
    }

    #[test]
    fn zero_infeasible_keeps_everything_reachable() {
        let zero = BenchmarkSpec { infeasible_fraction: 0.0, ..spec() };
        for seed in 0..10 {
            let app = generate_app(&zero, seed);
            assert!(app.infeasible.is_empty());
            let adj = feasible_adjacency(&app.model, &app.feasible());
            // BFS from the entry covers every window (spanning-tree shape).
            let mut seen = BTreeSet::new();
            let mut queue = std::collections::VecDeque::new();
            seen.insert(app.model.entry_window.clone());
            queue.push_back(app.model.entry_window.clone());
            while let Some(w) = queue.pop_front() {
                for (next, _) in &adj[&w] {
                    if seen.insert(next.clone()) {
                        queue.push_back(next.clone());
                    }
                }
            }
            assert_eq!(seen.len(), app.model.windows.len(), "seed {seed}");
        }
    }

    #[test]
    fn bench_kb_names_feasible_next_hops() {
        let app = generate_app(&spec(), 5);
        let findings = identify_ad_widgets(&app.model, &default_registry()).unwrap();
        let embedder = HashEmbedder::default();
        let kb = build_bench_kb(&app, &findings, &embedder).unwrap();
        assert!(!kb.entries.is_empty());
        let feasible = app.feasible();
        for entry in &kb.entries {
            // Each note names a go_NNN widget whose edge is feasible.
            let token = entry
                .note
                .split_whitespace()
                .find(|t| t.starts_with("go_") || t.starts_with("popup_") || t.starts_with("native_"))
                .expect("note names a widget");
            if let Some(stripped) = token.strip_prefix("go_") {
                let edge = InvocationId::new(format!("edge_{stripped}"));
                assert!(feasible.contains(&edge), "note routes through feasible edge {edge}");
            }
        }
    }

    #[test]
    fn omniscient_sweeps_fully_feasible_apps() {
        let zero = BenchmarkSpec { infeasible_fraction: 0.0, ..spec() };
        for seed in [0, 1, 2] {
            let row = run_one(&zero, seed, BenchPolicy::Omniscient).unwrap();
            assert_eq!(row.detection_rate, 1.0, "seed {seed}");
            assert_eq!(row.termination, "all-triggered");
        }
    }

    #[test]
    fn runner_sorts_rows_and_averages() {
        let small = BenchmarkSpec { num_seeds: 2, ..spec() };
        let summary = run_bench(&small, &[BenchPolicy::Random, BenchPolicy::Mock]).unwrap();
        assert_eq!(summary.rows.len(), 4);
        let order: Vec<(u64, &str)> =
            summary.rows.iter().map(|r| (r.seed, r.policy.as_str())).collect();
        assert_eq!(order, vec![(7, "mock"), (7, "random"), (8, "mock"), (8, "random")]);
        assert!(summary.mean_detection_rate.contains_key("mock"));
        assert!(summary.mean_detection_rate.contains_key("random"));
        let csv = to_csv(&summary);
        assert!(csv.starts_with("seed,policy,detection_rate"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn mock_outperforms_random_on_a_quick_sample() {
        let quick = BenchmarkSpec { num_seeds: 5, ..spec() };
        let summary = run_bench(&quick, &[BenchPolicy::Mock, BenchPolicy::Random]).unwrap();
        let mock = summary.mean_detection_rate["mock"];
        let random = summary.mean_detection_rate["random"];
        assert!(
            mock > random,
            "guided exploration should beat the random baseline ({mock} vs {random})"
        );
    }
}
